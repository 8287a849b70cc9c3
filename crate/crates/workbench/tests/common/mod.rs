//! Synthetic screenshots with element annotations for pipeline tests.
//!
//! Every screen carries textured buttons and icons spread over a grid, plus
//! one element for each offline filter rule: a non-interactive `div`, a wide
//! text link, a form wrapping two buttons, an input nearly coinciding with a
//! button, and a flat button with no visible content.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use groundkit_core::records::write_jsonl;
use groundkit_core::{ElementKind, ElementRecord, NormBox, PixelDims, RngStream, ScreenRecord};
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;

pub const BACKGROUND: Rgb<u8> = Rgb([245, 245, 245]);
const SLOT_W: u32 = 90;
const SLOT_H: u32 = 40;
const MARGIN: u32 = 10;

pub struct Corpus {
    pub screens_path: PathBuf,
    pub image_root: PathBuf,
    pub screens: Vec<ScreenRecord>,
}

fn fill_textured(img: &mut RgbImage, px: [u32; 4], rng: &mut RngStream) {
    let a = Rgb([
        rng.random_range(0..120u8),
        rng.random_range(0..120u8),
        rng.random_range(0..120u8),
    ]);
    let b = Rgb([
        rng.random_range(150..255u8),
        rng.random_range(150..255u8),
        rng.random_range(150..255u8),
    ]);
    for y in px[1]..px[3] {
        for x in px[0]..px[2] {
            let on = ((x - px[0]) / 3 + (y - px[1]) / 3).is_multiple_of(2);
            img.put_pixel(x, y, if on { a } else { b });
        }
    }
}

struct Builder {
    dims: PixelDims,
    elements: Vec<ElementRecord>,
}

impl Builder {
    fn push(&mut self, px: [u32; 4], tag: &str, kind: ElementKind, class: Option<&str>) {
        let (w, h) = (f64::from(self.dims.w), f64::from(self.dims.h));
        let bbox = NormBox::new(
            f64::from(px[0]) / w,
            f64::from(px[1]) / h,
            f64::from(px[2]) / w,
            f64::from(px[3]) / h,
        )
        .expect("slot inside the frame");
        let mut attributes = BTreeMap::new();
        if let Some(c) = class {
            attributes.insert("class".to_string(), c.to_string());
        }
        self.elements.push(ElementRecord {
            element_id: format!("e{}", self.elements.len()),
            bbox,
            kind,
            html_tag: tag.to_string(),
            attributes,
            references: None,
        });
    }
}

fn slot(col: u32, row: u32) -> [u32; 2] {
    [MARGIN + col * SLOT_W, MARGIN + row * SLOT_H]
}

/// Builds one screen and its screenshot.
pub fn synth_screen(seed: u64, index: usize) -> (ScreenRecord, RgbImage) {
    let mut rng = RngStream::new(seed, format!("synth:{index}"));
    let w = 480 + 40 * (index as u32 % 9);
    let h = 360 + 40 * (index as u32 % 7);
    let dims = PixelDims::new(w, h).unwrap();
    let mut img = RgbImage::from_pixel(w, h, BACKGROUND);
    let cols = (w - 2 * MARGIN) / SLOT_W;
    let rows = (h - 2 * MARGIN) / SLOT_H;

    let mut textured = Vec::new();
    let mut b = Builder {
        dims,
        elements: Vec::new(),
    };

    // Row 0 holds one element per filter rule.
    let [x, y] = slot(0, 0);
    let first = [x + 4, y + 6, x + 64, y + 30];
    let [x2, _] = slot(1, 0);
    let second = [x2 + 4, y + 6, x2 + 64, y + 30];
    b.push(
        [x, y, x2 + 80, y + 36],
        "form",
        ElementKind::InteractiveText,
        None,
    );
    b.push(first, "button", ElementKind::InteractiveText, None);
    b.push(second, "button", ElementKind::InteractiveText, None);
    textured.extend([first, second]);

    let [x, y] = slot(2, 0);
    let button = [x + 10, y + 6, x + 70, y + 30];
    textured.push(button);
    b.push(button, "button", ElementKind::InteractiveText, None);
    b.push(
        [x + 9, y + 6, x + 71, y + 30],
        "input",
        ElementKind::InteractiveText,
        None,
    );

    let [x, y] = slot(3, 0);
    let div = [x + 4, y + 4, x + 76, y + 32];
    textured.push(div);
    b.push(div, "div", ElementKind::Other, None);

    let [x, y] = slot(4, 0);
    b.push(
        [x + 6, y + 8, x + 70, y + 30],
        "button",
        ElementKind::InteractiveText,
        None,
    );

    // The bottom row holds a long text link.
    let [x, y] = slot(0, rows - 1);
    let link = [x, y + 10, x + 320, y + 22];
    textured.push(link);
    b.push(link, "a", ElementKind::InteractiveText, None);

    // Remaining slots: a random subset gets a button or an icon.
    let mut free: Vec<(u32, u32)> = (1..rows - 1)
        .flat_map(|r| (0..cols).map(move |c| (c, r)))
        .collect();
    free.shuffle(&mut rng);
    let take = free.len() * 2 / 3;
    for &(c, r) in &free[..take] {
        let [x, y] = slot(c, r);
        let (dx, dy) = (rng.random_range(0..10), rng.random_range(0..8));
        if rng.random_bool(0.35) {
            let px = [x + dx, y + dy, x + dx + 24, y + dy + 24];
            textured.push(px);
            b.push(px, "i", ElementKind::InteractiveIcon, Some("fa fa-home"));
        } else {
            let bw = rng.random_range(40..76);
            let px = [
                x + dx,
                y + dy,
                x + dx + bw.min(SLOT_W - dx - 4),
                y + dy + 26,
            ];
            textured.push(px);
            b.push(px, "button", ElementKind::InteractiveText, Some("btn"));
        }
    }
    let elements = b.elements;
    for px in textured {
        fill_textured(&mut img, px, &mut rng);
    }
    let screen = ScreenRecord {
        schema_version: 1,
        screen_id: format!("screen-{index:03}"),
        image_ref: format!("screen-{index:03}.png"),
        dims,
        domain: format!("site{}.test", index % 4),
        elements,
        layout_ref: None,
    };
    (screen, img)
}

/// Writes `count` screens as PNGs plus a `screens.jsonl` under `dir`.
pub fn write_corpus(dir: &Path, seed: u64, count: usize) -> Corpus {
    let image_root = dir.join("screens");
    std::fs::create_dir_all(&image_root).unwrap();
    let mut screens = Vec::with_capacity(count);
    for i in 0..count {
        let (screen, img) = synth_screen(seed, i);
        img.save(image_root.join(&screen.image_ref)).unwrap();
        screens.push(screen);
    }
    let screens_path = dir.join("screens.jsonl");
    write_jsonl(&screens_path, &screens).unwrap();
    Corpus {
        screens_path,
        image_root,
        screens,
    }
}

pub fn groundkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groundkit"))
        .args(args)
        .output()
        .expect("spawn groundkit")
}

pub fn run_ok(args: &[&str]) {
    let out = groundkit(args);
    assert!(
        out.status.success(),
        "groundkit {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Runs filter → resample → select → augment into `out` with `workers`
/// threads.
pub fn run_pipeline(corpus: &Corpus, out: &Path, workers: usize, seed: u64) {
    std::fs::create_dir_all(out).unwrap();
    let p = |name: &str| out.join(name).to_string_lossy().into_owned();
    let workers = workers.to_string();
    let seed = seed.to_string();
    let root = corpus.image_root.to_string_lossy().into_owned();
    let input = corpus.screens_path.to_string_lossy().into_owned();
    run_ok(&[
        "--workers",
        &workers,
        "filter",
        "--input",
        &input,
        "--out",
        &p("filtered.jsonl"),
        "--image-root",
        &root,
    ]);
    run_ok(&[
        "--workers",
        &workers,
        "resample",
        "--input",
        &p("filtered.jsonl"),
        "--out",
        &p("resampled.jsonl"),
        "--n",
        "5",
        "--m",
        "5",
        "--psi",
        "0.8",
        "--seed",
        &seed,
    ]);
    run_ok(&[
        "--workers",
        &workers,
        "select",
        "--input",
        &p("resampled.jsonl"),
        "--out",
        &p("selected.jsonl"),
        "--seed",
        &seed,
    ]);
    run_ok(&[
        "--workers",
        &workers,
        "augment",
        "--input",
        &p("selected.jsonl"),
        "--out",
        &p("train.jsonl"),
        "--image-root",
        &root,
        "--image-out",
        &p("images"),
        "--target",
        "640x400",
        "--random-crop",
        "0.5",
        "--seed",
        &seed,
    ]);
}

/// Files whose bytes must not depend on worker count or run.
pub const PIPELINE_OUTPUTS: [&str; 5] = [
    "filtered.jsonl",
    "filtered.jsonl.audit.jsonl",
    "resampled.jsonl",
    "selected.jsonl",
    "train.jsonl",
];
