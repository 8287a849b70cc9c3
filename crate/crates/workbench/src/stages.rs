//! Stage implementations behind the CLI. Each stage reads files, maps items
//! in parallel with per-item random streams, merges in input order and
//! writes files, so results never depend on the worker count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use groundkit_core::augment::{augment_sample, AugConfig, AugTrace};
use groundkit_core::curation::{
    cell_counts, chi_square_occupied, domain_cap_sample, element_center, filter_screen,
    grid_resample, plan_render_random, select_element, FilterAudit, FilterConfig,
    GridSamplerConfig, RenderPlan,
};
use groundkit_core::evalharness::{
    flops_estimate, load_benchmark, load_predictions, pareto_table, read_pareto_entries, score,
    write_pareto_csv, LoadOptions, MissingImagePolicy, ScoreConfig,
};
use groundkit_core::geometry::encode;
use groundkit_core::posttrain::{
    curriculum_order, export_round, triage_all, Pairing, RolloutSet, RoundSchedule,
};
use groundkit_core::records::{read_jsonl, write_jsonl, SCHEMA_VERSION};
use groundkit_core::{
    AugmentError, CoordFormat, CurationError, ElementRecord, EvalError, Geom, GeometryError,
    NormBox, PixelDims, PostTrainError, RngStream, ScreenRecord,
};
use groundkit_refgen::client::{append_rejects, run_bounded};
use groundkit_refgen::{
    annotate, build_longgold_prompt, sample_re_combination, EndpointConfig, RefgenError,
    RejectRecord, TokenBucket,
};
use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cli::{
    AugmentArgs, CapDomainsArgs, EvalArgs, ExportArgs, FilterArgs, FlopsArgs, PairingArg,
    PlanRenderArgs, RegenArgs, ResampleArgs, SelectArgs, ServeArgs, Stage, TriageArgs,
};
use crate::manifest::RunManifest;
use crate::review::{ReviewStore, StoreError};

/// A page queued for rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRecord {
    pub url: String,
    #[serde(default)]
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedPage {
    pub url: String,
    pub plan: RenderPlan,
}

/// One element chosen for training from one screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedSample {
    pub schema_version: u32,
    pub sample_id: String,
    pub screen_id: String,
    pub image_ref: String,
    pub dims: PixelDims,
    pub element: ElementRecord,
}

/// One augmented training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub schema_version: u32,
    pub sample_id: String,
    pub screen_id: String,
    pub element_id: String,
    /// Augmented image, relative to the stage's image output directory.
    pub image_ref: String,
    pub dims: PixelDims,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    /// Which reference expressions the instruction combines (bit 0
    /// functional, bit 1 positional, bit 2 appearance).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re_mask: Option<u8>,
    pub format: CoordFormat,
    pub target_text: String,
    #[serde(rename = "box")]
    pub bbox: NormBox,
    pub trace: Vec<AugTrace>,
}

/// Machine-readable error class for the manifest and the CLI error JSON.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<RefgenError>() {
            return e.tag();
        }
        if cause.is::<AugmentError>() {
            return "augment";
        }
        if cause.is::<CurationError>() {
            return "curation";
        }
        if cause.is::<EvalError>() {
            return "eval";
        }
        if cause.is::<PostTrainError>() {
            return "posttrain";
        }
        if cause.is::<GeometryError>() {
            return "geometry";
        }
        if cause.is::<StoreError>() {
            return "store";
        }
        if cause.is::<image::ImageError>() {
            return "image";
        }
        if cause.is::<serde_json::Error>() {
            return "json";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "stage"
}

pub fn run_stage(stage: &Stage, m: &mut RunManifest) -> anyhow::Result<()> {
    match stage {
        Stage::CapDomains(a) => cap_domains(a, m),
        Stage::PlanRender(a) => plan_render(a, m),
        Stage::Filter(a) => filter(a, m),
        Stage::Resample(a) => resample(a, m),
        Stage::Select(a) => select(a, m),
        Stage::Augment(a) => augment(a, m),
        Stage::Regen(a) => regen(a, m),
        Stage::Triage(a) => triage(a, m),
        Stage::Eval(a) => eval(a, m),
        Stage::Flops(a) => flops(a, m),
        Stage::Serve(a) => serve(a, m),
        Stage::Export(a) => export(a, m),
    }
}

fn read<T: DeserializeOwned>(path: &Path, m: &mut RunManifest) -> anyhow::Result<Vec<T>> {
    let items = read_jsonl(path).with_context(|| format!("reading {}", path.display()))?;
    m.input(path)?;
    Ok(items)
}

fn write<T: Serialize>(path: &Path, items: &[T], m: &mut RunManifest) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_jsonl(path, items).with_context(|| format!("writing {}", path.display()))?;
    m.output(path)?;
    Ok(())
}

fn load_config<T: DeserializeOwned + Default>(
    path: Option<&Path>,
    m: &mut RunManifest,
) -> anyhow::Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            m.input(p)?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn resolve(root: &Path, image_ref: &str) -> PathBuf {
    let p = Path::new(image_ref);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

fn file_stem_safe(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn cap_domains(a: &CapDomainsArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let pages: Vec<PageRecord> = read(&a.input, m)?;
    let cfg = FilterConfig {
        domain_cap: a.cap,
        ..FilterConfig::default()
    };
    cfg.validate()?;
    let pairs: Vec<(String, String)> = pages
        .iter()
        .map(|p| (p.url.clone(), p.domain.clone()))
        .collect();
    let kept = domain_cap_sample(&pairs, &cfg, &RngStream::new(a.seed, "cap-domains"));
    let kept_set: std::collections::HashSet<&str> = kept.iter().map(String::as_str).collect();
    let out: Vec<&PageRecord> = pages
        .iter()
        .filter(|p| kept_set.contains(p.url.as_str()))
        .collect();
    write(&a.out, &out, m)?;
    m.count("pages_in", pages.len());
    m.count("pages_out", out.len());
    m.count(
        "domains",
        pages
            .iter()
            .map(|p| p.domain.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .len(),
    );
    Ok(())
}

fn plan_render(a: &PlanRenderArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let pages: Vec<PageRecord> = read(&a.input, m)?;
    let planned = pages
        .par_iter()
        .map(|p| {
            let plan =
                plan_render_random(a.aspect_steps, &mut RngStream::new(a.seed, p.url.as_str()))?;
            Ok(PlannedPage {
                url: p.url.clone(),
                plan,
            })
        })
        .collect::<Result<Vec<_>, CurationError>>()?;
    write(&a.out, &planned, m)?;
    m.count("pages", planned.len());
    let mut per_class: BTreeMap<String, usize> = BTreeMap::new();
    for p in &planned {
        let key = serde_json::to_value(p.plan.class)?
            .as_str()
            .unwrap_or_default()
            .to_string();
        *per_class.entry(key).or_default() += 1;
    }
    m.detail("pages_per_class", per_class);
    Ok(())
}

fn filter(a: &FilterArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let screens: Vec<ScreenRecord> = read(&a.input, m)?;
    let mut cfg: FilterConfig = load_config(a.config.as_deref(), m)?;
    if let Some(v) = a.containment_iou {
        cfg.containment_iou = v;
    }
    if let Some(v) = a.empty_std {
        cfg.empty_std = v;
    }
    if let Some(v) = a.text_aspect {
        cfg.text_aspect = v;
    }
    cfg.validate()?;
    m.detail("filter_config", cfg);
    m.detail("empty_region_checked", a.image_root.is_some());

    let results = screens
        .par_iter()
        .map(|s| {
            let gray = match &a.image_root {
                None => None,
                Some(root) => {
                    let path = resolve(root, &s.image_ref);
                    let img = image::open(&path)
                        .with_context(|| format!("screenshot {}", path.display()))?;
                    if (img.width(), img.height()) != (s.dims.w, s.dims.h) {
                        bail!(
                            "screenshot {} is {}x{}, record says {}x{}",
                            path.display(),
                            img.width(),
                            img.height(),
                            s.dims.w,
                            s.dims.h
                        );
                    }
                    Some(img.to_luma8())
                }
            };
            Ok(filter_screen(s, gray.as_ref(), &cfg))
        })
        .collect::<anyhow::Result<Vec<(ScreenRecord, Vec<FilterAudit>)>>>()?;

    let (kept, audits): (Vec<ScreenRecord>, Vec<Vec<FilterAudit>>) = results.into_iter().unzip();
    let audits: Vec<FilterAudit> = audits.into_iter().flatten().collect();
    write(&a.out, &kept, m)?;
    write(&a.audit_path(), &audits, m)?;

    m.count("screens", screens.len());
    m.count(
        "elements_in",
        screens.iter().map(|s| s.elements.len()).sum(),
    );
    m.count("elements_out", kept.iter().map(|s| s.elements.len()).sum());
    m.count("removed", audits.len());
    let mut by_rule: BTreeMap<String, usize> = BTreeMap::new();
    for au in &audits {
        let key = serde_json::to_value(au.rule)?
            .as_str()
            .unwrap_or_default()
            .to_string();
        *by_rule.entry(key).or_default() += 1;
    }
    m.detail("removed_by_rule", by_rule);
    Ok(())
}

fn resample(a: &ResampleArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let screens: Vec<ScreenRecord> = read(&a.input, m)?;
    let mut cfg: GridSamplerConfig = load_config(a.config.as_deref(), m)?;
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(v) = a.m {
        cfg.m = v;
    }
    if let Some(psi) = a.psi {
        cfg.psi = psi;
    }
    cfg.validate()?;

    let mut owners = Vec::new();
    let mut centers = Vec::new();
    for (si, s) in screens.iter().enumerate() {
        for (ei, e) in s.elements.iter().enumerate() {
            owners.push((si, ei));
            centers.push(element_center(e));
        }
    }
    let outcome = grid_resample(&centers, &cfg, &RngStream::new(a.seed, "resample"))?;
    let mut keep: Vec<Vec<bool>> = screens
        .iter()
        .map(|s| vec![false; s.elements.len()])
        .collect();
    for &idx in &outcome.kept {
        let (si, ei) = owners[idx];
        keep[si][ei] = true;
    }
    let out: Vec<ScreenRecord> = screens
        .iter()
        .zip(&keep)
        .filter_map(|(s, mask)| {
            let mut s = s.clone();
            s.elements = s
                .elements
                .into_iter()
                .zip(mask)
                .filter(|(_, &k)| k)
                .map(|(e, _)| e)
                .collect();
            (a.keep_empty || !s.elements.is_empty()).then_some(s)
        })
        .collect();
    write(&a.out, &out, m)?;

    let kept_centers: Vec<_> = outcome.kept.iter().map(|&i| centers[i]).collect();
    m.detail("grid", cfg);
    m.detail("keep_number", outcome.keep_number);
    m.detail(
        "chi_square_before",
        chi_square_occupied(&cell_counts(&centers, cfg.n, cfg.m)),
    );
    m.detail(
        "chi_square_after",
        chi_square_occupied(&cell_counts(&kept_centers, cfg.n, cfg.m)),
    );
    m.count("screens_in", screens.len());
    m.count("screens_out", out.len());
    m.count("elements_in", centers.len());
    m.count("elements_out", outcome.kept.len());
    Ok(())
}

fn select(a: &SelectArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let screens: Vec<ScreenRecord> = read(&a.input, m)?;
    let picked: Vec<Option<SelectedSample>> = screens
        .par_iter()
        .map(|s| {
            let mut rng = RngStream::new(a.seed, s.screen_id.as_str());
            match select_element(s, &mut rng) {
                Ok(e) => Ok(Some(SelectedSample {
                    schema_version: SCHEMA_VERSION,
                    sample_id: format!("{}:{}", s.screen_id, e.element_id),
                    screen_id: s.screen_id.clone(),
                    image_ref: s.image_ref.clone(),
                    dims: s.dims,
                    element: e.clone(),
                })),
                Err(CurationError::NoElements) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, _>>()?;
    let samples: Vec<SelectedSample> = picked.into_iter().flatten().collect();
    write(&a.out, &samples, m)?;
    m.count("screens", screens.len());
    m.count("samples", samples.len());
    m.count("screens_without_elements", screens.len() - samples.len());
    Ok(())
}

fn augment(a: &AugmentArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let samples: Vec<SelectedSample> = read(&a.input, m)?;
    let mut cfg: AugConfig = load_config(a.config.as_deref(), m)?;
    if let Some(v) = a.random_crop {
        cfg.random_crop = v;
    }
    if let Some(v) = a.min_crop {
        cfg.min_crop = v;
    }
    if let Some(v) = a.random_resize {
        cfg.random_resize = v;
    }
    if let Some(v) = a.max_screen_size {
        cfg.max_screen_size = v;
    }
    cfg.validate()?;
    m.detail("aug_config", cfg);
    fs::create_dir_all(&a.image_out)?;

    let records = samples
        .par_iter()
        .map(|s| {
            let path = resolve(&a.image_root, &s.image_ref);
            let img = image::open(&path)
                .with_context(|| format!("screenshot {}", path.display()))?
                .to_rgb8();
            let target = match a.target {
                Some((w, h)) => PixelDims::new(w, h)?,
                None => PixelDims::new(img.width(), img.height())?,
            };
            let rng = RngStream::new(a.seed, s.sample_id.as_str());
            let (out, bbox, trace) = augment_sample(&img, &s.element.bbox, target, &cfg, &rng)
                .with_context(|| format!("sample {}", s.sample_id))?;
            let name = format!("{}.png", file_stem_safe(&s.sample_id));
            out.save(a.image_out.join(&name))?;

            let (re_mask, instruction) = match &s.element.references {
                Some(refs) => {
                    let (mask, text) = sample_re_combination(refs, &mut rng.derive("re"));
                    (Some(mask), Some(text))
                }
                None => (None, None),
            };
            let geom = if a.format.is_box() {
                Geom::Box(bbox)
            } else {
                Geom::Point(bbox.center())
            };
            Ok(TrainingRecord {
                schema_version: SCHEMA_VERSION,
                sample_id: s.sample_id.clone(),
                screen_id: s.screen_id.clone(),
                element_id: s.element.element_id.clone(),
                image_ref: name,
                dims: PixelDims::new(out.width(), out.height())?,
                instruction,
                re_mask,
                format: a.format,
                target_text: encode(&geom, a.format),
                bbox,
                trace,
            })
        })
        .collect::<anyhow::Result<Vec<TrainingRecord>>>()?;
    write(&a.out, &records, m)?;
    m.output(&a.image_out)?;
    m.count("samples", records.len());
    m.count(
        "with_instruction",
        records.iter().filter(|r| r.instruction.is_some()).count(),
    );
    Ok(())
}

/// Copy of the screenshot with a red frame around the box.
pub fn highlight(img: &RgbImage, bbox: &NormBox) -> RgbImage {
    let mut out = img.clone();
    let (w, h) = out.dimensions();
    let [x0, y0, x1, y1] = pixel_cover(bbox, w, h);
    let t = (w.min(h) / 300).max(2);
    let red = Rgb([255, 0, 0]);
    for y in y0.saturating_sub(t)..(y1 + t).min(h) {
        for x in x0.saturating_sub(t)..(x1 + t).min(w) {
            let inside = x >= x0 && x < x1 && y >= y0 && y < y1;
            if !inside {
                out.put_pixel(x, y, red);
            }
        }
    }
    out
}

/// Pixels covered by the box, at least one pixel each way.
fn pixel_cover(bbox: &NormBox, w: u32, h: u32) -> [u32; 4] {
    let x0 = ((bbox.x1 * f64::from(w)).floor() as u32).min(w - 1);
    let y0 = ((bbox.y1 * f64::from(h)).floor() as u32).min(h - 1);
    let x1 = ((bbox.x2 * f64::from(w)).ceil() as u32).clamp(x0 + 1, w);
    let y1 = ((bbox.y2 * f64::from(h)).ceil() as u32).clamp(y0 + 1, h);
    [x0, y0, x1, y1]
}

pub fn crop_target(img: &RgbImage, bbox: &NormBox) -> RgbImage {
    let [x0, y0, x1, y1] = pixel_cover(bbox, img.width(), img.height());
    image::imageops::crop_imm(img, x0, y0, x1 - x0, y1 - y0).to_image()
}

fn regen(a: &RegenArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    groundkit_refgen::verify_templates()?;
    let samples: Vec<SelectedSample> = read(&a.input, m)?;
    let mut cfg: EndpointConfig = match &a.endpoint_config {
        Some(p) => {
            m.input(p)?;
            serde_json::from_str(&fs::read_to_string(p)?)?
        }
        None => EndpointConfig::default(),
    };
    if let Some(v) = &a.base_url {
        cfg.base_url = v.clone();
    }
    if let Some(v) = &a.model {
        cfg.model_name = v.clone();
    }
    if let Some(v) = &a.token_env {
        cfg.auth_token_env_var = v.clone();
    }
    m.detail("endpoint", &cfg);
    fs::create_dir_all(&a.asset_dir)?;
    let limiter = TokenBucket::new(a.concurrency.max(1) as u32, a.requests_per_second);

    let results = run_bounded(
        &samples,
        a.concurrency,
        |s| -> Result<SelectedSample, RejectRecord> {
            let reject = |e: anyhow::Error| RejectRecord {
                item_id: s.sample_id.clone(),
                error: error_kind(&e).to_string(),
                message: format!("{e:#}"),
                raw_response: None,
            };
            let stem = file_stem_safe(&s.sample_id);
            let shot = a.asset_dir.join(format!("{stem}.highlight.png"));
            let crop = a.asset_dir.join(format!("{stem}.crop.png"));
            let img = image::open(resolve(&a.image_root, &s.image_ref))
                .map_err(|e| reject(e.into()))?
                .to_rgb8();
            highlight(&img, &s.element.bbox)
                .save(&shot)
                .map_err(|e| reject(e.into()))?;
            crop_target(&img, &s.element.bbox)
                .save(&crop)
                .map_err(|e| reject(e.into()))?;
            let payload = build_longgold_prompt(&shot, &crop).map_err(|e| reject(e.into()))?;
            let refs = annotate(&s.sample_id, &payload, &cfg, Some(&limiter))?;
            let mut out = s.clone();
            out.element.references = Some(refs);
            Ok(out)
        },
    );

    let mut done = Vec::new();
    let mut rejects = Vec::new();
    for r in results {
        match r {
            Ok(s) => done.push(s),
            Err(rej) => rejects.push(rej),
        }
    }
    // An authentication failure means every item will fail; stop loudly.
    if let Some(auth) = rejects.iter().find(|r| r.error == "auth_error") {
        bail!(RefgenError::AuthError(auth.message.clone()));
    }
    write(&a.out, &done, m)?;
    let rejects_path = a.rejects_path();
    if rejects_path.exists() {
        fs::remove_file(&rejects_path)?;
    }
    append_rejects(&rejects_path, &rejects)?;
    m.output(&rejects_path)?;
    m.count("samples", samples.len());
    m.count("annotated", done.len());
    m.count("rejected", rejects.len());
    Ok(())
}

#[derive(Serialize)]
struct CurriculumLine<'a> {
    sample_id: &'a str,
    difficulty: f64,
}

fn triage(a: &TriageArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let sets: Vec<RolloutSet> = read(&a.input, m)?;
    let pairing = match a.pairing {
        PairingArg::FirstPair => Pairing::FirstPair,
        PairingArg::AllPairs => Pairing::AllPairs,
        PairingArg::MaxK => Pairing::MaxK(a.k),
    };
    let outcomes = triage_all(&sets, pairing)?;
    let pairs: Vec<_> = outcomes
        .iter()
        .flat_map(|o| o.pairs.iter().cloned())
        .collect();
    let sft: Vec<String> = outcomes
        .iter()
        .flat_map(|o| o.reject_sft.iter().cloned())
        .collect();
    let schedule = RoundSchedule {
        rounds: a.rounds,
        refresh_interval_steps: a.refresh_interval_steps,
    };
    let (manifest_path, round) = export_round(&a.out_dir, &pairs, &sft, schedule, a.round)?;
    let dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();

    let by_id: BTreeMap<&str, f64> = outcomes
        .iter()
        .map(|o| (o.sample_id.as_str(), o.difficulty))
        .collect();
    let diffs: Vec<(String, f64)> = outcomes
        .iter()
        .map(|o| (o.sample_id.clone(), o.difficulty))
        .collect();
    let order = curriculum_order(
        &diffs,
        &mut RngStream::new(a.seed, format!("curriculum:{}", a.round)),
    );
    let lines: Vec<CurriculumLine> = order
        .iter()
        .map(|id| CurriculumLine {
            sample_id: id,
            difficulty: by_id[id.as_str()],
        })
        .collect();
    for f in [&round.pairs_file, &round.sft_file] {
        m.output(&dir.join(f))?;
    }
    m.output(&manifest_path)?;
    write(&dir.join("curriculum.jsonl"), &lines, m)?;

    m.count("samples", sets.len());
    m.count("pairs", round.pair_count);
    m.count("sft", round.sft_count);
    m.count(
        "zero_pair_samples",
        outcomes.iter().filter(|o| o.pairs.is_empty()).count(),
    );
    m.detail("round_index", a.round);
    m.detail("schedule", schedule);
    Ok(())
}

fn eval(a: &EvalArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let opts = LoadOptions {
        adapter: a.adapter,
        image_root: a.image_root.clone(),
        missing_images: if a.strict_images {
            MissingImagePolicy::Fail
        } else {
            MissingImagePolicy::Warn
        },
    };
    let bench = load_benchmark(&a.benchmark, &opts)?;
    m.input(&a.benchmark)?;
    let preds = load_predictions(&a.predictions)?;
    m.input(&a.predictions)?;
    let cfg = ScoreConfig {
        click_source: a.click_source,
        box_format: a.box_format,
        slice_keys: a.slice_keys.clone(),
    };
    let report = score(&bench.records, &preds, &cfg)?;
    if let Some(parent) = a.out_json.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    report.write_json(&a.out_json)?;
    m.output(&a.out_json)?;
    if let Some(csv) = &a.out_csv {
        report.write_csv(csv)?;
        m.output(csv)?;
    }
    m.count("records", bench.records.len());
    m.count("predictions", preds.len());
    m.count("warnings", bench.warnings.len());
    m.detail("warnings", &bench.warnings);
    m.detail("macro_accuracy", &report.macro_accuracy);
    Ok(())
}

fn flops(a: &FlopsArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    if let Some(entries) = &a.entries {
        let rows = pareto_table(&read_pareto_entries(entries)?)?;
        m.input(entries)?;
        match &a.out {
            Some(out) => {
                write_pareto_csv(out, &rows)?;
                m.output(out)?;
            }
            None => println!("{}", serde_json::to_string_pretty(&rows)?),
        }
        m.count("models", rows.len());
        m.count("frontier", rows.iter().filter(|r| r.frontier).count());
        return Ok(());
    }
    let (Some(params), Some(tokens)) = (a.params, a.image_tokens) else {
        bail!("--params and --image-tokens are required without --entries");
    };
    let est = flops_estimate(params, tokens)?;
    let body = serde_json::to_string_pretty(&est)?;
    match &a.out {
        Some(out) => {
            fs::write(out, format!("{body}\n"))?;
            m.output(out)?;
        }
        None => println!("{body}"),
    }
    m.detail("estimate", est);
    Ok(())
}

fn serve(a: &ServeArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let store = ReviewStore::open(&a.store, &a.log, a.image_root.clone())?;
    m.input(&a.store)?;
    m.count("screens", store.screen_count());
    m.count("verdicts", store.verdict_count());
    let token = match &a.token_env {
        Some(var) => {
            Some(std::env::var(var).with_context(|| format!("environment variable `{var}`"))?)
        }
        None => None,
    };
    // The manifest is written before blocking so the run is recorded.
    let path = sibling_manifest(&a.log);
    m.write(&path)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(crate::review::serve(store, a.bind, token))?;
    Ok(())
}

fn sibling_manifest(p: &Path) -> PathBuf {
    let mut name = p.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    p.with_file_name(name)
}

fn export(a: &ExportArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let store = ReviewStore::load(&a.store, &a.log, None)?;
    m.input(&a.store)?;
    if a.log.exists() {
        m.input(&a.log)?;
    }
    let screens = store.export();
    write(&a.out, &screens, m)?;
    m.count("screens", screens.len());
    m.count(
        "elements_out",
        screens.iter().map(|s| s.elements.len()).sum(),
    );
    m.count("removed", store.removed_count());
    Ok(())
}
