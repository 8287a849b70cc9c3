//! Box-aware augmentation: proportional random crop and random
//! resize-onto-canvas.
//!
//! Both operations come in two layers. `random_crop` / `random_resize_pad`
//! draw their random values from an [`RngStream`] in a fixed order and then
//! delegate to `crop_with_factors` / `resize_pad_with`, which are fully
//! deterministic and take the drawn values as arguments.

use image::{imageops, Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::AugmentError;
use crate::geometry::{NormBox, PixelDims};
use crate::rng::RngStream;

pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);

/// Pixel bounds closer than this to an integer snap to it before the
/// outward floor/ceil, so exact windows like `[60, 820)` survive float noise.
const SNAP_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugConfig {
    pub random_crop: f64,
    pub min_crop: f64,
    pub random_resize: f64,
    pub max_screen_size: u32,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            random_crop: 0.3,
            min_crop: 0.7,
            random_resize: 1.0,
            max_screen_size: 4096,
        }
    }
}

impl AugConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        for (name, p) in [
            ("random_crop", self.random_crop),
            ("random_resize", self.random_resize),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(AugmentError::InvalidConfig(format!(
                    "{name} = {p} is not a probability"
                )));
            }
        }
        if !(self.min_crop > 0.0 && self.min_crop <= 1.0) {
            return Err(AugmentError::InvalidConfig(format!(
                "min_crop = {} must lie in (0, 1]",
                self.min_crop
            )));
        }
        if self.max_screen_size == 0 {
            return Err(AugmentError::InvalidConfig("max_screen_size = 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropTrace {
    pub gate: f64,
    pub applied: bool,
    pub factor_x: Option<f64>,
    pub factor_y: Option<f64>,
    /// Real-valued crop window `(x1, y1, x2, y2)` in source pixels.
    pub window: [f64; 4],
    /// Integer pixel window actually cut from the source, half-open.
    pub window_px: [u32; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResizeTrace {
    pub gate: f64,
    pub applied: bool,
    pub s_min: f64,
    pub s_max: f64,
    pub scale: f64,
    pub pasted_w: u32,
    pub pasted_h: u32,
    pub pos_x: u32,
    pub pos_y: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugTrace {
    RandomCrop(CropTrace),
    RandomResizePad(ResizeTrace),
}

#[derive(Debug, Clone)]
pub struct AugResult {
    pub image: RgbImage,
    pub bbox: NormBox,
    pub trace: AugTrace,
}

fn dims_of(image: &RgbImage) -> Result<PixelDims, AugmentError> {
    Ok(PixelDims::new(image.width(), image.height())?)
}

fn snap_down(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP_EPS {
        r
    } else {
        v.floor()
    }
}

fn snap_up(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP_EPS {
        r
    } else {
        v.ceil()
    }
}

/// Widens an integer window `[lo, hi)` on the side away from the box so the
/// box center (given doubled, in pixels) stays on the same side of the window
/// middle as it was in the full frame. Outward rounding alone can move a
/// center that sits just off the middle onto it.
fn keep_side(mut lo: u32, mut hi: u32, center2: f64, extent: u32) -> (u32, u32) {
    let full = f64::from(extent);
    let center2 = if (center2 - center2.round()).abs() < SNAP_EPS {
        center2.round()
    } else {
        center2
    };
    if center2 < full {
        while f64::from(lo + hi) <= center2 && hi < extent {
            hi += 1;
        }
    } else if center2 > full {
        while f64::from(lo + hi) >= center2 && lo > 0 {
            lo -= 1;
        }
    }
    (lo, hi)
}

fn unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Real-valued proportional crop window along one axis.
///
/// The margin on each side of the box keeps the same fraction `factor`, so
/// the box keeps its relative side of the frame.
pub fn crop_axis(extent: f64, lo: f64, hi: f64, factor: f64) -> (f64, f64) {
    let margin_lo = lo;
    let margin_hi = 1.0 - hi;
    let start = extent * margin_lo * (1.0 - factor);
    let end = extent * (hi + margin_hi * factor);
    (start, end)
}

/// Crops `image` around `bbox` with explicit per-axis factors in
/// `[min_crop, 1]`.
pub fn crop_with_factors(
    image: &RgbImage,
    bbox: &NormBox,
    factor_x: f64,
    factor_y: f64,
) -> Result<(RgbImage, NormBox, [f64; 4], [u32; 4]), AugmentError> {
    let dims = dims_of(image)?;
    let (w, h) = (f64::from(dims.w), f64::from(dims.h));
    let (cx1, cx2) = crop_axis(w, bbox.x1, bbox.x2, factor_x);
    let (cy1, cy2) = crop_axis(h, bbox.y1, bbox.y2, factor_y);

    let left = snap_down(cx1).clamp(0.0, w) as u32;
    let top = snap_down(cy1).clamp(0.0, h) as u32;
    let right = snap_up(cx2).clamp(0.0, w) as u32;
    let bottom = snap_up(cy2).clamp(0.0, h) as u32;
    let (cw, ch) = (right.saturating_sub(left), bottom.saturating_sub(top));
    if cw == 0 || ch == 0 {
        return Err(AugmentError::EmptyCrop {
            width: cw,
            height: ch,
        });
    }
    let (left, right) = keep_side(left, right, w * (bbox.x1 + bbox.x2), dims.w);
    let (top, bottom) = keep_side(top, bottom, h * (bbox.y1 + bbox.y2), dims.h);
    let (cw, ch) = (right - left, bottom - top);

    let (l, t, cwf, chf) = (
        f64::from(left),
        f64::from(top),
        f64::from(cw),
        f64::from(ch),
    );
    let out_box = NormBox::new(
        unit((w * bbox.x1 - l) / cwf),
        unit((h * bbox.y1 - t) / chf),
        unit((w * bbox.x2 - l) / cwf),
        unit((h * bbox.y2 - t) / chf),
    )?;
    let cropped = imageops::crop_imm(image, left, top, cw, ch).to_image();
    Ok((
        cropped,
        out_box,
        [cx1, cy1, cx2, cy2],
        [left, top, right, bottom],
    ))
}

/// Proportional random crop. Draw order: gate, `factor_x`, `factor_y`.
pub fn random_crop(
    image: &RgbImage,
    bbox: &NormBox,
    cfg: &AugConfig,
    rng: &mut RngStream,
) -> Result<AugResult, AugmentError> {
    cfg.validate()?;
    let dims = dims_of(image)?;
    let gate: f64 = rng.random();
    if gate >= cfg.random_crop {
        let (w, h) = (f64::from(dims.w), f64::from(dims.h));
        return Ok(AugResult {
            image: image.clone(),
            bbox: *bbox,
            trace: AugTrace::RandomCrop(CropTrace {
                gate,
                applied: false,
                factor_x: None,
                factor_y: None,
                window: [0.0, 0.0, w, h],
                window_px: [0, 0, dims.w, dims.h],
            }),
        });
    }
    let factor_x = cfg.min_crop + rng.random::<f64>() * (1.0 - cfg.min_crop);
    let factor_y = cfg.min_crop + rng.random::<f64>() * (1.0 - cfg.min_crop);
    let (cropped, out_box, window, window_px) = crop_with_factors(image, bbox, factor_x, factor_y)?;
    Ok(AugResult {
        image: cropped,
        bbox: out_box,
        trace: AugTrace::RandomCrop(CropTrace {
            gate,
            applied: true,
            factor_x: Some(factor_x),
            factor_y: Some(factor_y),
            window,
            window_px,
        }),
    })
}

/// Scale bounds `(s_min, s_max)` for placing a `source` image on a `target`
/// canvas.
pub fn scale_bounds(
    source: PixelDims,
    target: PixelDims,
    max_screen_size: u32,
) -> Result<(f64, f64), AugmentError> {
    let (w, h) = (f64::from(source.w), f64::from(source.h));
    let (cw, ch) = (f64::from(target.w), f64::from(target.h));
    let s_max = 1.0f64.min(cw / w).min(ch / h);
    let s_min = cw / f64::from(max_screen_size) * s_max;
    if s_min > s_max {
        return Err(AugmentError::InvalidConfig(format!(
            "max_screen_size {max_screen_size} is smaller than canvas width {}",
            target.w
        )));
    }
    Ok((s_min, s_max))
}

/// Pasted size of a `source` image resized by `scale`, at least one pixel and
/// never larger than the canvas.
pub fn pasted_size(source: PixelDims, target: PixelDims, scale: f64) -> (u32, u32) {
    let pw = (f64::from(source.w) * scale)
        .round()
        .clamp(1.0, f64::from(target.w)) as u32;
    let ph = (f64::from(source.h) * scale)
        .round()
        .clamp(1.0, f64::from(target.h)) as u32;
    (pw, ph)
}

/// Resizes `image` by `scale` (bilinear) and pastes it at `pos` on a
/// `target`-sized canvas filled with `pad`.
pub fn resize_pad_with(
    image: &RgbImage,
    bbox: &NormBox,
    target: PixelDims,
    scale: f64,
    pos: (u32, u32),
    pad: Rgb<u8>,
) -> Result<(RgbImage, NormBox, (u32, u32)), AugmentError> {
    let source = dims_of(image)?;
    let (pw, ph) = pasted_size(source, target, scale);
    if pos.0 + pw > target.w || pos.1 + ph > target.h {
        return Err(AugmentError::InvalidConfig(format!(
            "paste at ({}, {}) of {pw}x{ph} overflows {}x{} canvas",
            pos.0, pos.1, target.w, target.h
        )));
    }
    let resized = if (pw, ph) == (source.w, source.h) {
        image.clone()
    } else {
        imageops::resize(image, pw, ph, imageops::FilterType::Triangle)
    };
    let mut canvas = RgbImage::from_pixel(target.w, target.h, pad);
    imageops::replace(&mut canvas, &resized, i64::from(pos.0), i64::from(pos.1));

    let (px, py) = (f64::from(pos.0), f64::from(pos.1));
    let (pwf, phf) = (f64::from(pw), f64::from(ph));
    let (cw, ch) = (f64::from(target.w), f64::from(target.h));
    let out_box = NormBox::new(
        unit((px + bbox.x1 * pwf) / cw),
        unit((py + bbox.y1 * phf) / ch),
        unit((px + bbox.x2 * pwf) / cw),
        unit((py + bbox.y2 * phf) / ch),
    )?;
    Ok((canvas, out_box, (pw, ph)))
}

/// Random resize onto a fixed canvas. Draw order: gate, scale, `pos_x`,
/// `pos_y`.
pub fn random_resize_pad(
    image: &RgbImage,
    bbox: &NormBox,
    target: PixelDims,
    cfg: &AugConfig,
    rng: &mut RngStream,
    pad: Rgb<u8>,
) -> Result<AugResult, AugmentError> {
    cfg.validate()?;
    let source = dims_of(image)?;
    let (s_min, s_max) = scale_bounds(source, target, cfg.max_screen_size)?;
    let gate: f64 = rng.random();
    let applied = gate < cfg.random_resize;
    let (scale, pos) = if applied {
        let scale = s_min + rng.random::<f64>() * (s_max - s_min);
        let (pw, ph) = pasted_size(source, target, scale);
        let pos_x = rng.random_range(0..=target.w - pw);
        let pos_y = rng.random_range(0..=target.h - ph);
        (scale, (pos_x, pos_y))
    } else {
        (s_max, (0, 0))
    };
    let (canvas, out_box, (pw, ph)) = resize_pad_with(image, bbox, target, scale, pos, pad)?;
    Ok(AugResult {
        image: canvas,
        bbox: out_box,
        trace: AugTrace::RandomResizePad(ResizeTrace {
            gate,
            applied,
            s_min,
            s_max,
            scale,
            pasted_w: pw,
            pasted_h: ph,
            pos_x: pos.0,
            pos_y: pos.1,
        }),
    })
}

/// Crop followed by resize-pad, each on its own derived stream.
pub fn augment_sample(
    image: &RgbImage,
    bbox: &NormBox,
    target: PixelDims,
    cfg: &AugConfig,
    rng: &RngStream,
) -> Result<(RgbImage, NormBox, Vec<AugTrace>), AugmentError> {
    let cropped = random_crop(image, bbox, cfg, &mut rng.derive("crop"))?;
    let placed = random_resize_pad(
        &cropped.image,
        &cropped.bbox,
        target,
        cfg,
        &mut rng.derive("resize"),
        WHITE,
    )?;
    Ok((placed.image, placed.bbox, vec![cropped.trace, placed.trace]))
}
