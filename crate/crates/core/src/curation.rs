//! Web-corpus curation: per-domain page caps, render-resolution planning,
//! element retention and offline filters, spatial grid re-sampling of element
//! centers, and per-screenshot element selection.

use std::collections::{BTreeMap, HashMap};

use image::{GrayImage, Rgb, RgbImage};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::CurationError;
use crate::geometry::{box_center, iou, NormBox, NormPoint, PixelDims};
use crate::records::{ElementKind, ElementRecord, ScreenRecord};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub domain_cap: usize,
    pub containment_iou: f64,
    pub empty_std: f64,
    pub text_aspect: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            domain_cap: 50,
            containment_iou: 0.9,
            empty_std: 2.0,
            text_aspect: 10.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), CurationError> {
        if self.domain_cap == 0
            || [self.containment_iou, self.empty_std, self.text_aspect]
                .iter()
                .any(|v| v.is_nan() || *v <= 0.0)
        {
            return Err(CurationError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSamplerConfig {
    pub n: usize,
    pub m: usize,
    pub psi: f64,
}

impl Default for GridSamplerConfig {
    fn default() -> Self {
        Self {
            n: 50,
            m: 50,
            psi: 0.5,
        }
    }
}

impl GridSamplerConfig {
    pub fn validate(&self) -> Result<(), CurationError> {
        if self.n == 0 || self.m == 0 || !(0.0..=1.0).contains(&self.psi) {
            return Err(CurationError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Domain cap

/// Keeps at most `cfg.domain_cap` pages per domain, chosen uniformly at
/// random per domain. Output preserves input order.
pub fn domain_cap_sample(
    pages: &[(String, String)],
    cfg: &FilterConfig,
    rng: &RngStream,
) -> Vec<String> {
    let mut by_domain: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (idx, (_, domain)) in pages.iter().enumerate() {
        by_domain.entry(domain.as_str()).or_default().push(idx);
    }
    let mut keep = vec![false; pages.len()];
    for (domain, idxs) in by_domain {
        if idxs.len() <= cfg.domain_cap {
            idxs.iter().for_each(|&i| keep[i] = true);
            continue;
        }
        let mut stream = rng.derive(&format!("domain:{domain}"));
        for pick in index::sample(&mut stream, idxs.len(), cfg.domain_cap) {
            keep[idxs[pick]] = true;
        }
    }
    pages
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|((url, _), _)| url.clone())
        .collect()
}

// ---------------------------------------------------------------------------
// Render planning

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RenderClass {
    #[serde(rename = "1080p")]
    P1080,
    #[serde(rename = "2.5k")]
    K2_5,
    #[serde(rename = "4k")]
    K4,
}

impl RenderClass {
    pub const ALL: [RenderClass; 3] = [RenderClass::P1080, RenderClass::K2_5, RenderClass::K4];

    /// Pixel area of the class.
    pub fn space(self) -> u64 {
        match self {
            RenderClass::P1080 => 1920 * 1080,
            RenderClass::K2_5 => 2560 * 1440,
            RenderClass::K4 => 3840 * 2160,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderPlan {
    pub class: RenderClass,
    pub space: u64,
    pub aspect_index: u32,
    pub aspect_steps: u32,
    pub rw: f64,
    pub rh: f64,
    pub s: u64,
    pub width: u64,
    pub height: u64,
}

/// Plans the render viewport for aspect `(1 + i/n, 2 - i/n)`.
///
/// `s = ceil(sqrt(space / (rw * rh)))` is computed exactly in integers:
/// the smallest `s` with `s^2 (n + i)(2n - i) >= space * n^2`.
pub fn plan_render(
    class: RenderClass,
    aspect_index: u32,
    aspect_steps: u32,
) -> Result<RenderPlan, CurationError> {
    if aspect_steps == 0 || aspect_index > aspect_steps {
        return Err(CurationError::InvalidConfig(format!(
            "aspect index {aspect_index} outside 0..={aspect_steps}"
        )));
    }
    let (i, n) = (u128::from(aspect_index), u128::from(aspect_steps));
    let space = u128::from(class.space());
    let wn = n + i;
    let hn = 2 * n - i;
    let target = space * n * n;
    let prod = wn * hn;

    let mut s = ((target as f64 / prod as f64).sqrt().floor() as u128).max(1);
    while s > 1 && (s - 1) * (s - 1) * prod >= target {
        s -= 1;
    }
    while s * s * prod < target {
        s += 1;
    }
    // round(k * s / n) with ties away from zero.
    let round_div = |k: u128| (2 * k * s + n) / (2 * n);
    Ok(RenderPlan {
        class,
        space: class.space(),
        aspect_index,
        aspect_steps,
        rw: wn as f64 / n as f64,
        rh: hn as f64 / n as f64,
        s: s as u64,
        width: round_div(wn) as u64,
        height: round_div(hn) as u64,
    })
}

/// Draws a class uniformly and an aspect index uniformly in `0..=steps`.
pub fn plan_render_random(
    aspect_steps: u32,
    rng: &mut RngStream,
) -> Result<RenderPlan, CurationError> {
    let class = RenderClass::ALL[rng.random_range(0..RenderClass::ALL.len())];
    let i = rng.random_range(0..=aspect_steps);
    plan_render(class, i, aspect_steps)
}

// ---------------------------------------------------------------------------
// Element retention

pub const INTERACTIVE_TAGS: [&str; 6] = ["button", "input", "textarea", "select", "a", "form"];
pub const EVENT_ATTRIBUTES: [&str; 6] = [
    "onclick",
    "onmousedown",
    "onmouseup",
    "onmouseover",
    "onmouseout",
    "onkeydown",
];
pub const INTERACTIVE_ROLES: [&str; 9] = [
    "button", "link", "textbox", "menuitem", "option", "checkbox", "radio", "tab", "switch",
];
pub const INTERACTIVE_CLASSES: [&str; 7] =
    ["btn", "button", "input", "link", "nav", "menu", "item"];
pub const ICON_TAGS: [&str; 3] = ["i", "span", "svg"];
pub const ICON_CLASSES: [&str; 6] = ["fa", "fas", "far", "fal", "fab", "material-icons"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetainRule {
    InteractiveTag,
    EventAttribute,
    RoleAttribute,
    InteractiveClass,
    Icon,
    Image,
}

fn class_tokens(e: &ElementRecord) -> impl Iterator<Item = &str> {
    e.attributes
        .get("class")
        .map(String::as_str)
        .unwrap_or("")
        .split_whitespace()
}

/// The first retention rule `e` satisfies, if any.
pub fn retention_rule(e: &ElementRecord) -> Option<RetainRule> {
    let tag = e.html_tag.to_ascii_lowercase();
    if INTERACTIVE_TAGS.contains(&tag.as_str()) {
        return Some(RetainRule::InteractiveTag);
    }
    if e.attributes
        .keys()
        .any(|k| EVENT_ATTRIBUTES.contains(&k.to_ascii_lowercase().as_str()))
    {
        return Some(RetainRule::EventAttribute);
    }
    if let Some(role) = e.attributes.get("role") {
        if INTERACTIVE_ROLES.contains(&role.trim().to_ascii_lowercase().as_str()) {
            return Some(RetainRule::RoleAttribute);
        }
    }
    if class_tokens(e).any(|c| INTERACTIVE_CLASSES.contains(&c)) {
        return Some(RetainRule::InteractiveClass);
    }
    if ICON_TAGS.contains(&tag.as_str()) && class_tokens(e).any(|c| ICON_CLASSES.contains(&c)) {
        return Some(RetainRule::Icon);
    }
    if tag == "img" {
        return Some(RetainRule::Image);
    }
    None
}

pub fn retain_element(e: &ElementRecord) -> bool {
    retention_rule(e).is_some()
}

// ---------------------------------------------------------------------------
// Offline filters

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterRule {
    NotInteractive,
    ContentText,
    OuterBox,
    NestedContainment,
    EmptyRegion,
}

/// Removes container boxes: first any box strictly containing two or more
/// others, then the larger box of every nested pair with IoU above
/// `cfg.containment_iou`. Returns kept indices and `(index, rule)` removals.
pub fn dedup_boxes_audited(
    boxes: &[NormBox],
    cfg: &FilterConfig,
) -> (Vec<usize>, Vec<(usize, FilterRule)>) {
    let n = boxes.len();
    let mut alive = vec![true; n];
    let mut removed = Vec::new();

    for i in 0..n {
        let inner = (0..n)
            .filter(|&j| j != i && boxes[i] != boxes[j] && boxes[i].contains(&boxes[j]))
            .take(2)
            .count();
        if inner >= 2 {
            alive[i] = false;
            removed.push((i, FilterRule::OuterBox));
        }
    }

    for i in 0..n {
        for j in (i + 1)..n {
            if !alive[i] {
                break;
            }
            if !alive[j] {
                continue;
            }
            let (a, b) = (&boxes[i], &boxes[j]);
            let nested = a.contains(b) || b.contains(a);
            if nested && iou(a, b) > cfg.containment_iou {
                let loser = if b.area() >= a.area() { j } else { i };
                alive[loser] = false;
                removed.push((loser, FilterRule::NestedContainment));
            }
        }
    }
    let kept = (0..n).filter(|&i| alive[i]).collect();
    (kept, removed)
}

pub fn dedup_boxes(boxes: &[NormBox], cfg: &FilterConfig) -> Vec<usize> {
    dedup_boxes_audited(boxes, cfg).0
}

/// Population standard deviation of grayscale values.
pub fn pixel_std(pixels: &[u8]) -> Result<f64, CurationError> {
    if pixels.is_empty() {
        return Err(CurationError::EmptyInput);
    }
    let n = pixels.len() as f64;
    let mean = pixels.iter().map(|&p| f64::from(p)).sum::<f64>() / n;
    let var = pixels
        .iter()
        .map(|&p| (f64::from(p) - mean).powi(2))
        .sum::<f64>()
        / n;
    Ok(var.sqrt())
}

pub fn is_empty_region(pixels: &[u8], cfg: &FilterConfig) -> Result<bool, CurationError> {
    Ok(pixel_std(pixels)? < cfg.empty_std)
}

/// Grayscale pixels of `bbox` inside `gray`, using the outward pixel cover of
/// the box.
pub fn region_pixels(gray: &GrayImage, bbox: &NormBox) -> Vec<u8> {
    let (w, h) = gray.dimensions();
    let x0 = ((bbox.x1 * f64::from(w)).floor() as u32).min(w);
    let y0 = ((bbox.y1 * f64::from(h)).floor() as u32).min(h);
    let x1 = ((bbox.x2 * f64::from(w)).ceil() as u32).min(w);
    let y1 = ((bbox.y2 * f64::from(h)).ceil() as u32).min(h);
    let mut out = Vec::with_capacity(((x1 - x0) * (y1 - y0)) as usize);
    for y in y0..y1 {
        for x in x0..x1 {
            out.push(gray.get_pixel(x, y).0[0]);
        }
    }
    out
}

/// True when the box is wider than `cfg.text_aspect` times its height, in
/// pixels.
pub fn is_content_text(
    bbox: &NormBox,
    dims: PixelDims,
    cfg: &FilterConfig,
) -> Result<bool, CurationError> {
    let pw = bbox.width() * f64::from(dims.w);
    let ph = bbox.height() * f64::from(dims.h);
    if ph <= 0.0 {
        return Err(CurationError::DegenerateBox(format!(
            "{bbox:?} has zero pixel height"
        )));
    }
    Ok(pw / ph > cfg.text_aspect)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterAudit {
    pub screen_id: String,
    pub element_id: String,
    pub rule: FilterRule,
    pub detail: String,
}

/// Applies retention, text-aspect, box dedup and (when a screenshot is given)
/// empty-region filters to one screen. Every removal yields one audit record.
pub fn filter_screen(
    screen: &ScreenRecord,
    gray: Option<&GrayImage>,
    cfg: &FilterConfig,
) -> (ScreenRecord, Vec<FilterAudit>) {
    let mut audits = Vec::new();
    let mut audit = |e: &ElementRecord, rule: FilterRule, detail: String| {
        audits.push(FilterAudit {
            screen_id: screen.screen_id.clone(),
            element_id: e.element_id.clone(),
            rule,
            detail,
        });
    };

    let mut survivors: Vec<&ElementRecord> = Vec::new();
    for e in &screen.elements {
        if !retain_element(e) {
            audit(
                e,
                FilterRule::NotInteractive,
                format!("tag `{}`", e.html_tag),
            );
            continue;
        }
        match is_content_text(&e.bbox, screen.dims, cfg) {
            Ok(false) => survivors.push(e),
            Ok(true) => audit(
                e,
                FilterRule::ContentText,
                format!("aspect > {}", cfg.text_aspect),
            ),
            Err(_) => audit(e, FilterRule::ContentText, "zero pixel height".into()),
        }
    }

    let boxes: Vec<NormBox> = survivors.iter().map(|e| e.bbox).collect();
    let (kept, removed) = dedup_boxes_audited(&boxes, cfg);
    for (idx, rule) in removed {
        audit(survivors[idx], rule, String::new());
    }
    let mut out: Vec<ElementRecord> = Vec::with_capacity(kept.len());
    for idx in kept {
        let e = survivors[idx];
        if let Some(gray) = gray {
            let px = region_pixels(gray, &e.bbox);
            let empty = match pixel_std(&px) {
                Ok(std) if std < cfg.empty_std => Some(format!("std {std:.3}")),
                Ok(_) => None,
                Err(_) => Some("zero-pixel region".into()),
            };
            if let Some(detail) = empty {
                audit(e, FilterRule::EmptyRegion, detail);
                continue;
            }
        }
        out.push(e.clone());
    }
    // Keep the screen's original element order.
    let order: HashMap<&str, usize> = screen
        .elements
        .iter()
        .enumerate()
        .map(|(i, e)| (e.element_id.as_str(), i))
        .collect();
    out.sort_by_key(|e| order.get(e.element_id.as_str()).copied());
    let mut filtered = screen.clone();
    filtered.elements = out;
    (filtered, audits)
}

// ---------------------------------------------------------------------------
// Grid re-sampling

/// Grid cell of a normalized point; `x = 1` falls into the last column.
pub fn grid_cell(p: &NormPoint, n: usize, m: usize) -> (usize, usize) {
    let col = ((p.x * n as f64).floor() as usize).min(n - 1);
    let row = ((p.y * m as f64).floor() as usize).min(m - 1);
    (col, row)
}

/// Per-cell counts, indexed `[col * m + row]`.
pub fn cell_counts(centers: &[NormPoint], n: usize, m: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n * m];
    for p in centers {
        let (c, r) = grid_cell(p, n, m);
        counts[c * m + r] += 1;
    }
    counts
}

/// Per-cell cap: the `floor(n * m * psi)`-th smallest cell count (clamped to
/// the last cell), counting empty cells as zero.
pub fn keep_number(counts: &[usize], psi: f64) -> usize {
    let mut dist = counts.to_vec();
    dist.sort_unstable();
    let idx = ((dist.len() as f64 * psi).floor() as usize).min(dist.len() - 1);
    dist[idx]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleOutcome {
    /// Kept input indices, ascending.
    pub kept: Vec<usize>,
    pub keep_number: usize,
}

/// Caps every grid cell at a shared quantile of the cell-count distribution,
/// sampling uniformly inside over-full cells.
pub fn grid_resample(
    centers: &[NormPoint],
    cfg: &GridSamplerConfig,
    rng: &RngStream,
) -> Result<ResampleOutcome, CurationError> {
    cfg.validate()?;
    let (n, m) = (cfg.n, cfg.m);
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); n * m];
    for (idx, p) in centers.iter().enumerate() {
        let (c, r) = grid_cell(p, n, m);
        cells[c * m + r].push(idx);
    }
    let counts: Vec<usize> = cells.iter().map(Vec::len).collect();
    let cap = keep_number(&counts, cfg.psi);

    let mut kept = Vec::new();
    for (cell, members) in cells.iter().enumerate() {
        let take = members.len().min(cap);
        if take == members.len() {
            kept.extend_from_slice(members);
        } else if take > 0 {
            kept.extend(sample_cell(rng, cell / m, cell % m, members, take));
        }
    }
    kept.sort_unstable();
    Ok(ResampleOutcome {
        kept,
        keep_number: cap,
    })
}

/// Uniform `take`-subset of one cell's members, drawn from the cell's own
/// stream so results do not depend on other cells.
pub fn sample_cell(
    rng: &RngStream,
    col: usize,
    row: usize,
    members: &[usize],
    take: usize,
) -> Vec<usize> {
    let mut stream = rng.derive(&format!("cell:{col},{row}"));
    index::sample(&mut stream, members.len(), take)
        .into_iter()
        .map(|k| members[k])
        .collect()
}

/// Pearson chi-square of counts against their mean, over non-empty cells.
pub fn chi_square_occupied(counts: &[usize]) -> f64 {
    let occupied: Vec<f64> = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64)
        .collect();
    if occupied.is_empty() {
        return 0.0;
    }
    let mean = occupied.iter().sum::<f64>() / occupied.len() as f64;
    occupied.iter().map(|c| (c - mean).powi(2) / mean).sum()
}

// ---------------------------------------------------------------------------
// Element selection

/// One element per screen: uniformly among icons when any exist, otherwise
/// uniformly among all elements.
pub fn select_element<'a>(
    screen: &'a ScreenRecord,
    rng: &mut RngStream,
) -> Result<&'a ElementRecord, CurationError> {
    let icons: Vec<&ElementRecord> = screen
        .elements
        .iter()
        .filter(|e| e.kind == ElementKind::InteractiveIcon)
        .collect();
    let pool: Vec<&ElementRecord> = if icons.is_empty() {
        screen.elements.iter().collect()
    } else {
        icons
    };
    if pool.is_empty() {
        return Err(CurationError::NoElements);
    }
    Ok(pool[rng.random_range(0..pool.len())])
}

// ---------------------------------------------------------------------------
// Layout graphs

/// Fill colors of the layout raster, one per element kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutPalette {
    pub background: [u8; 3],
    pub interactive_text: [u8; 3],
    pub interactive_icon: [u8; 3],
    pub image: [u8; 3],
    pub other: [u8; 3],
}

impl Default for LayoutPalette {
    fn default() -> Self {
        Self {
            background: [0, 0, 0],
            interactive_text: [255, 0, 0],
            interactive_icon: [0, 0, 255],
            image: [0, 255, 255],
            other: [128, 128, 128],
        }
    }
}

impl LayoutPalette {
    fn color(&self, kind: ElementKind) -> Rgb<u8> {
        Rgb(match kind {
            ElementKind::InteractiveText => self.interactive_text,
            ElementKind::InteractiveIcon => self.interactive_icon,
            ElementKind::Image => self.image,
            ElementKind::Other => self.other,
        })
    }
}

/// Paints every element's box in its kind color, in element order.
pub fn render_layout(screen: &ScreenRecord, palette: &LayoutPalette) -> RgbImage {
    let PixelDims { w, h } = screen.dims;
    let mut img = RgbImage::from_pixel(w, h, Rgb(palette.background));
    for e in &screen.elements {
        let [x0, y0, x1, y1] = e.bbox.to_pixels(screen.dims);
        let color = palette.color(e.kind);
        for y in (y0.floor() as u32)..(y1.ceil() as u32).min(h) {
            for x in (x0.floor() as u32)..(x1.ceil() as u32).min(w) {
                img.put_pixel(x, y, color);
            }
        }
    }
    img
}

/// Center of the element's box; the point re-sampling operates on.
pub fn element_center(e: &ElementRecord) -> NormPoint {
    box_center(&e.bbox)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nb(x1: f64, y1: f64, x2: f64, y2: f64) -> NormBox {
        NormBox::new(x1, y1, x2, y2).unwrap()
    }

    fn element(id: &str, tag: &str, attrs: &[(&str, &str)], kind: ElementKind) -> ElementRecord {
        ElementRecord {
            element_id: id.into(),
            bbox: nb(0.1, 0.1, 0.2, 0.2),
            kind,
            html_tag: tag.into(),
            attributes: attrs
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            references: None,
        }
    }

    fn pages(domain: &str, n: usize) -> Vec<(String, String)> {
        (0..n)
            .map(|i| (format!("https://{domain}/{i}"), domain.to_string()))
            .collect()
    }

    #[test]
    fn domain_cap_examples() {
        let cfg = FilterConfig::default();
        let rng = RngStream::new(1, "cap");
        assert_eq!(domain_cap_sample(&pages("a.com", 3), &cfg, &rng).len(), 3);
        let mut two = pages("a.com", 60);
        two.extend(pages("b.com", 60));
        let kept = domain_cap_sample(&two, &cfg, &rng);
        assert_eq!(kept.len(), 100);
        assert_eq!(kept.iter().filter(|u| u.contains("a.com")).count(), 50);
        assert_eq!(kept, domain_cap_sample(&two, &cfg, &rng));
    }

    #[test]
    fn domain_cap_largest_domain() {
        let big = pages("big.example", 204_000);
        let kept = domain_cap_sample(&big, &FilterConfig::default(), &RngStream::new(9, "cap"));
        assert_eq!(kept.len(), 50);
    }

    #[test]
    fn render_plan_examples() {
        assert_eq!(RenderClass::P1080.space(), 2_073_600);
        let p = plan_render(RenderClass::P1080, 0, 10).unwrap();
        assert_eq!((p.rw, p.rh), (1.0, 2.0));
        assert_eq!((p.s, p.width, p.height), (1019, 1019, 2038));
        for class in RenderClass::ALL {
            let sq = plan_render(class, 5, 10).unwrap();
            assert_eq!(sq.width, sq.height);
        }
        assert!(plan_render(RenderClass::K4, 11, 10).is_err());
    }

    #[test]
    fn retention_examples() {
        assert!(retain_element(&element(
            "a",
            "button",
            &[],
            ElementKind::Other
        )));
        assert!(!retain_element(&element(
            "b",
            "div",
            &[],
            ElementKind::Other
        )));
        assert_eq!(
            retention_rule(&element(
                "c",
                "span",
                &[("class", "fas")],
                ElementKind::Other
            )),
            Some(RetainRule::Icon)
        );
        assert_eq!(
            retention_rule(&element(
                "d",
                "div",
                &[("onclick", "go()")],
                ElementKind::Other
            )),
            Some(RetainRule::EventAttribute)
        );
        assert_eq!(
            retention_rule(&element("e", "div", &[("role", "tab")], ElementKind::Other)),
            Some(RetainRule::RoleAttribute)
        );
        assert_eq!(
            retention_rule(&element(
                "f",
                "div",
                &[("class", "btn btn-primary")],
                ElementKind::Other
            )),
            Some(RetainRule::InteractiveClass)
        );
        assert_eq!(
            retention_rule(&element("g", "IMG", &[], ElementKind::Image)),
            Some(RetainRule::Image)
        );
        // Icon classes only count on icon tags.
        assert!(!retain_element(&element(
            "h",
            "div",
            &[("class", "fa")],
            ElementKind::Other
        )));
    }

    #[test]
    fn dedup_outer_box() {
        let boxes = [
            nb(0.0, 0.0, 1.0, 1.0),
            nb(0.1, 0.1, 0.2, 0.2),
            nb(0.5, 0.5, 0.6, 0.6),
        ];
        let (kept, removed) = dedup_boxes_audited(&boxes, &FilterConfig::default());
        assert_eq!(kept, vec![1, 2]);
        assert_eq!(removed, vec![(0, FilterRule::OuterBox)]);
        assert_eq!(dedup_boxes(&boxes[..1], &FilterConfig::default()), vec![0]);
    }

    #[test]
    fn dedup_nested_pair() {
        // inner area 0.95 * outer area.
        let outer = nb(0.0, 0.0, 1.0, 0.5);
        let inner = nb(0.0, 0.0, 0.95, 0.5);
        assert!((iou(&outer, &inner) - 0.95).abs() < 1e-12);
        let cfg = FilterConfig::default();
        assert_eq!(dedup_boxes(&[outer, inner], &cfg), vec![1]);
        assert_eq!(dedup_boxes(&[inner, outer], &cfg), vec![0]);
        // Below threshold both stay.
        let small = nb(0.0, 0.0, 0.5, 0.5);
        assert_eq!(dedup_boxes(&[outer, small], &cfg), vec![0, 1]);
        // Identical boxes: the later one goes.
        assert_eq!(dedup_boxes(&[inner, inner], &cfg), vec![0]);
    }

    #[test]
    fn empty_region_examples() {
        let cfg = FilterConfig::default();
        assert!(is_empty_region(&[7; 16], &cfg).unwrap());
        let checker: Vec<u8> = (0..64)
            .map(|i| if (i + i / 8) % 2 == 0 { 0 } else { 255 })
            .collect();
        assert_eq!(pixel_std(&checker).unwrap(), 127.5);
        assert!(!is_empty_region(&checker, &cfg).unwrap());
        assert!(matches!(
            is_empty_region(&[], &cfg),
            Err(CurationError::EmptyInput)
        ));
        // std of {0, 3.8}-like population: values 0 and 4 in ratio giving std < 2.
        let low: Vec<u8> = [0u8, 0, 0, 3].repeat(4);
        let std = pixel_std(&low).unwrap();
        assert!(std < 2.0 && is_empty_region(&low, &cfg).unwrap());
    }

    #[test]
    fn empty_std_threshold_is_strict() {
        let cfg = FilterConfig {
            empty_std: 1.5,
            ..FilterConfig::default()
        };
        // {0, 3} half/half has std exactly 1.5.
        assert!(!is_empty_region(&[0, 3, 0, 3], &cfg).unwrap());
    }

    #[test]
    fn content_text_examples() {
        let cfg = FilterConfig::default();
        let dims = PixelDims::new(2000, 1000).unwrap();
        assert!(is_content_text(&nb(0.0, 0.0, 0.6, 0.02), dims, &cfg).unwrap());
        assert!(!is_content_text(&nb(0.0, 0.0, 0.05, 0.1), dims, &cfg).unwrap());
        assert!(!is_content_text(&nb(0.0, 0.0, 0.05, 0.01), dims, &cfg).unwrap());
        assert!(matches!(
            is_content_text(&nb(0.0, 0.5, 0.05, 0.5), dims, &cfg),
            Err(CurationError::DegenerateBox(_))
        ));
    }

    fn cell_points(n: usize, m: usize, counts: &[((usize, usize), usize)]) -> Vec<NormPoint> {
        let mut pts = Vec::new();
        for &((c, r), k) in counts {
            for t in 0..k {
                let jitter = (t as f64 + 0.5) / (k as f64 + 1.0);
                pts.push(NormPoint {
                    x: (c as f64 + jitter) / n as f64,
                    y: (r as f64 + 0.5) / m as f64,
                });
            }
        }
        pts
    }

    #[test]
    fn resample_toy_instance() {
        let pts = cell_points(2, 2, &[((0, 0), 5), ((0, 1), 3), ((1, 0), 2), ((1, 1), 8)]);
        let cfg = GridSamplerConfig {
            n: 2,
            m: 2,
            psi: 0.5,
        };
        let out = grid_resample(&pts, &cfg, &RngStream::new(3, "toy")).unwrap();
        assert_eq!(out.keep_number, 5);
        assert_eq!(out.kept.len(), 15);
    }

    #[test]
    fn resample_single_cell_keeps_nothing() {
        let pts = vec![NormPoint { x: 0.01, y: 0.01 }; 40];
        let cfg = GridSamplerConfig::default();
        let out = grid_resample(&pts, &cfg, &RngStream::new(3, "one")).unwrap();
        assert_eq!(out.keep_number, 0);
        assert!(out.kept.is_empty());
    }

    #[test]
    fn resample_psi_one_is_identity() {
        let pts = cell_points(2, 2, &[((0, 0), 5), ((1, 1), 8)]);
        let cfg = GridSamplerConfig {
            n: 2,
            m: 2,
            psi: 1.0,
        };
        let out = grid_resample(&pts, &cfg, &RngStream::new(3, "id")).unwrap();
        assert_eq!(out.kept, (0..13).collect::<Vec<_>>());
    }

    #[test]
    fn edge_points_land_in_last_cell() {
        assert_eq!(grid_cell(&NormPoint { x: 1.0, y: 1.0 }, 50, 50), (49, 49));
        assert_eq!(grid_cell(&NormPoint { x: 0.0, y: 0.999 }, 50, 50), (0, 49));
    }

    #[test]
    fn select_prefers_icons() {
        let mut elements: Vec<ElementRecord> = (0..9)
            .map(|i| element(&format!("t{i}"), "a", &[], ElementKind::InteractiveText))
            .collect();
        elements.insert(4, element("icon", "i", &[], ElementKind::InteractiveIcon));
        let screen = ScreenRecord {
            schema_version: 1,
            screen_id: "s".into(),
            image_ref: "s.png".into(),
            dims: PixelDims::new(10, 10).unwrap(),
            domain: String::new(),
            elements,
            layout_ref: None,
        };
        for seed in 0..50 {
            let picked = select_element(&screen, &mut RngStream::new(seed, "s")).unwrap();
            assert_eq!(picked.element_id, "icon");
        }
        let mut empty = screen.clone();
        empty.elements.clear();
        assert!(matches!(
            select_element(&empty, &mut RngStream::new(0, "s")),
            Err(CurationError::NoElements)
        ));
    }

    #[test]
    fn select_falls_back_uniformly() {
        let elements: Vec<ElementRecord> = (0..3)
            .map(|i| element(&format!("t{i}"), "a", &[], ElementKind::InteractiveText))
            .collect();
        let screen = ScreenRecord {
            schema_version: 1,
            screen_id: "s".into(),
            image_ref: "s.png".into(),
            dims: PixelDims::new(10, 10).unwrap(),
            domain: String::new(),
            elements,
            layout_ref: None,
        };
        let mut hist: BTreeMap<String, usize> = BTreeMap::new();
        for seed in 0..3000 {
            let e = select_element(&screen, &mut RngStream::new(seed, "s")).unwrap();
            *hist.entry(e.element_id.clone()).or_default() += 1;
        }
        assert_eq!(hist.len(), 3);
        // 4 sigma around 1000 for Binomial(3000, 1/3).
        assert!(hist
            .values()
            .all(|&c| (c as f64 - 1000.0).abs() < 4.0 * 25.82));
    }

    #[test]
    fn layout_uses_kind_colors() {
        let mut e = element("x", "img", &[], ElementKind::Image);
        e.bbox = nb(0.0, 0.0, 0.5, 0.5);
        let screen = ScreenRecord {
            schema_version: 1,
            screen_id: "s".into(),
            image_ref: "s.png".into(),
            dims: PixelDims::new(10, 10).unwrap(),
            domain: String::new(),
            elements: vec![e],
            layout_ref: None,
        };
        let img = render_layout(&screen, &LayoutPalette::default());
        assert_eq!(*img.get_pixel(1, 1), Rgb([0, 255, 255]));
        assert_eq!(*img.get_pixel(8, 8), Rgb([0, 0, 0]));
    }
}

#[cfg(test)]
mod render_bounds {
    use super::*;

    #[test]
    fn area_slack_bound_all_classes() {
        for class in RenderClass::ALL {
            for i in 0..=10 {
                let p = plan_render(class, i, 10).unwrap();
                let area = p.width * p.height;
                assert!(area >= p.space, "{p:?} area {area}");
                // s - 1 < sqrt(space / (rw rh)) and |width - rw s| <= 1/2.
                let s = p.s as f64;
                let slack = p.rw * p.rh * (2.0 * s - 1.0) + 0.5 * (p.rw + p.rh) * s + 0.25;
                assert!(((area - p.space) as f64) < slack, "{p:?} area {area}");
            }
        }
    }
}
