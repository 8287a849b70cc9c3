//! Normalized geometry, the `<point>`/`<box>` coordinate codec and the base
//! grounding metrics.
//!
//! Every coordinate in the toolkit is a ratio in `[0, 1]` relative to the image
//! frame. On the wire a ratio `v` becomes the integer `round(1000 * v)`, rounded
//! half away from zero.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Number of quantization steps per unit of a normalized coordinate.
pub const COORD_SCALE: u32 = 1000;

/// Tolerance used by containment tests on normalized coordinates.
pub const CONTAIN_EPS: f64 = 1e-9;

fn in_unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormPoint {
    pub x: f64,
    pub y: f64,
}

impl NormPoint {
    pub fn new(x: f64, y: f64) -> Result<Self, GeometryError> {
        if !(in_unit(x) && in_unit(y)) {
            return Err(GeometryError::OutOfRange(format!("point ({x}, {y})")));
        }
        Ok(Self { x, y })
    }
}

/// Axis-aligned box in normalized coordinates, `(x1, y1)` top-left and
/// `(x2, y2)` bottom-right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct NormBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl NormBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        if !(in_unit(x1) && in_unit(y1) && in_unit(x2) && in_unit(y2)) {
            return Err(GeometryError::OutOfRange(format!(
                "box ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        if x2 < x1 || y2 < y1 {
            return Err(GeometryError::DegenerateBox(format!(
                "box ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Converts a pixel-space `xyxy` box into normalized coordinates.
    pub fn from_pixels(
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        dims: PixelDims,
    ) -> Result<Self, GeometryError> {
        let (w, h) = (f64::from(dims.w), f64::from(dims.h));
        Self::new(x1 / w, y1 / h, x2 / w, y2 / h)
    }

    pub fn full() -> Self {
        Self {
            x1: 0.0,
            y1: 0.0,
            x2: 1.0,
            y2: 1.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> NormPoint {
        box_center(self)
    }

    /// Intersection with `other`, or `None` when the boxes do not overlap
    /// (touching edges yield a zero-area intersection, not `None`).
    pub fn intersection(&self, other: &NormBox) -> Option<NormBox> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        (x1 <= x2 && y1 <= y2).then_some(NormBox { x1, y1, x2, y2 })
    }

    /// True when `other` lies inside `self` (boundaries included, within
    /// [`CONTAIN_EPS`]).
    pub fn contains(&self, other: &NormBox) -> bool {
        self.x1 <= other.x1 + CONTAIN_EPS
            && self.y1 <= other.y1 + CONTAIN_EPS
            && self.x2 + CONTAIN_EPS >= other.x2
            && self.y2 + CONTAIN_EPS >= other.y2
    }

    /// Box extent in pixels of an image with the given dimensions.
    pub fn to_pixels(&self, dims: PixelDims) -> [f64; 4] {
        let (w, h) = (f64::from(dims.w), f64::from(dims.h));
        [self.x1 * w, self.y1 * h, self.x2 * w, self.y2 * h]
    }
}

impl TryFrom<[f64; 4]> for NormBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        NormBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<NormBox> for [f64; 4] {
    fn from(b: NormBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawDims")]
pub struct PixelDims {
    pub w: u32,
    pub h: u32,
}

#[derive(Deserialize)]
struct RawDims {
    w: u32,
    h: u32,
}

impl TryFrom<RawDims> for PixelDims {
    type Error = GeometryError;

    fn try_from(raw: RawDims) -> Result<Self, Self::Error> {
        PixelDims::new(raw.w, raw.h)
    }
}

impl PixelDims {
    pub fn new(w: u32, h: u32) -> Result<Self, GeometryError> {
        if w == 0 || h == 0 {
            return Err(GeometryError::OutOfRange(format!("dims {w}x{h}")));
        }
        Ok(Self { w, h })
    }
}

/// Textual layout of a coordinate answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordFormat {
    /// `<point>mid_x, mid_y</point>`
    Point,
    /// `<box>x1, y1, x2, y2</box>`
    Xyxy,
    /// `<box>x1, y1, w, h</box>`
    Xywh,
    /// `<box>mid_x, mid_y, w, h</box>`
    MidWh,
}

impl CoordFormat {
    pub const ALL: [CoordFormat; 4] = [
        CoordFormat::Point,
        CoordFormat::Xyxy,
        CoordFormat::Xywh,
        CoordFormat::MidWh,
    ];

    pub const BOXES: [CoordFormat; 3] = [CoordFormat::Xyxy, CoordFormat::Xywh, CoordFormat::MidWh];

    pub fn is_box(self) -> bool {
        self != CoordFormat::Point
    }

    fn tag(self) -> &'static str {
        match self {
            CoordFormat::Point => "point",
            _ => "box",
        }
    }
}

impl fmt::Display for CoordFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoordFormat::Point => "point",
            CoordFormat::Xyxy => "xyxy",
            CoordFormat::Xywh => "xywh",
            CoordFormat::MidWh => "midwh",
        })
    }
}

impl FromStr for CoordFormat {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "point" => Ok(CoordFormat::Point),
            "xyxy" => Ok(CoordFormat::Xyxy),
            "xywh" => Ok(CoordFormat::Xywh),
            "midwh" => Ok(CoordFormat::MidWh),
            other => Err(GeometryError::MalformedOutput(format!(
                "unknown coordinate format `{other}`"
            ))),
        }
    }
}

/// Either geometry a model can emit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Geom {
    Point(NormPoint),
    Box(NormBox),
}

impl Geom {
    /// The click location implied by this geometry: the point itself or the
    /// box center.
    pub fn click(&self) -> NormPoint {
        match self {
            Geom::Point(p) => *p,
            Geom::Box(b) => box_center(b),
        }
    }

    pub fn as_box(&self) -> Option<&NormBox> {
        match self {
            Geom::Box(b) => Some(b),
            Geom::Point(_) => None,
        }
    }
}

impl From<NormPoint> for Geom {
    fn from(p: NormPoint) -> Self {
        Geom::Point(p)
    }
}

impl From<NormBox> for Geom {
    fn from(b: NormBox) -> Self {
        Geom::Box(b)
    }
}

/// `round(1000 * v)` with ties away from zero.
pub fn quantize(v: f64) -> i64 {
    (v * f64::from(COORD_SCALE)).round() as i64
}

fn emit(tag: &str, values: &[i64]) -> String {
    let body = values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    format!("<{tag}>{body}</{tag}>")
}

/// Encodes `geom` in `fmt`.
///
/// A point requested in a box format is emitted as a zero-size box; a box
/// requested as [`CoordFormat::Point`] is emitted as its center.
pub fn encode(geom: &Geom, fmt: CoordFormat) -> String {
    let b = match geom {
        Geom::Point(p) => {
            if fmt == CoordFormat::Point {
                return emit("point", &[quantize(p.x), quantize(p.y)]);
            }
            NormBox {
                x1: p.x,
                y1: p.y,
                x2: p.x,
                y2: p.y,
            }
        }
        Geom::Box(b) => *b,
    };
    let values = match fmt {
        CoordFormat::Point => {
            let c = box_center(&b);
            return emit("point", &[quantize(c.x), quantize(c.y)]);
        }
        CoordFormat::Xyxy => [
            quantize(b.x1),
            quantize(b.y1),
            quantize(b.x2),
            quantize(b.y2),
        ],
        CoordFormat::Xywh => [
            quantize(b.x1),
            quantize(b.y1),
            quantize(b.width()),
            quantize(b.height()),
        ],
        CoordFormat::MidWh => {
            let c = box_center(&b);
            [
                quantize(c.x),
                quantize(c.y),
                quantize(b.width()),
                quantize(b.height()),
            ]
        }
    };
    emit("box", &values)
}

pub fn encode_point(p: &NormPoint) -> String {
    encode(&Geom::Point(*p), CoordFormat::Point)
}

pub fn encode_box(b: &NormBox, fmt: CoordFormat) -> String {
    encode(&Geom::Box(*b), fmt)
}

/// Parses the comma separated integer list between `<tag>` and `</tag>`.
///
/// Spaces are tolerated only directly after a comma.
fn parse_fields(text: &str, tag: &str, arity: usize) -> Result<Vec<i64>, GeometryError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let body = text
        .strip_prefix(open.as_str())
        .and_then(|rest| rest.strip_suffix(close.as_str()))
        .ok_or_else(|| GeometryError::MalformedOutput(format!("expected {open}...{close}")))?;

    let mut values = Vec::with_capacity(arity);
    for (idx, field) in body.split(',').enumerate() {
        let digits = if idx == 0 {
            field
        } else {
            field.trim_start_matches(' ')
        };
        if digits.is_empty() || !digits.bytes().all(|c| c.is_ascii_digit()) {
            return Err(GeometryError::MalformedOutput(format!(
                "field `{field}` is not a non-negative integer"
            )));
        }
        // Anything longer than a handful of digits is out of range anyway.
        let v = if digits.len() > 12 {
            i64::MAX
        } else {
            digits.parse::<i64>().expect("digit-only field")
        };
        values.push(v);
    }
    if values.len() != arity {
        return Err(GeometryError::MalformedOutput(format!(
            "expected {arity} fields, found {}",
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|&&v| v > i64::from(COORD_SCALE)) {
        return Err(GeometryError::OutOfRange(format!("{v} > {COORD_SCALE}")));
    }
    Ok(values)
}

fn ratio(v: i64, denom: f64) -> f64 {
    v as f64 / denom
}

/// Edge reconstructed from independently rounded fields, on a grid of
/// `denom` steps per unit. Rounding each field can overshoot the frame by at
/// most `slack` steps; such edges are pulled back onto it, anything further
/// out is rejected.
fn derived_edge(v: i64, denom: i64, slack: i64) -> Result<f64, GeometryError> {
    if v < -slack || v > denom + slack {
        return Err(GeometryError::OutOfRange(format!(
            "reconstructed edge {v}/{denom} outside the frame"
        )));
    }
    Ok(ratio(v.clamp(0, denom), denom as f64))
}

/// Strict inverse of [`encode`].
pub fn parse(text: &str, fmt: CoordFormat) -> Result<Geom, GeometryError> {
    let scale = f64::from(COORD_SCALE);
    let thousand = i64::from(COORD_SCALE);
    let v = parse_fields(text, fmt.tag(), if fmt.is_box() { 4 } else { 2 })?;
    let (x1, y1, x2, y2) = match fmt {
        CoordFormat::Point => {
            return Ok(Geom::Point(NormPoint {
                x: ratio(v[0], scale),
                y: ratio(v[1], scale),
            }))
        }
        CoordFormat::Xyxy => (
            ratio(v[0], scale),
            ratio(v[1], scale),
            ratio(v[2], scale),
            ratio(v[3], scale),
        ),
        CoordFormat::Xywh => (
            ratio(v[0], scale),
            ratio(v[1], scale),
            derived_edge(v[0] + v[2], thousand, 1)?,
            derived_edge(v[1] + v[3], thousand, 1)?,
        ),
        // Work in half-thousandths so odd widths stay exact.
        CoordFormat::MidWh => (
            derived_edge(2 * v[0] - v[2], 2 * thousand, 1)?,
            derived_edge(2 * v[1] - v[3], 2 * thousand, 1)?,
            derived_edge(2 * v[0] + v[2], 2 * thousand, 1)?,
            derived_edge(2 * v[1] + v[3], 2 * thousand, 1)?,
        ),
    };
    if x2 < x1 || y2 < y1 {
        return Err(GeometryError::DegenerateBox(text.to_string()));
    }
    NormBox::new(x1, y1, x2, y2).map(Geom::Box)
}

pub fn parse_point(text: &str) -> Result<NormPoint, GeometryError> {
    match parse(text, CoordFormat::Point)? {
        Geom::Point(p) => Ok(p),
        Geom::Box(_) => unreachable!("point format yields points"),
    }
}

pub fn parse_box(text: &str, fmt: CoordFormat) -> Result<NormBox, GeometryError> {
    if !fmt.is_box() {
        return Err(GeometryError::MalformedOutput(
            "point format cannot produce a box".into(),
        ));
    }
    match parse(text, fmt)? {
        Geom::Box(b) => Ok(b),
        Geom::Point(_) => unreachable!("box formats yield boxes"),
    }
}

/// Click accuracy test: inclusive on all four edges.
pub fn click_hit(p: &NormPoint, gt: &NormBox) -> bool {
    gt.x1 <= p.x && p.x <= gt.x2 && gt.y1 <= p.y && p.y <= gt.y2
}

/// Intersection over union. Zero-area boxes score 1 only against an
/// identical box and 0 otherwise.
pub fn iou(a: &NormBox, b: &NormBox) -> f64 {
    let (area_a, area_b) = (a.area(), b.area());
    if area_a <= 0.0 || area_b <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    let inter = a.intersection(b).map_or(0.0, |i| i.area());
    let union = area_a + area_b - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn box_center(b: &NormBox) -> NormPoint {
    NormPoint {
        x: (b.x1 + b.x2) / 2.0,
        y: (b.y1 + b.y2) / 2.0,
    }
}
