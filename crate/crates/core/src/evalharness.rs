//! Benchmark loading, prediction scoring, per-slice aggregation, compute
//! estimates and Pareto reports.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::geometry::{box_center, click_hit, iou, parse, CoordFormat, Geom, NormBox, PixelDims};

pub const IOU_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.8];
pub const SUITE_TAG: &str = "suite";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub record_id: String,
    pub image_ref: String,
    pub dims: PixelDims,
    pub gt_box: NormBox,
    pub short_re: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub long_re: Option<String>,
    pub tags: BTreeMap<String, String>,
}

impl BenchmarkRecord {
    pub fn suite(&self) -> &str {
        self.tags.get(SUITE_TAG).map(String::as_str).unwrap_or("")
    }
}

/// Source layouts the loader understands. All produce canonical records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceAdapter {
    /// `gt_box` already normalized `[x1, y1, x2, y2]`.
    #[default]
    Canonical,
    /// `gt_box_px` as pixel `[x1, y1, x2, y2]`.
    PixelXyxy,
    /// `gt_box_px` as pixel `[x, y, w, h]`.
    PixelXywh,
}

impl std::str::FromStr for SourceAdapter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical" => Ok(Self::Canonical),
            "pixel-xyxy" => Ok(Self::PixelXyxy),
            "pixel-xywh" => Ok(Self::PixelXywh),
            other => Err(format!("unknown adapter `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingImagePolicy {
    #[default]
    Warn,
    Fail,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub adapter: SourceAdapter,
    /// When set, every `image_ref` is checked for existence under this root.
    pub image_root: Option<PathBuf>,
    pub missing_images: MissingImagePolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedBenchmark {
    pub records: Vec<BenchmarkRecord>,
    pub warnings: Vec<String>,
}

fn schema_err(line: usize, message: impl Into<String>) -> EvalError {
    EvalError::SchemaError {
        line,
        message: message.into(),
    }
}

fn adapt_line(
    mut value: serde_json::Value,
    adapter: SourceAdapter,
    line: usize,
) -> Result<BenchmarkRecord, EvalError> {
    if adapter != SourceAdapter::Canonical {
        let obj = value
            .as_object_mut()
            .ok_or_else(|| schema_err(line, "record is not an object"))?;
        let px: [f64; 4] = obj
            .remove("gt_box_px")
            .ok_or_else(|| schema_err(line, "missing `gt_box_px`"))
            .and_then(|v| serde_json::from_value(v).map_err(|e| schema_err(line, e.to_string())))?;
        let dims: PixelDims = obj
            .get("dims")
            .cloned()
            .ok_or_else(|| schema_err(line, "missing `dims`"))
            .and_then(|v| serde_json::from_value(v).map_err(|e| schema_err(line, e.to_string())))?;
        let [a, b, c, d] = px;
        let (x2, y2) = match adapter {
            SourceAdapter::PixelXywh => (a + c, b + d),
            _ => (c, d),
        };
        let bbox = NormBox::from_pixels(a, b, x2, y2, dims)
            .map_err(|e| schema_err(line, e.to_string()))?;
        obj.insert(
            "gt_box".into(),
            serde_json::to_value(bbox).expect("box serializes"),
        );
    }
    let record: BenchmarkRecord =
        serde_json::from_value(value).map_err(|e| schema_err(line, e.to_string()))?;
    if record.suite().is_empty() {
        return Err(schema_err(line, "missing `suite` tag"));
    }
    Ok(record)
}

/// Reads a JSONL manifest, normalizing each line through the adapter.
/// Line numbers in errors are 1-based.
pub fn load_benchmark(path: &Path, opts: &LoadOptions) -> Result<LoadedBenchmark, EvalError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| schema_err(line_no, e.to_string()))?;
        let record = adapt_line(value, opts.adapter, line_no)?;
        if let Some(root) = &opts.image_root {
            if !root.join(&record.image_ref).is_file() {
                match opts.missing_images {
                    MissingImagePolicy::Fail => {
                        return Err(EvalError::MissingImage(record.image_ref.clone()))
                    }
                    MissingImagePolicy::Warn => warnings.push(format!(
                        "line {line_no}: image `{}` not found",
                        record.image_ref
                    )),
                }
            }
        }
        records.push(record);
    }
    let mut seen = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        if let Some(prev) = seen.insert(r.record_id.as_str(), i) {
            return Err(EvalError::InvalidInput(format!(
                "record id `{}` appears twice (records {} and {})",
                r.record_id,
                prev + 1,
                i + 1
            )));
        }
    }
    Ok(LoadedBenchmark { records, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub record_id: String,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, EvalError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| schema_err(idx + 1, e.to_string()))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClickSource {
    /// Predictions are points; the point is the click.
    #[default]
    PointDirect,
    /// Predictions are boxes; their center is the click and IoU is scored.
    BoxCenter,
}

impl std::str::FromStr for ClickSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "point_direct" | "point" => Ok(Self::PointDirect),
            "box_center" | "box" => Ok(Self::BoxCenter),
            other => Err(format!("unknown click source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub click_source: ClickSource,
    /// Box layout of predictions under [`ClickSource::BoxCenter`].
    pub box_format: CoordFormat,
    /// Tag keys whose value combination defines a slice within each suite.
    pub slice_keys: Vec<String>,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            click_source: ClickSource::PointDirect,
            box_format: CoordFormat::Xyxy,
            slice_keys: Vec::new(),
        }
    }
}

/// Result of scoring one record.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordOutcome {
    pub record_id: String,
    pub hit: bool,
    pub parse_error: bool,
    pub missing: bool,
    /// Present for every record under box scoring (0 on parse failure).
    pub iou: Option<f64>,
    pub latency_ms: Option<f64>,
}

pub fn score_record(
    record: &BenchmarkRecord,
    prediction: Option<&Prediction>,
    cfg: &ScoreConfig,
) -> RecordOutcome {
    let fmt = match cfg.click_source {
        ClickSource::PointDirect => CoordFormat::Point,
        ClickSource::BoxCenter => cfg.box_format,
    };
    let parsed = prediction.and_then(|p| parse(p.raw_text.trim(), fmt).ok());
    let (hit, iou_value) = match &parsed {
        Some(Geom::Point(p)) => (click_hit(p, &record.gt_box), None),
        Some(Geom::Box(b)) => (
            click_hit(&box_center(b), &record.gt_box),
            Some(iou(b, &record.gt_box)),
        ),
        None => (false, None),
    };
    let iou_value = match cfg.click_source {
        ClickSource::BoxCenter => Some(iou_value.unwrap_or(0.0)),
        ClickSource::PointDirect => None,
    };
    RecordOutcome {
        record_id: record.record_id.clone(),
        hit,
        parse_error: prediction.is_some() && parsed.is_none(),
        missing: prediction.is_none(),
        iou: iou_value,
        latency_ms: prediction.and_then(|p| p.latency_ms),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub suite: String,
    /// `all` for the whole suite, else `key=value` pairs joined by `,`.
    pub slice: String,
    pub count: usize,
    pub hits: usize,
    pub click_accuracy: f64,
    pub parse_errors: usize,
    pub parse_error_rate: f64,
    pub missing_predictions: usize,
    pub box_predictions: usize,
    pub iou_mean: Option<f64>,
    pub iou_at_0_3: Option<f64>,
    pub iou_at_0_5: Option<f64>,
    pub iou_at_0_8: Option<f64>,
    pub latency_count: usize,
    pub latency_ms_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub click_source: ClickSource,
    pub slice_keys: Vec<String>,
    /// Suite rows (`slice == "all"`) followed by their slices, suites sorted.
    pub rows: Vec<SliceMetrics>,
    /// Unweighted mean of slice accuracies per suite.
    pub macro_accuracy: BTreeMap<String, f64>,
}

pub const ALL_SLICE: &str = "all";

fn slice_label(record: &BenchmarkRecord, keys: &[String]) -> String {
    if keys.is_empty() {
        return ALL_SLICE.into();
    }
    keys.iter()
        .map(|k| {
            format!(
                "{k}={}",
                record.tags.get(k).map(String::as_str).unwrap_or("-")
            )
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn aggregate(suite: &str, slice: &str, outcomes: &[&RecordOutcome]) -> SliceMetrics {
    let count = outcomes.len();
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let hits = outcomes.iter().filter(|o| o.hit).count();
    let parse_errors = outcomes.iter().filter(|o| o.parse_error).count();
    let ious: Vec<f64> = outcomes.iter().filter_map(|o| o.iou).collect();
    let iou_rate = |t: f64| {
        (!ious.is_empty()).then(|| ratio(ious.iter().filter(|&&v| v >= t).count(), ious.len()))
    };
    let latencies: Vec<f64> = outcomes.iter().filter_map(|o| o.latency_ms).collect();
    SliceMetrics {
        suite: suite.to_string(),
        slice: slice.to_string(),
        count,
        hits,
        click_accuracy: ratio(hits, count),
        parse_errors,
        parse_error_rate: ratio(parse_errors, count),
        missing_predictions: outcomes.iter().filter(|o| o.missing).count(),
        box_predictions: ious.len(),
        iou_mean: (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64),
        iou_at_0_3: iou_rate(IOU_THRESHOLDS[0]),
        iou_at_0_5: iou_rate(IOU_THRESHOLDS[1]),
        iou_at_0_8: iou_rate(IOU_THRESHOLDS[2]),
        latency_count: latencies.len(),
        latency_ms_mean: (!latencies.is_empty())
            .then(|| latencies.iter().sum::<f64>() / latencies.len() as f64),
    }
}

/// Scores predictions against records. Records without a prediction and
/// predictions that fail to parse both count as misses; the two are tallied
/// separately. The report does not depend on record order.
pub fn score(
    records: &[BenchmarkRecord],
    predictions: &[Prediction],
    cfg: &ScoreConfig,
) -> Result<EvalReport, EvalError> {
    let ids: HashMap<&str, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.record_id.as_str(), i))
        .collect();
    let mut by_record: Vec<Option<&Prediction>> = vec![None; records.len()];
    for p in predictions {
        let idx = *ids
            .get(p.record_id.as_str())
            .ok_or_else(|| EvalError::UnknownRecordId(p.record_id.clone()))?;
        if by_record[idx].replace(p).is_some() {
            return Err(EvalError::InvalidInput(format!(
                "record `{}` has more than one prediction",
                p.record_id
            )));
        }
    }

    let mut scored: Vec<(&BenchmarkRecord, RecordOutcome)> = records
        .par_iter()
        .zip(by_record.par_iter())
        .map(|(r, p)| (r, score_record(r, *p, cfg)))
        .collect();
    scored.sort_by(|a, b| a.0.record_id.cmp(&b.0.record_id));

    let mut groups: BTreeMap<&str, BTreeMap<String, Vec<&RecordOutcome>>> = BTreeMap::new();
    for (r, o) in &scored {
        groups
            .entry(r.suite())
            .or_default()
            .entry(slice_label(r, &cfg.slice_keys))
            .or_default()
            .push(o);
    }

    let mut rows = Vec::new();
    let mut macro_accuracy = BTreeMap::new();
    for (suite, slices) in &groups {
        let all: Vec<&RecordOutcome> = slices.values().flatten().copied().collect();
        rows.push(aggregate(suite, ALL_SLICE, &all));
        if cfg.slice_keys.is_empty() {
            macro_accuracy.insert(suite.to_string(), rows.last().unwrap().click_accuracy);
            continue;
        }
        let start = rows.len();
        for (label, outcomes) in slices {
            rows.push(aggregate(suite, label, outcomes));
        }
        let slice_rows = &rows[start..];
        let mean =
            slice_rows.iter().map(|r| r.click_accuracy).sum::<f64>() / slice_rows.len() as f64;
        macro_accuracy.insert(suite.to_string(), mean);
    }

    Ok(EvalReport {
        schema_version: crate::records::SCHEMA_VERSION,
        click_source: cfg.click_source,
        slice_keys: cfg.slice_keys.clone(),
        rows,
        macro_accuracy,
    })
}

impl EvalReport {
    pub fn row(&self, suite: &str, slice: &str) -> Option<&SliceMetrics> {
        self.rows
            .iter()
            .find(|r| r.suite == suite && r.slice == slice)
    }

    /// Unweighted mean accuracy over the named slices of one suite, for
    /// tables that report e.g. the average of two sub-suites.
    pub fn average_slices(&self, suite: &str, slices: &[&str]) -> Option<f64> {
        let accs = slices
            .iter()
            .map(|s| self.row(suite, s).map(|r| r.click_accuracy))
            .collect::<Option<Vec<_>>>()?;
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        let mut f = File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self).map_err(std::io::Error::from)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Compute

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeEstimate {
    pub params: u64,
    pub image_tokens: u64,
    /// `params * image_tokens`
    pub nd: u128,
    /// `6 * params * image_tokens`
    pub flops: u128,
}

/// Training-free compute proxy `6 N D` with N parameters and D image tokens,
/// computed exactly in integers.
pub fn flops_estimate(params: u64, image_tokens: u64) -> Result<ComputeEstimate, EvalError> {
    if params == 0 || image_tokens == 0 {
        return Err(EvalError::InvalidInput(
            "params and image_tokens must be positive".into(),
        ));
    }
    let nd = u128::from(params) * u128::from(image_tokens);
    Ok(ComputeEstimate {
        params,
        image_tokens,
        nd,
        flops: 6 * nd,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoEntry {
    pub model_name: String,
    pub params: u64,
    pub image_tokens: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub model_name: String,
    pub params: u64,
    pub image_tokens: u64,
    pub nd: u128,
    pub flops: u128,
    pub score: f64,
    pub frontier: bool,
}

/// Rows ascending by ND (name breaks ties). A row is on the frontier unless
/// some other row has strictly lower ND and strictly higher score.
pub fn pareto_table(entries: &[ParetoEntry]) -> Result<Vec<ParetoRow>, EvalError> {
    if entries.is_empty() {
        return Err(EvalError::InvalidInput("no entries".into()));
    }
    let mut rows = entries
        .iter()
        .map(|e| {
            let c = flops_estimate(e.params, e.image_tokens)?;
            Ok(ParetoRow {
                model_name: e.model_name.clone(),
                params: e.params,
                image_tokens: e.image_tokens,
                nd: c.nd,
                flops: c.flops,
                score: e.score,
                frontier: true,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    rows.sort_by(|a, b| {
        a.nd.cmp(&b.nd)
            .then_with(|| a.model_name.cmp(&b.model_name))
    });
    let snapshot: Vec<(u128, f64)> = rows.iter().map(|r| (r.nd, r.score)).collect();
    for row in &mut rows {
        row.frontier = !snapshot
            .iter()
            .any(|&(nd, score)| nd < row.nd && score > row.score);
    }
    Ok(rows)
}

pub fn read_pareto_entries(path: &Path) -> Result<Vec<ParetoEntry>, EvalError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<ParetoEntry>, _>>()?)
}

pub fn write_pareto_csv(path: &Path, rows: &[ParetoRow]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model_name",
        "params",
        "image_tokens",
        "nd",
        "flops",
        "score",
        "frontier",
    ])?;
    for r in rows {
        w.write_record([
            r.model_name.clone(),
            r.params.to_string(),
            r.image_tokens.to_string(),
            r.nd.to_string(),
            r.flops.to_string(),
            r.score.to_string(),
            r.frontier.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
