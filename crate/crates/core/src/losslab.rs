//! Per-token training targets for coordinate digits: distance-aware label
//! smoothing, place-value loss weights, and initial embeddings for added
//! coordinate tokens.
//!
//! Nothing here trains a model; the outputs are plain vectors and matrices
//! that a training framework can ingest (see [`write_array_file`]).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::LossLabError;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabSpec {
    pub size: usize,
    /// token id -> digit value 0..=9
    pub digit_tokens: BTreeMap<usize, u8>,
    #[serde(default)]
    pub point_token_ids: Vec<usize>,
}

impl VocabSpec {
    /// Vocabulary of `size` tokens whose ids `first..first + 10` are the digits
    /// `0..=9`.
    pub fn with_contiguous_digits(size: usize, first: usize) -> Self {
        Self {
            size,
            digit_tokens: (0..10u8).map(|d| (first + usize::from(d), d)).collect(),
            point_token_ids: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), LossLabError> {
        if let Some((&id, _)) = self.digit_tokens.iter().find(|(&id, _)| id >= self.size) {
            return Err(LossLabError::InvalidVocab(format!(
                "digit token {id} outside vocabulary of {}",
                self.size
            )));
        }
        if let Some((_, &d)) = self.digit_tokens.iter().find(|(_, &d)| d > 9) {
            return Err(LossLabError::InvalidVocab(format!("digit value {d} > 9")));
        }
        if let Some(id) = self
            .point_token_ids
            .iter()
            .find(|id| self.digit_tokens.contains_key(id) || **id >= self.size)
        {
            return Err(LossLabError::InvalidVocab(format!(
                "point marker id {id} overlaps digits or is out of range"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DigitDistance {
    Squared,
    Absolute,
}

impl DigitDistance {
    pub fn eval(self, k: u8, t: u8) -> f64 {
        let diff = f64::from(k) - f64::from(t);
        match self {
            DigitDistance::Squared => diff * diff,
            DigitDistance::Absolute => diff.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// Punishment factor; larger values smooth more.
    pub psi: f64,
    pub distance: DigitDistance,
    #[serde(default = "default_clamp")]
    pub clamp_at_zero: bool,
}

fn default_clamp() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVector {
    pub values: Vec<f64>,
}

/// Soft target for a digit token: 1 at the target, `1 - d(K, T) / psi` at the
/// other digits (clamped at 0 unless disabled), 0 elsewhere.
pub fn smoothed_labels(
    vocab: &VocabSpec,
    target_token: usize,
    cfg: &SmoothingConfig,
) -> Result<LabelVector, LossLabError> {
    vocab.validate()?;
    if cfg.psi.is_nan() || cfg.psi <= 0.0 {
        return Err(LossLabError::InvalidScheme(format!(
            "psi must be positive, got {}",
            cfg.psi
        )));
    }
    let target = *vocab
        .digit_tokens
        .get(&target_token)
        .ok_or(LossLabError::NonDigitTarget(target_token))?;
    let mut values = vec![0.0; vocab.size];
    for (&id, &digit) in &vocab.digit_tokens {
        values[id] = if id == target_token {
            1.0
        } else {
            let v = 1.0 - cfg.distance.eval(digit, target) / cfg.psi;
            if cfg.clamp_at_zero {
                v.max(0.0)
            } else {
                v
            }
        };
    }
    Ok(LabelVector { values })
}

/// `-sum(label * ln p)`, the loss actually used with smoothed targets.
pub fn smoothed_cross_entropy(labels: &LabelVector, probs: &[f64]) -> f64 {
    -labels
        .values
        .iter()
        .zip(probs)
        .filter(|(y, _)| **y != 0.0)
        .map(|(y, p)| y * p.ln())
        .sum::<f64>()
}

/// `-sum(label * p)`, the linear form that matches the regularized
/// regression objective up to an affine map.
pub fn expected_label_loss(labels: &LabelVector, probs: &[f64]) -> f64 {
    -labels
        .values
        .iter()
        .zip(probs)
        .map(|(y, p)| y * p)
        .sum::<f64>()
}

// ---------------------------------------------------------------------------
// Place-value reweighting

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DigitPlace {
    Hundreds,
    Tens,
    Units,
    NonDigit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReweightScheme {
    pub hundreds: f64,
    pub tens: f64,
    pub units: f64,
}

impl ReweightScheme {
    pub const UNIFORM: ReweightScheme = ReweightScheme {
        hundreds: 1.0,
        tens: 1.0,
        units: 1.0,
    };

    pub const DECIMAL: ReweightScheme = ReweightScheme {
        hundreds: 1.0,
        tens: 0.1,
        units: 0.01,
    };

    pub fn sqrt_ten() -> Self {
        Self {
            hundreds: 1.0,
            tens: 1.0 / 10f64.sqrt(),
            units: 0.1,
        }
    }

    pub fn ln_ten() -> Self {
        let ln10 = std::f64::consts::LN_10;
        Self {
            hundreds: 1.0,
            tens: 1.0 / ln10,
            units: 1.0 / (ln10 * ln10),
        }
    }

    /// Digit weights above 1 make models drift out of the coordinate format,
    /// so they are rejected outright.
    pub fn validate(&self) -> Result<(), LossLabError> {
        for (name, w) in [
            ("hundreds", self.hundreds),
            ("tens", self.tens),
            ("units", self.units),
        ] {
            if !(0.0..=1.0).contains(&w) {
                return Err(LossLabError::InvalidScheme(format!(
                    "{name} weight {w} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn weight(&self, place: DigitPlace) -> f64 {
        match place {
            DigitPlace::Hundreds => self.hundreds,
            DigitPlace::Tens => self.tens,
            DigitPlace::Units => self.units,
            DigitPlace::NonDigit => 1.0,
        }
    }
}

/// Splits coordinate text into one token per digit and one token per
/// maximal non-digit run, mirroring digit-wise number tokenization.
pub fn coordinate_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut run = String::new();
    for ch in text.chars() {
        if ch.is_ascii_digit() {
            if !run.is_empty() {
                out.push(std::mem::take(&mut run));
            }
            out.push(ch.to_string());
        } else {
            run.push(ch);
        }
    }
    if !run.is_empty() {
        out.push(run);
    }
    out
}

/// Place value of every token: each run of consecutive single-digit tokens
/// is one coordinate of at most three digits, read right to left.
pub fn annotate_places<S: AsRef<str>>(tokens: &[S]) -> Result<Vec<DigitPlace>, LossLabError> {
    let is_digit = |t: &S| {
        let t = t.as_ref();
        t.len() == 1 && t.as_bytes()[0].is_ascii_digit()
    };
    let mut places = vec![DigitPlace::NonDigit; tokens.len()];
    let mut i = 0;
    while i < tokens.len() {
        if !is_digit(&tokens[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < tokens.len() && is_digit(&tokens[i]) {
            i += 1;
        }
        let run = i - start;
        if run > 3 {
            let digits: String = tokens[start..i].iter().map(|t| t.as_ref()).collect();
            return Err(LossLabError::DigitRunTooLong(digits));
        }
        const ORDER: [DigitPlace; 3] = [DigitPlace::Hundreds, DigitPlace::Tens, DigitPlace::Units];
        for (k, slot) in places[start..i].iter_mut().enumerate() {
            *slot = ORDER[3 - run + k];
        }
    }
    Ok(places)
}

pub fn reweight_weights(
    places: &[DigitPlace],
    scheme: &ReweightScheme,
) -> Result<Vec<f64>, LossLabError> {
    scheme.validate()?;
    Ok(places.iter().map(|&p| scheme.weight(p)).collect())
}

/// Convenience: tokens and weights for a coordinate answer string.
pub fn reweight_text(
    text: &str,
    scheme: &ReweightScheme,
) -> Result<(Vec<String>, Vec<f64>), LossLabError> {
    let tokens = coordinate_tokens(text);
    let places = annotate_places(&tokens)?;
    let weights = reweight_weights(&places, scheme)?;
    Ok((tokens, weights))
}

/// `-sum(w_t * ln p_t)` over the target tokens' probabilities.
pub fn reweighted_nll(weights: &[f64], target_probs: &[f64]) -> f64 {
    -weights
        .iter()
        .zip(target_probs)
        .map(|(w, p)| w * p.ln())
        .sum::<f64>()
}

// ---------------------------------------------------------------------------
// Special-token initialization

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Every new row ~ Normal(mean, std) of all embeddings, per dimension.
    Hf,
    /// Value rows ~ Normal(mean, std) of the digit embeddings; markers copy
    /// the "point" embedding.
    RDigit,
    /// Values 0..=9 copy their digit, larger values take the digit mean.
    DigitMean,
    /// Each value copies the leading digit of its zero-padded 3-digit form.
    MainDigit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecialEmbeddings {
    pub point_open: Array1<f64>,
    pub point_close: Array1<f64>,
    /// Row `v` initializes the token for coordinate value `v`.
    pub values: Array2<f64>,
}

/// Digit that seeds `value` under [`InitStrategy::MainDigit`].
pub fn main_digit(value: usize) -> usize {
    let padded = format!("{value:03}");
    usize::from(padded.as_bytes()[0] - b'0')
}

fn row_stats(rows: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = rows.mean_axis(Axis(0)).expect("non-empty rows");
    let std = rows.std_axis(Axis(0), 0.0);
    (mean, std)
}

fn sample_rows(
    count: usize,
    mean: &Array1<f64>,
    std: &Array1<f64>,
    rng: &mut RngStream,
) -> Result<Array2<f64>, LossLabError> {
    let dists = mean
        .iter()
        .zip(std.iter())
        .map(|(&m, &s)| Normal::new(m, s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| LossLabError::DimensionMismatch(format!("bad statistics: {e}")))?;
    let dim = mean.len();
    let mut out = Array2::zeros((count, dim));
    for mut row in out.rows_mut() {
        for (cell, dist) in row.iter_mut().zip(&dists) {
            *cell = dist.sample(rng);
        }
    }
    Ok(out)
}

/// Initial embeddings for `<point>`, `</point>` and `count` coordinate-value
/// tokens, derived from a pretrained embedding table.
///
/// `digit_ids[d]` is the token id of digit `d`; `point_token_id` is the id of
/// the word "point".
pub fn init_special_embeddings(
    pretrained: &Array2<f64>,
    digit_ids: &[usize],
    point_token_id: usize,
    strategy: InitStrategy,
    count: usize,
    rng: &mut RngStream,
) -> Result<SpecialEmbeddings, LossLabError> {
    let (vocab, dim) = pretrained.dim();
    if vocab == 0 || dim == 0 {
        return Err(LossLabError::DimensionMismatch(
            "empty embedding table".into(),
        ));
    }
    if digit_ids.len() != 10 {
        return Err(LossLabError::DimensionMismatch(format!(
            "expected 10 digit ids, got {}",
            digit_ids.len()
        )));
    }
    if let Some(id) = digit_ids
        .iter()
        .chain(std::iter::once(&point_token_id))
        .find(|&&id| id >= vocab)
    {
        return Err(LossLabError::DimensionMismatch(format!(
            "token id {id} outside table of {vocab} rows"
        )));
    }
    let digits = pretrained.select(Axis(0), digit_ids);
    let point = pretrained.row(point_token_id).to_owned();

    let embeddings = match strategy {
        InitStrategy::Hf => {
            let (mean, std) = row_stats(pretrained);
            let rows = sample_rows(count + 2, &mean, &std, rng)?;
            SpecialEmbeddings {
                point_open: rows.row(0).to_owned(),
                point_close: rows.row(1).to_owned(),
                values: rows.slice(ndarray::s![2.., ..]).to_owned(),
            }
        }
        InitStrategy::RDigit => {
            let (mean, std) = row_stats(&digits);
            SpecialEmbeddings {
                point_open: point.clone(),
                point_close: point,
                values: sample_rows(count, &mean, &std, rng)?,
            }
        }
        InitStrategy::DigitMean => {
            let mean = digits.mean_axis(Axis(0)).expect("ten digit rows");
            let mut values = Array2::zeros((count, dim));
            for (v, mut row) in values.rows_mut().into_iter().enumerate() {
                if v < 10 {
                    row.assign(&digits.row(v));
                } else {
                    row.assign(&mean);
                }
            }
            SpecialEmbeddings {
                point_open: point.clone(),
                point_close: point,
                values,
            }
        }
        InitStrategy::MainDigit => {
            let mut values = Array2::zeros((count, dim));
            for (v, mut row) in values.rows_mut().into_iter().enumerate() {
                row.assign(&digits.row(main_digit(v)));
            }
            SpecialEmbeddings {
                point_open: point.clone(),
                point_close: point,
                values,
            }
        }
    };
    Ok(embeddings)
}

// ---------------------------------------------------------------------------
// Binary export

const ARRAY_MAGIC: &[u8; 8] = b"GKARR001";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub kind: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub config: serde_json::Value,
}

/// Writes `magic | u64 LE header length | JSON header | f64 LE values`.
pub fn write_array_file(
    path: &Path,
    kind: &str,
    shape: &[usize],
    config: serde_json::Value,
    values: &[f64],
) -> Result<(), LossLabError> {
    let expected: usize = shape.iter().product();
    if expected != values.len() {
        return Err(LossLabError::DimensionMismatch(format!(
            "shape {shape:?} holds {expected} values, got {}",
            values.len()
        )));
    }
    let header = ArrayHeader {
        kind: kind.to_string(),
        dtype: "f64le".into(),
        shape: shape.to_vec(),
        config,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| LossLabError::Format(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(ARRAY_MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_array_file(path: &Path) -> Result<(ArrayHeader, Vec<f64>), LossLabError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != ARRAY_MAGIC {
        return Err(LossLabError::Format("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut header_bytes = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header_bytes)?;
    let header: ArrayHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| LossLabError::Format(e.to_string()))?;
    let count: usize = header.shape.iter().product();
    let mut values = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok((header, values))
}
