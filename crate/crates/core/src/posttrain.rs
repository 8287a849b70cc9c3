//! Post-training data products built from scored model rollouts: preference
//! pairs, reject-sampling finetuning sets, curriculum order, and per-round
//! dataset exports.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::PostTrainError;
use crate::geometry::{click_hit, parse, CoordFormat, NormBox};
use crate::records::write_jsonl;
use crate::rng::RngStream;

/// One scored sample: ground truth plus the raw texts the model produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSet {
    pub sample_id: String,
    pub gt_box: NormBox,
    pub rollouts: Vec<String>,
    /// How rollout texts encode the click; boxes click at their center.
    #[serde(default = "default_format")]
    pub format: CoordFormat,
}

fn default_format() -> CoordFormat {
    CoordFormat::Point
}

/// Whether `raw_text` clicks inside `gt_box`. Unparseable text is incorrect.
pub fn rollout_correct(raw_text: &str, format: CoordFormat, gt_box: &NormBox) -> bool {
    parse(raw_text.trim(), format)
        .map(|g| click_hit(&g.click(), gt_box))
        .unwrap_or(false)
}

impl RolloutSet {
    /// Correctness recomputed from geometry for every rollout.
    pub fn correctness(&self) -> Vec<bool> {
        self.rollouts
            .iter()
            .map(|t| rollout_correct(t, self.format, &self.gt_box))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub sample_id: String,
    pub chosen: String,
    pub rejected: String,
    pub gt_box: NormBox,
    pub format: CoordFormat,
}

impl PreferencePair {
    pub fn verify(&self) -> Result<(), PostTrainError> {
        if rollout_correct(&self.chosen, self.format, &self.gt_box)
            && !rollout_correct(&self.rejected, self.format, &self.gt_box)
        {
            Ok(())
        } else {
            Err(PostTrainError::PairVerification(self.sample_id.clone()))
        }
    }
}

/// How many pairs a mixed (partly correct) sample contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "k")]
pub enum Pairing {
    /// First correct rollout against first incorrect one.
    FirstPair,
    /// Full cross product of correct × incorrect.
    AllPairs,
    /// Cross product in row-major order, truncated to `k` pairs.
    MaxK(usize),
}

impl Default for Pairing {
    fn default() -> Self {
        Pairing::MaxK(4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageOutcome {
    pub sample_id: String,
    pub pairs: Vec<PreferencePair>,
    pub reject_sft: Vec<String>,
    pub correct: usize,
    pub total: usize,
    pub difficulty: f64,
}

/// Splits a rollout set into preference pairs (only when correct and
/// incorrect rollouts coexist) and the correct texts for reject sampling.
/// Duplicate rollout texts are kept as-is.
pub fn triage(rs: &RolloutSet, pairing: Pairing) -> Result<TriageOutcome, PostTrainError> {
    if rs.rollouts.is_empty() {
        return Err(PostTrainError::EmptyRollouts(rs.sample_id.clone()));
    }
    let correctness = rs.correctness();
    let (good, bad): (Vec<_>, Vec<_>) = rs
        .rollouts
        .iter()
        .zip(&correctness)
        .partition(|(_, &ok)| ok);
    let good: Vec<&String> = good.into_iter().map(|(t, _)| t).collect();
    let bad: Vec<&String> = bad.into_iter().map(|(t, _)| t).collect();

    let limit = match pairing {
        Pairing::FirstPair => 1,
        Pairing::AllPairs => usize::MAX,
        Pairing::MaxK(k) => k,
    };
    let pairs = good
        .iter()
        .flat_map(|c| bad.iter().map(move |r| (*c, *r)))
        .take(limit)
        .map(|(c, r)| PreferencePair {
            sample_id: rs.sample_id.clone(),
            chosen: c.clone(),
            rejected: r.clone(),
            gt_box: rs.gt_box,
            format: rs.format,
        })
        .collect();

    let total = rs.rollouts.len();
    Ok(TriageOutcome {
        sample_id: rs.sample_id.clone(),
        pairs,
        correct: good.len(),
        total,
        difficulty: 1.0 - good.len() as f64 / total as f64,
        reject_sft: good.into_iter().cloned().collect(),
    })
}

/// Triage of many samples in parallel; output order follows input order.
pub fn triage_all(
    sets: &[RolloutSet],
    pairing: Pairing,
) -> Result<Vec<TriageOutcome>, PostTrainError> {
    sets.par_iter().map(|rs| triage(rs, pairing)).collect()
}

/// Sample ids from easiest to hardest. Ties are ordered by a seeded shuffle
/// so equal-difficulty samples do not follow input order.
pub fn curriculum_order(samples: &[(String, f64)], rng: &mut RngStream) -> Vec<String> {
    debug_assert!(samples.iter().all(|(_, d)| (0.0..=1.0).contains(d)));
    let mut order: Vec<&(String, f64)> = samples.iter().collect();
    order.shuffle(rng);
    order.sort_by(|a, b| a.1.total_cmp(&b.1));
    order.into_iter().map(|(id, _)| id.clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSchedule {
    pub rounds: usize,
    pub refresh_interval_steps: usize,
}

impl Default for RoundSchedule {
    fn default() -> Self {
        Self {
            rounds: 3,
            refresh_interval_steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundManifest {
    pub schema_version: u32,
    pub round_index: usize,
    pub schedule: RoundSchedule,
    pub pairs_file: String,
    pub sft_file: String,
    pub pair_count: usize,
    pub sft_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SftLine<'a> {
    raw_text: &'a str,
}

/// Writes `round_<k>/pairs.jsonl`, `round_<k>/sft.jsonl` and
/// `round_<k>/manifest.json` under `out_dir`. Every pair is re-verified
/// against its ground-truth box before anything is written; empty inputs
/// still produce (empty) files.
pub fn export_round(
    out_dir: &Path,
    pairs: &[PreferencePair],
    reject_sft: &[String],
    schedule: RoundSchedule,
    round_index: usize,
) -> Result<(PathBuf, RoundManifest), PostTrainError> {
    if round_index >= schedule.rounds {
        return Err(PostTrainError::RoundOutOfRange {
            index: round_index,
            rounds: schedule.rounds,
        });
    }
    for pair in pairs {
        pair.verify()?;
    }
    let dir = out_dir.join(format!("round_{round_index}"));
    fs::create_dir_all(&dir)?;
    write_jsonl(&dir.join("pairs.jsonl"), pairs)?;
    let sft: Vec<SftLine> = reject_sft.iter().map(|t| SftLine { raw_text: t }).collect();
    write_jsonl(&dir.join("sft.jsonl"), &sft)?;
    let manifest = RoundManifest {
        schema_version: crate::records::SCHEMA_VERSION,
        round_index,
        schedule,
        pairs_file: "pairs.jsonl".into(),
        sft_file: "sft.jsonl".into(),
        pair_count: pairs.len(),
        sft_count: reject_sft.len(),
    };
    let path = dir.join("manifest.json");
    let mut body = serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::from)?;
    body.push(b'\n');
    fs::write(&path, body)?;
    Ok((path, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(correct: usize, wrong: usize) -> RolloutSet {
        let mut rollouts = Vec::new();
        for i in 0..correct {
            rollouts.push(format!("<point>{}, 500</point>", 450 + i));
        }
        for i in 0..wrong {
            rollouts.push(format!("<point>{}, 900</point>", 100 + i));
        }
        RolloutSet {
            sample_id: "s".into(),
            gt_box: NormBox::new(0.4, 0.4, 0.6, 0.6).unwrap(),
            rollouts,
            format: CoordFormat::Point,
        }
    }

    #[test]
    fn mixed_all_pairs() {
        let out = triage(&set(3, 5), Pairing::AllPairs).unwrap();
        assert_eq!(out.pairs.len(), 15);
        assert_eq!(out.reject_sft.len(), 3);
        assert_eq!(out.difficulty, 0.625);
        assert!(out.pairs.iter().all(|p| p.verify().is_ok()));
    }

    #[test]
    fn pairing_policies() {
        assert_eq!(
            triage(&set(3, 5), Pairing::FirstPair).unwrap().pairs.len(),
            1
        );
        let capped = triage(&set(3, 5), Pairing::default()).unwrap();
        assert_eq!(capped.pairs.len(), 4);
        assert_eq!(capped.pairs[0].chosen, capped.pairs[3].chosen);
        assert_eq!(triage(&set(1, 2), Pairing::MaxK(4)).unwrap().pairs.len(), 2);
    }

    #[test]
    fn uniform_sets_give_no_pairs() {
        let all = triage(&set(8, 0), Pairing::AllPairs).unwrap();
        assert!(all.pairs.is_empty());
        assert_eq!(all.reject_sft.len(), 8);
        assert_eq!(all.difficulty, 0.0);
        let none = triage(&set(0, 8), Pairing::AllPairs).unwrap();
        assert!(none.pairs.is_empty() && none.reject_sft.is_empty());
        assert_eq!(none.difficulty, 1.0);
        assert!(matches!(
            triage(&set(0, 0), Pairing::AllPairs),
            Err(PostTrainError::EmptyRollouts(_))
        ));
    }

    #[test]
    fn garbage_counts_as_incorrect() {
        let mut rs = set(1, 0);
        rs.rollouts.push("I would click the button".into());
        let out = triage(&rs, Pairing::AllPairs).unwrap();
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.pairs[0].rejected, "I would click the button");
    }

    #[test]
    fn box_rollouts_click_center() {
        let rs = RolloutSet {
            sample_id: "b".into(),
            gt_box: NormBox::new(0.4, 0.4, 0.6, 0.6).unwrap(),
            rollouts: vec![
                "<box>450, 450, 550, 550</box>".into(),
                "<box>0, 0, 100, 100</box>".into(),
            ],
            format: CoordFormat::Xyxy,
        };
        assert_eq!(rs.correctness(), vec![true, false]);
    }

    #[test]
    fn curriculum() {
        let s = |v: &[(&str, f64)]| {
            v.iter()
                .map(|(a, b)| (a.to_string(), *b))
                .collect::<Vec<_>>()
        };
        let mut rng = RngStream::new(1, "curriculum");
        assert_eq!(
            curriculum_order(&s(&[("a", 0.9), ("b", 0.1), ("c", 0.5)]), &mut rng),
            vec!["b", "c", "a"]
        );
        let ties = s(&[("a", 0.5), ("b", 0.5), ("c", 0.5), ("d", 0.5), ("e", 0.5)]);
        let first = curriculum_order(&ties, &mut RngStream::new(7, "curriculum"));
        let second = curriculum_order(&ties, &mut RngStream::new(7, "curriculum"));
        assert_eq!(first, second);
        assert!(curriculum_order(&[], &mut rng).is_empty());
    }

    #[test]
    fn export_rounds() {
        let dir = tempfile::tempdir().unwrap();
        let schedule = RoundSchedule::default();
        let out = triage(&set(2, 1), Pairing::AllPairs).unwrap();
        for k in 0..schedule.rounds {
            let pairs = if k == 1 { &[][..] } else { &out.pairs[..] };
            let (path, m) = export_round(dir.path(), pairs, &out.reject_sft, schedule, k).unwrap();
            assert!(path.ends_with(format!("round_{k}/manifest.json")));
            assert_eq!(m.round_index, k);
            assert_eq!(m.schedule.refresh_interval_steps, 100);
        }
        let empty = fs::read_to_string(dir.path().join("round_1/pairs.jsonl")).unwrap();
        assert!(empty.is_empty());
        assert!(matches!(
            export_round(dir.path(), &[], &[], schedule, 3),
            Err(PostTrainError::RoundOutOfRange { .. })
        ));
        let mut forged = out.pairs[0].clone();
        std::mem::swap(&mut forged.chosen, &mut forged.rejected);
        assert!(matches!(
            export_round(dir.path(), &[forged], &[], schedule, 0),
            Err(PostTrainError::PairVerification(_))
        ));
    }
}
