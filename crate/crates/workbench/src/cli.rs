//! Command-line surface: one subcommand per pipeline stage. Every run
//! writes a manifest, including failed runs.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use groundkit_core::evalharness::{ClickSource, SourceAdapter};
use groundkit_core::CoordFormat;
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::stages;

#[derive(Debug, Parser)]
#[command(
    name = "groundkit",
    version,
    about = "GUI-grounding corpus and evaluation toolkit"
)]
pub struct Cli {
    /// Worker threads for parallel stages (0 = one per core). Outputs do not
    /// depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Where to write the run manifest (defaults next to the main output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub stage: Stage,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Keep at most N pages per domain.
    CapDomains(CapDomainsArgs),
    /// Assign each page a render resolution.
    PlanRender(PlanRenderArgs),
    /// Apply retention and offline filters to rendered screens.
    Filter(FilterArgs),
    /// Flatten the element-center distribution on a grid.
    Resample(ResampleArgs),
    /// Pick one training element per screen.
    Select(SelectArgs),
    /// Crop and resize-pad selected samples into training records.
    Augment(AugmentArgs),
    /// Generate reference expressions through a chat endpoint.
    Regen(RegenArgs),
    /// Turn rollouts into preference pairs and reject-sampling data.
    Triage(TriageArgs),
    /// Score predictions against a benchmark.
    Eval(EvalArgs),
    /// Estimate training FLOPs or build a Pareto table.
    Flops(FlopsArgs),
    /// Run the box-review HTTP service.
    Serve(ServeArgs),
    /// Write the reviewed dataset without starting the service.
    Export(ExportArgs),
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::CapDomains(_) => "cap-domains",
            Stage::PlanRender(_) => "plan-render",
            Stage::Filter(_) => "filter",
            Stage::Resample(_) => "resample",
            Stage::Select(_) => "select",
            Stage::Augment(_) => "augment",
            Stage::Regen(_) => "regen",
            Stage::Triage(_) => "triage",
            Stage::Eval(_) => "eval",
            Stage::Flops(_) => "flops",
            Stage::Serve(_) => "serve",
            Stage::Export(_) => "export",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Stage::CapDomains(a) => Some(a.seed),
            Stage::PlanRender(a) => Some(a.seed),
            Stage::Resample(a) => Some(a.seed),
            Stage::Select(a) => Some(a.seed),
            Stage::Augment(a) => Some(a.seed),
            Stage::Regen(a) => Some(a.seed),
            Stage::Triage(a) => Some(a.seed),
            _ => None,
        }
    }

    fn primary_output(&self) -> PathBuf {
        match self {
            Stage::CapDomains(a) => a.out.clone(),
            Stage::PlanRender(a) => a.out.clone(),
            Stage::Filter(a) => a.out.clone(),
            Stage::Resample(a) => a.out.clone(),
            Stage::Select(a) => a.out.clone(),
            Stage::Augment(a) => a.out.clone(),
            Stage::Regen(a) => a.out.clone(),
            Stage::Triage(a) => a.out_dir.join(format!("round_{}", a.round)).join("triage"),
            Stage::Eval(a) => a.out_json.clone(),
            Stage::Flops(a) => a.out.clone().unwrap_or_else(|| PathBuf::from("flops")),
            Stage::Serve(a) => a.log.clone(),
            Stage::Export(a) => a.out.clone(),
        }
    }

    pub fn default_manifest(&self) -> PathBuf {
        let out = self.primary_output();
        let mut name = out
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CapDomainsArgs {
    /// JSONL of `{url, domain}` pages.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub cap: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct PlanRenderArgs {
    /// JSONL of pages with a `url` field.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of aspect steps N; aspects run over `(1 + i/N, 2 - i/N)`.
    #[arg(long, default_value_t = 10)]
    pub aspect_steps: u32,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct FilterArgs {
    /// JSONL of screen records.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSONL audit of removed elements (defaults to `<out>.audit.jsonl`).
    #[arg(long)]
    pub audit: Option<PathBuf>,
    /// Screenshot directory; enables the empty-region filter.
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// JSON filter configuration; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub containment_iou: Option<f64>,
    #[arg(long)]
    pub empty_std: Option<f64>,
    #[arg(long)]
    pub text_aspect: Option<f64>,
}

impl FilterArgs {
    pub fn audit_path(&self) -> PathBuf {
        self.audit
            .clone()
            .unwrap_or_else(|| sibling(&self.out, ".audit.jsonl"))
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ResampleArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grid columns.
    #[arg(long)]
    pub n: Option<usize>,
    /// Grid rows.
    #[arg(long)]
    pub m: Option<usize>,
    /// Quantile of the cell-count distribution used as the per-cell cap.
    #[arg(long)]
    pub psi: Option<f64>,
    /// Keep screens whose elements were all dropped.
    #[arg(long)]
    pub keep_empty: bool,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct AugmentArgs {
    /// JSONL of selected samples.
    #[arg(long)]
    pub input: PathBuf,
    /// Training JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory holding the source screenshots.
    #[arg(long)]
    pub image_root: PathBuf,
    /// Directory receiving augmented images.
    #[arg(long)]
    pub image_out: PathBuf,
    /// Output canvas `WxH`; defaults to each source's size.
    #[arg(long, value_parser = parse_dims)]
    pub target: Option<(u32, u32)>,
    /// Coordinate format of the training target.
    #[arg(long, default_value = "point")]
    pub format: CoordFormat,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub random_crop: Option<f64>,
    #[arg(long)]
    pub min_crop: Option<f64>,
    #[arg(long)]
    pub random_resize: Option<f64>,
    #[arg(long)]
    pub max_screen_size: Option<u32>,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct RegenArgs {
    /// JSONL of selected samples.
    #[arg(long)]
    pub input: PathBuf,
    /// Selected samples with references filled in.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub image_root: PathBuf,
    /// Directory for the highlighted screenshots and target crops sent.
    #[arg(long)]
    pub asset_dir: PathBuf,
    /// Quarantine JSONL for failed items (defaults to `<out>.rejects.jsonl`).
    #[arg(long)]
    pub rejects: Option<PathBuf>,
    /// JSON endpoint configuration; flags below override its fields.
    #[arg(long)]
    pub endpoint_config: Option<PathBuf>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long)]
    pub token_env: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    /// Sustained request rate limit.
    #[arg(long, default_value_t = 2.0)]
    pub requests_per_second: f64,
    #[arg(long)]
    pub seed: u64,
}

impl RegenArgs {
    pub fn rejects_path(&self) -> PathBuf {
        self.rejects
            .clone()
            .unwrap_or_else(|| sibling(&self.out, ".rejects.jsonl"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingArg {
    FirstPair,
    AllPairs,
    MaxK,
}

#[derive(Debug, Args, Serialize)]
pub struct TriageArgs {
    /// JSONL of rollout sets.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Round being exported (0-based).
    #[arg(long, default_value_t = 0)]
    pub round: usize,
    #[arg(long, default_value_t = 3)]
    pub rounds: usize,
    #[arg(long, default_value_t = 100)]
    pub refresh_interval_steps: usize,
    #[arg(long, value_enum, default_value_t = PairingArg::MaxK)]
    pub pairing: PairingArg,
    /// Pair cap under `max-k`.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Seed for curriculum tie-breaking.
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Benchmark JSONL.
    #[arg(long)]
    pub benchmark: PathBuf,
    /// Predictions JSONL.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, default_value = "canonical")]
    pub adapter: SourceAdapter,
    /// Checks that every referenced image exists.
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Fail instead of warning when an image is missing.
    #[arg(long)]
    pub strict_images: bool,
    #[arg(long, default_value = "point_direct")]
    pub click_source: ClickSource,
    #[arg(long, default_value = "xyxy")]
    pub box_format: CoordFormat,
    /// Comma-separated tag keys defining slices.
    #[arg(long, value_delimiter = ',')]
    pub slice_keys: Vec<String>,
    #[arg(long)]
    pub out_json: PathBuf,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FlopsArgs {
    /// Parameter count N (integer or scientific notation).
    #[arg(long, value_parser = parse_count, required_unless_present = "entries")]
    pub params: Option<u64>,
    /// Image tokens per sample D.
    #[arg(long, value_parser = parse_count, required_unless_present = "entries")]
    pub image_tokens: Option<u64>,
    /// CSV of `model_name,params,image_tokens,score` rows for a Pareto table.
    #[arg(long, conflicts_with_all = ["params", "image_tokens"])]
    pub entries: Option<PathBuf>,
    /// Output file (JSON for a single estimate, CSV for a table); stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    /// JSONL of screen records under review.
    #[arg(long)]
    pub store: PathBuf,
    /// Append-only verdict log.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8765")]
    pub bind: SocketAddr,
    /// Environment variable holding a shared token required in `x-review-token`.
    #[arg(long)]
    pub token_env: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExportArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn parse_dims(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("`{v}`: {e}"));
    let (w, h) = (parse(w)?, parse(h)?);
    if w == 0 || h == 0 {
        return Err(format!("`{s}` has a zero side"));
    }
    Ok((w, h))
}

/// Accepts `4100000000`, `4.1e9` or `4_100_000_000`.
fn parse_count(s: &str) -> Result<u64, String> {
    let clean = s.replace('_', "");
    if let Ok(v) = clean.parse::<u64>() {
        return Ok(v);
    }
    let f: f64 = clean
        .parse()
        .map_err(|_| format!("`{s}` is not a number"))?;
    if !(f.is_finite() && f >= 0.0 && f.fract() == 0.0 && f < 2f64.powi(64)) {
        return Err(format!("`{s}` is not a non-negative integer"));
    }
    Ok(f as u64)
}

/// Runs one stage inside a worker pool and writes its manifest. The
/// manifest is written even when the stage fails.
pub fn run(cli: &Cli) -> (RunManifest, anyhow::Result<()>) {
    let stage = &cli.stage;
    let config = serde_json::to_value(stage)
        .ok()
        .and_then(|v| v.as_object().and_then(|o| o.values().next().cloned()))
        .unwrap_or_default();
    let mut manifest = RunManifest::new(stage.name(), stage.seed(), config);
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(anyhow::Error::from)
        .and_then(|pool| pool.install(|| stages::run_stage(stage, &mut manifest)));
    if let Err(err) = &result {
        manifest.fail(stages::error_kind(err), format!("{err:#}"));
    }
    let path = cli
        .manifest
        .clone()
        .unwrap_or_else(|| stage.default_manifest());
    let written = manifest.write(&path).map_err(anyhow::Error::from);
    (manifest, result.and(written))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_parsing() {
        assert_eq!(parse_count("4.1e9").unwrap(), 4_100_000_000);
        assert_eq!(parse_count("4_100_000_000").unwrap(), 4_100_000_000);
        assert_eq!(parse_count("2353").unwrap(), 2353);
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
    }

    #[test]
    fn dims_parsing() {
        assert_eq!(parse_dims("1920x1080").unwrap(), (1920, 1080));
        assert!(parse_dims("0x5").is_err());
        assert!(parse_dims("1920").is_err());
    }

    #[test]
    fn manifest_defaults_next_to_output() {
        let cli = Cli::parse_from([
            "groundkit",
            "select",
            "--input",
            "a.jsonl",
            "--out",
            "d/b.jsonl",
            "--seed",
            "3",
        ]);
        assert_eq!(
            cli.stage.default_manifest(),
            PathBuf::from("d/b.jsonl.manifest.json")
        );
        assert_eq!(cli.stage.seed(), Some(3));
    }

    #[test]
    fn seed_is_required_for_randomized_stages() {
        for stage in ["cap-domains", "plan-render", "resample", "select", "triage"] {
            let r = Cli::try_parse_from([
                "groundkit",
                stage,
                "--input",
                "a",
                "--out",
                "b",
                "--out-dir",
                "c",
            ]);
            assert!(r.is_err(), "{stage}");
        }
    }
}
