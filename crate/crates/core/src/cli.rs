//! Command-line front end. Every subcommand writes its artefacts under
//! `--out` and prints a JSON summary on stdout; failures print a JSON error
//! object on stderr and exit nonzero.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::image::{ImageError, RgbImage};
use crate::metrics::{self, ErrorHistogram, FitOptions, FitSet, MetricsError, WaeParams};
use crate::reconstruction::{aggregate_across_sets, QualityScale, ReconstructionError};
use crate::report::{self, ReportError};
use crate::sampling::{build_trials, complete_pairs, sample_pair_graph, SamplingError};
use crate::screening::{self, ScreeningConfig, ScreeningError};
use crate::service::{self, ServiceError, Study, StudySet, VoteService};
use crate::simulate::{self, ObserverModel, PilotConfig, SimWorker, SimulateError, WorkerBehavior};
use crate::stats::{self, CorrelationKind, StatsError};
use crate::stimuli::{self, BoostConfig, RoiBox, StimuliError};
use crate::votes::{self, VoteIoError, VoteRecord};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("reading {path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("{} file(s) failed: {}", .0.len(), .0.join("; "))]
    Files(Vec<String>),
    #[error("no votes in {0}")]
    NoVotes(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Stimuli(#[from] StimuliError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Reconstruction(#[from] ReconstructionError),
    #[error(transparent)]
    Screening(#[from] ScreeningError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Votes(#[from] VoteIoError),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Input { .. } | Self::Files(_) | Self::Io { .. } | Self::Image(_) | Self::Votes(_) => "input",
            Self::NoVotes(_) => "no-votes",
            Self::Stimuli(_) => "stimuli",
            Self::Sampling(_) => "sampling",
            Self::Reconstruction(_) => "reconstruction",
            Self::Screening(_) => "screening",
            Self::Metrics(_) => "metrics",
            Self::Stats(_) => "stats",
            Self::Simulate(_) => "simulate",
            Self::Service(_) => "service",
            Self::Report(_) => "output",
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "boostpc", version, about = "Boosted paired-comparison image quality studies")]
pub struct Cli {
    /// Study configuration or metric manifest (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Amplify artefacts and cut zoomed regions for every set.
    Boost(BoostArgs),
    /// Sample a sparse comparison graph per set and write the trial list.
    SamplePairs(SampleArgs),
    /// Run the vote collection service.
    Serve(ServeArgs),
    /// Remove low-agreement workers.
    Screen(ScreenArgs),
    /// Reconstruct per-set scales and the cross-set ranking.
    Reconstruct(ReconstructArgs),
    /// Compute RMSE, GN-RMSE and WAE for every interpolated image.
    Metrics(MetricsArgs),
    /// Fit WAE parameters with leave-one-set-out validation.
    FitWae(FitWaeArgs),
    /// Synthetic observers.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Screening, reconstruction, ranking and metric correlation in one go.
    #[command(alias = "analyze")]
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct BoostArgs {
    /// Amplification factor [default: 2].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Zoom factor for the region crops [default: 1.5].
    #[arg(long)]
    pub zoom: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Vertex degree of each comparison graph [default: 6].
    #[arg(long)]
    pub degree: Option<usize>,
    /// Votes to collect per pair [default: 20].
    #[arg(long)]
    pub votes_per_pair: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Study file written by sample-pairs [default: OUT/study.json].
    #[arg(long)]
    pub study: Option<PathBuf>,
    /// Vote log [default: OUT/votes.jsonl].
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Stimulus directory written by boost, served under /stimuli.
    #[arg(long)]
    pub stimuli: Option<PathBuf>,
    /// Rater UI bundle served at the root.
    #[arg(long)]
    pub ui: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
    pub host: IpAddr,
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    #[arg(long)]
    pub votes: PathBuf,
    /// Fraction of votes to retain.
    #[arg(long, default_value_t = 0.4)]
    pub retain_fraction: f64,
    #[arg(long, default_value_t = 20)]
    pub max_iterations: usize,
    /// Anchor pseudo-count [default: 20].
    #[arg(long)]
    pub pseudo_count: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub votes: PathBuf,
    /// Study file giving set sizes and method names.
    #[arg(long)]
    pub study: Option<PathBuf>,
    /// Anchor pseudo-count [default: the study's votes per pair, else 20].
    #[arg(long)]
    pub pseudo_count: Option<u32>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Metric manifest [default: --config].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// WAE parameters as written by fit-wae [default: plain mean absolute error].
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitWaeArgs {
    /// Metric manifest [default: --config].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// MOS table with columns set_id, method, mos.
    #[arg(long)]
    pub mos: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 5)]
    pub starts: usize,
}

#[derive(Debug, Subcommand)]
pub enum SimulateCommand {
    /// Plain versus boosted study over the banded pilot design.
    Pilot(PilotArgs),
    /// Votes from Thurstone workers and uniform-random spammers.
    Crowd(CrowdArgs),
}

#[derive(Debug, Args)]
pub struct PilotArgs {
    #[arg(long, default_value_t = 100)]
    pub replications: usize,
    #[arg(long, default_value_t = 13)]
    pub levels: usize,
    #[arg(long, default_value_t = 6)]
    pub max_gap: usize,
    #[arg(long, default_value_t = 50)]
    pub votes_per_pair: usize,
    #[arg(long, default_value_t = 0.1)]
    pub spacing: f64,
    #[arg(long, default_value_t = 1.0)]
    pub plain_sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub boosted_sigma: f64,
}

#[derive(Debug, Args)]
pub struct CrowdArgs {
    #[arg(long, default_value_t = 1)]
    pub sets: usize,
    #[arg(long, default_value_t = 20)]
    pub items: usize,
    /// True quality step between consecutive items.
    #[arg(long, default_value_t = 0.25)]
    pub spacing: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Sparse graph degree; the complete graph when omitted.
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub good: usize,
    #[arg(long, default_value_t = 0)]
    pub spammers: usize,
    /// Votes per worker and set; when omitted, --votes-per-pair votes are
    /// dealt round-robin to the good workers.
    #[arg(long)]
    pub votes_per_worker: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub votes_per_pair: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub votes: PathBuf,
    #[arg(long)]
    pub study: Option<PathBuf>,
    /// Metric table written by the metrics subcommand.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long, default_value_t = 0.4)]
    pub retain_fraction: f64,
    /// Skip worker screening.
    #[arg(long)]
    pub no_screen: bool,
    #[arg(long)]
    pub pseudo_count: Option<u32>,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
}

/// One interpolated image of a set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodImage {
    pub method: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetConfig {
    pub set_id: String,
    pub ground_truth: PathBuf,
    pub interpolated: Vec<MethodImage>,
}

/// Study configuration; also the metric manifest. Relative paths are
/// resolved against the file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub sets: Vec<SetConfig>,
    #[serde(default)]
    pub degree: Option<usize>,
    #[serde(default)]
    pub votes_target: Option<u32>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub zoom: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl StudyConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| CliError::Input {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for set in &mut cfg.sets {
            set.ground_truth = base.join(&set.ground_truth);
            for m in &mut set.interpolated {
                m.path = base.join(&m.path);
            }
        }
        Ok(cfg)
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    report::write_text(path, &(text + "\n"))?;
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_votes(path: &Path) -> Result<Vec<VoteRecord>> {
    let votes = votes::load_jsonl(path).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if votes.is_empty() {
        return Err(CliError::NoVotes(path.to_path_buf()));
    }
    Ok(votes)
}

fn require_config(cli: &Cli, explicit: Option<&PathBuf>) -> Result<StudyConfig> {
    let path = explicit
        .or(cli.config.as_ref())
        .ok_or_else(|| CliError::Usage("a study configuration is required (--config)".into()))?;
    StudyConfig::load(path)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let err = serde_json::json!({ "error": e.to_string().trim(), "kind": "usage" });
            eprintln!("{err}");
            return 2;
        }
    };
    match run(&cli) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("serializable");
            let _ = writeln!(std::io::stdout(), "{text}");
            0
        }
        Err(e) => {
            let err = serde_json::json!({ "error": e.to_string(), "kind": e.kind() });
            eprintln!("{err}");
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<serde_json::Value> {
    match &cli.command {
        Command::Boost(a) => cmd_boost(cli, a),
        Command::SamplePairs(a) => cmd_sample_pairs(cli, a),
        Command::Serve(a) => cmd_serve(cli, a),
        Command::Screen(a) => cmd_screen(cli, a),
        Command::Reconstruct(a) => cmd_reconstruct(cli, a),
        Command::Metrics(a) => cmd_metrics(cli, a),
        Command::FitWae(a) => cmd_fit_wae(cli, a),
        Command::Simulate(SimulateCommand::Pilot(a)) => cmd_pilot(cli, a),
        Command::Simulate(SimulateCommand::Crowd(a)) => cmd_crowd(cli, a),
        Command::Report(a) => cmd_analyze(cli, a),
    }
}

fn seed_of(cli: &Cli, cfg: Option<&StudyConfig>) -> u64 {
    cli.seed.or(cfg.and_then(|c| c.seed)).unwrap_or(0)
}

#[derive(Serialize, Deserialize)]
struct RoiFile {
    /// All regions, heaviest first; the first one is zoomed.
    rois: Vec<RoiBox>,
    zoomed: RoiBox,
    zoom: f64,
    alpha: f64,
}

fn load_set_images(set: &SetConfig) -> std::result::Result<(RgbImage, Vec<RgbImage>), Vec<String>> {
    let mut errors = Vec::new();
    let gt = RgbImage::load_png(&set.ground_truth).map_err(|e| errors.push(e.to_string())).ok();
    let interps: Vec<RgbImage> = set
        .interpolated
        .iter()
        .filter_map(|m| RgbImage::load_png(&m.path).map_err(|e| errors.push(e.to_string())).ok())
        .collect();
    if !errors.is_empty() {
        return Err(errors);
    }
    Ok((gt.expect("loaded"), interps))
}

pub fn cmd_boost(cli: &Cli, a: &BoostArgs) -> Result<serde_json::Value> {
    let cfg = require_config(cli, None)?;
    let boost = BoostConfig::new(
        a.alpha.or(cfg.alpha).unwrap_or(BoostConfig::default().alpha),
        a.zoom.or(cfg.zoom).unwrap_or(BoostConfig::default().zoom),
    )?;
    let loaded: Vec<_> = cfg.sets.par_iter().map(load_set_images).collect();
    let errors: Vec<String> = loaded.iter().filter_map(|r| r.as_ref().err()).flatten().cloned().collect();
    if !errors.is_empty() {
        return Err(CliError::Files(errors));
    }

    let written = cfg
        .sets
        .par_iter()
        .zip(loaded)
        .map(|(set, images)| -> Result<usize> {
            let (gt, interps) = images.expect("checked");
            let dir = cli.out.join(&set.set_id);
            create_dir(&dir)?;
            let smoothed = stimuli::gaussian_smooth(
                &stimuli::average_error_image(&interps, &gt)?,
                stimuli::DEFAULT_SMOOTHING_SIGMA,
            )?;
            let full = RoiBox {
                x: 0,
                y: 0,
                w: gt.width(),
                h: gt.height(),
            };
            let rois = match stimuli::extract_rois(&smoothed) {
                Ok(r) => r,
                Err(StimuliError::ConstantImage) => Vec::new(),
                Err(e) => return Err(e.into()),
            };
            let zoomed = rois.first().copied().unwrap_or(full);
            gt.save_png(dir.join("gt.png"))?;
            stimuli::zoom_crop(&gt, zoomed, boost.zoom)?.save_png(dir.join("gt_zoom.png"))?;
            for (k, interp) in interps.iter().enumerate() {
                let boosted = stimuli::amplify_image(&gt, interp, boost.alpha)?;
                boosted.save_png(dir.join(format!("{k}.png")))?;
                stimuli::zoom_crop(&boosted, zoomed, boost.zoom)?.save_png(dir.join(format!("{k}_zoom.png")))?;
            }
            write_json(
                &dir.join("rois.json"),
                &RoiFile {
                    rois,
                    zoomed,
                    zoom: boost.zoom,
                    alpha: boost.alpha,
                },
            )?;
            Ok(interps.len())
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(serde_json::json!({
        "out": cli.out,
        "sets": cfg.sets.len(),
        "images": written.iter().sum::<usize>(),
        "alpha": boost.alpha,
        "zoom": boost.zoom,
    }))
}

pub fn cmd_sample_pairs(cli: &Cli, a: &SampleArgs) -> Result<serde_json::Value> {
    let cfg = require_config(cli, None)?;
    let degree = a.degree.or(cfg.degree).unwrap_or(6);
    let votes_target = a.votes_per_pair.or(cfg.votes_target).unwrap_or(20);
    let seed = seed_of(cli, Some(&cfg));
    let graphs = cfg
        .sets
        .iter()
        .enumerate()
        .map(|(k, s)| sample_pair_graph(&s.set_id, s.interpolated.len(), degree, seed.wrapping_add(k as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let trials = build_trials(&graphs, votes_target, seed);
    let study = Study {
        votes_target,
        sets: cfg
            .sets
            .iter()
            .map(|s| StudySet {
                set_id: s.set_id.clone(),
                n_items: s.interpolated.len(),
                methods: s.interpolated.iter().map(|m| m.method.clone()).collect(),
            })
            .collect(),
        trials,
    };
    create_dir(&cli.out)?;
    write_json(&cli.out.join("study.json"), &study)?;
    report::write_csv(&cli.out.join("trials.csv"), &study.trials.iter().map(TrialRow::from).collect::<Vec<_>>())?;
    let edges: usize = graphs.iter().map(|g| g.edges.len()).sum();
    Ok(serde_json::json!({
        "study": cli.out.join("study.json"),
        "edges": edges,
        "trials": study.trials.len(),
        "votes_needed": edges as u64 * u64::from(votes_target),
    }))
}

#[derive(Serialize)]
struct TrialRow {
    trial_id: usize,
    set_id: String,
    item_i: usize,
    item_j: usize,
    left_item: usize,
    votes_target: u32,
}

impl From<&crate::sampling::Trial> for TrialRow {
    fn from(t: &crate::sampling::Trial) -> Self {
        Self {
            trial_id: t.trial_id,
            set_id: t.set_id.clone(),
            item_i: t.pair.0,
            item_j: t.pair.1,
            left_item: t.left_item,
            votes_target: t.votes_target,
        }
    }
}

pub fn cmd_serve(cli: &Cli, a: &ServeArgs) -> Result<serde_json::Value> {
    let study_path = a.study.clone().unwrap_or_else(|| cli.out.join("study.json"));
    let study = Study::load(&study_path)?;
    let log_path = a.log.clone().unwrap_or_else(|| cli.out.join("votes.jsonl"));
    if let Some(parent) = log_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let svc = Arc::new(VoteService::open(&study, &log_path)?);
    let app = service::router(svc, a.stimuli.as_deref(), a.ui.as_deref());
    let addr = SocketAddr::new(a.host, a.port);
    let io = |source| CliError::Io {
        path: log_path.clone(),
        source,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(io)?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| CliError::Usage(format!("cannot bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(io)?;
        let mut stdout = std::io::stdout();
        let _ = writeln!(stdout, "{}", serde_json::json!({ "listening": local.to_string() }));
        let _ = stdout.flush();
        service::serve(listener, app).await.map_err(io)
    })?;
    Ok(serde_json::json!({ "stopped": true }))
}

fn screening_outputs(out: &Path, result: &screening::ScreeningResult) -> Result<()> {
    write_json(&out.join("screening.json"), result)?;
    votes::save_jsonl(out.join("retained.jsonl"), &result.retained)?;
    let rows: Vec<Vec<String>> = result
        .worker_tpr
        .iter()
        .map(|(w, t)| vec![w.clone(), format!("{t:.6}"), result.removed_workers.contains(w).to_string()])
        .collect();
    report::write_table(&out.join("worker_tpr.csv"), &["worker_id".into(), "tpr".into(), "removed".into()], &rows)?;
    let mut sorted: Vec<(&String, &f64)> = result.worker_tpr.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(b.0)));
    let labels: Vec<String> = sorted.iter().map(|(w, _)| w.to_string()).collect();
    let values: Vec<f64> = sorted.iter().map(|(_, &t)| t).collect();
    report::write_text(&out.join("worker_tpr.svg"), &report::bar_chart_svg("Worker TPR", &labels, &values, None))?;
    Ok(())
}

pub fn cmd_screen(cli: &Cli, a: &ScreenArgs) -> Result<serde_json::Value> {
    let votes = load_votes(&a.votes)?;
    let config = ScreeningConfig {
        target_fraction: a.retain_fraction,
        max_iterations: a.max_iterations,
        pseudo_count: a.pseudo_count.unwrap_or(20),
    };
    let result = screening::iterative_outlier_removal(&votes, &config)?;
    create_dir(&cli.out)?;
    screening_outputs(&cli.out, &result)?;
    Ok(serde_json::json!({
        "input_votes": result.input_count,
        "retained_votes": result.retained_count,
        "removed_workers": result.removed_workers,
        "tpr_cut": result.tpr_cut,
        "iterations": result.iterations,
        "converged": result.converged,
    }))
}

/// Set sizes and method names from the study file, or inferred from votes.
fn layout(votes: &[VoteRecord], study: Option<&Study>) -> (BTreeMap<String, usize>, BTreeMap<String, Vec<String>>) {
    let mut sizes = screening::infer_set_sizes(votes);
    let mut names = BTreeMap::new();
    if let Some(study) = study {
        for s in &study.sets {
            let n = sizes.get(&s.set_id).copied().unwrap_or(0).max(s.n_items);
            sizes.insert(s.set_id.clone(), n);
            if s.methods.len() == n {
                names.insert(s.set_id.clone(), s.methods.clone());
            }
        }
    }
    for (set, &n) in &sizes {
        names.entry(set.clone()).or_insert_with(|| (0..n).map(|k| format!("item{k}")).collect());
    }
    (sizes, names)
}

#[derive(Serialize)]
struct ScaleRow<'a> {
    set_id: &'a str,
    item: usize,
    method: &'a str,
    mu: f64,
    rescaled: f64,
}

#[derive(Serialize)]
struct RankingRow {
    method: String,
    mean: f64,
    rank: f64,
}

struct Reconstructed {
    scales: BTreeMap<String, QualityScale>,
    names: BTreeMap<String, Vec<String>>,
    ranking: Vec<crate::reconstruction::MethodScore>,
}

fn reconstruct_and_write(
    out: &Path,
    votes: &[VoteRecord],
    sizes: &BTreeMap<String, usize>,
    names: BTreeMap<String, Vec<String>>,
    pseudo: u32,
) -> Result<Reconstructed> {
    let scales = screening::reconstruct_all(votes, sizes, pseudo).map_err(|e| match e {
        ScreeningError::Reconstruction(r) => CliError::Reconstruction(r),
        other => other.into(),
    })?;
    let mut rows = Vec::new();
    for (set, scale) in &scales {
        for k in 0..scale.n_real() {
            rows.push(ScaleRow {
                set_id: set,
                item: k,
                method: &names[set][k],
                mu: scale.mu[k],
                rescaled: scale.rescaled[k],
            });
        }
    }
    report::write_csv(&out.join("scales.csv"), &rows)?;
    write_json(&out.join("scales.json"), &scales)?;

    let ordered_scales: Vec<QualityScale> = scales
        .values()
        .map(|s| {
            let mut s = s.clone();
            let n = s.n_real();
            s.rescaled.truncate(n);
            s.mu.truncate(n);
            s
        })
        .collect();
    let labels: Vec<Vec<String>> = scales.keys().map(|k| names[k].clone()).collect();
    let ranking = aggregate_across_sets(&ordered_scales, &labels)?;
    let mut sorted = ranking.clone();
    sorted.sort_by(|a, b| a.rank.total_cmp(&b.rank).then(a.method_id.cmp(&b.method_id)));
    report::write_csv(
        &out.join("ranking.csv"),
        &sorted
            .iter()
            .map(|m| RankingRow {
                method: m.method_id.clone(),
                mean: m.mean,
                rank: m.rank,
            })
            .collect::<Vec<_>>(),
    )?;
    report::write_text(
        &out.join("ranking.svg"),
        &report::bar_chart_svg(
            "Mean rescaled quality",
            &sorted.iter().map(|m| m.method_id.clone()).collect::<Vec<_>>(),
            &sorted.iter().map(|m| m.mean).collect::<Vec<_>>(),
            None,
        ),
    )?;
    Ok(Reconstructed { scales, names, ranking })
}

pub fn cmd_reconstruct(cli: &Cli, a: &ReconstructArgs) -> Result<serde_json::Value> {
    let votes = load_votes(&a.votes)?;
    let study = a.study.as_deref().map(Study::load).transpose()?;
    let (sizes, names) = layout(&votes, study.as_ref());
    let pseudo = a.pseudo_count.or(study.as_ref().map(|s| s.votes_target)).unwrap_or(20);
    create_dir(&cli.out)?;
    let r = reconstruct_and_write(&cli.out, &votes, &sizes, names, pseudo)?;
    Ok(serde_json::json!({
        "sets": r.scales.len(),
        "methods": r.ranking.len(),
        "scales": cli.out.join("scales.csv"),
        "ranking": cli.out.join("ranking.csv"),
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub set_id: String,
    pub method: String,
    pub rmse: f64,
    pub gn_rmse: f64,
    pub wae: f64,
}

struct SetMetrics {
    rows: Vec<MetricRow>,
    mae: Vec<f64>,
    histograms: Vec<ErrorHistogram>,
}

fn compute_set_metrics(set: &SetConfig, params: &WaeParams) -> std::result::Result<SetMetrics, Vec<String>> {
    let (gt, interps) = load_set_images(set)?;
    let gt = metrics::to_grayscale(&gt);
    let mut out = SetMetrics {
        rows: Vec::new(),
        mae: Vec::new(),
        histograms: Vec::new(),
    };
    for (m, img) in set.interpolated.iter().zip(&interps) {
        let g = metrics::to_grayscale(img);
        let metric = |r: std::result::Result<f64, MetricsError>| r.map_err(|e| vec![format!("{}: {e}", m.path.display())]);
        let hist = ErrorHistogram::from_images(&g, &gt).map_err(|e| vec![format!("{}: {e}", m.path.display())])?;
        out.rows.push(MetricRow {
            set_id: set.set_id.clone(),
            method: m.method.clone(),
            rmse: metric(metrics::rmse(&g, &gt))?,
            gn_rmse: metric(metrics::gn_rmse(&g, &gt))?,
            wae: hist.wae(params),
        });
        out.mae.push(hist.mae());
        out.histograms.push(hist);
    }
    Ok(out)
}

fn all_set_metrics(cfg: &StudyConfig, params: &WaeParams) -> Result<Vec<SetMetrics>> {
    let results: Vec<_> = cfg.sets.par_iter().map(|s| compute_set_metrics(s, params)).collect();
    let errors: Vec<String> = results.iter().filter_map(|r| r.as_ref().err()).flatten().cloned().collect();
    if !errors.is_empty() {
        return Err(CliError::Files(errors));
    }
    Ok(results.into_iter().map(|r| r.expect("checked")).collect())
}

pub fn cmd_metrics(cli: &Cli, a: &MetricsArgs) -> Result<serde_json::Value> {
    let cfg = require_config(cli, a.manifest.as_ref())?;
    let params = match &a.params {
        Some(p) => {
            let params: WaeParams = read_json(p)?;
            params.validate()?;
            params
        }
        None => WaeParams::MAE,
    };
    let sets = all_set_metrics(&cfg, &params)?;
    let rows: Vec<MetricRow> = sets.into_iter().flat_map(|s| s.rows).collect();
    create_dir(&cli.out)?;
    report::write_csv(&cli.out.join("metrics.csv"), &rows)?;
    Ok(serde_json::json!({ "rows": rows.len(), "metrics": cli.out.join("metrics.csv"), "wae_params": params }))
}

#[derive(Deserialize)]
struct MosRow {
    set_id: String,
    method: String,
    mos: f64,
}

fn load_mos(path: &Path) -> Result<BTreeMap<(String, String), f64>> {
    let err = |message: String| CliError::Input {
        path: path.to_path_buf(),
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let mut out = BTreeMap::new();
    for row in r.deserialize::<MosRow>() {
        let row = row.map_err(|e| err(e.to_string()))?;
        if out.insert((row.set_id.clone(), row.method.clone()), row.mos).is_some() {
            return Err(err(format!("duplicate MOS for {} / {}", row.set_id, row.method)));
        }
    }
    Ok(out)
}

pub fn cmd_fit_wae(cli: &Cli, a: &FitWaeArgs) -> Result<serde_json::Value> {
    let cfg = require_config(cli, a.manifest.as_ref())?;
    let mos = load_mos(&a.mos)?;
    let sets = all_set_metrics(&cfg, &WaeParams::MAE)?;
    let mut fit_sets = Vec::new();
    for (set, m) in cfg.sets.iter().zip(&sets) {
        let values = set
            .interpolated
            .iter()
            .map(|im| {
                mos.get(&(set.set_id.clone(), im.method.clone())).copied().ok_or_else(|| CliError::Input {
                    path: a.mos.clone(),
                    message: format!("no MOS for set {} method {}", set.set_id, im.method),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        fit_sets.push(FitSet {
            set_id: set.set_id.clone(),
            histograms: m.histograms.clone(),
            mos: values,
        });
    }
    let used: usize = fit_sets.iter().map(|s| s.mos.len()).sum();
    if used != mos.len() {
        return Err(CliError::Input {
            path: a.mos.clone(),
            message: format!("{} MOS rows but the manifest lists {used} images", mos.len()),
        });
    }

    let opts = FitOptions {
        random_samples: a.samples,
        refine_starts: a.starts,
        seed: seed_of(cli, Some(&cfg)),
        ..Default::default()
    };
    let full = metrics::fit_wae(&fit_sets, &opts)?;
    let loo = metrics::loo_cross_validation(&fit_sets, &opts)?;

    // Rows: metrics; columns: average then one per held-out set.
    let score = |q: Vec<f64>, s: &FitSet| metrics::ranking_srocc(&q, &s.mos);
    let mut table: Vec<(String, Vec<Option<f64>>)> = vec![
        ("RMSE".into(), Vec::new()),
        ("GN-RMSE".into(), Vec::new()),
        ("MAE".into(), Vec::new()),
        ("WAE".into(), Vec::new()),
    ];
    for ((fs, m), fold) in fit_sets.iter().zip(&sets).zip(&loo.folds) {
        table[0].1.push(score(m.rows.iter().map(|r| -r.rmse).collect(), fs));
        table[1].1.push(score(m.rows.iter().map(|r| -r.gn_rmse).collect(), fs));
        table[2].1.push(score(m.mae.iter().map(|v| -v).collect(), fs));
        table[3].1.push(fold.test_srocc);
    }
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
    let mut header = vec!["metric".to_string(), "Average".to_string()];
    header.extend(fit_sets.iter().map(|s| s.set_id.clone()));
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|(name, vals)| {
            let present: Vec<f64> = vals.iter().flatten().copied().collect();
            let avg = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
            let mut row = vec![name.clone(), fmt(avg)];
            row.extend(vals.iter().map(|v| fmt(*v)));
            row
        })
        .collect();

    create_dir(&cli.out)?;
    write_json(&cli.out.join("wae_params.json"), &full.params)?;
    write_json(&cli.out.join("wae_fit.json"), &full)?;
    write_json(&cli.out.join("loo.json"), &loo)?;
    report::write_table(&cli.out.join("loo_srocc.csv"), &header, &rows)?;
    if !full.saturated.is_empty() {
        log::warn!("fitted parameters sit on a search bound: {:?}", full.saturated);
    }
    Ok(serde_json::json!({
        "params": full.params,
        "train_objective": full.objective,
        "saturated": full.saturated,
        "folds": loo.folds.len(),
        "mean_test_srocc": loo.mean_test_srocc,
        "mean_mae_srocc": loo.mean_mae_srocc,
        "table": cli.out.join("loo_srocc.csv"),
    }))
}

pub fn cmd_pilot(cli: &Cli, a: &PilotArgs) -> Result<serde_json::Value> {
    if !(a.boosted_sigma < a.plain_sigma) {
        log::warn!("boosted sigma {} is not below plain sigma {}", a.boosted_sigma, a.plain_sigma);
    }
    let cfg = PilotConfig {
        n_levels: a.levels,
        max_gap: a.max_gap,
        votes_per_pair: a.votes_per_pair,
        level_spacing: a.spacing,
        plain_sigma: a.plain_sigma,
        boosted_sigma: a.boosted_sigma,
        seed: seed_of(cli, None),
    };
    let summary = simulate::run_pilot_replications(&cfg, a.replications)?;

    // Rater TPR against the true order, first replication.
    let tpr = |sigma: f64, stream: u64| -> Result<(f64, (f64, f64))> {
        let votes = simulate::pilot_votes(&cfg, sigma, stream)?;
        let outcomes: Vec<bool> = votes.iter().map(|v| v.choice == v.pair.0.min(v.pair.1)).collect();
        Ok(stats::tpr_with_ci(&outcomes, 100, cfg.seed)?)
    };
    let (tpr_plain, ci_plain) = tpr(cfg.plain_sigma, 0)?;
    let (tpr_boosted, ci_boosted) = tpr(cfg.boosted_sigma, 1)?;

    create_dir(&cli.out)?;
    report::write_csv(&cli.out.join("pilot.csv"), &summary.outcomes)?;
    let result = serde_json::json!({
        "config": cfg,
        "replications": a.replications,
        "mean_srocc_plain": summary.mean_plain,
        "mean_srocc_boosted": summary.mean_boosted,
        "mean_difference": summary.mean_difference,
        "difference_ci95": summary.difference_ci,
        "tpr_plain": { "tpr": tpr_plain, "ci95": ci_plain },
        "tpr_boosted": { "tpr": tpr_boosted, "ci95": ci_boosted },
    });
    write_json(&cli.out.join("pilot.json"), &result)?;
    report::write_text(
        &cli.out.join("pilot_tpr.svg"),
        &report::bar_chart_svg(
            "Rater TPR",
            &["plain".into(), "boosted".into()],
            &[tpr_plain, tpr_boosted],
            Some(&[ci_plain, ci_boosted]),
        ),
    )?;
    Ok(result)
}

pub fn cmd_crowd(cli: &Cli, a: &CrowdArgs) -> Result<serde_json::Value> {
    let seed = seed_of(cli, None);
    let truth: Vec<f64> = (0..a.items).map(|k| a.spacing * (a.items - 1 - k) as f64).collect();
    let model = ObserverModel::new(truth.clone(), a.sigma, 1.0)?;
    let mut workers: Vec<SimWorker> = (0..a.good)
        .map(|k| SimWorker {
            id: format!("good{k}"),
            behavior: WorkerBehavior::Thurstone,
        })
        .collect();
    workers.extend((0..a.spammers).map(|k| SimWorker {
        id: format!("spam{k}"),
        behavior: WorkerBehavior::UniformRandom,
    }));

    let mut all = Vec::new();
    let mut sets = Vec::new();
    for s in 0..a.sets {
        let set_id = format!("set{s}");
        let set_seed = seed.wrapping_add(s as u64);
        let pairs = match a.degree {
            Some(d) => sample_pair_graph(&set_id, a.items, d, set_seed)?.edges,
            None => complete_pairs(a.items),
        };
        let mut votes = match a.votes_per_worker {
            Some(n) => simulate::simulate_crowd(&set_id, &pairs, &workers, n, &model, set_seed)?,
            None => simulate::simulate_votes(&set_id, &pairs, a.votes_per_pair, a.good.max(1), &model, set_seed)?,
        };
        for v in &mut votes {
            v.vote_id = all.len() as u64;
            all.push(v.clone());
        }
        sets.push(StudySet {
            set_id,
            n_items: a.items,
            methods: (0..a.items).map(|k| format!("item{k}")).collect(),
        });
    }
    let study = Study {
        votes_target: u32::try_from(a.votes_per_pair).unwrap_or(u32::MAX),
        sets,
        trials: Vec::new(),
    };
    create_dir(&cli.out)?;
    votes::save_jsonl(cli.out.join("votes.jsonl"), &all)?;
    write_json(&cli.out.join("study.json"), &study)?;
    write_json(&cli.out.join("truth.json"), &serde_json::json!({ "mu": truth, "workers": workers }))?;
    Ok(serde_json::json!({
        "votes": all.len(),
        "sets": a.sets,
        "path": cli.out.join("votes.jsonl"),
    }))
}

fn load_metric_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let err = |message: String| CliError::Input {
        path: path.to_path_buf(),
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    r.deserialize().collect::<Result<Vec<MetricRow>, _>>().map_err(|e| err(e.to_string()))
}

#[derive(Serialize)]
struct CorrelationRow {
    set_id: String,
    metric: String,
    kind: &'static str,
    estimate: f64,
    fisher_low: f64,
    fisher_high: f64,
    bootstrap_low: f64,
    bootstrap_high: f64,
    n: usize,
}

#[derive(Serialize)]
struct RankDifferenceRow {
    method: String,
    subjective_rank: f64,
    metric_rank: f64,
    difference: f64,
}

pub fn cmd_analyze(cli: &Cli, a: &ReportArgs) -> Result<serde_json::Value> {
    let votes = load_votes(&a.votes)?;
    let study = a.study.as_deref().map(Study::load).transpose()?;
    let pseudo = a.pseudo_count.or(study.as_ref().map(|s| s.votes_target)).unwrap_or(20);
    create_dir(&cli.out)?;

    let (retained, screening_summary) = if a.no_screen {
        (votes.clone(), serde_json::Value::Null)
    } else {
        let result = screening::iterative_outlier_removal(
            &votes,
            &ScreeningConfig {
                target_fraction: a.retain_fraction,
                max_iterations: 20,
                pseudo_count: pseudo,
            },
        )?;
        screening_outputs(&cli.out, &result)?;
        let summary = serde_json::json!({
            "removed_workers": result.removed_workers.len(),
            "retained_votes": result.retained_count,
            "tpr_cut": result.tpr_cut,
            "iterations": result.iterations,
        });
        (result.retained, summary)
    };
    let (sizes, names) = layout(&votes, study.as_ref());
    let rec = reconstruct_and_write(&cli.out, &retained, &sizes, names, pseudo)?;

    let mut metric_summary = serde_json::Map::new();
    if let Some(path) = &a.metrics {
        let rows = load_metric_rows(path)?;
        let mut corr_rows = Vec::new();
        for (metric, pick) in [
            ("rmse", (|r: &MetricRow| r.rmse) as fn(&MetricRow) -> f64),
            ("gn_rmse", |r: &MetricRow| r.gn_rmse),
            ("wae", |r: &MetricRow| r.wae),
        ] {
            let mut per_method: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for (set, scale) in &rec.scales {
                let labels = &rec.names[set];
                let mut quality = Vec::new();
                let mut subjective = Vec::new();
                for (k, label) in labels.iter().enumerate() {
                    let row = rows.iter().find(|r| &r.set_id == set && &r.method == label).ok_or_else(|| CliError::Input {
                        path: path.clone(),
                        message: format!("no metric row for set {set} method {label}"),
                    })?;
                    quality.push(-pick(row));
                    subjective.push(scale.rescaled[k]);
                    per_method.entry(label.as_str()).or_default().push(pick(row));
                }
                for kind in [CorrelationKind::Srocc, CorrelationKind::Krocc, CorrelationKind::Plcc] {
                    let Ok(fisher) = stats::fisher_report(&quality, &subjective, kind, 0.95) else {
                        continue;
                    };
                    let boot = stats::bootstrap_corr(&quality, &subjective, kind, a.bootstrap.max(1), seed_of(cli, None)).ok();
                    corr_rows.push(CorrelationRow {
                        set_id: set.clone(),
                        metric: metric.into(),
                        kind: kind.label(),
                        estimate: fisher.estimate,
                        fisher_low: fisher.ci_low,
                        fisher_high: fisher.ci_high,
                        bootstrap_low: boot.as_ref().map_or(f64::NAN, |b| b.ci_low),
                        bootstrap_high: boot.as_ref().map_or(f64::NAN, |b| b.ci_high),
                        n: fisher.n,
                    });
                }
            }

            // Rank methods by mean metric (lower is better) against the
            // subjective ranking.
            let methods: Vec<&crate::reconstruction::MethodScore> = rec.ranking.iter().collect();
            let means: Vec<f64> = methods
                .iter()
                .map(|m| {
                    let v = &per_method[m.method_id.as_str()];
                    v.iter().sum::<f64>() / v.len() as f64
                })
                .collect();
            let metric_rank = stats::average_ranks(&means);
            let diffs: Vec<RankDifferenceRow> = methods
                .iter()
                .zip(&metric_rank)
                .map(|(m, &r)| RankDifferenceRow {
                    method: m.method_id.clone(),
                    subjective_rank: m.rank,
                    metric_rank: r,
                    difference: r - m.rank,
                })
                .collect();
            report::write_csv(&cli.out.join(format!("rank_differences_{metric}.csv")), &diffs)?;
            report::write_text(
                &cli.out.join(format!("rank_differences_{metric}.svg")),
                &report::rank_scatter_svg(
                    &format!("{metric} vs subjective ranking"),
                    &diffs.iter().map(|d| d.method.clone()).collect::<Vec<_>>(),
                    &diffs.iter().map(|d| d.metric_rank).collect::<Vec<_>>(),
                    &diffs.iter().map(|d| d.subjective_rank).collect::<Vec<_>>(),
                    &format!("{metric} rank"),
                    "subjective rank",
                ),
            )?;
            let subjective: Vec<f64> = methods.iter().map(|m| m.rank).collect();
            let agreement = if methods.len() >= 3 {
                stats::srocc(&metric_rank, &subjective).ok()
            } else {
                None
            };
            metric_summary.insert(metric.into(), serde_json::json!({ "ranking_srocc": agreement }));
        }
        report::write_csv(&cli.out.join("correlations.csv"), &corr_rows)?;
    }

    let summary = serde_json::json!({
        "input_votes": votes.len(),
        "screening": screening_summary,
        "sets": rec.scales.len(),
        "methods": rec.ranking.len(),
        "metrics": metric_summary,
    });
    write_json(&cli.out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documentation() {
        let cli = Cli::try_parse_from(["boostpc", "screen", "--votes", "v.jsonl"]).unwrap();
        let Command::Screen(a) = cli.command else { panic!() };
        assert_eq!(a.retain_fraction, 0.4);
        assert_eq!(a.max_iterations, 20);
        let cli = Cli::try_parse_from(["boostpc", "serve"]).unwrap();
        let Command::Serve(a) = cli.command else { panic!() };
        assert_eq!(a.port, 8080);
    }

    #[test]
    fn analyze_is_an_alias_of_report() {
        let cli = Cli::try_parse_from(["boostpc", "analyze", "--votes", "v.jsonl"]).unwrap();
        assert!(matches!(cli.command, Command::Report(_)));
    }

    #[test]
    fn missing_config_is_a_usage_error() {
        let cli = Cli::try_parse_from(["boostpc", "boost"]).unwrap();
        assert_eq!(run(&cli).unwrap_err().kind(), "usage");
    }
}
