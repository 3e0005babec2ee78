//! The `gridtab` command line: JSON-lines pipelines over documents.
//!
//! Settings resolve as command-line flags, then the config file (`--config`
//! or `GRIDTAB_CONFIG`), then built-in defaults.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::annotation_ingest::{ingest, RawAnnotation};
use crate::grid_model::{GridDims, GridLabel, GridPrediction, LogicalTable};
use crate::io::{self, Entry, IoError};
use crate::label_gen::build_grid_label;
use crate::match_loss::{compute_losses, FocalParams, LossConfig, LossWeights, MatchWeights};
use crate::metrics::{adjacency_f1, cell_detection_fscore, teds_tables, CellMatch, Prf, DEFAULT_IOU_THRESH};
use crate::reconstruct::{reconstruct_with_subgrid, to_html, ReconstructionConfig};
use crate::synth::{doc_seed, generate_table, perturb, NoiseParams, SynthParams};

pub const ENV_CONFIG: &str = "GRIDTAB_CONFIG";

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOC_FAILURES: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    #[default]
    Iou,
    Logical,
}

/// Effective settings of a run. The config file uses this layout; missing
/// fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: Option<String>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub m: usize,
    pub n: usize,
    pub tau1: f64,
    pub tau2: f64,
    pub loss: LossWeights,
    pub focal: FocalParams,
    pub matching: MatchWeights,
    pub iou_thresh: f64,
    pub cell_match: MatchKind,
    pub skip_empty: bool,
    /// Add an `html` token string to reconstructed tables.
    pub html: bool,
    /// 0 uses one worker per core.
    pub workers: usize,
    pub seed: u64,
    pub synth: SynthParams,
    pub noise: NoiseParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        let dims = GridDims::default();
        let rc = ReconstructionConfig::default();
        RunConfig {
            command: None,
            input: None,
            output: None,
            m: dims.m,
            n: dims.n,
            tau1: rc.tau1,
            tau2: rc.tau2,
            loss: LossWeights::default(),
            focal: FocalParams::default(),
            matching: MatchWeights::default(),
            iou_thresh: DEFAULT_IOU_THRESH,
            cell_match: MatchKind::Iou,
            skip_empty: false,
            html: false,
            workers: 0,
            seed: 0,
            synth: SynthParams::default(),
            noise: NoiseParams::default(),
        }
    }
}

impl RunConfig {
    pub fn dims(&self) -> Result<GridDims, CliError> {
        GridDims::new(self.m, self.n).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn reconstruction(&self) -> Result<ReconstructionConfig, CliError> {
        ReconstructionConfig::new(self.tau1, self.tau2).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn cell_matching(&self) -> CellMatch {
        match self.cell_match {
            MatchKind::Iou => CellMatch::Iou { thresh: self.iou_thresh },
            MatchKind::Logical => CellMatch::Logical,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { weights: self.loss, focal: self.focal, matching: self.matching }
    }

    /// Loads a config file.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = io::read_input(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug)]
pub enum CliError {
    Io(IoError),
    Config(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(e) => write!(f, "{e}"),
            CliError::Config(m) => write!(f, "config: {m}"),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e)
    }
}

#[derive(Parser, Debug)]
#[command(name = "gridtab", version, about = "Grid-based table structure toolkit")]
struct Cli {
    /// JSON config file (defaults to $GRIDTAB_CONFIG)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = one per core)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Exit with status 1 when any document fails
    #[arg(long, global = true)]
    strict: bool,
    /// Leave timestamps out of the manifest
    #[arg(long, global = true)]
    deterministic: bool,
    /// Manifest path (defaults to <output>.manifest.json when writing a file)
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Output file (stdout when absent or `-`)
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Raw annotations -> logical tables
    Ingest(InputArgs),
    /// Logical tables -> grid labels
    Labelgen {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        dims: DimsArgs,
    },
    /// Grid predictions -> logical tables
    Reconstruct {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        /// Also emit each table as an HTML token string
        #[arg(long)]
        html: bool,
    },
    /// Score predictions against ground truth, paired by document id
    Eval(EvalArgs),
    /// Generate synthetic tables, labels and predictions
    Synth(SynthArgs),
    /// synth -> labelgen -> perturb -> reconstruct -> eval
    Roundtrip(RoundtripArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Input JSON-lines file (`-` for stdin)
    #[arg(short, long)]
    input: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DimsArgs {
    /// Row lines of the lattice
    #[arg(long)]
    m: Option<usize>,
    /// Column lines of the lattice
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    /// Row/column score threshold
    #[arg(long)]
    tau1: Option<f64>,
    /// Edge score threshold
    #[arg(long)]
    tau2: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum EvalMode {
    Teds,
    TedsStruct,
    Adjacency,
    Fscore,
    Loss,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(value_enum)]
    mode: EvalMode,
    /// Predictions (logical tables; grid predictions for `loss`)
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth (logical tables; grid labels for `loss`)
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    iou_thresh: Option<f64>,
    /// How cells are paired for adjacency scoring
    #[arg(long = "match", value_enum)]
    cell_match: Option<MatchKind>,
    /// Treat cells without text as transparent in adjacency scoring
    #[arg(long)]
    skip_empty: bool,
    /// Also write an `id,score` CSV summary
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthFlags {
    /// Base seed; each document derives its own
    #[arg(long)]
    seed: Option<u64>,
    /// Cell-row count or range, e.g. `5` or `1-20`
    #[arg(long, value_parser = parse_range)]
    rows: Option<(usize, usize)>,
    #[arg(long, value_parser = parse_range)]
    cols: Option<(usize, usize)>,
    #[arg(long)]
    merge_prob: Option<f64>,
    /// Rotation drawn from [-d, d] degrees
    #[arg(long)]
    max_rotation: Option<f64>,
    #[arg(long)]
    curve_amp: Option<f64>,
    #[arg(long)]
    jitter_px: Option<f64>,
    #[arg(long)]
    empty_prob: Option<f64>,
}

#[derive(Args, Debug)]
struct NoiseFlags {
    #[arg(long)]
    coord_sigma: Option<f64>,
    #[arg(long)]
    edge_flip_prob: Option<f64>,
    #[arg(long)]
    line_prob_noise: Option<f64>,
    #[arg(long)]
    confidence_floor: Option<f64>,
    #[arg(long)]
    confidence_ceiling: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Emit {
    Table,
    Label,
    Prediction,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Record kinds to write per document
    #[arg(long, value_enum, value_delimiter = ',', default_value = "table")]
    emit: Vec<Emit>,
    #[command(flatten)]
    synth: SynthFlags,
    #[command(flatten)]
    noise: NoiseFlags,
    #[command(flatten)]
    dims: DimsArgs,
}

#[derive(Args, Debug)]
struct RoundtripArgs {
    #[arg(long, default_value_t = 100)]
    seeds: usize,
    /// Also write one record per document before the summary
    #[arg(long)]
    per_doc: bool,
    #[command(flatten)]
    synth: SynthFlags,
    #[command(flatten)]
    noise: NoiseFlags,
    #[command(flatten)]
    dims: DimsArgs,
    #[command(flatten)]
    thresholds: ThresholdArgs,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    match s.split_once('-') {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => parse(s).map(|v| (v, v)),
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn apply_dims(cfg: &mut RunConfig, d: &DimsArgs) {
    set(&mut cfg.m, d.m);
    set(&mut cfg.n, d.n);
}

fn apply_thresholds(cfg: &mut RunConfig, t: &ThresholdArgs) {
    set(&mut cfg.tau1, t.tau1);
    set(&mut cfg.tau2, t.tau2);
}

fn apply_synth(cfg: &mut RunConfig, s: &SynthFlags) {
    set(&mut cfg.seed, s.seed);
    let p = &mut cfg.synth;
    set(&mut p.rows, s.rows);
    set(&mut p.cols, s.cols);
    set(&mut p.merge_prob, s.merge_prob);
    set(&mut p.rotation_deg, s.max_rotation.map(|d| (-d.abs(), d.abs())));
    set(&mut p.curve_amp, s.curve_amp);
    set(&mut p.jitter_px, s.jitter_px);
    set(&mut p.empty_prob, s.empty_prob);
}

fn apply_noise(cfg: &mut RunConfig, n: &NoiseFlags) {
    let p = &mut cfg.noise;
    set(&mut p.coord_sigma, n.coord_sigma);
    set(&mut p.edge_flip_prob, n.edge_flip_prob);
    set(&mut p.line_prob_noise, n.line_prob_noise);
    set(&mut p.confidence_floor, n.confidence_floor);
    set(&mut p.confidence_ceiling, n.confidence_ceiling);
}

/// Output of one document: its lines and whether it failed.
struct DocOutput {
    lines: Vec<String>,
    failed: bool,
}

impl DocOutput {
    fn ok(line: String) -> Self {
        DocOutput { lines: vec![line], failed: false }
    }

    fn failed(id: &str, stage: &str, message: impl fmt::Display) -> Self {
        DocOutput { lines: vec![io::error_line(id, stage, &message.to_string())], failed: true }
    }
}

struct Outcome {
    lines: Vec<String>,
    documents: usize,
    failed: usize,
    extra: Value,
}

impl Outcome {
    fn from_docs(docs: Vec<DocOutput>) -> Self {
        let documents = docs.len();
        let failed = docs.iter().filter(|d| d.failed).count();
        let lines = docs.into_iter().flat_map(|d| d.lines).collect();
        Outcome { lines, documents, failed, extra: Value::Null }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| CliError::Config(e.to_string()))
}

/// Maps `f` over `items` on the pool, keeping input order.
fn par_map<T: Sync, R: Send>(pool: &rayon::ThreadPool, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    pool.install(|| items.par_iter().map(f).collect())
}

fn read_entries<T: serde::de::DeserializeOwned>(path: Option<&Path>, schema: &str) -> Result<Vec<Entry<T>>, CliError> {
    let path = path.unwrap_or(Path::new("-"));
    Ok(io::decode_all(&io::read_input(path)?, schema)?)
}

fn transform<T, F>(pool: &rayon::ThreadPool, entries: Vec<Entry<T>>, stage: &str, f: F) -> Outcome
where
    T: Sync,
    F: Fn(&str, &T) -> DocOutput + Sync + Send,
{
    Outcome::from_docs(par_map(pool, &entries, |e| match e {
        Entry::Doc(r) => f(&r.id, &r.body),
        Entry::Failed { id, message } => DocOutput::failed(id, stage, format!("upstream: {message}")),
    }))
}

fn cmd_ingest(cfg: &RunConfig, pool: &rayon::ThreadPool) -> Result<Outcome, CliError> {
    let entries = read_entries::<RawAnnotation>(cfg.input.as_deref(), io::RAW_ANNOTATION)?;
    Ok(transform(pool, entries, "ingest", |id, a| match ingest(a) {
        Ok(t) => DocOutput::ok(io::encode(io::LOGICAL_TABLE, id, &t)),
        Err(e) => DocOutput::failed(id, "ingest", e),
    }))
}

fn cmd_labelgen(cfg: &RunConfig, pool: &rayon::ThreadPool) -> Result<Outcome, CliError> {
    let dims = cfg.dims()?;
    let entries = read_entries::<LogicalTable>(cfg.input.as_deref(), io::LOGICAL_TABLE)?;
    Ok(transform(pool, entries, "labelgen", |id, t| match build_grid_label(t, dims) {
        Ok(l) => DocOutput::ok(io::encode(io::GRID_LABEL, id, &l)),
        Err(e) => DocOutput::failed(id, "labelgen", e),
    }))
}

fn cmd_reconstruct(cfg: &RunConfig, pool: &rayon::ThreadPool) -> Result<Outcome, CliError> {
    let rc = cfg.reconstruction()?;
    let entries = read_entries::<GridPrediction>(cfg.input.as_deref(), io::GRID_PREDICTION)?;
    Ok(transform(pool, entries, "reconstruct", |id, p| match reconstruct_with_subgrid(p, &rc) {
        Ok((t, sub)) => {
            let mut v = serde_json::to_value(&t).expect("table serializes");
            if !sub.warnings.is_empty() {
                v["warnings"] = json!(sub.warnings);
            }
            if cfg.html {
                match to_html(&t, true) {
                    Ok(h) => v["html"] = json!(h.to_string()),
                    Err(e) => return DocOutput::failed(id, "reconstruct", e),
                }
            }
            DocOutput::ok(io::encode(io::LOGICAL_TABLE, id, &v))
        }
        Err(e) => DocOutput::failed(id, "reconstruct", e),
    }))
}

/// Pairs ground-truth documents with predictions of the same id.
fn pair<'a, P, G>(preds: &'a [Entry<P>], gts: &'a [Entry<G>]) -> Vec<(&'a str, Option<&'a P>, Option<&'a G>)> {
    let by_id: HashMap<&str, &Entry<P>> = preds.iter().map(|e| (e.id(), e)).collect();
    gts.iter()
        .map(|g| {
            let p = match by_id.get(g.id()) {
                Some(Entry::Doc(r)) => Some(&r.body),
                _ => None,
            };
            let g_body = match g {
                Entry::Doc(r) => Some(&r.body),
                Entry::Failed { .. } => None,
            };
            (g.id(), p, g_body)
        })
        .collect()
}

enum Scored {
    Score(f64),
    Prf(Prf),
    Loss(Box<crate::match_loss::LossReport>),
}

impl Scored {
    fn headline(&self) -> f64 {
        match self {
            Scored::Score(s) => *s,
            Scored::Prf(p) => p.f1,
            Scored::Loss(l) => l.total,
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_eval(cfg: &RunConfig, args: &EvalArgs, pool: &rayon::ThreadPool) -> Result<Outcome, CliError> {
    let mode = args.mode;
    let mode_name = mode.to_possible_value().expect("no skipped variants").get_name().to_string();
    let results: Vec<(String, Result<Scored, String>)> = if mode == EvalMode::Loss {
        let preds = read_entries::<GridPrediction>(Some(&args.pred), io::GRID_PREDICTION)?;
        let gts = read_entries::<GridLabel>(Some(&args.gt), io::GRID_LABEL)?;
        let lc = cfg.loss_config();
        par_map(pool, &pair(&preds, &gts), |&(id, p, g)| {
            let r = match (p, g) {
                (Some(p), Some(g)) => compute_losses(p, g, &lc).map(|r| Scored::Loss(Box::new(r))).map_err(|e| e.to_string()),
                (None, _) => Err("no prediction for this id".to_string()),
                (_, None) => Err("ground truth failed upstream".to_string()),
            };
            (id.to_string(), r)
        })
    } else {
        let preds = read_entries::<LogicalTable>(Some(&args.pred), io::LOGICAL_TABLE)?;
        let gts = read_entries::<LogicalTable>(Some(&args.gt), io::LOGICAL_TABLE)?;
        let matching = cfg.cell_matching();
        par_map(pool, &pair(&preds, &gts), |&(id, p, g)| {
            let r = match (p, g) {
                (Some(p), Some(g)) => match mode {
                    EvalMode::Teds => Ok(Scored::Score(teds_tables(p, g, false))),
                    EvalMode::TedsStruct => Ok(Scored::Score(teds_tables(p, g, true))),
                    EvalMode::Adjacency => {
                        adjacency_f1(p, g, matching, cfg.skip_empty).map(Scored::Prf).map_err(|e| e.to_string())
                    }
                    EvalMode::Fscore => Ok(Scored::Prf(cell_detection_fscore(&p.cells, &g.cells, cfg.iou_thresh))),
                    EvalMode::Loss => unreachable!(),
                },
                (None, _) => Err("no prediction for this id".to_string()),
                (_, None) => Err("ground truth failed upstream".to_string()),
            };
            (id.to_string(), r)
        })
    };

    let mut lines = Vec::with_capacity(results.len() + 1);
    let mut csv = String::from("id,score\n");
    let (mut sum, mut failed) = (0.0, 0usize);
    let (mut tp, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (id, r) in &results {
        match r {
            Ok(s) => {
                let score = s.headline();
                sum += score;
                let body = match s {
                    Scored::Score(v) => json!({ "mode": mode_name, "score": v }),
                    Scored::Prf(p) => {
                        tp += p.true_positives;
                        np += p.predicted;
                        ng += p.ground_truth;
                        json!({ "mode": mode_name, "score": p.f1, "prf": p })
                    }
                    Scored::Loss(l) => json!({ "mode": mode_name, "score": l.total, "loss": l }),
                };
                lines.push(io::encode(io::EVAL_RECORD, id, &body));
                csv.push_str(&format!("{},{score}\n", csv_field(id)));
            }
            Err(msg) => {
                failed += 1;
                lines.push(io::error_line(id, "eval", msg));
                csv.push_str(&format!("{},\n", csv_field(id)));
            }
        }
    }
    // failed documents score 0 (a loss has no such floor, so they are left out)
    let denom = if mode == EvalMode::Loss { results.len() - failed } else { results.len() };
    let mean = if denom == 0 { 0.0 } else { sum / denom as f64 };
    let mut summary = json!({
        "mode": mode_name,
        "documents": results.len(),
        "failed": failed,
        "mean": mean,
    });
    if matches!(mode, EvalMode::Adjacency | EvalMode::Fscore) {
        summary["micro"] = json!(Prf::from_counts(tp, np, ng));
    }
    lines.push(io::encode(io::EVAL_SUMMARY, "corpus", &summary));
    if let Some(path) = &args.csv {
        csv.push_str(&format!("mean,{mean}\n"));
        std::fs::write(path, csv).map_err(|source| IoError::File { path: path.display().to_string(), source })?;
    }
    Ok(Outcome { lines, documents: results.len(), failed, extra: summary })
}

fn synth_params(cfg: &RunConfig, k: usize) -> SynthParams {
    SynthParams { seed: doc_seed(cfg.seed, k as u64), ..cfg.synth.clone() }
}

fn noise_params(cfg: &RunConfig, table_seed: u64) -> NoiseParams {
    NoiseParams { seed: doc_seed(table_seed, 1), ..cfg.noise.clone() }
}

fn doc_id(k: usize) -> String {
    format!("synth-{k:06}")
}

fn cmd_synth(cfg: &RunConfig, count: usize, emit: &[Emit], pool: &rayon::ThreadPool) -> Result<Outcome, CliError> {
    cfg.synth.check().map_err(|e| CliError::Config(e.to_string()))?;
    cfg.noise.check().map_err(|e| CliError::Config(e.to_string()))?;
    let dims = cfg.dims()?;
    let ks: Vec<usize> = (0..count).collect();
    let docs = par_map(pool, &ks, |&k| {
        let id = doc_id(k);
        let p = synth_params(cfg, k);
        let run = || -> crate::error::Result<Vec<String>> {
            let t = generate_table(&p)?;
            let mut lines = Vec::new();
            if emit.contains(&Emit::Table) {
                lines.push(io::encode(io::LOGICAL_TABLE, &id, &t));
            }
            if emit.contains(&Emit::Label) || emit.contains(&Emit::Prediction) {
                let label = build_grid_label(&t, dims)?;
                if emit.contains(&Emit::Label) {
                    lines.push(io::encode(io::GRID_LABEL, &id, &label));
                }
                if emit.contains(&Emit::Prediction) {
                    let pred = perturb(&label, &noise_params(cfg, p.seed))?;
                    lines.push(io::encode(io::GRID_PREDICTION, &id, &pred));
                }
            }
            Ok(lines)
        };
        match run() {
            Ok(lines) => DocOutput { lines, failed: false },
            Err(e) => DocOutput::failed(&id, "synth", e),
        }
    });
    Ok(Outcome::from_docs(docs))
}

/// Result of pushing one synthetic table through the whole pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripRecord {
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub cells: usize,
    pub structure_exact: bool,
    pub teds_struct: f64,
    /// Largest corner displacement in pixels; present when the structure matched.
    pub max_corner_error: Option<f64>,
    pub adjacency_f1: f64,
    pub detection_f1: f64,
}

/// Runs synth -> labelgen -> perturb -> reconstruct -> eval for one seed.
pub fn roundtrip_one(
    synth: &SynthParams,
    noise: &NoiseParams,
    dims: GridDims,
    rc: &ReconstructionConfig,
    matching: CellMatch,
    iou_thresh: f64,
) -> crate::error::Result<RoundtripRecord> {
    let t = generate_table(synth)?;
    let label = build_grid_label(&t, dims)?;
    let pred = perturb(&label, noise)?;
    let (back, _) = reconstruct_with_subgrid(&pred, rc)?;
    let structure_exact = back.span_signature() == t.span_signature();
    let max_corner_error = structure_exact.then(|| {
        t.sorted_cells()
            .iter()
            .zip(back.sorted_cells())
            .map(|(a, b)| match (a.quad, b.quad) {
                (Some(qa), Some(qb)) => qa.max_corner_distance(&qb),
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    });
    let adjacency = adjacency_f1(&back, &t, matching, false).map(|p| p.f1).unwrap_or(0.0);
    Ok(RoundtripRecord {
        seed: synth.seed,
        rows: t.rows,
        cols: t.cols,
        cells: t.cells.len(),
        structure_exact,
        teds_struct: teds_tables(&back, &t, true),
        max_corner_error,
        adjacency_f1: adjacency,
        detection_f1: cell_detection_fscore(&back.cells, &t.cells, iou_thresh).f1,
    })
}

fn cmd_roundtrip(cfg: &RunConfig, seeds: usize, per_doc: bool, pool: &rayon::ThreadPool) -> Result<Outcome, CliError> {
    cfg.synth.check().map_err(|e| CliError::Config(e.to_string()))?;
    cfg.noise.check().map_err(|e| CliError::Config(e.to_string()))?;
    let dims = cfg.dims()?;
    let rc = cfg.reconstruction()?;
    let matching = cfg.cell_matching();
    let ks: Vec<usize> = (0..seeds).collect();
    let results = par_map(pool, &ks, |&k| {
        let p = synth_params(cfg, k);
        roundtrip_one(&p, &noise_params(cfg, p.seed), dims, &rc, matching, cfg.iou_thresh)
    });

    let mut lines = Vec::new();
    let mut failed = 0usize;
    let mut exact = 0usize;
    let mut perfect_teds = 0usize;
    let (mut teds_sum, mut adj_sum, mut det_sum) = (0.0, 0.0, 0.0);
    let mut max_err: f64 = 0.0;
    for (k, r) in results.iter().enumerate() {
        let id = doc_id(k);
        match r {
            Ok(rec) => {
                exact += usize::from(rec.structure_exact);
                perfect_teds += usize::from(rec.teds_struct == 1.0);
                teds_sum += rec.teds_struct;
                adj_sum += rec.adjacency_f1;
                det_sum += rec.detection_f1;
                if let Some(e) = rec.max_corner_error {
                    max_err = max_err.max(e);
                }
                if per_doc {
                    lines.push(io::encode(io::ROUNDTRIP_RECORD, &id, rec));
                }
            }
            Err(e) => {
                failed += 1;
                if per_doc {
                    lines.push(io::error_line(&id, "roundtrip", &e.to_string()));
                }
            }
        }
    }
    let n = seeds.max(1) as f64;
    let summary = json!({
        "documents": seeds,
        "succeeded": exact,
        "failed": failed,
        "success_rate": exact as f64 / n,
        "teds_struct_perfect": perfect_teds,
        "teds_struct_mean": teds_sum / n,
        "adjacency_f1_mean": adj_sum / n,
        "detection_f1_mean": det_sum / n,
        "max_corner_error": max_err,
    });
    lines.push(io::encode(io::ROUNDTRIP_SUMMARY, "corpus", &summary));
    // a document counts as failed when it errors or its structure changes
    Ok(Outcome { lines, documents: seeds, failed: seeds - exact, extra: summary })
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_manifest(path: &Path, cfg: &RunConfig, outcome: &Outcome, started: Option<u64>) -> Result<(), CliError> {
    let mut m = json!({
        "tool": "gridtab",
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "counts": { "documents": outcome.documents, "failed": outcome.failed, "lines": outcome.lines.len() },
    });
    if !outcome.extra.is_null() {
        m["summary"] = outcome.extra.clone();
    }
    if let Some(s) = started {
        m["started_unix"] = json!(s);
        m["finished_unix"] = json!(unix_now());
    }
    let text = io::encode(io::MANIFEST, "run", &m);
    std::fs::write(path, text + "\n").map_err(|source| IoError::File { path: path.display().to_string(), source })?;
    Ok(())
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli.config.clone().or_else(|| std::env::var_os(ENV_CONFIG).filter(|v| !v.is_empty()).map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(&p)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.workers, cli.workers);
    if cli.output.is_some() {
        cfg.output = cli.output.clone();
    }
    match &cli.command {
        Command::Ingest(i) => set(&mut cfg.input, i.input.clone().map(Some)),
        Command::Labelgen { input, dims } => {
            set(&mut cfg.input, input.input.clone().map(Some));
            apply_dims(&mut cfg, dims);
        }
        Command::Reconstruct { input, thresholds, html } => {
            set(&mut cfg.input, input.input.clone().map(Some));
            apply_thresholds(&mut cfg, thresholds);
            cfg.html |= html;
        }
        Command::Eval(e) => {
            set(&mut cfg.iou_thresh, e.iou_thresh);
            set(&mut cfg.cell_match, e.cell_match);
            cfg.skip_empty |= e.skip_empty;
        }
        Command::Synth(s) => {
            apply_synth(&mut cfg, &s.synth);
            apply_noise(&mut cfg, &s.noise);
            apply_dims(&mut cfg, &s.dims);
        }
        Command::Roundtrip(r) => {
            apply_synth(&mut cfg, &r.synth);
            apply_noise(&mut cfg, &r.noise);
            apply_dims(&mut cfg, &r.dims);
            apply_thresholds(&mut cfg, &r.thresholds);
        }
    }
    cfg.command = Some(
        match &cli.command {
            Command::Ingest(_) => "ingest".to_string(),
            Command::Labelgen { .. } => "labelgen".to_string(),
            Command::Reconstruct { .. } => "reconstruct".to_string(),
            Command::Eval(e) => format!("eval {}", e.mode.to_possible_value().expect("named").get_name()),
            Command::Synth(_) => "synth".to_string(),
            Command::Roundtrip(_) => "roundtrip".to_string(),
        },
    );
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let started = (!cli.deterministic).then(unix_now);
    let cfg = resolve_config(cli)?;
    let pool = pool(cfg.workers)?;
    let outcome = match &cli.command {
        Command::Ingest(_) => cmd_ingest(&cfg, &pool)?,
        Command::Labelgen { .. } => cmd_labelgen(&cfg, &pool)?,
        Command::Reconstruct { .. } => cmd_reconstruct(&cfg, &pool)?,
        Command::Eval(args) => cmd_eval(&cfg, args, &pool)?,
        Command::Synth(s) => cmd_synth(&cfg, s.count, &s.emit, &pool)?,
        Command::Roundtrip(r) => cmd_roundtrip(&cfg, r.seeds, r.per_doc, &pool)?,
    };
    let output = cfg.output.as_deref();
    io::write_lines(output, &outcome.lines)?;
    let manifest = cli.manifest.clone().or_else(|| {
        output.filter(|p| p.as_os_str() != "-").map(|p| {
            let mut s = p.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    });
    if let Some(path) = manifest {
        write_manifest(&path, &cfg, &outcome, started)?;
    }
    if outcome.failed > 0 {
        eprintln!("gridtab: {} of {} documents failed", outcome.failed, outcome.documents);
        if cli.strict {
            return Ok(EXIT_DOC_FAILURES);
        }
    }
    Ok(EXIT_OK)
}

/// Entry point of the binary. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("gridtab: {e}");
            EXIT_ERROR
        }
    }
}
