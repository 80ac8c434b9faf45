//! Experiment harness: runs repeats, persists artifacts, audits them and
//! recomputes reports from persisted logs.
//!
//! Layout under `<out>/<exp_id>/`:
//!
//! ```text
//! repeat_<k>/events.log        newline-delimited events
//! repeat_<k>/ledger.snapshot   coordinator view of the ledger
//! repeat_<k>/report.json|csv   per-repeat metrics
//! repeat_<k>/reputation.csv    final reputation table
//! repeat_<k>/blobs/<id>        off-chain store
//! summary.json|csv             merged report with the config echo
//! ```

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ExperimentConfig, OutputFormat};
use crate::dapp::{AnchorKind, AnchorRecord};
use crate::ledger::{
    milestone_index, read_snapshot, verify_chain_integrity, write_snapshot, BlockId, IntegrityViolation, NodeId, NodeState,
};
use crate::metrics::{DelaySample, MetricsError, MetricsReport, RepeatMetrics};
use crate::sim::{run_repeat, EventLog, RepeatOutput, SimError};
use crate::store::{ContentId, ContentStore, StoreError};

pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const EVENTS_LOG: &str = "events.log";
pub const SNAPSHOT: &str = "ledger.snapshot";
pub const BLOBS: &str = "blobs";
const CONFIG_PREFIX: &str = "# config: ";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("repeat {repeat}: {source}")]
    Sim { repeat: usize, source: SimError },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("no experiment artifacts under {0}")]
    NoArtifacts(PathBuf),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Io { path: path.to_owned(), reason: e.to_string() }
}

pub fn experiment_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.join(&cfg.exp_id)
}

pub fn repeat_dir(exp_dir: &Path, repeat: usize) -> PathBuf {
    exp_dir.join(format!("repeat_{repeat}"))
}

/// Runs every repeat of `cfg` (in parallel when enabled) without touching
/// the file system.
pub fn run_repeats(cfg: &ExperimentConfig) -> Result<Vec<RepeatOutput>, ExperimentError> {
    cfg.execution
        .map_range(cfg.repeats, |k| run_repeat(cfg, k).map_err(|source| ExperimentError::Sim { repeat: k, source }))
        .into_iter()
        .collect()
}

/// Runs `cfg`, writes all artifacts and returns the merged report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport, ExperimentError> {
    let outputs = run_repeats(cfg)?;
    let dir = experiment_dir(cfg);
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut per_repeat = Vec::with_capacity(outputs.len());
    for out in &outputs {
        let m = RepeatMetrics::from_log(out.repeat, &out.log, cfg.span_mode)?;
        write_repeat(&repeat_dir(&dir, out.repeat), out, &m, cfg.format)?;
        per_repeat.push(m);
    }
    let report = MetricsReport::assemble(&cfg.exp_id, cfg.rounds, cfg.echo(), per_repeat)?;
    write_summary(&dir, &report, cfg.format)?;
    Ok(report)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn write_repeat(dir: &Path, out: &RepeatOutput, m: &RepeatMetrics, format: OutputFormat) -> Result<(), ExperimentError> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_file(&dir.join(EVENTS_LOG), out.log.to_jsonl().as_bytes())?;

    let snap = dir.join(SNAPSHOT);
    let mut w = BufWriter::new(File::create(&snap).map_err(|e| io_err(&snap, e))?);
    write_snapshot(&out.ledger, &mut w).and_then(|_| w.flush()).map_err(|e| io_err(&snap, e))?;

    let blobs = dir.join(BLOBS);
    out.store.save_dir(&blobs).map_err(|e| io_err(&blobs, e))?;
    write_file(&dir.join("reputation.csv"), out.reputation.to_csv().as_bytes())?;
    match format {
        OutputFormat::Structured => write_file(&dir.join("report.json"), &to_json(m))?,
        OutputFormat::Csv => write_file(&dir.join("report.csv"), &delays_csv(None, &[(out.repeat, &m.delays)]))?,
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("reports serialize");
    s.push(b'\n');
    s
}

fn delays_csv(config: Option<&Value>, rows: &[(usize, &Vec<DelaySample>)]) -> Vec<u8> {
    let mut buf = Vec::new();
    if let Some(c) = config {
        buf.extend_from_slice(format!("{CONFIG_PREFIX}{c}\n").as_bytes());
    }
    let mut w = csv::Writer::from_writer(&mut buf);
    w.write_record(["repeat", "block", "submitted_us", "confirmed_us", "delay_s"]).expect("in-memory write");
    for (repeat, delays) in rows {
        for d in delays.iter() {
            w.write_record([
                repeat.to_string(),
                d.block.clone(),
                d.submitted_us.to_string(),
                d.confirmed_us.to_string(),
                d.delay_s().to_string(),
            ])
            .expect("in-memory write");
        }
    }
    drop(w);
    buf
}

fn summary_csv(report: &MetricsReport) -> Vec<u8> {
    let mut buf = format!("{CONFIG_PREFIX}{}\n", report.config).into_bytes();
    let mut w = csv::Writer::from_writer(&mut buf);
    w.write_record(["repeat", "tps", "span_s", "confirmed", "final_accuracy"]).expect("in-memory write");
    for r in &report.per_repeat {
        w.write_record([
            r.repeat.to_string(),
            r.tps.to_string(),
            r.span_s.to_string(),
            r.confirmed.to_string(),
            r.final_accuracy.map(|a| a.to_string()).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    drop(w);
    buf
}

fn write_summary(dir: &Path, report: &MetricsReport, format: OutputFormat) -> Result<(), ExperimentError> {
    match format {
        OutputFormat::Structured => write_file(&dir.join(SUMMARY_JSON), &to_json(report)),
        OutputFormat::Csv => {
            write_file(&dir.join(SUMMARY_CSV), &summary_csv(report))?;
            let rows: Vec<_> = report.per_repeat.iter().map(|r| (r.repeat, &r.delays)).collect();
            write_file(&dir.join("delays.csv"), &delays_csv(Some(&report.config), &rows))
        }
    }
}

/// One point of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub rounds: usize,
    pub exp_id: String,
    pub tps_mean: f64,
    pub tps_std: Option<f64>,
    pub variability_pct: Option<f64>,
    pub delay_p50_s: f64,
    pub delay_max_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub exp_id: String,
    pub points: Vec<SweepPoint>,
}

/// Runs `cfg` once per entry of `rounds`, as experiments `<exp_id>-r<R>`,
/// and writes the merged sweep summary to `<out>/<exp_id>.sweep.json`.
pub fn run_sweep(cfg: &ExperimentConfig, rounds: &[usize]) -> Result<(SweepSummary, Vec<MetricsReport>), ExperimentError> {
    let mut reports = Vec::new();
    let mut points = Vec::new();
    for &r in rounds {
        let point = ExperimentConfig { rounds: r, exp_id: format!("{}-r{r}", cfg.exp_id), ..cfg.clone() };
        let report = run_experiment(&point)?;
        points.push(SweepPoint {
            rounds: r,
            exp_id: point.exp_id.clone(),
            tps_mean: report.tps_mean,
            tps_std: report.tps_std,
            variability_pct: report.variability_pct,
            delay_p50_s: report.delay_quantiles.p50,
            delay_max_s: report.delay_quantiles.max,
        });
        reports.push(report);
    }
    let summary = SweepSummary { exp_id: cfg.exp_id.clone(), points };
    fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    write_file(&cfg.out.join(format!("{}.sweep.json", cfg.exp_id)), &to_json(&summary))?;
    Ok((summary, reports))
}

/// The config echo stored with an experiment's summary, if any.
pub fn read_config_echo(dir: &Path) -> Result<Option<Value>, ExperimentError> {
    let json = dir.join(SUMMARY_JSON);
    if json.exists() {
        let text = fs::read_to_string(&json).map_err(|e| io_err(&json, e))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| io_err(&json, e))?;
        return Ok(v.get("config").cloned());
    }
    let csv = dir.join(SUMMARY_CSV);
    if csv.exists() {
        let text = fs::read_to_string(&csv).map_err(|e| io_err(&csv, e))?;
        if let Some(rest) = text.lines().next().and_then(|l| l.strip_prefix(CONFIG_PREFIX)) {
            return Ok(Some(serde_json::from_str(rest).map_err(|e| io_err(&csv, e))?));
        }
    }
    Ok(None)
}

/// Repeat directories present under `dir`, in repeat order.
pub fn repeat_dirs(dir: &Path) -> Result<Vec<(usize, PathBuf)>, ExperimentError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let name = entry.file_name();
        if let Some(k) = name.to_str().and_then(|n| n.strip_prefix("repeat_")).and_then(|k| k.parse().ok()) {
            out.push((k, entry.path()));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(ExperimentError::NoArtifacts(dir.to_owned()));
    }
    Ok(out)
}

/// Recomputes the merged report of the experiment in `dir` from its event
/// logs. With the stored config echo the result equals the original report.
pub fn report_from_logs(dir: &Path) -> Result<MetricsReport, ExperimentError> {
    let echo = read_config_echo(dir)?;
    let cfg: ExperimentConfig = match &echo {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| io_err(dir, e))?,
        None => ExperimentConfig::default(),
    };
    let mut per_repeat = Vec::new();
    for (k, path) in repeat_dirs(dir)? {
        let log_path = path.join(EVENTS_LOG);
        let text = fs::read_to_string(&log_path).map_err(|e| io_err(&log_path, e))?;
        let log = EventLog::from_jsonl(&text).map_err(|e| io_err(&log_path, e))?;
        per_repeat.push(RepeatMetrics::from_log(k, &log, cfg.span_mode)?);
    }
    let rounds = per_repeat.iter().map(|r| r.rounds.len()).max().unwrap_or(0);
    Ok(MetricsReport::assemble(&cfg.exp_id, rounds, echo.unwrap_or_else(|| cfg.echo()), per_repeat)?)
}

/// Renders a report in the requested format.
pub fn render_report(report: &MetricsReport, format: OutputFormat) -> Vec<u8> {
    match format {
        OutputFormat::Structured => to_json(report),
        OutputFormat::Csv => summary_csv(report),
    }
}

/// A problem found by [`verify_experiment`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Violation {
    /// A ledger block fails its id check or references a missing parent.
    Ledger { repeat: usize, violation: IntegrityViolation },
    /// An off-chain blob no longer hashes to its content id.
    BlobIntegrity { repeat: usize, content: ContentId },
    /// An anchor references a blob that is not in the store.
    MissingBlob { repeat: usize, block: BlockId, content: ContentId },
    /// A non-milestone block whose payload is not a valid anchor record.
    MalformedAnchor { repeat: usize, block: BlockId },
    /// An anchor outside the past cone of the latest milestone.
    Unconfirmed { repeat: usize, block: BlockId },
    /// A global model anchor lists a contributing block that is absent or
    /// unconfirmed.
    BadContributor { repeat: usize, anchor: BlockId, block: BlockId },
    /// An artifact is missing or unreadable.
    Artifact { repeat: usize, path: PathBuf, reason: String },
}

impl Violation {
    pub fn class(&self) -> &'static str {
        match self {
            Self::Ledger { violation: IntegrityViolation::IdMismatch { .. }, .. } => "id_mismatch",
            Self::Ledger { violation: IntegrityViolation::DanglingParent { .. }, .. } => "dangling_parent",
            Self::BlobIntegrity { .. } => "blob_integrity",
            Self::MissingBlob { .. } => "missing_blob",
            Self::MalformedAnchor { .. } => "malformed_anchor",
            Self::Unconfirmed { .. } => "unconfirmed",
            Self::BadContributor { .. } => "bad_contributor",
            Self::Artifact { .. } => "artifact",
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Ledger { repeat, violation } => write!(f, "repeat {repeat}: {violation}"),
            Self::BlobIntegrity { repeat, content } => write!(f, "repeat {repeat}: blob {content} fails its hash check"),
            Self::MissingBlob { repeat, block, content } => write!(f, "repeat {repeat}: anchor {block} references missing blob {content}"),
            Self::MalformedAnchor { repeat, block } => write!(f, "repeat {repeat}: block {block} is not a valid anchor"),
            Self::Unconfirmed { repeat, block } => write!(f, "repeat {repeat}: anchor {block} is not confirmed"),
            Self::BadContributor { repeat, anchor, block } => {
                write!(f, "repeat {repeat}: global anchor {anchor} lists absent or unconfirmed block {block}")
            }
            Self::Artifact { repeat, path, reason } => write!(f, "repeat {repeat}: {}: {reason}", path.display()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub repeats: usize,
    pub blocks: usize,
    pub anchors: usize,
    pub blobs: usize,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Audits every repeat under `dir`: ledger integrity, blob hashes, and that
/// every anchor (and every block a global model cites) lies in the past cone
/// of the latest milestone.
///
/// Confirmation is only checked on a ledger that passes its integrity check.
/// Once a block is tampered with, the milestones can no longer be trusted, so
/// the tampering itself is the one violation reported for that ledger.
pub fn verify_experiment(dir: &Path) -> Result<AuditReport, ExperimentError> {
    let mut report = AuditReport::default();
    for (k, path) in repeat_dirs(dir)? {
        report.repeats += 1;
        audit_repeat(k, &path, &mut report);
    }
    Ok(report)
}

fn audit_repeat(repeat: usize, dir: &Path, report: &mut AuditReport) {
    let artifact = |path: PathBuf, reason: String| Violation::Artifact { repeat, path, reason };
    let snap = dir.join(SNAPSHOT);
    let blocks = match File::open(&snap).map_err(|e| e.to_string()).and_then(|f| read_snapshot(BufReader::new(f)).map_err(|e| e.to_string())) {
        Ok(b) => b,
        Err(reason) => {
            report.violations.push(artifact(snap, reason));
            return;
        }
    };
    let state = NodeState::from_blocks_unchecked(NodeId(0), blocks);
    report.blocks += state.len();
    let ledger_violations = verify_chain_integrity(&state);
    let tampered: BTreeSet<BlockId> = ledger_violations
        .iter()
        .filter_map(|v| match v {
            IntegrityViolation::IdMismatch { stored, .. } => Some(*stored),
            _ => None,
        })
        .collect();
    let ledger_intact = ledger_violations.is_empty();
    report.violations.extend(ledger_violations.into_iter().map(|violation| Violation::Ledger { repeat, violation }));

    let blob_dir = dir.join(BLOBS);
    let store = match ContentStore::load_dir(&blob_dir) {
        Ok(s) => s,
        Err(e) => {
            report.violations.push(artifact(blob_dir, e.to_string()));
            ContentStore::new()
        }
    };
    report.blobs += store.len();
    for id in store.ids() {
        if let Err(StoreError::IntegrityFailure(content)) = store.get(id) {
            report.violations.push(Violation::BlobIntegrity { repeat, content });
        }
    }

    // Confirmation as of the latest milestone.
    let latest = state
        .blocks()
        .filter_map(|b| milestone_index(&b.payload).map(|i| (i, b)))
        .max_by_key(|(i, _)| *i)
        .map(|(_, b)| b.parents.clone());
    let confirmed = latest.map(|parents| state.past_cone(&parents)).unwrap_or_default();

    for b in state.blocks() {
        if b.is_genesis() || b.is_milestone() || tampered.contains(&b.id) {
            continue;
        }
        let Ok(rec) = AnchorRecord::decode(&b.payload) else {
            report.violations.push(Violation::MalformedAnchor { repeat, block: b.id });
            continue;
        };
        report.anchors += 1;
        if !store.contains(&rec.content_hash) {
            report.violations.push(Violation::MissingBlob { repeat, block: b.id, content: rec.content_hash });
        }
        if !ledger_intact {
            continue;
        }
        if !confirmed.contains(&b.id) {
            report.violations.push(Violation::Unconfirmed { repeat, block: b.id });
        }
        if rec.kind == AnchorKind::GlobalModel {
            for c in &rec.contributing {
                if !state.contains(c) || !confirmed.contains(c) {
                    report.violations.push(Violation::BadContributor { repeat, anchor: b.id, block: *c });
                }
            }
        }
    }
}
