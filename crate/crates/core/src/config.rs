//! Experiment configuration: defaults, TOML files and command-line
//! overrides, resolved in that order of increasing precedence.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ledger::MAX_PAYLOAD;
use crate::par::Execution;
use crate::sim::Behavior;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    #[default]
    Structured,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "structured" | "json" => Ok(Self::Structured),
            other => Err(format!("unknown format {other:?} (expected csv or structured)")),
        }
    }
}

/// How the TPS denominator is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanMode {
    /// First anchor submission to last anchor confirmation.
    #[default]
    Submissions,
    /// Start of the first round to last anchor confirmation.
    Wall,
}

/// `kind:count`, e.g. `random-weights:4`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AdversarySpec {
    pub kind: Behavior,
    pub count: usize,
}

impl FromStr for AdversarySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, count) = s.split_once(':').ok_or_else(|| format!("expected kind:count, got {s:?}"))?;
        let count = count.trim().parse().map_err(|_| format!("bad adversary count in {s:?}"))?;
        Ok(Self { kind: kind.trim().parse()?, count })
    }
}

impl TryFrom<String> for AdversarySpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<AdversarySpec> for String {
    fn from(a: AdversarySpec) -> Self {
        a.to_string()
    }
}

impl fmt::Display for AdversarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.count)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerSettings {
    pub n_nodes: usize,
    /// One-way latency between every pair of ledger nodes.
    pub gossip_latency_s: f64,
    pub tip_k: usize,
    /// Time the adapter spends per anchor (remote proof of work). Anchors
    /// queue behind each other when this is non-zero.
    pub pow_cost_s: f64,
    pub update_payload_bytes: usize,
    pub global_payload_bytes: usize,
    pub digest_payload_bytes: usize,
}

impl Default for LedgerSettings {
    fn default() -> Self {
        Self {
            n_nodes: 2,
            gossip_latency_s: 0.05,
            tip_k: 2,
            pow_cost_s: 0.0,
            update_payload_bytes: 2560,
            global_payload_bytes: 2560,
            digest_payload_bytes: 1792,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlSettings {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
    pub samples_per_client: usize,
    pub validation_samples: usize,
    pub non_iid_alpha: f64,
    pub separation: f64,
    pub noise_std: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for FlSettings {
    fn default() -> Self {
        Self {
            input_dim: 8,
            hidden_dim: 32,
            n_classes: 4,
            samples_per_client: 100,
            validation_samples: 400,
            non_iid_alpha: 0.5,
            separation: 4.0,
            noise_std: 1.0,
            epochs: 20,
            learning_rate: 0.05,
            batch_size: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustSettings {
    pub initial_score: f64,
    /// Defaults to `alpha` when unset.
    pub penalty_factor: Option<f64>,
    pub coherence_factor: f64,
    pub reputation_weighting: bool,
}

impl Default for TrustSettings {
    fn default() -> Self {
        Self { initial_score: 0.5, penalty_factor: None, coherence_factor: 3.0, reputation_weighting: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingSettings {
    pub collection_window_s: f64,
    pub aggregation_delay_s: f64,
    /// Median local compute time per round.
    pub compute_base_s: f64,
    pub compute_sigma: f64,
    pub network_base_s: f64,
    pub network_sigma: f64,
    pub bus_latency_s: f64,
    pub quorum_fraction: f64,
    /// Wall seconds slept per simulated second; unset runs as fast as possible.
    pub realtime_factor: Option<f64>,
}

impl Default for TimingSettings {
    fn default() -> Self {
        Self {
            collection_window_s: 30.0,
            aggregation_delay_s: 0.5,
            compute_base_s: 4.0,
            compute_sigma: 0.3,
            network_base_s: 0.02,
            network_sigma: 0.5,
            bus_latency_s: 0.005,
            quorum_fraction: 0.5,
            realtime_factor: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub exp_id: String,
    pub rounds: usize,
    pub repeats: usize,
    pub n_clients: usize,
    pub milestone_interval_s: f64,
    pub alpha: f64,
    pub threshold: f64,
    pub seed: u64,
    pub adversaries: Vec<AdversarySpec>,
    pub span_mode: SpanMode,
    /// Where artifacts go. Not echoed into reports, so identical runs in
    /// different directories produce identical reports.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    #[serde(skip_serializing)]
    pub format: OutputFormat,
    #[serde(skip_serializing)]
    pub execution: Execution,
    pub ledger: LedgerSettings,
    pub fl: FlSettings,
    pub trust: TrustSettings,
    pub timing: TimingSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            exp_id: "exp".into(),
            rounds: 10,
            repeats: 10,
            n_clients: 20,
            milestone_interval_s: 10.0,
            alpha: 0.5,
            threshold: 0.2,
            seed: 42,
            adversaries: Vec::new(),
            span_mode: SpanMode::default(),
            out: PathBuf::from("runs"),
            format: OutputFormat::default(),
            execution: Execution::default(),
            ledger: LedgerSettings::default(),
            fl: FlSettings::default(),
            trust: TrustSettings::default(),
            timing: TimingSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("cannot read config file {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("config file {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

impl ConfigError {
    /// Name of the offending field, when there is one.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            Self::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

fn bad(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, reason: reason.into() }
}

fn at_least_one(field: &'static str, v: usize) -> Result<(), ConfigError> {
    if v == 0 {
        return Err(bad(field, "must be >= 1"));
    }
    Ok(())
}

fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(bad(field, format!("must be > 0, got {v}")));
    }
    Ok(())
}

fn non_negative(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(bad(field, format!("must be >= 0, got {v}")));
    }
    Ok(())
}

fn unit(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(bad(field, format!("must lie in [0, 1], got {v}")));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses a TOML document on top of the defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.into(), reason: e.to_string() })?;
        Self::from_toml_str(&text).map_err(|reason| ConfigError::Parse { path: path.into(), reason })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.exp_id.is_empty() || !self.exp_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || self.exp_id.starts_with('.') {
            return Err(bad("exp_id", "must be non-empty and use only letters, digits, '-', '_' and '.'"));
        }
        at_least_one("rounds", self.rounds)?;
        at_least_one("repeats", self.repeats)?;
        at_least_one("n_clients", self.n_clients)?;
        positive("milestone_interval_s", self.milestone_interval_s)?;
        unit("alpha", self.alpha)?;
        unit("threshold", self.threshold)?;
        let adversaries: usize = self.adversaries.iter().map(|a| a.count).sum();
        if adversaries > self.n_clients {
            return Err(bad("adversaries", format!("{adversaries} adversaries but only {} clients", self.n_clients)));
        }

        let l = &self.ledger;
        at_least_one("ledger.n_nodes", l.n_nodes)?;
        non_negative("ledger.gossip_latency_s", l.gossip_latency_s)?;
        if !(1..=crate::ledger::MAX_PARENTS).contains(&l.tip_k) {
            return Err(bad("ledger.tip_k", "must lie in 1..=8"));
        }
        non_negative("ledger.pow_cost_s", l.pow_cost_s)?;
        for (field, v) in [
            ("ledger.update_payload_bytes", l.update_payload_bytes),
            ("ledger.global_payload_bytes", l.global_payload_bytes),
            ("ledger.digest_payload_bytes", l.digest_payload_bytes),
        ] {
            if v > MAX_PAYLOAD {
                return Err(bad(field, format!("must be <= {MAX_PAYLOAD}")));
            }
        }

        let f = &self.fl;
        at_least_one("fl.input_dim", f.input_dim)?;
        at_least_one("fl.hidden_dim", f.hidden_dim)?;
        at_least_one("fl.n_classes", f.n_classes)?;
        at_least_one("fl.samples_per_client", f.samples_per_client)?;
        at_least_one("fl.validation_samples", f.validation_samples)?;
        positive("fl.non_iid_alpha", f.non_iid_alpha)?;
        non_negative("fl.separation", f.separation)?;
        non_negative("fl.noise_std", f.noise_std)?;
        at_least_one("fl.epochs", f.epochs)?;
        non_negative("fl.learning_rate", f.learning_rate)?;
        at_least_one("fl.batch_size", f.batch_size)?;

        let t = &self.trust;
        unit("trust.initial_score", t.initial_score)?;
        if let Some(p) = t.penalty_factor {
            unit("trust.penalty_factor", p)?;
        }
        positive("trust.coherence_factor", t.coherence_factor)?;

        let tm = &self.timing;
        positive("timing.collection_window_s", tm.collection_window_s)?;
        non_negative("timing.aggregation_delay_s", tm.aggregation_delay_s)?;
        non_negative("timing.compute_base_s", tm.compute_base_s)?;
        non_negative("timing.compute_sigma", tm.compute_sigma)?;
        non_negative("timing.network_base_s", tm.network_base_s)?;
        non_negative("timing.network_sigma", tm.network_sigma)?;
        non_negative("timing.bus_latency_s", tm.bus_latency_s)?;
        if !(tm.quorum_fraction > 0.0 && tm.quorum_fraction <= 1.0) {
            return Err(bad("timing.quorum_fraction", "must lie in (0, 1]"));
        }
        if let Some(r) = tm.realtime_factor {
            non_negative("timing.realtime_factor", r)?;
        }
        Ok(())
    }

    pub fn penalty_factor(&self) -> f64 {
        self.trust.penalty_factor.unwrap_or(self.alpha)
    }

    pub fn quorum(&self) -> usize {
        crate::dapp::default_quorum(self.n_clients, self.timing.quorum_fraction)
    }

    /// Behaviour of every device, adversaries taking the highest ids in the
    /// order listed.
    pub fn behaviors(&self) -> Vec<Behavior> {
        let mut out = vec![Behavior::Honest; self.n_clients];
        let mut slot = self.n_clients;
        for a in &self.adversaries {
            for _ in 0..a.count {
                if slot == 0 {
                    break;
                }
                slot -= 1;
                out[slot] = a.kind;
            }
        }
        out
    }

    /// The resolved configuration as echoed into reports.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Values given on the command line; `None` leaves the lower layer alone.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub exp_id: Option<String>,
    pub rounds: Option<usize>,
    pub repeats: Option<usize>,
    pub n_clients: Option<usize>,
    pub milestone_interval_s: Option<f64>,
    pub alpha: Option<f64>,
    pub threshold: Option<f64>,
    pub seed: Option<u64>,
    pub adversaries: Option<Vec<AdversarySpec>>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub execution: Option<Execution>,
    pub reputation_weighting: Option<bool>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    cfg.$f = v.clone();
                }
            )*};
        }
        set!(exp_id, rounds, repeats, n_clients, milestone_interval_s, alpha, threshold, seed, adversaries, out, format, execution);
        if let Some(w) = self.reputation_weighting {
            cfg.trust.reputation_weighting = w;
        }
    }
}

/// Defaults, then `file` if given, then `overrides`; the result is validated.
pub fn validate_config(file: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match file {
        Some(p) => ExperimentConfig::from_toml_file(p)?,
        None => ExperimentConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}
