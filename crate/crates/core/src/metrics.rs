//! Throughput, variability and confirmation-delay metrics, computed from
//! event logs alone.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::SpanMode;
use crate::sim::{EventKind, EventLog, RoundRecord};

/// Identifies the layout of [`MetricsReport`] documents.
pub const REPORT_SCHEMA: &str = "tanglefl.metrics/1";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no confirmed anchors in the run")]
    EmptyRun,
    #[error("run span is zero")]
    ZeroSpan,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("mean must be positive for a coefficient of variation")]
    NonPositiveMean,
    #[error("no confirmed transactions")]
    NoConfirmations,
    #[error("malformed {0} event at t={1}us")]
    MalformedEvent(&'static str, u64),
}

/// Confirmed transactions per second of span.
pub fn tps(confirmed: usize, span_s: f64) -> Result<f64, MetricsError> {
    if confirmed == 0 {
        return Err(MetricsError::EmptyRun);
    }
    if span_s <= 0.0 {
        return Err(MetricsError::ZeroSpan);
    }
    Ok(confirmed as f64 / span_s)
}

/// Span of a run in seconds under `mode`; ends at the last confirmation.
pub fn run_span(log: &EventLog, mode: SpanMode) -> Result<f64, MetricsError> {
    let end = log.of_kind(EventKind::Confirm).map(|e| e.t_us).max().ok_or(MetricsError::EmptyRun)?;
    let first_submit = log.of_kind(EventKind::Submit).map(|e| e.t_us).min();
    let start = match mode {
        SpanMode::Submissions => first_submit,
        SpanMode::Wall => log.of_kind(EventKind::RoundStart).map(|e| e.t_us).min().or(first_submit),
    }
    .ok_or(MetricsError::EmptyRun)?;
    Ok(end.saturating_sub(start) as f64 / 1e6)
}

/// Confirmed anchors divided by the run span.
pub fn compute_tps(log: &EventLog, mode: SpanMode) -> Result<f64, MetricsError> {
    let confirmed = log.of_kind(EventKind::Confirm).count();
    if confirmed == 0 {
        return Err(MetricsError::EmptyRun);
    }
    tps(confirmed, run_span(log, mode)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variability {
    pub mean: f64,
    /// Sample standard deviation (n - 1).
    pub std: f64,
    /// `std / mean * 100`.
    pub pct: f64,
}

pub fn variability(samples: &[f64]) -> Result<Variability, MetricsError> {
    let n = samples.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if mean <= 0.0 {
        return Err(MetricsError::NonPositiveMean);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    Ok(Variability { mean, std, pct: cv_pct(mean, std) })
}

/// Coefficient of variation in percent.
pub fn cv_pct(mean: f64, std: f64) -> f64 {
    std / mean * 100.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub max: f64,
}

/// Linear interpolation between order statistics (R type 7). `sorted` must
/// be non-empty and ascending.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantiles(samples: &[f64]) -> Option<Quantiles> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Some(Quantiles { p25: quantile(&s, 0.25), p50: quantile(&s, 0.5), p75: quantile(&s, 0.75), max: s[s.len() - 1] })
}

/// One confirmed anchor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelaySample {
    pub block: String,
    pub submitted_us: u64,
    pub confirmed_us: u64,
}

impl DelaySample {
    pub fn delay_s(&self) -> f64 {
        self.confirmed_us.saturating_sub(self.submitted_us) as f64 / 1e6
    }
}

pub fn delay_samples(log: &EventLog) -> Result<Vec<DelaySample>, MetricsError> {
    log.of_kind(EventKind::Confirm)
        .map(|e| {
            let submitted_us = e.detail_u64("submitted_us").ok_or(MetricsError::MalformedEvent("confirm", e.t_us))?;
            let block = e.digest.clone().ok_or(MetricsError::MalformedEvent("confirm", e.t_us))?;
            Ok(DelaySample { block, submitted_us, confirmed_us: e.t_us })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayDistribution {
    pub samples_s: Vec<f64>,
    pub quantiles: Quantiles,
}

/// Per-transaction submit-to-confirm delays in seconds.
pub fn delay_distribution(log: &EventLog) -> Result<DelayDistribution, MetricsError> {
    let samples_s: Vec<f64> = delay_samples(log)?.iter().map(DelaySample::delay_s).collect();
    let quantiles = quantiles(&samples_s).ok_or(MetricsError::NoConfirmations)?;
    Ok(DelayDistribution { samples_s, quantiles })
}

/// Round records carried by the `round_end` events of a log.
pub fn round_records(log: &EventLog) -> Result<Vec<RoundRecord>, MetricsError> {
    log.of_kind(EventKind::RoundEnd)
        .map(|e| {
            let detail = Value::Object(e.detail.clone().into_iter().collect());
            serde_json::from_value(detail).map_err(|_| MetricsError::MalformedEvent("round_end", e.t_us))
        })
        .collect()
}

/// Metrics of a single repeat.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatMetrics {
    pub repeat: usize,
    pub tps: f64,
    pub span_s: f64,
    pub confirmed: usize,
    /// Validation accuracy of the global model after the last round.
    pub final_accuracy: Option<f64>,
    pub rounds: Vec<RoundRecord>,
    #[serde(skip)]
    pub delays: Vec<DelaySample>,
}

impl RepeatMetrics {
    pub fn from_log(repeat: usize, log: &EventLog, mode: SpanMode) -> Result<Self, MetricsError> {
        let delays = delay_samples(log)?;
        let span_s = run_span(log, mode)?;
        let rounds = round_records(log)?;
        Ok(Self {
            repeat,
            tps: tps(delays.len(), span_s)?,
            span_s,
            confirmed: delays.len(),
            final_accuracy: rounds.last().map(|r| r.model_accuracy),
            rounds,
            delays,
        })
    }
}

/// The harness output for one experiment (one sweep point).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub exp_id: String,
    pub rounds: usize,
    pub repeats: usize,
    /// One TPS value per repeat, in repeat order.
    pub tps: Vec<f64>,
    pub tps_mean: f64,
    /// `None` with fewer than two repeats.
    pub tps_std: Option<f64>,
    pub variability_pct: Option<f64>,
    /// Every confirmation delay of every repeat, in seconds.
    pub delay_samples_s: Vec<f64>,
    pub delay_quantiles: Quantiles,
    pub per_repeat: Vec<RepeatMetrics>,
    /// Fully resolved configuration; enough to re-run.
    pub config: Value,
}

impl MetricsReport {
    /// Merges per-repeat metrics (in repeat order).
    pub fn assemble(exp_id: &str, rounds: usize, config: Value, per_repeat: Vec<RepeatMetrics>) -> Result<Self, MetricsError> {
        let tps: Vec<f64> = per_repeat.iter().map(|r| r.tps).collect();
        if tps.is_empty() {
            return Err(MetricsError::EmptyRun);
        }
        let tps_mean = tps.iter().sum::<f64>() / tps.len() as f64;
        let (tps_std, variability_pct) = match variability(&tps) {
            Ok(v) => (Some(v.std), Some(v.pct)),
            Err(_) => (None, None),
        };
        let delay_samples_s: Vec<f64> = per_repeat.iter().flat_map(|r| r.delays.iter().map(DelaySample::delay_s)).collect();
        let delay_quantiles = quantiles(&delay_samples_s).ok_or(MetricsError::NoConfirmations)?;
        Ok(Self {
            schema: REPORT_SCHEMA.into(),
            exp_id: exp_id.into(),
            rounds,
            repeats: per_repeat.len(),
            tps,
            tps_mean,
            tps_std,
            variability_pct,
            delay_samples_s,
            delay_quantiles,
            per_repeat,
            config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Event;
    use crate::time::SimTime;

    fn log_with(confirms: &[(u64, u64)]) -> EventLog {
        let mut log = EventLog::new();
        for (i, &(s, _)) in confirms.iter().enumerate() {
            log.push(Event::new(SimTime::from_micros(s), "adapter", EventKind::Submit).digest(format!("b{i}")));
        }
        for (i, &(s, c)) in confirms.iter().enumerate() {
            log.push(Event::new(SimTime::from_micros(c), "coordinator", EventKind::Confirm).digest(format!("b{i}")).with("submitted_us", s));
        }
        log
    }

    #[test]
    fn tps_arithmetic() {
        assert_eq!(tps(100, 50.0), Ok(2.0));
        assert_eq!(tps(0, 50.0), Err(MetricsError::EmptyRun));
        assert_eq!(compute_tps(&EventLog::new(), SpanMode::Submissions), Err(MetricsError::EmptyRun));
        let log = log_with(&[(1_000_000, 3_000_000), (2_000_000, 5_000_000)]);
        assert_eq!(compute_tps(&log, SpanMode::Submissions), Ok(0.5));
    }

    #[test]
    fn variability_rules() {
        assert_eq!(variability(&[1.0]), Err(MetricsError::TooFewSamples(1)));
        let v = variability(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((v.std, v.pct), (0.0, 0.0));
        let v = variability(&[1.0, 3.0]).unwrap();
        assert_eq!(v.mean, 2.0);
        assert!((v.std - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn type7_quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.5), 2.5);
        assert_eq!(quantile(&s, 0.25), 1.75);
        assert_eq!(quantile(&s, 1.0), 4.0);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
        let d = delay_distribution(&log_with(&[(0, 1_000_000), (0, 3_000_000)])).unwrap();
        assert_eq!(d.quantiles, Quantiles { p25: 1.5, p50: 2.0, p75: 2.5, max: 3.0 });
        assert_eq!(delay_distribution(&EventLog::new()), Err(MetricsError::NoConfirmations));
    }
}
