mod common;

use common::drive;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tanglefl::config::SpanMode;
use tanglefl::metrics::{compute_tps, delay_distribution, quantile, quantiles, variability};
use tanglefl::sim::{Event, EventKind, EventLog};

/// Event log of a ledger run: one submit and one confirm per anchor.
fn log_of(submit_s: &[f64], interval_s: f64, phase_s: f64, latency_s: f64) -> EventLog {
    let (rows, _) = drive(submit_s, interval_s, phase_s, latency_s, 9);
    let mut events = Vec::new();
    for (id, submitted, confirmed) in rows {
        events.push(Event::new(submitted, "adapter", EventKind::Submit).digest(id));
        events.push(Event::new(confirmed, "coordinator", EventKind::Confirm).digest(id).with("submitted_us", submitted.as_micros()));
    }
    events.sort_by_key(|e| e.t_us);
    let mut log = EventLog::new();
    for e in events {
        log.push(e);
    }
    log
}

#[test]
fn uniform_arrivals_have_half_interval_median() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let submits: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..10.0)).collect();
    let d = delay_distribution(&log_of(&submits, 10.0, 10.0, 0.0)).unwrap();
    assert_eq!(d.samples_s.len(), 500);
    assert!((d.quantiles.p50 - 5.0).abs() <= 0.5, "median {}", d.quantiles.p50);
    assert!(d.quantiles.max <= 10.0);
}

#[test]
fn submission_just_before_a_milestone_waits_for_the_next() {
    // Reaches the coordinator 0.1 s after the 10 s milestone.
    let d = delay_distribution(&log_of(&[9.9], 10.0, 10.0, 0.2)).unwrap();
    let delay = d.samples_s[0];
    assert!(delay > 10.0 && delay <= 20.0, "delay {delay}");
}

#[test]
fn tps_is_confirmations_over_submission_span() {
    let log = log_of(&[1.0, 2.0, 3.0, 4.5], 5.0, 5.0, 0.0);
    // Four confirmations at 5 s, first submission at 1 s.
    assert!((compute_tps(&log, SpanMode::Submissions).unwrap() - 1.0).abs() < 1e-12);
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

proptest! {
    #[test]
    fn single_transaction_confirms_within_one_interval(t in 0.0f64..100.0, interval in 0.5f64..30.0, phase in 0.0f64..1.0) {
        let d = delay_distribution(&log_of(&[t], interval, phase * interval, 0.0)).unwrap();
        prop_assert!(d.samples_s[0] > 0.0);
        prop_assert!(d.samples_s[0] <= interval + 1e-6);
    }

    #[test]
    fn variability_matches_sum_of_squares_form(samples in prop::collection::vec(0.1f64..100.0, 2..40)) {
        let v = variability(&samples).unwrap();
        // Independent form: sqrt((sum x^2 - n mean^2) / (n - 1)).
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let ss = samples.iter().map(|x| x * x).sum::<f64>() - n * mean * mean;
        let std = (ss.max(0.0) / (n - 1.0)).sqrt();
        prop_assert!((v.mean - mean).abs() <= 1e-9 * mean);
        prop_assert!((v.std - std).abs() <= 1e-6 * mean, "{} vs {}", v.std, std);
        prop_assert!((v.pct - 100.0 * v.std / v.mean).abs() <= 1e-9);
    }

    #[test]
    fn quantiles_are_ordered_and_bounded(samples in prop::collection::vec(-1e3f64..1e3, 1..80)) {
        let q = quantiles(&samples).unwrap();
        let s = sorted(&samples);
        prop_assert!(s[0] <= q.p25 && q.p25 <= q.p50 && q.p50 <= q.p75 && q.p75 <= q.max);
        prop_assert_eq!(q.max, s[s.len() - 1]);
    }

    #[test]
    fn quantiles_ignore_input_order(samples in prop::collection::vec(-1e3f64..1e3, 1..80), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = samples.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(quantiles(&samples), quantiles(&shuffled));
    }

    #[test]
    fn median_of_odd_sample_is_the_middle_element(samples in prop::collection::vec(-1e3f64..1e3, 0..40)) {
        let mut odd = samples;
        odd.push(0.0);
        if odd.len() % 2 == 0 {
            odd.push(1.0);
        }
        let s = sorted(&odd);
        prop_assert_eq!(quantile(&s, 0.5), s[s.len() / 2]);
    }
}
