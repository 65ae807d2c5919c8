use evcharge::facility::AllocPoint;
use evcharge::metrics::{bin_power, ks_distance, quantile_sorted, ttr, utilization, Ecdf, FiveNumber};
use evcharge::protocol::{ColumnActivity, EvTrace, StateChange};
use evcharge::scenario::EvId;
use evcharge::signals::PowerEpisode;
use proptest::prelude::*;

/// Disjoint charging episodes from (gap, duration, watts) triples.
fn episodes(parts: &[(f64, f64, f64)]) -> Vec<PowerEpisode> {
    let mut t = 100.0;
    parts
        .iter()
        .map(|&(gap, len, watts)| {
            let start = t + gap;
            t = start + len;
            PowerEpisode { start_s: start, end_s: t, watts }
        })
        .collect()
}

fn trace_of(eps: Vec<PowerEpisode>) -> EvTrace {
    let mut tr = EvTrace::new(EvId(0), 100.0, 1e12);
    tr.energy_delivered_ws = eps.iter().map(|e| e.energy_ws()).sum();
    tr.episodes = eps;
    tr
}

fn episode_strategy() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((0.0..500.0f64, 1.0..2000.0f64, 1000.0..50_000.0f64), 1..6)
}

proptest! {
    #[test]
    fn ttr_is_monotone_in_reference_energy(parts in episode_strategy(), a in 0.05..1.0f64, b in 0.05..1.0f64) {
        let tr = trace_of(episodes(&parts));
        let total = tr.energy_delivered_ws;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let t_lo = ttr(&tr, lo * total).unwrap();
        let t_hi = ttr(&tr, hi * total).unwrap();
        prop_assert!(t_lo <= t_hi + 1e-9);
        prop_assert!(ttr(&tr, total * 1.01).is_none());
    }

    #[test]
    fn ttr_crossing_delivers_exactly_the_reference(parts in episode_strategy(), frac in 0.05..1.0f64) {
        let tr = trace_of(episodes(&parts));
        let e_star = frac * tr.energy_delivered_ws;
        let t = tr.t_arr + ttr(&tr, e_star).unwrap();
        let delivered: f64 = tr.episodes.iter().map(|e| e.watts * (t.min(e.end_s) - e.start_s).max(0.0)).sum();
        prop_assert!((delivered - e_star).abs() <= 1e-6 * e_star);
    }

    #[test]
    fn binned_mean_conserves_energy(steps in prop::collection::vec((1.0..3000.0f64, 0.0..1e6f64), 1..30), width in 60.0..2000.0f64) {
        let mut t = 0.0;
        let trace: Vec<AllocPoint> = steps.iter().map(|&(dt, w)| { t += dt; AllocPoint { time_s: t, alloc_watts: w } }).collect();
        let horizon = t + 1000.0;
        let exact: f64 = trace.iter().enumerate().map(|(k, p)| {
            let end = trace.get(k + 1).map_or(horizon, |n| n.time_s);
            p.alloc_watts * (end - p.time_s)
        }).sum();
        let bins = bin_power(&trace, width, horizon);
        let binned: f64 = bins.iter().map(|b| b.mean_w * ((b.start_s + width).min(horizon) - b.start_s)).sum();
        prop_assert!((binned - exact).abs() <= 1e-6 * exact.max(1.0));
        for b in &bins {
            prop_assert!(b.mean_w <= b.max_w + 1e-6);
        }
    }

    #[test]
    fn utilization_shares_sum_to_one(changes in prop::collection::vec((0.0..2000.0f64, 0u8..3), 0..40)) {
        let mut t = 0.0;
        let log: Vec<StateChange> = changes.iter().map(|&(dt, a)| {
            t += dt;
            let activity = [ColumnActivity::Idle, ColumnActivity::Handshake, ColumnActivity::Charging][a as usize];
            StateChange { time_s: t, activity, ev: None }
        }).collect();
        let horizon = 86_400.0;
        let u = utilization(&log, horizon).unwrap();
        prop_assert!((u.charge + u.handshake + u.idle - 1.0).abs() < 1e-12);
        for share in [u.charge, u.handshake, u.idle] {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&share));
        }
    }

    #[test]
    fn ks_is_a_bounded_symmetric_distance(a in prop::collection::vec(0.0..1e4f64, 1..60), b in prop::collection::vec(0.0..1e4f64, 1..60)) {
        let (ea, eb) = (Ecdf::new(&a).unwrap(), Ecdf::new(&b).unwrap());
        let d = ks_distance(&ea, &eb);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_distance(&eb, &ea));
        prop_assert_eq!(ks_distance(&ea, &ea), 0.0);
    }

    #[test]
    fn five_number_is_ordered(v in prop::collection::vec(-1e6..1e6f64, 1..80)) {
        let s = FiveNumber::of(&v).unwrap();
        prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
    }
}

#[test]
fn type7_quantiles_match_hand_values() {
    let v = [1.0, 2.0, 3.0, 4.0, 10.0];
    assert_eq!(quantile_sorted(&v, 0.25), 2.0);
    assert!((quantile_sorted(&v, 0.9) - 7.6).abs() < 1e-12);
    assert_eq!(quantile_sorted(&[5.0], 0.3), 5.0);
}
