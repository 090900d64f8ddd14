use proptest::prelude::*;
use stwg::augment::{self, TrailingPolicy};
use stwg::em::{self, EmConfig};
use stwg::hawkes::{self, HawkesModel};
use stwg::metrics;
use stwg::{Event, EventSequence};

/// Direct double sum over event pairs plus the closed-form compensator.
fn log_likelihood_oracle(model: &HawkesModel<f64>, seq: &EventSequence) -> f64 {
    let (a, w, horizon) = (model.excitation(), model.w(), seq.horizon());
    let ev = seq.events();
    let mut ll = 0.0;
    for (i, e) in ev.iter().enumerate() {
        let mut lambda = model.mu()[e.node];
        for f in &ev[..i] {
            if f.time < e.time {
                lambda += a.get(e.node, f.node) * w * (-w * (e.time - f.time)).exp();
            }
        }
        ll += lambda.ln();
    }
    ll -= model.mu().iter().sum::<f64>() * horizon;
    for f in ev {
        let col: f64 = (0..model.num_nodes()).map(|u| a.get(u, f.node)).sum();
        ll -= col * (1.0 - (-w * (horizon - f.time)).exp());
    }
    ll
}

fn model_strategy(n: usize) -> impl Strategy<Value = HawkesModel<f64>> {
    (
        prop::collection::vec(0.05f64..1.0, n),
        prop::collection::vec(0.0f64..0.3, n * n),
        0.2f64..3.0,
    )
        .prop_map(move |(mu, a, w)| {
            let rows: Vec<Vec<f64>> = a.chunks(n).map(<[f64]>::to_vec).collect();
            HawkesModel::from_rows(mu, &rows, w).unwrap()
        })
}

fn sequence_strategy(n: usize, horizon: f64) -> impl Strategy<Value = EventSequence> {
    prop::collection::vec((0.0..horizon, 0..n), 0..40).prop_map(move |raw| {
        let events = raw.into_iter().map(|(t, u)| Event::new(t, u)).collect();
        EventSequence::new(events, horizon, n).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_likelihood_matches_pairwise_sum(model in model_strategy(3), seq in sequence_strategy(3, 20.0)) {
        let fast = hawkes::log_likelihood(&model, std::slice::from_ref(&seq)).unwrap();
        let slow = log_likelihood_oracle(&model, &seq);
        prop_assert!((fast - slow).abs() <= 1e-9 * (1.0 + slow.abs()), "{fast} vs {slow}");
    }

    #[test]
    fn intensity_is_at_least_the_background(model in model_strategy(2), seq in sequence_strategy(2, 10.0), t in 0.0f64..10.0) {
        for u in 0..2 {
            prop_assert!(hawkes::intensity(&model, &seq, u, t).unwrap() >= model.mu()[u]);
        }
    }

    #[test]
    fn single_precision_tracks_double(model in model_strategy(2), seq in sequence_strategy(2, 10.0)) {
        let m32: HawkesModel<f32> = HawkesModel::from_rows(
            model.mu().iter().map(|&m| m as f32).collect(),
            &(0..2).map(|u| (0..2).map(|v| model.excitation().get(u, v) as f32).collect::<Vec<_>>()).collect::<Vec<_>>(),
            model.w() as f32,
        )
        .unwrap();
        let l64 = hawkes::log_likelihood(&model, std::slice::from_ref(&seq)).unwrap();
        let l32 = hawkes::log_likelihood(&m32, std::slice::from_ref(&seq)).unwrap() as f64;
        prop_assert!((l64 - l32).abs() <= 1e-4 * (1.0 + l64.abs()));
    }

    #[test]
    fn unpenalized_em_never_decreases_the_likelihood(truth in model_strategy(2), seed in 0u64..1000) {
        // entries at most 0.3 keep every column sum below one
        let seq = hawkes::simulate(&truth, 60.0, seed).unwrap();
        let cfg = EmConfig { l1_lambda: 0.0, max_iters: 30, tol: 0.0, ..EmConfig::default() };
        let fit = em::fit(std::slice::from_ref(&seq), truth.w(), &cfg, None).unwrap();
        for pair in fit.history.windows(2) {
            let (prev, next) = (pair[0].log_likelihood, pair[1].log_likelihood);
            prop_assert!(next >= prev - 1e-9 * (1.0 + prev.abs()), "{prev} -> {next}");
        }
    }

    #[test]
    fn augmentation_round_trips(counts in prop::collection::vec(0u32..20, 1..6 * 8), period in 2usize..8) {
        let days = counts.len() / period;
        prop_assume!(days > 0);
        let raw: Vec<f64> = counts[..days * period].iter().map(|&c| c as f64).collect();
        let cdf = augment::cumulate_slice(&raw, period).unwrap();
        let sr = augment::super_resolve_slice(&cdf, period).unwrap();
        prop_assert_eq!(sr.len(), days * augment::super_resolved_period(period));
        prop_assert_eq!(&augment::downsample_slice(&sr, period).unwrap(), &cdf);
        prop_assert_eq!(&augment::decumulate_slice(&cdf, period).unwrap(), &raw);
        for day in cdf.chunks(period) {
            prop_assert!(day.windows(2).all(|p| p[0] <= p[1]));
        }
    }

    #[test]
    fn changing_one_day_touches_only_that_day(
        counts in prop::collection::vec(0u32..20, 4 * 6),
        day in 0usize..4,
        slot in 0usize..6,
        bump in 1u32..5,
    ) {
        let period = 6;
        let sr_period = augment::super_resolved_period(period);
        let raw: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let mut changed = raw.clone();
        changed[day * period + slot] += bump as f64;
        let to_sr = |x: &[f64]| augment::super_resolve_slice(&augment::cumulate_slice(x, period).unwrap(), period).unwrap();
        let (a, b) = (to_sr(&raw), to_sr(&changed));
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            if i / sr_period != day {
                prop_assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn zero_pad_and_drop_agree_on_whole_days(counts in prop::collection::vec(0u32..9, 0..30)) {
        let raw: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let dropped = augment::complete_days(&raw, 5, TrailingPolicy::Drop).unwrap();
        let padded = augment::complete_days(&raw, 5, TrailingPolicy::ZeroPad).unwrap();
        prop_assert_eq!(dropped.len() % 5, 0);
        prop_assert_eq!(padded.len() % 5, 0);
        prop_assert_eq!(&padded[..dropped.len()], &dropped[..]);
        prop_assert!(padded[raw.len()..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn spectrum_preserves_energy(xs in prop::collection::vec(-10.0f64..10.0, 2..64)) {
        let s = metrics::spectrum(&xs, 1.0).unwrap();
        let energy: f64 = xs.iter().map(|x| x * x).sum();
        let total = s.dc + s.power.iter().sum::<f64>();
        prop_assert!((total - energy).abs() <= 1e-9 * (1.0 + energy));
    }

    #[test]
    fn rmse_matches_definition(pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..50)) {
        let (a, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let direct = (pairs.iter().map(|(x, y)| (x - y).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt();
        prop_assert!((metrics::rmse(&a, &p).unwrap() - direct).abs() <= 1e-12 * (1.0 + direct));
    }
}

#[test]
fn spectrum_peaks_at_the_daily_cycle() {
    let xs: Vec<f64> = (0..24 * 30)
        .map(|t| 5.0 + 3.0 * (2.0 * std::f64::consts::PI * t as f64 / 24.0).sin())
        .collect();
    let s = metrics::spectrum(&xs, 1.0).unwrap();
    assert!((s.peak_frequency().unwrap() - 1.0 / 24.0).abs() < 1e-12);
}
