mod common;

use common::{cosine, delta_rows, gaussian_rows};
use nait_core::extract::profile_from_deltas;
use nait_core::synth::{generate_planted, oracle_pca, PlantedConfig};
use nait_core::{
    aggregate_profiles, calibrate_sign, compute_deltas, extract_direction, extract_direction_with, extract_profile,
    score_all, ActivationMode, AggregateInputs, AggregateMode, DetRng, ExtractionConfig, NaitError, Profile,
    SolverRoute,
};

#[test]
fn matches_jacobi_oracle_on_seeded_instances() {
    let mut routes = [0usize; 2];
    for seed in 0..100u64 {
        let mut rng = DetRng::new(1000 + seed);
        let n = 3 + rng.below(62) as usize;
        let j = 2 + rng.below(31) as usize;
        let rows = gaussian_rows(&mut rng, n, j);
        let got = extract_direction(&rows).unwrap();
        let want = oracle_pca(&rows).unwrap();
        let c = cosine(&got.vector, &want.vector).abs();
        assert!(c >= 1.0 - 1e-9, "seed {seed} n={n} j={j}: |cos| = {c}");
        let rel = (got.leading_eigenvalue - want.spectrum[0]).abs() / want.spectrum[0];
        assert!(rel < 1e-9, "seed {seed}: eigenvalue {} vs {}", got.leading_eigenvalue, want.spectrum[0]);
        match got.route {
            SolverRoute::Covariance => routes[0] += 1,
            SolverRoute::Gram => routes[1] += 1,
            SolverRoute::PowerIteration => unreachable!(),
        }
    }
    assert!(routes[0] > 0 && routes[1] > 0, "both dense routes exercised: {routes:?}");
}

#[test]
fn float32_extraction_tracks_the_oracle() {
    for seed in 0..20u64 {
        let mut rng = DetRng::new(7 + seed);
        let rows = gaussian_rows(&mut rng, 40, 8);
        let rows32: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().map(|&x| x as f32).collect()).collect();
        let got = extract_direction(&rows32).unwrap();
        let want = oracle_pca(&rows).unwrap();
        let v: Vec<f64> = got.vector.iter().map(|&x| x as f64).collect();
        assert!(cosine(&v, &want.vector).abs() > 1.0 - 1e-4, "seed {seed}");
    }
}

#[test]
fn power_iteration_agrees_with_dense_routes() {
    let cfg = ExtractionConfig {
        dense_limit: 1,
        ..Default::default()
    };
    for seed in 0..10u64 {
        let mut rng = DetRng::new(300 + seed);
        let rows = gaussian_rows(&mut rng, 30, 12);
        let dense = extract_direction(&rows).unwrap();
        let power = extract_direction_with(&rows, &cfg).unwrap();
        assert_eq!(power.route, SolverRoute::PowerIteration);
        assert!(cosine(&dense.vector, &power.vector) > 1.0 - 1e-9, "seed {seed}");
    }
}

#[test]
fn pre_calibration_sign_is_canonical() {
    let mut rng = DetRng::new(5);
    for _ in 0..20 {
        let rows = gaussian_rows(&mut rng, 10, 5);
        let v = extract_direction(&rows).unwrap().vector;
        let first = v.iter().find(|x| x.abs() > 1e-12).unwrap();
        assert!(*first > 0.0);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}

#[test]
fn calibration_holds_across_seeded_extractions() {
    for seed in 0..30u64 {
        let set = common::random_trace_set(seed, 12, &[6, 3, 9]);
        let p: Profile = extract_profile(&set, "x").unwrap();
        p.check_invariants(1e-12).unwrap();
        for (v, mu) in p.directions.iter().zip(&p.mu_diff) {
            assert!(v.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>() >= 0.0);
        }
    }
}

#[test]
fn calibrate_sign_cases() {
    assert_eq!(calibrate_sign(vec![1.0, 0.0], &[-2.0, 0.0]), vec![-1.0, 0.0]);
    assert_eq!(calibrate_sign(vec![1.0, 0.0], &[3.0, 1.0]), vec![1.0, 0.0]);
    assert_eq!(calibrate_sign(vec![0.0, 1.0], &[5.0, 0.0]), vec![0.0, 1.0]);
}

fn scaled_profile(set: &nait_core::TraceSet, alpha: f64) -> Profile {
    let mut deltas = compute_deltas::<f64>(set).unwrap();
    for layer in &mut deltas.deltas {
        for row in layer {
            row.iter_mut().for_each(|x| *x *= alpha);
        }
    }
    profile_from_deltas(&deltas, "x", &ExtractionConfig::default()).unwrap()
}

#[test]
fn positive_scaling_leaves_directions_unchanged() {
    for seed in 0..10u64 {
        let set = common::random_trace_set(40 + seed, 15, &[5, 7]);
        let base = scaled_profile(&set, 1.0);
        for alpha in [0.001, 0.5, 3.0, 1e4] {
            let p = scaled_profile(&set, alpha);
            for (a, b) in base.directions.iter().zip(&p.directions) {
                assert!(cosine(a, b) >= 1.0 - 1e-9, "seed {seed} alpha {alpha}");
            }
        }
    }
}

/// Negating the data keeps the principal axis, reverses the mean change and
/// therefore reverses the calibrated direction.
#[test]
fn negating_deltas_reverses_calibrated_direction() {
    for seed in 0..10u64 {
        let set = common::random_trace_set(60 + seed, 15, &[5, 7]);
        let base = scaled_profile(&set, 1.0);
        let neg = scaled_profile(&set, -1.0);
        for (l, (a, b)) in base.directions.iter().zip(&neg.directions).enumerate() {
            let c = cosine(a, b);
            let mu_dot: f64 = a.iter().zip(&base.mu_diff[l]).map(|(x, y)| x * y).sum();
            if mu_dot > 0.0 {
                assert!(c <= -1.0 + 1e-9, "seed {seed} layer {l}: cos {c}");
            }
            assert!(c.abs() >= 1.0 - 1e-9);
        }
        for l in 0..2 {
            let pre = extract_direction(&delta_rows(&set, l)).unwrap().vector;
            let neg_rows: Vec<Vec<f64>> = delta_rows(&set, l)
                .into_iter()
                .map(|r| r.into_iter().map(|x| -x).collect())
                .collect();
            let pre_neg = extract_direction(&neg_rows).unwrap().vector;
            assert!(cosine(&pre, &pre_neg) >= 1.0 - 1e-9);
        }
    }
}

#[test]
fn sample_order_and_duplication_do_not_move_directions() {
    for seed in 0..10u64 {
        let set = common::random_trace_set(80 + seed, 20, &[6, 4]);
        let base: Profile = extract_profile(&set, "x").unwrap();

        let mut reversed = set.clone();
        reversed.traces.reverse();
        let p: Profile = extract_profile(&reversed, "x").unwrap();
        for (a, b) in base.directions.iter().zip(&p.directions) {
            assert!(cosine(a, b) >= 1.0 - 1e-9);
        }

        let mut doubled = set.clone();
        for t in &set.traces {
            let mut d = t.clone();
            d.sample_id.push_str("-dup");
            doubled.traces.push(d);
        }
        let p: Profile = extract_profile(&doubled, "x").unwrap();
        for (a, b) in base.directions.iter().zip(&p.directions) {
            assert!(cosine(a, b) >= 1.0 - 1e-9);
        }
        for (a, b) in base.mu_diff.iter().zip(&p.mu_diff) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn degenerate_inputs_are_rejected() {
    let one = common::random_trace_set(1, 1, &[3]);
    assert!(matches!(extract_profile::<f64>(&one, "x"), Err(NaitError::DegenerateData { .. })));

    let mut same = common::random_trace_set(2, 4, &[3, 2]);
    let first = same.traces[0].layers[1].clone();
    for t in &mut same.traces {
        t.layers[1].first = first.first.clone();
        t.layers[1].last = first.last.clone();
    }
    match extract_profile::<f64>(&same, "x") {
        Err(NaitError::DegenerateData { layer, .. }) => assert_eq!(layer, Some(1)),
        other => panic!("expected degenerate layer 1, got {other:?}"),
    }
}

#[test]
fn noiseless_planted_data_is_recovered_exactly() {
    let cfg = PlantedConfig {
        layers: 3,
        width: 16,
        n_in_domain: 32,
        n_candidates: 64,
        noise_sigma: 0.0,
        seed: 4,
        ..Default::default()
    };
    let data = generate_planted(&cfg).unwrap();
    let profile: Profile = extract_profile(&data.in_domain, "planted").unwrap();
    for (v, t) in profile.directions.iter().zip(&data.truth.directions) {
        assert!(cosine(v, t).abs() >= 1.0 - 1e-6);
    }
    let scores = score_all(&data.candidates, &profile, ActivationMode::Mean).unwrap();
    let mut by_utility = data.truth.candidate_utilities.clone();
    by_utility.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let ranked: Vec<&str> = scores.records.iter().map(|r| r.sample_id.as_str()).collect();
    let expected: Vec<&str> = by_utility.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(ranked, expected);
}

#[test]
fn recovery_does_not_degrade_as_noise_shrinks() {
    for seed in [3u64, 11, 29] {
        let mut last = vec![f64::NEG_INFINITY; 4];
        for sigma in [0.2, 0.1, 0.05, 0.01] {
            let cfg = PlantedConfig {
                layers: 4,
                width: 32,
                n_in_domain: 128,
                n_candidates: 8,
                noise_sigma: sigma,
                seed,
                ..Default::default()
            };
            let data = generate_planted(&cfg).unwrap();
            let p: Profile = extract_profile(&data.in_domain, "x").unwrap();
            for (l, (v, t)) in p.directions.iter().zip(&data.truth.directions).enumerate() {
                let c = cosine(v, t);
                assert!(c >= last[l], "seed {seed} sigma {sigma} layer {l}: {c} < {}", last[l]);
                last[l] = c;
            }
        }
    }
}

fn residual_outside_span(v: &[f64], a: &[f64], b: &[f64]) -> f64 {
    // Gram-Schmidt on {a, b}, then the norm of v's component orthogonal to both.
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let na = dot(a, a).sqrt();
    let e1: Vec<f64> = a.iter().map(|x| x / na).collect();
    let proj = dot(b, &e1);
    let w: Vec<f64> = b.iter().zip(&e1).map(|(x, e)| x - proj * e).collect();
    let nw = dot(&w, &w).sqrt();
    let e2: Vec<f64> = w.iter().map(|x| x / nw).collect();
    let (c1, c2) = (dot(v, &e1), dot(v, &e2));
    let r: Vec<f64> = v.iter().enumerate().map(|(i, x)| x - c1 * e1[i] - c2 * e2[i]).collect();
    dot(&r, &r).sqrt() / dot(v, v).sqrt()
}

#[test]
fn aggregated_directions_lie_in_the_span_of_the_parts() {
    let make = |seed| {
        generate_planted(&PlantedConfig {
            layers: 2,
            width: 24,
            n_in_domain: 128,
            n_candidates: 4,
            noise_sigma: 0.05,
            seed,
            ..Default::default()
        })
        .unwrap()
    };
    let (a, b) = (make(100), make(200));
    let sets = [a.in_domain.clone(), b.in_domain.clone()];
    let mut b_set = sets[1].clone();
    for t in &mut b_set.traces {
        t.sample_id = t.sample_id.replace("in-", "in-b-");
    }
    let sets = [sets[0].clone(), b_set];
    let cfg = ExtractionConfig::default();
    for mode in [AggregateMode::Pooled, AggregateMode::MeanDirection] {
        let p: Profile = aggregate_profiles(AggregateInputs::Traces(&sets), mode, "a+b", &cfg).unwrap();
        p.check_invariants(1e-9).unwrap();
        for l in 0..2 {
            let r = residual_outside_span(&p.directions[l], &a.truth.directions[l], &b.truth.directions[l]);
            assert!(r <= 0.05, "{mode:?} layer {l}: residual {r}");
        }
    }
}

#[test]
fn mean_direction_of_profiles_matches_traces_route() {
    let s1 = common::random_trace_set(500, 10, &[4, 4]);
    let s2 = common::random_trace_set(501, 14, &[4, 4]);
    let cfg = ExtractionConfig::default();
    let p1: Profile = extract_profile(&s1, &s1.source_label).unwrap();
    let p2: Profile = extract_profile(&s2, &s2.source_label).unwrap();
    let from_profiles: Profile = aggregate_profiles(
        AggregateInputs::Profiles(&[p1, p2]),
        AggregateMode::MeanDirection,
        "m",
        &cfg,
    )
    .unwrap();
    let from_traces: Profile =
        aggregate_profiles(AggregateInputs::Traces(&[s1, s2]), AggregateMode::MeanDirection, "m", &cfg).unwrap();
    assert_eq!(from_profiles, from_traces);
    assert_eq!(from_profiles.n_samples, 24);
}
