//! Information-gain identities on randomly generated count stores.
//!
//! The central self-check: the entropy-difference form and the
//! KL-divergence form of the gain agree on every store, and the gain is
//! bounded by [0, H(C)].

use osfp_core::infogain::{entropy, estimate_prior, information_gain, posterior, PosteriorMode};
use osfp_core::{CategoryLabel, CountStore, Fingerprint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random store with up to `max_labels` categories and `max_fps`
/// fingerprints; every fingerprint gets 1..=4 category rows.
fn random_store(rng: &mut ChaCha8Rng, max_labels: usize, max_fps: usize) -> CountStore {
    let n_labels = rng.gen_range(2..=max_labels);
    let n_fps = rng.gen_range(1..=max_fps);
    let labels: Vec<CategoryLabel> = (0..n_labels)
        .map(|i| CategoryLabel::from(format!("os-{i:02}")))
        .collect();
    let mut store = CountStore::new();
    for f in 0..n_fps {
        let fp = Fingerprint::http(format!("ua-{f:03}"));
        let rows = rng.gen_range(1..=4.min(n_labels));
        for _ in 0..rows {
            let label = &labels[rng.gen_range(0..n_labels)];
            store.observe(&fp, label, rng.gen_range(1..200));
        }
    }
    store
}

/// Independent evaluation of the probability-weighted KL route.
fn kl_route(store: &CountStore) -> f64 {
    let n = store.total() as f64;
    let mut total = 0.0;
    for (key, row) in store.rows() {
        let count_f = store.fp_count(key) as f64;
        let p_f = count_f / n;
        let mut d_kl = 0.0;
        for (label, &joint) in row {
            if joint == 0 {
                continue;
            }
            let p_cf = joint as f64 / count_f;
            let p_c = store.label_count(label) as f64 / n;
            d_kl += p_cf * (p_cf / p_c).log2();
        }
        total += p_f * d_kl;
    }
    total
}

#[test]
fn gain_routes_agree_on_random_stores() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1dea);
    for case in 0..300 {
        let store = random_store(&mut rng, 20, 200);
        let report = information_gain(&store).unwrap();
        let kl = kl_route(&store);
        assert!(
            (report.gain - kl).abs() < 1e-9,
            "case {case}: entropy route {} vs kl route {}",
            report.gain,
            kl
        );
        let h_prior = entropy(&estimate_prior(&store).unwrap());
        assert!(report.gain >= -1e-9, "case {case}: negative gain");
        assert!(
            report.gain <= h_prior + 1e-9,
            "case {case}: gain above H(C)"
        );

        let normalized_sum: f64 = report.per_fingerprint.iter().map(|e| e.normalized).sum();
        assert!((normalized_sum - report.gain).abs() < 1e-9, "case {case}");
    }
}

#[test]
fn doubling_a_store_changes_no_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let store = random_store(&mut rng, 10, 50);
        let mut doubled = store.clone();
        doubled.merge(&store);
        let a = information_gain(&store).unwrap();
        let b = information_gain(&doubled).unwrap();
        assert!((a.h_prior - b.h_prior).abs() < 1e-12);
        assert!((a.h_posterior - b.h_posterior).abs() < 1e-12);
        assert!((a.gain - b.gain).abs() < 1e-12);
    }
}

#[test]
fn observation_order_never_matters() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let observations: Vec<(String, CategoryLabel, u64)> = (0..60)
        .map(|_| {
            (
                format!("ua-{}", rng.gen_range(0..12)),
                CategoryLabel::from(format!("os-{}", rng.gen_range(0..5))),
                rng.gen_range(1..8),
            )
        })
        .collect();
    let build = |order: &[usize]| {
        let mut store = CountStore::new();
        for &i in order {
            let (ua, label, w) = &observations[i];
            store.observe(&Fingerprint::http(ua.clone()), label, *w);
        }
        store
    };
    let forward: Vec<usize> = (0..observations.len()).collect();
    let mut shuffled = forward.clone();
    // Deterministic Fisher-Yates.
    for i in (1..shuffled.len()).rev() {
        shuffled.swap(i, rng.gen_range(0..=i));
    }
    assert_eq!(build(&forward), build(&shuffled));
}

#[test]
fn removing_an_uninformative_fingerprint_keeps_gain() {
    // "f" occurs with exactly the prior's proportions (2:1), so dropping it
    // cannot decrease the gain.
    let mut with = CountStore::new();
    with.observe(&Fingerprint::http("a"), &"Win".into(), 4);
    with.observe(&Fingerprint::http("b"), &"OSX".into(), 2);
    with.observe(&Fingerprint::http("f"), &"Win".into(), 2);
    with.observe(&Fingerprint::http("f"), &"OSX".into(), 1);

    let mut without = CountStore::new();
    without.observe(&Fingerprint::http("a"), &"Win".into(), 4);
    without.observe(&Fingerprint::http("b"), &"OSX".into(), 2);

    let g_with = information_gain(&with).unwrap().gain;
    let g_without = information_gain(&without).unwrap().gain;
    assert!(g_without >= g_with - 1e-12);
}

#[test]
fn renormalized_mode_rows_follow_the_prior_over_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..30 {
        let store = random_store(&mut rng, 8, 30);
        let prior = estimate_prior(&store).unwrap();
        let table = posterior(&store, PosteriorMode::PriorRenormalized).unwrap();
        for (key, row) in &table.rows {
            let support_mass: f64 = store
                .assignment_key(key)
                .iter()
                .map(|l| prior.probs[*l])
                .sum();
            for (label, p) in &row.probs {
                assert!((p - prior.probs[label] / support_mass).abs() < 1e-12);
            }
            let row_sum: f64 = row.probs.values().sum();
            assert!((row_sum - 1.0).abs() < 1e-9);
        }
    }
}
