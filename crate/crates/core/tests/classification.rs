use falter_core::classify::{
    agreement, fit_gmm2, fit_gmm2_values, mm_classify, threshold_classify, Label, MixtureOptions,
};
use falter_core::velocity::{Metric, VelocityTable};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn table(values: &[f64]) -> VelocityTable {
    let mut t = VelocityTable::new(Metric::Mrs);
    for (i, v) in values.iter().enumerate() {
        t.entries.insert(format!("c{i:03}"), *v);
    }
    t
}

fn cohort(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..300)
        .map(|i| {
            let e: f64 = rng.sample(StandardNormal);
            if i % 5 == 0 {
                -7.0 + 1.2 * e
            } else {
                -1.0 + 0.8 * e
            }
        })
        .collect()
}

#[test]
fn labels_survive_positive_affine_maps() {
    let opts = MixtureOptions::default();
    for seed in 0..5 {
        let v = cohort(seed);
        let base = table(&v);
        let th = threshold_classify(&base, 0.2).unwrap();
        let mm = mm_classify(&fit_gmm2(&base, seed, &opts).unwrap(), 0.5);
        for (a, b) in [(2.0, 3.0), (0.1, -40.0), (13.0, 0.5)] {
            let moved = table(&v.iter().map(|x| a * x + b).collect::<Vec<_>>());
            assert_eq!(threshold_classify(&moved, 0.2).unwrap().labels, th.labels);
            let mm2 = mm_classify(&fit_gmm2(&moved, seed, &opts).unwrap(), 0.5);
            assert_eq!(mm2.labels, mm.labels, "seed {seed}, a={a}, b={b}");
        }
    }
}

#[test]
fn posteriors_and_extremes() {
    let v = cohort(9);
    let fit = fit_gmm2(&table(&v), 1, &MixtureOptions::default()).unwrap();
    let g = &fit.params;
    assert!(g.means[0] < g.means[1]);
    assert!((g.weights[0] + g.weights[1] - 1.0).abs() < 1e-12);
    assert!(g.sds.iter().all(|s| *s > 0.0));
    assert!(g.monotone);
    for x in &v {
        let (p1, p2) = g.posteriors(*x);
        assert!((p1 + p2 - 1.0).abs() < 1e-12);
    }
    assert!(g.posteriors(g.means[0] - 50.0).0 > 0.999);
    assert!(g.posteriors(g.means[1] + 3.0 * g.sds[1]).1 > 0.99);

    let labels = mm_classify(&fit, 0.5);
    for (id, p) in &fit.posteriors {
        let expected = if *p >= 1.0 - p { Label::Faltering } else { Label::NonFaltering };
        assert_eq!(labels.labels[id], expected);
    }
    assert_eq!(mm_classify(&fit, 0.0).n_faltering(), v.len());
}

#[test]
fn em_is_monotone_across_seeds() {
    for seed in 0..30 {
        let v = cohort(100 + seed);
        let g = fit_gmm2_values(&v, seed, &MixtureOptions::default()).unwrap();
        assert!(g.monotone, "seed {seed}");
    }
}

#[test]
fn self_agreement() {
    let t = table(&cohort(4));
    let th = threshold_classify(&t, 0.1).unwrap();
    let s = agreement(&th, &th).unwrap();
    assert_eq!(s.kappa, Some(1.0));
    assert_eq!(s.percent_discordance, 0.0);
    assert!(s.significant);
}
