use falter_core::data::{AnalysisWindow, ChildSeries, GrowthDataset, Measurement};
use falter_core::mixed::{reml_deviance, Estimator, FitOptions, MixedModel, ModelSpec};
use falter_core::optim::NelderMeadOptions;
use falter_core::simulation::{generate_population, Design, ScenarioConfig};
use falter_core::spline::KnotVector;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dataset(rows: &[(&str, f64, f64)]) -> GrowthDataset {
    let mut by_child: std::collections::BTreeMap<&str, Vec<Measurement>> = Default::default();
    for &(id, t, z) in rows {
        by_child.entry(id).or_default().push(Measurement::new(t, z).unwrap());
    }
    let children = by_child.into_iter().map(|(id, ms)| ChildSeries::new(id, ms).unwrap()).collect();
    GrowthDataset::new(children, AnalysisWindow::first_year(), f64::INFINITY).unwrap()
}

fn random_dataset(rng: &mut ChaCha8Rng, children: usize, max_obs: usize) -> GrowthDataset {
    let mut rows = Vec::new();
    let ids: Vec<String> = (0..children).map(|i| format!("k{i}")).collect();
    for id in &ids {
        let slope = rng.random_range(-2.0..0.0);
        let level = rng.random_range(-1.0..1.0);
        let n = rng.random_range(2..=max_obs);
        let mut ages: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        ages.sort_by(f64::total_cmp);
        ages.dedup();
        for t in ages {
            rows.push((id.as_str(), t, level + slope * t + rng.random_range(-0.4..0.4)));
        }
    }
    dataset(&rows)
}

/// Hat function for node `k` of `nodes`, written from the piecewise-linear
/// definition rather than the library basis.
fn tent(nodes: &[f64], k: usize, t: f64) -> f64 {
    let last = nodes.len() - 1;
    if k > 0 && t >= nodes[k - 1] && t <= nodes[k] {
        return (t - nodes[k - 1]) / (nodes[k] - nodes[k - 1]);
    }
    if k < last && t >= nodes[k] && t < nodes[k + 1] {
        return (nodes[k + 1] - t) / (nodes[k + 1] - nodes[k]);
    }
    if k == 0 && t == nodes[0] {
        return 1.0;
    }
    0.0
}

struct Dense {
    x: DMatrix<f64>,
    y: DVector<f64>,
    /// Block-diagonal `Z Λ Λᵀ Zᵀ`.
    zgz: DMatrix<f64>,
}

fn dense(ds: &GrowthDataset, spec: &ModelSpec, theta: &[f64]) -> Dense {
    let q = spec.n_random();
    let conditional = spec.include_baseline_interaction();
    let p = q + usize::from(conditional);
    let mut lam = DMatrix::zeros(q, q);
    let mut k = 0;
    for i in 0..q {
        for j in 0..=i {
            lam[(i, j)] = theta[k];
            k += 1;
        }
    }
    let g = &lam * lam.transpose();
    let n = ds.n_measurements();
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut zgz = DMatrix::zeros(n, n);
    let mut row = 0;
    for child in ds.children() {
        let start = row;
        let z0 = child.measurements()[0].zscore;
        let mut zi = DMatrix::zeros(child.len(), q);
        for (r, m) in child.measurements().iter().enumerate() {
            for j in 0..q {
                let v = match spec.knots() {
                    None => [1.0, m.age][j],
                    Some(kn) => tent(kn.nodes(), j, m.age),
                };
                zi[(r, j)] = v;
                x[(row, j)] = v;
            }
            if conditional {
                x[(row, q)] = m.age * z0;
            }
            y[row] = m.zscore;
            row += 1;
        }
        let block = &zi * &g * zi.transpose();
        zgz.view_mut((start, start), (child.len(), child.len())).copy_from(&block);
    }
    Dense { x, y, zgz }
}

/// Profiled deviance from the explicit marginal covariance `σ²(I + ZΛΛᵀZᵀ)`.
fn dense_deviance(ds: &GrowthDataset, spec: &ModelSpec, theta: &[f64], estimator: Estimator) -> (f64, DVector<f64>) {
    let Dense { x, y, zgz } = dense(ds, spec, theta);
    let n = y.len() as f64;
    let p = x.ncols() as f64;
    let v = DMatrix::identity(y.len(), y.len()) + zgz;
    let vinv = v.clone().try_inverse().unwrap();
    let xtvx = x.transpose() * &vinv * &x;
    let beta = xtvx.clone().try_inverse().unwrap() * x.transpose() * &vinv * &y;
    let e = &y - &x * &beta;
    let r2 = (e.transpose() * &vinv * &e)[(0, 0)];
    let two_pi = 2.0 * std::f64::consts::PI;
    let dev = match estimator {
        Estimator::Reml => {
            v.determinant().ln() + xtvx.determinant().ln() + (n - p) * (1.0 + (two_pi * r2 / (n - p)).ln())
        }
        Estimator::Ml => v.determinant().ln() + n * (1.0 + (two_pi * r2 / n).ln()),
    };
    (dev, beta)
}

fn specs() -> Vec<ModelSpec> {
    let knots = KnotVector::new(&[0.0, 0.5], 1.0).unwrap();
    vec![
        ModelSpec::random_slopes(),
        ModelSpec::conditional_random_slopes(),
        ModelSpec::broken_stick(knots.clone()),
        ModelSpec::conditional_broken_stick(knots),
    ]
}

fn random_theta(rng: &mut ChaCha8Rng, q: usize) -> Vec<f64> {
    let mut theta = Vec::new();
    for i in 0..q {
        for j in 0..=i {
            theta.push(if i == j { rng.random_range(0.05..2.0) } else { rng.random_range(-1.0..1.0) });
        }
    }
    theta
}

#[test]
fn deviance_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for trial in 0..40 {
        let n_children = 2 + trial % 4;
        let ds = random_dataset(&mut rng, n_children, 4);
        for spec in specs() {
            let theta = random_theta(&mut rng, spec.n_random());
            let Ok(model) = MixedModel::new(&ds, &spec, FitOptions::default()) else {
                continue;
            };
            let (oracle, _) = dense_deviance(&ds, &spec, &theta, Estimator::Reml);
            let ours = reml_deviance(&ds, &spec, &theta).unwrap();
            assert!((ours - oracle).abs() < 1e-8, "{spec:?} {ours} vs {oracle}");
            assert_eq!(ours, model.objective(&theta));

            let ml = FitOptions { estimator: Estimator::Ml, ..FitOptions::default() };
            let (oracle, _) = dense_deviance(&ds, &spec, &theta, Estimator::Ml);
            let ours = MixedModel::new(&ds, &spec, ml).unwrap().objective(&theta);
            assert!((ours - oracle).abs() < 1e-8, "ML {ours} vs {oracle}");
        }
    }
}

#[test]
fn fixed_effects_match_gls_at_fixed_theta() {
    // three children, twelve observations
    let rows = [
        ("a", 0.02, -0.3),
        ("a", 0.3, -0.6),
        ("a", 0.62, -0.9),
        ("a", 0.97, -1.4),
        ("b", 0.05, 0.4),
        ("b", 0.4, 0.1),
        ("b", 0.7, 0.2),
        ("b", 0.95, -0.5),
        ("c", 0.01, -1.0),
        ("c", 0.33, -1.2),
        ("c", 0.5, -1.9),
        ("c", 0.99, -2.6),
    ];
    let ds = dataset(&rows);
    for spec in specs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = random_theta(&mut rng, spec.n_random());
        let model = MixedModel::new(&ds, &spec, FitOptions::default()).unwrap();
        let sol = model.solve(&theta).unwrap();
        let (_, beta) = dense_deviance(&ds, &spec, &theta, Estimator::Reml);
        for (a, b) in sol.beta.iter().zip(beta.iter()) {
            assert!((a - b).abs() < 1e-8, "{spec:?}: {:?} vs {}", sol.beta, beta);
        }
    }
}

#[test]
fn grid_search_does_not_beat_optimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..3 {
        let ds = random_dataset(&mut rng, 5, 4);
        let model = MixedModel::new(&ds, &ModelSpec::random_slopes(), FitOptions::default()).unwrap();
        let fit = model.fit().unwrap();
        let best = fit.deviance;
        let c = &fit.theta;
        let steps: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.01).collect();
        let mut grid_min = f64::INFINITY;
        for &d0 in &steps {
            for &d1 in &steps {
                for &d2 in &steps {
                    let th = [c[0] + d0, c[1] + d1, c[2] + d2];
                    if th[0] < 0.0 || th[2] < 0.0 {
                        continue;
                    }
                    grid_min = grid_min.min(model.objective(&th));
                }
            }
        }
        assert!(grid_min >= best - 1e-3, "grid {grid_min} vs optimizer {best}");
    }
}

fn tight() -> FitOptions {
    FitOptions {
        optimizer: NelderMeadOptions { rel_tol: 1e-15, abs_tol: 0.0, max_evals: 40_000, ..Default::default() },
        ..FitOptions::default()
    }
}

#[test]
fn single_segment_broken_stick_is_linear_fit() {
    let cfg = ScenarioConfig { n_children: 80, ..ScenarioConfig::new(0.1, Design::Dense, 5) };
    let ds = generate_population(&cfg, 0).unwrap().dataset;
    let rs = MixedModel::new(&ds, &ModelSpec::random_slopes(), tight()).unwrap().fit().unwrap();
    let knots = KnotVector::new(&[0.0], 1.0).unwrap();
    let bs = MixedModel::new(&ds, &ModelSpec::broken_stick(knots), tight()).unwrap().fit().unwrap();
    assert!((rs.deviance - bs.deviance).abs() < 1e-8);
    let times = [0.0, 0.3, 0.77, 1.0];
    for id in &rs.child_ids {
        let a = rs.predict(id, &times, None).unwrap();
        let b = bs.predict(id, &times, None).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6, "{id}: {a:?} vs {b:?}");
        }
    }
}

#[test]
fn recovers_generating_parameters() {
    let cfg = ScenarioConfig::new(0.0, Design::Dense, 2024);
    let ds = generate_population(&cfg, 0).unwrap().dataset;
    let fit = MixedModel::new(&ds, &ModelSpec::random_slopes(), FitOptions::default()).unwrap().fit().unwrap();
    assert!((fit.beta[1] + 1.0).abs() < 0.05, "slope {}", fit.beta[1]);
    assert!((fit.sigma2.sqrt() - 0.3).abs() < 0.03, "sigma {}", fit.sigma2.sqrt());
    for k in 0..2 {
        let mean = fit.blups.iter().map(|b| b[k]).sum::<f64>() / fit.blups.len() as f64;
        assert!(mean.abs() <= 0.05, "mean BLUP deviation {mean}");
    }
    assert_eq!(fit.blups.len(), ds.len());
    let s = &fit.sigma;
    assert_eq!(s[(0, 1)], s[(1, 0)]);
    assert!(s[(0, 0)] >= 0.0 && s[(1, 1)] >= 0.0 && s[(0, 0)] * s[(1, 1)] - s[(0, 1)].powi(2) >= -1e-12);
}

#[test]
fn single_observation_child_is_shrunk() {
    let cfg = ScenarioConfig { n_children: 60, ..ScenarioConfig::new(0.0, Design::Dense, 9) };
    let mut children = generate_population(&cfg, 0).unwrap().dataset.children().to_vec();
    let window = AnalysisWindow::first_year();
    for (i, (t, z)) in [(0.5, 1.5), (0.2, -2.0), (0.9, -3.5)].into_iter().enumerate() {
        children.push(ChildSeries::new(format!("z{i}"), vec![Measurement::new(t, z).unwrap()]).unwrap());
    }
    let ds = GrowthDataset::new(children, window, f64::INFINITY).unwrap();
    let fit = MixedModel::new(&ds, &ModelSpec::random_slopes(), FitOptions::default()).unwrap().fit().unwrap();
    for (i, (t, z)) in [(0.5, 1.5), (0.2, -2.0), (0.9, -3.5)].into_iter().enumerate() {
        let id = format!("z{i}");
        let pred = fit.predict(&id, &[t], None).unwrap()[0];
        let mean = fit.beta[0] + fit.beta[1] * t;
        let (lo, hi) = if mean < z { (mean, z) } else { (z, mean) };
        assert!(lo < pred && pred < hi, "{id}: {pred} not strictly between {mean} and {z}");
    }
}

#[test]
fn child_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let ds = random_dataset(&mut rng, 30, 5);
    // renaming children reverses their internal order
    let renamed: Vec<ChildSeries> = ds
        .children()
        .iter()
        .enumerate()
        .map(|(i, c)| ChildSeries::new(format!("r{:02}", 99 - i), c.measurements().to_vec()).unwrap())
        .collect();
    let ds2 = GrowthDataset::new(renamed, ds.window(), f64::INFINITY).unwrap();
    let spec = ModelSpec::broken_stick(KnotVector::new(&[0.0, 0.5], 1.0).unwrap());
    let a = MixedModel::new(&ds, &spec, FitOptions::default()).unwrap();
    let b = MixedModel::new(&ds2, &spec, FitOptions::default()).unwrap();
    // same objective along a fixed path, so the optimizer follows the same steps
    let theta = a.start_theta();
    assert!((a.objective(&theta) - b.objective(&theta)).abs() < 1e-10);
    let fa = a.fit().unwrap();
    let fb = b.fit().unwrap();
    assert!((fa.deviance - fb.deviance).abs() < 1e-10);
    for (x, y) in fa.beta.iter().zip(&fb.beta) {
        assert!((x - y).abs() < 1e-10);
    }
    for (x, y) in fa.theta.iter().zip(&fb.theta) {
        assert!((x - y).abs() < 1e-10);
    }
    let n = fa.blups.len();
    for i in 0..n {
        for (x, y) in fa.blups[i].iter().zip(&fb.blups[n - 1 - i]) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn zero_baselines_reduce_conditional_to_unconditional() {
    let cfg = ScenarioConfig { n_children: 100, ..ScenarioConfig::new(0.1, Design::Dense, 12) };
    let ds = generate_population(&cfg, 0).unwrap().dataset;
    // shift each child so its first z-score is exactly zero
    let shifted: Vec<ChildSeries> = ds
        .children()
        .iter()
        .map(|c| {
            let z0 = c.measurements()[0].zscore;
            let ms = c.measurements().iter().map(|m| Measurement::new(m.age, m.zscore - z0).unwrap()).collect();
            ChildSeries::new(c.id(), ms).unwrap()
        })
        .collect();
    let ds = GrowthDataset::new(shifted, ds.window(), f64::INFINITY).unwrap();
    let rs = MixedModel::new(&ds, &ModelSpec::random_slopes(), FitOptions::default()).unwrap().fit().unwrap();
    let crs =
        MixedModel::new(&ds, &ModelSpec::conditional_random_slopes(), FitOptions::default()).unwrap().fit().unwrap();
    assert_eq!(crs.dropped_columns, vec![2]);
    assert!((rs.sigma2 - crs.sigma2).abs() < 1e-8);
    for k in 0..2 {
        assert!((rs.beta[k] - crs.beta[k]).abs() < 1e-8);
        for j in 0..2 {
            assert!((rs.sigma[(k, j)] - crs.sigma[(k, j)]).abs() < 1e-8);
        }
    }
}
