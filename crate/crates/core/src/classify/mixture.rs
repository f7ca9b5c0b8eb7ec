//! Two-component univariate Gaussian mixtures fitted by EM.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Classification, Label, Method};
use crate::error::{Error, Result};
use crate::rng;
use crate::velocity::VelocityTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureOptions {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop when the absolute log-likelihood change falls below this.
    pub tol: f64,
    /// Standard deviation of the jitter on restart means, as a fraction of the data sd.
    pub jitter: f64,
    /// Component variances are floored at this fraction of the data variance.
    pub variance_floor: f64,
}

impl Default for MixtureOptions {
    fn default() -> Self {
        Self { restarts: 10, max_iter: 2000, tol: 1e-8, jitter: 0.1, variance_floor: 1e-6 }
    }
}

/// Mixture parameters, component 1 having the lower mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm2 {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub sds: [f64; 2],
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// A component variance reached the floor or a component emptied.
    pub collapsed: bool,
    /// Log-likelihood never decreased (beyond roundoff) across iterations,
    /// in this run and, for [`fit_gmm2_values`], in every restart.
    pub monotone: bool,
}

fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
}

impl Gmm2 {
    /// Posterior probabilities of the two components at `x`.
    pub fn posteriors(&self, x: f64) -> (f64, f64) {
        let l1 = self.weights[0].ln() + log_normal_pdf(x, self.means[0], self.sds[0]);
        let l2 = self.weights[1].ln() + log_normal_pdf(x, self.means[1], self.sds[1]);
        split_posterior(l1, l2).0
    }

    pub fn density(&self, x: f64) -> f64 {
        self.component_density(0, x) + self.component_density(1, x)
    }

    /// Weighted density of one component.
    pub fn component_density(&self, k: usize, x: f64) -> f64 {
        self.weights[k] * log_normal_pdf(x, self.means[k], self.sds[k]).exp()
    }
}

/// Posteriors and the log of the total from two log-weighted densities.
#[inline]
fn split_posterior(l1: f64, l2: f64) -> ((f64, f64), f64) {
    if l1 >= l2 {
        let e = (l2 - l1).exp();
        let r1 = 1.0 / (1.0 + e);
        ((r1, e * r1), l1 + e.ln_1p())
    } else {
        let e = (l1 - l2).exp();
        let r2 = 1.0 / (1.0 + e);
        ((e * r2, r2), l2 + e.ln_1p())
    }
}

fn em(x: &[f64], mut w: [f64; 2], mut mu: [f64; 2], mut sd: [f64; 2], floor_var: f64, opts: &MixtureOptions) -> Gmm2 {
    let n = x.len() as f64;
    let mut r1 = vec![0.0; x.len()];
    let mut prev = f64::NEG_INFINITY;
    let mut monotone = true;
    let mut converged = false;
    let mut collapsed = false;
    let mut iterations = 0;
    let mut ll = f64::NEG_INFINITY;

    for it in 0..opts.max_iter {
        iterations = it + 1;
        let (lw1, lw2) = (w[0].ln(), w[1].ln());
        ll = 0.0;
        for (xi, r) in x.iter().zip(r1.iter_mut()) {
            let ((p1, _), lse) = split_posterior(lw1 + log_normal_pdf(*xi, mu[0], sd[0]), lw2 + log_normal_pdf(*xi, mu[1], sd[1]));
            *r = p1;
            ll += lse;
        }
        if ll < prev - 1e-9 * (1.0 + prev.abs()) {
            monotone = false;
        }
        if (ll - prev).abs() < opts.tol {
            converged = true;
            break;
        }
        prev = ll;

        let n1: f64 = r1.iter().sum();
        let n2 = n - n1;
        if !(n1 > 0.0) || !(n2 > 0.0) {
            collapsed = true;
            break;
        }
        let m1 = x.iter().zip(&r1).map(|(xi, r)| r * xi).sum::<f64>() / n1;
        let m2 = x.iter().zip(&r1).map(|(xi, r)| (1.0 - r) * xi).sum::<f64>() / n2;
        let v1 = x.iter().zip(&r1).map(|(xi, r)| r * (xi - m1).powi(2)).sum::<f64>() / n1;
        let v2 = x.iter().zip(&r1).map(|(xi, r)| (1.0 - r) * (xi - m2).powi(2)).sum::<f64>() / n2;
        if v1 <= floor_var || v2 <= floor_var {
            collapsed = true;
        }
        w = [n1 / n, n2 / n];
        mu = [m1, m2];
        sd = [v1.max(floor_var).sqrt(), v2.max(floor_var).sqrt()];
    }

    let mut params = Gmm2 { weights: w, means: mu, sds: sd, loglik: ll, iterations, converged, collapsed, monotone };
    if params.means[0] > params.means[1] {
        params.weights.swap(0, 1);
        params.means.swap(0, 1);
        params.sds.swap(0, 1);
    }
    params
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var)
}

/// Fits a two-component mixture to raw values. The first run starts from the
/// halves of a median split; further runs jitter the starting means. The run
/// with the highest log-likelihood (ignoring collapsed runs when any run
/// stays regular) is returned.
pub fn fit_gmm2_values(values: &[f64], seed: u64, opts: &MixtureOptions) -> Result<Gmm2> {
    if values.len() < 4 {
        return Err(Error::InsufficientData(format!("{} velocities, mixture needs at least 4", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite velocity".into()));
    }
    let (_, var) = moments(values);
    if !(var > 0.0) {
        return Err(Error::Degenerate("all velocities are equal".into()));
    }
    let data_sd = var.sqrt();
    let floor_var = opts.variance_floor * var;

    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let half = sorted.len() / 2;
    let (lo, hi) = sorted.split_at(half);
    let (m_lo, v_lo) = moments(lo);
    let (m_hi, v_hi) = moments(hi);
    let sd0 = [v_lo.max(floor_var).sqrt(), v_hi.max(floor_var).sqrt()];
    let w0 = [lo.len() as f64 / sorted.len() as f64, hi.len() as f64 / sorted.len() as f64];

    let mut rng = rng::stream(seed, 0);
    let jitter = Normal::new(0.0, opts.jitter * data_sd).expect("finite jitter sd");
    let mut best: Option<Gmm2> = None;
    let mut all_monotone = true;
    for restart in 0..opts.restarts.max(1) {
        let mut mu0 = [m_lo, m_hi];
        if restart > 0 {
            mu0[0] += jitter.sample(&mut rng);
            mu0[1] += jitter.sample(&mut rng);
        }
        let run = em(values, w0, mu0, sd0, floor_var, opts);
        all_monotone &= run.monotone;
        let better = match &best {
            None => true,
            Some(b) => match (b.collapsed, run.collapsed) {
                (true, false) => true,
                (false, true) => false,
                _ => run.loglik > b.loglik,
            },
        };
        if better {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one run");
    best.monotone = all_monotone;
    Ok(best)
}

/// A mixture fitted to a velocity table, with per-child posteriors of the
/// faltering (lower-mean) component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub params: Gmm2,
    pub posteriors: BTreeMap<String, f64>,
}

pub fn fit_gmm2(table: &VelocityTable, seed: u64, opts: &MixtureOptions) -> Result<MixtureFit> {
    let values = table.values();
    let params = fit_gmm2_values(&values, seed, opts)?;
    let posteriors = table.entries.iter().map(|(id, &v)| (id.clone(), params.posteriors(v).0)).collect();
    Ok(MixtureFit { params, posteriors })
}

/// Labels a child faltering when the posterior of the lower-mean component
/// is at least `cutoff`.
pub fn mm_classify(mix: &MixtureFit, cutoff: f64) -> Classification {
    let labels = mix
        .posteriors
        .iter()
        .map(|(id, &p)| (id.clone(), if p >= cutoff { Label::Faltering } else { Label::NonFaltering }))
        .collect();
    Classification {
        method: Method::Mixture,
        labels,
        posteriors: Some(mix.posteriors.clone()),
        threshold: None,
        cutoff: Some(cutoff),
    }
}

/// One histogram bin with the fitted component densities at its midpoint,
/// scaled to counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub faltering_density: f64,
    pub non_faltering_density: f64,
}

pub fn histogram(values: &[f64], params: &Gmm2, bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let scale = values.len() as f64 * width;
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| {
            let lower = lo + width * i as f64;
            let mid = lower + 0.5 * width;
            HistogramBin {
                lower,
                upper: lower + width,
                count,
                faltering_density: scale * params.component_density(0, mid),
                non_faltering_density: scale * params.component_density(1, mid),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn two_clusters(seed: u64, n: usize, a: f64, b: f64) -> Vec<f64> {
        let mut r = rng::stream(seed, 99);
        let mut v = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let e: f64 = r.sample(StandardNormal);
            v.push(a + e);
        }
        for _ in 0..n {
            let e: f64 = r.sample(StandardNormal);
            v.push(b + e);
        }
        v
    }

    #[test]
    fn recovers_well_separated_clusters() {
        let v = two_clusters(2024, 100, -9.0, -4.0);
        let g = fit_gmm2_values(&v, 1, &MixtureOptions::default()).unwrap();
        assert!((g.means[0] + 9.0).abs() < 0.4, "{:?}", g.means);
        assert!((g.means[1] + 4.0).abs() < 0.4, "{:?}", g.means);
        assert!((g.weights[0] - 0.5).abs() < 0.07);
        assert!(g.monotone && g.converged && !g.collapsed);
    }

    #[test]
    fn mirrored_clusters_give_symmetric_means() {
        let half = two_clusters(5, 80, -3.0, -3.0);
        let mut v: Vec<f64> = half[..80].to_vec();
        v.extend(half[..80].iter().map(|x| -x));
        let g = fit_gmm2_values(&v, 3, &MixtureOptions::default()).unwrap();
        assert!((g.means[0] + g.means[1]).abs() < 0.1, "{:?}", g.means);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(fit_gmm2_values(&[1.0; 10], 0, &MixtureOptions::default()), Err(Error::Degenerate(_))));
        assert!(matches!(fit_gmm2_values(&[1.0, 2.0, 3.0], 0, &MixtureOptions::default()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn posteriors_sum_to_one() {
        let v = two_clusters(8, 50, -2.0, 1.0);
        let g = fit_gmm2_values(&v, 4, &MixtureOptions::default()).unwrap();
        for x in v.iter().chain([-50.0, 50.0].iter()) {
            let (a, b) = g.posteriors(*x);
            assert!((a + b - 1.0).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn point_mass_collapses_but_does_not_fail() {
        let mut v = vec![0.0; 20];
        v.extend([5.0, 5.1, 4.9, 5.2, 4.8]);
        let g = fit_gmm2_values(&v, 0, &MixtureOptions::default()).unwrap();
        assert!(g.collapsed);
        assert!(g.sds.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn histogram_counts_everything() {
        let v = two_clusters(1, 30, -1.0, 2.0);
        let g = fit_gmm2_values(&v, 0, &MixtureOptions::default()).unwrap();
        let h = histogram(&v, &g, 12);
        assert_eq!(h.len(), 12);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 60);
    }
}
