//! Gaussian linear mixed models for growth trajectories.
//!
//! Four model kinds are supported: random slopes (`z = ω_0 + ω_1 t + ε`), the
//! broken-stick model with random coefficients on a degree-1 B-spline basis,
//! and conditional variants of both that add a `t · z_baseline` fixed effect.
//!
//! Variance components are estimated by minimizing the profiled (restricted)
//! deviance over the relative covariance factor `Λ` (lower triangular, with
//! `Σ = σ² Λ Λᵀ`). For a given `Λ` the fixed effects and spherical random
//! effects solve a penalized least-squares problem; because random effects are
//! grouped by child, every child contributes an independent `q × q` block and
//! only the `p × p` fixed-effect block couples them.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{baseline, GrowthDataset};
use crate::error::{Error, Result};
use crate::linalg::{backward_solve_transpose, cholesky_in_place, cholesky_logdet, Matrix};
use crate::optim::{minimize_bounded, NelderMeadOptions};
use crate::spline::KnotVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    RandomSlopes,
    ConditionalRandomSlopes,
    BrokenStick,
    ConditionalBrokenStick,
}

impl ModelKind {
    pub fn is_conditional(self) -> bool {
        matches!(self, ModelKind::ConditionalRandomSlopes | ModelKind::ConditionalBrokenStick)
    }

    pub fn is_broken_stick(self) -> bool {
        matches!(self, ModelKind::BrokenStick | ModelKind::ConditionalBrokenStick)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::RandomSlopes => "RS",
            ModelKind::ConditionalRandomSlopes => "cRS",
            ModelKind::BrokenStick => "BrokenStick",
            ModelKind::ConditionalBrokenStick => "cBrokenStick",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    kind: ModelKind,
    knots: Option<KnotVector>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, knots: Option<KnotVector>) -> Result<Self> {
        if kind.is_broken_stick() != knots.is_some() {
            return Err(Error::InvalidConfig(format!(
                "knots must be given exactly for broken-stick kinds ({kind})"
            )));
        }
        Ok(Self { kind, knots })
    }

    pub fn random_slopes() -> Self {
        Self { kind: ModelKind::RandomSlopes, knots: None }
    }

    pub fn conditional_random_slopes() -> Self {
        Self { kind: ModelKind::ConditionalRandomSlopes, knots: None }
    }

    pub fn broken_stick(knots: KnotVector) -> Self {
        Self { kind: ModelKind::BrokenStick, knots: Some(knots) }
    }

    pub fn conditional_broken_stick(knots: KnotVector) -> Self {
        Self { kind: ModelKind::ConditionalBrokenStick, knots: Some(knots) }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn knots(&self) -> Option<&KnotVector> {
        self.knots.as_ref()
    }

    pub fn include_baseline_interaction(&self) -> bool {
        self.kind.is_conditional()
    }

    /// Number of random effects per child.
    pub fn n_random(&self) -> usize {
        self.knots.as_ref().map_or(2, KnotVector::n_basis)
    }

    /// Number of fixed effects, including the interaction column.
    pub fn n_fixed(&self) -> usize {
        self.n_random() + usize::from(self.include_baseline_interaction())
    }

    /// Random-effect design row at age `t`.
    fn random_row(&self, t: f64, out: &mut [f64]) -> Result<()> {
        match &self.knots {
            Some(k) => k.basis_into(t, out),
            None => {
                out[0] = 1.0;
                out[1] = t;
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Reml,
    Ml,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub estimator: Estimator,
    /// Conditional kinds only: drop each child's baseline row from the response.
    pub drop_baseline_row: bool,
    pub optimizer: NelderMeadOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { estimator: Estimator::Reml, drop_baseline_row: false, optimizer: NelderMeadOptions::default() }
    }
}

/// Relative covariance factor and residual variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceParams {
    /// Lower triangle of `Λ`, packed row by row: `(0,0), (1,0), (1,1), (2,0), …`.
    pub theta: Vec<f64>,
    pub sigma2: f64,
}

/// Number of packed parameters for a `q × q` lower-triangular factor.
pub fn n_theta(q: usize) -> usize {
    q * (q + 1) / 2
}

fn unpack_lambda(theta: &[f64], q: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut k = 0;
    for i in 0..q {
        for j in 0..=i {
            out[i * q + j] = theta[k];
            k += 1;
        }
    }
}

fn is_diagonal_index(k: usize) -> bool {
    // packed index k is diagonal when k = i(i+3)/2
    let mut i = 0;
    loop {
        let d = i * (i + 3) / 2;
        if d == k {
            return true;
        }
        if d > k {
            return false;
        }
        i += 1;
    }
}

/// Sufficient statistics of the response and designs, accumulated per child.
#[derive(Debug, Clone)]
pub struct MixedModel {
    spec: ModelSpec,
    options: FitOptions,
    q: usize,
    /// Fixed-effect columns kept after dropping identically-zero ones.
    active: Vec<usize>,
    p_full: usize,
    n_obs: usize,
    child_ids: Vec<String>,
    baselines: Vec<Option<f64>>,
    excluded: Vec<String>,
    /// Per-child `ZᵀZ` blocks, `q × q`.
    ztz: Vec<f64>,
    /// Per-child `Zᵀ[X y]` blocks over the active columns, `q × (p + 1)`.
    ztw: Vec<f64>,
    /// `[X y]ᵀ[X y]` over the active columns.
    wtw: Vec<f64>,
    start_scale: f64,
}

/// Everything the penalized least-squares solve yields at a fixed `Λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub deviance: f64,
    /// Per-child random-effect deviations `b_i = Λ u_i`.
    pub blups: Vec<Vec<f64>>,
}

impl MixedModel {
    pub fn new(dataset: &GrowthDataset, spec: &ModelSpec, options: FitOptions) -> Result<Self> {
        let q = spec.n_random();
        let p_full = spec.n_fixed();
        let conditional = spec.include_baseline_interaction();
        let window = dataset.window();

        let mut child_ids = Vec::new();
        let mut baselines = Vec::new();
        let mut excluded = Vec::new();
        let mut ztz = Vec::new();
        let mut ztx = Vec::new();
        let mut zty = Vec::new();
        let mut xtx = vec![0.0; p_full * p_full];
        let mut xty = vec![0.0; p_full];
        let mut yty = 0.0;
        let mut n_obs = 0;
        let mut zrow = vec![0.0; q];
        let mut xrow = vec![0.0; p_full];
        let mut slopes = Vec::new();
        let mut residual_vars = Vec::new();

        for child in dataset.children() {
            let z0 = if conditional {
                if child.len() < 2 {
                    excluded.push(child.id().to_string());
                    continue;
                }
                Some(baseline(child, &window).map_err(|_| Error::MissingBaseline(child.id().to_string()))?.zscore)
            } else {
                None
            };
            let skip = usize::from(conditional && options.drop_baseline_row);

            let mut b_ztz = vec![0.0; q * q];
            let mut b_ztx = vec![0.0; q * p_full];
            let mut b_zty = vec![0.0; q];
            for m in &child.measurements()[skip..] {
                spec.random_row(m.age, &mut zrow)?;
                xrow[..q].copy_from_slice(&zrow);
                if let Some(z0) = z0 {
                    xrow[q] = m.age * z0;
                }
                let y = m.zscore;
                for a in 0..q {
                    for b in 0..q {
                        b_ztz[a * q + b] += zrow[a] * zrow[b];
                    }
                    for j in 0..p_full {
                        b_ztx[a * p_full + j] += zrow[a] * xrow[j];
                    }
                    b_zty[a] += zrow[a] * y;
                }
                for i in 0..p_full {
                    for j in 0..p_full {
                        xtx[i * p_full + j] += xrow[i] * xrow[j];
                    }
                    xty[i] += xrow[i] * y;
                }
                yty += y * y;
                n_obs += 1;
            }
            if let Some((slope, var)) = ols_line(&child.measurements()[skip..]) {
                slopes.push(slope);
                if let Some(v) = var {
                    residual_vars.push(v);
                }
            }
            child_ids.push(child.id().to_string());
            baselines.push(z0);
            ztz.extend(b_ztz);
            ztx.extend(b_ztx);
            zty.extend(b_zty);
        }

        if child_ids.len() < 2 {
            return Err(Error::InsufficientData(format!("{} children available, at least 2 required", child_ids.len())));
        }
        if n_obs <= p_full {
            return Err(Error::InsufficientData(format!(
                "{n_obs} observations for {p_full} fixed effects"
            )));
        }

        let active: Vec<usize> = (0..p_full).filter(|&j| xtx[j * p_full + j] > 0.0).collect();
        if active.len() < q {
            return Err(Error::SingularDesign("a basis column has no observations".into()));
        }
        let pa = active.len();
        let mut probe = vec![0.0; pa * pa];
        for (a, &i) in active.iter().enumerate() {
            for (b, &j) in active.iter().enumerate() {
                probe[a * pa + b] = xtx[i * p_full + j];
            }
        }
        let diag: Vec<f64> = (0..pa).map(|i| probe[i * pa + i]).collect();
        if !cholesky_in_place(&mut probe, pa)
            || (0..pa).any(|i| probe[i * pa + i] * probe[i * pa + i] < 1e-10 * diag[i])
        {
            return Err(Error::SingularDesign("fixed-effect design is rank deficient".into()));
        }

        let w = pa + 1;
        let mut ztw = Vec::with_capacity(child_ids.len() * q * w);
        for block in ztx.chunks_exact(q * p_full).zip(zty.chunks_exact(q)) {
            let (bx, by) = block;
            for a in 0..q {
                ztw.extend(active.iter().map(|&j| bx[a * p_full + j]));
                ztw.push(by[a]);
            }
        }
        let mut wtw = vec![0.0; w * w];
        for (a, &i) in active.iter().enumerate() {
            for (b, &j) in active.iter().enumerate() {
                wtw[a * w + b] = xtx[i * p_full + j];
            }
            wtw[a * w + pa] = xty[i];
            wtw[pa * w + a] = xty[i];
        }
        wtw[pa * w + pa] = yty;

        let start_scale = start_scale(&slopes, &residual_vars);
        Ok(Self {
            spec: spec.clone(),
            options,
            q,
            active,
            p_full,
            n_obs,
            child_ids,
            baselines,
            excluded,
            ztz,
            ztw,
            wtw,
            start_scale,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n_children(&self) -> usize {
        self.child_ids.len()
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_theta(&self) -> usize {
        n_theta(self.q)
    }

    /// Starting factor: identity scaled by the between/within variance ratio of
    /// per-child least-squares slopes.
    pub fn start_theta(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.n_theta()];
        for (k, t) in theta.iter_mut().enumerate() {
            if is_diagonal_index(k) {
                *t = self.start_scale;
            }
        }
        theta
    }

    /// Lower bounds for `theta`: zero on the diagonal of `Λ`, unbounded elsewhere.
    pub fn theta_lower_bounds(&self) -> Vec<f64> {
        (0..self.n_theta())
            .map(|k| if is_diagonal_index(k) { 0.0 } else { f64::NEG_INFINITY })
            .collect()
    }

    /// Profiled deviance at `theta` for the configured estimator. Returns
    /// `+∞` when the system is numerically singular.
    pub fn objective(&self, theta: &[f64]) -> f64 {
        self.penalized_solve(theta, false).map_or(f64::INFINITY, |s| s.deviance)
    }

    /// Full solve at `theta`: fixed effects, residual variance and BLUPs.
    pub fn solve(&self, theta: &[f64]) -> Option<Solution> {
        self.penalized_solve(theta, true)
    }

    /// Deviance at a given `(Λ, σ²)` with only the fixed effects profiled out.
    pub fn deviance_at(&self, params: &VarianceParams) -> f64 {
        let Some(parts) = self.pls(&params.theta, false) else {
            return f64::INFINITY;
        };
        let s2 = params.sigma2;
        if !(s2 > 0.0) {
            return f64::INFINITY;
        }
        let pa = self.active.len() as f64;
        let n = self.n_obs as f64;
        match self.options.estimator {
            Estimator::Reml => {
                parts.logdet_l + parts.logdet_rx + (n - pa) * (2.0 * PI * s2).ln() + parts.pwrss / s2
            }
            Estimator::Ml => parts.logdet_l + n * (2.0 * PI * s2).ln() + parts.pwrss / s2,
        }
    }

    fn penalized_solve(&self, theta: &[f64], with_blups: bool) -> Option<Solution> {
        let parts = self.pls(theta, with_blups)?;
        let pa = self.active.len() as f64;
        let n = self.n_obs as f64;
        if !(parts.pwrss > 0.0) {
            return None;
        }
        let (sigma2, deviance) = match self.options.estimator {
            Estimator::Reml => {
                let s2 = parts.pwrss / (n - pa);
                (s2, parts.logdet_l + parts.logdet_rx + (n - pa) * (1.0 + (2.0 * PI * s2).ln()))
            }
            Estimator::Ml => {
                let s2 = parts.pwrss / n;
                (s2, parts.logdet_l + n * (1.0 + (2.0 * PI * s2).ln()))
            }
        };
        if !deviance.is_finite() {
            return None;
        }
        let mut beta = vec![0.0; self.p_full];
        for (a, &j) in self.active.iter().enumerate() {
            beta[j] = parts.beta[a];
        }
        Some(Solution { beta, sigma2, deviance, blups: parts.blups })
    }

    fn pls(&self, theta: &[f64], with_blups: bool) -> Option<PlsParts> {
        let q = self.q;
        let pa = self.active.len();
        let w = pa + 1;
        if theta.len() != n_theta(q) || theta.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut lambda = vec![0.0; q * q];
        unpack_lambda(theta, q, &mut lambda);

        let mut m = vec![0.0; q * q];
        let mut l = vec![0.0; q * q];
        // c = L⁻¹ Λᵀ Zᵀ[X y]: the rows of R_ZX with c_u as the last column
        let mut c = vec![0.0; q * w];
        // Schur complement [X y]ᵀ[X y] - cᵀc, lower triangle
        let mut acc = self.wtw.clone();
        let mut logdet_l = 0.0;
        let mut saved: Vec<(Vec<f64>, Vec<f64>)> =
            if with_blups { Vec::with_capacity(self.child_ids.len()) } else { Vec::new() };

        let mut bufs = Buffers { m: &mut m, l: &mut l, c: &mut c, acc: &mut acc };
        let saved_ref = if with_blups { Some(&mut saved) } else { None };
        // constant sizes let the per-child kernel unroll
        let total = match (q, w) {
            (2, 3) => absorb_all(2, 3, &lambda, &self.ztz, &self.ztw, &mut bufs, saved_ref),
            (2, 4) => absorb_all(2, 4, &lambda, &self.ztz, &self.ztw, &mut bufs, saved_ref),
            (5, 6) => absorb_all(5, 6, &lambda, &self.ztz, &self.ztw, &mut bufs, saved_ref),
            (5, 7) => absorb_all(5, 7, &lambda, &self.ztz, &self.ztw, &mut bufs, saved_ref),
            _ => absorb_all(q, w, &lambda, &self.ztz, &self.ztw, &mut bufs, saved_ref),
        };
        let ok = match total {
            Some(v) => {
                logdet_l = v;
                true
            }
            None => false,
        };
        if !ok {
            return None;
        }

        // Factoring the augmented block yields R_X, c_β = row p, and √pwrss.
        if !cholesky_in_place(&mut acc, w) {
            return None;
        }
        let logdet_rx = cholesky_logdet(&acc[..], w) - 2.0 * acc[pa * w + pa].ln();
        let pwrss = acc[pa * w + pa] * acc[pa * w + pa];
        let mut rx = vec![0.0; pa * pa];
        for i in 0..pa {
            rx[i * pa..i * pa + i + 1].copy_from_slice(&acc[i * w..i * w + i + 1]);
        }
        let mut beta = acc[pa * w..pa * w + pa].to_vec();
        backward_solve_transpose(&rx, pa, &mut beta);

        let mut blups = Vec::new();
        if with_blups {
            blups.reserve(saved.len());
            for (l, c) in &saved {
                let mut u: Vec<f64> = (0..q)
                    .map(|r| c[r * w + pa] - (0..pa).map(|a| c[r * w + a] * beta[a]).sum::<f64>())
                    .collect();
                backward_solve_transpose(l, q, &mut u);
                let b: Vec<f64> = (0..q).map(|i| (0..=i).map(|j| lambda[i * q + j] * u[j]).sum()).collect();
                blups.push(b);
            }
        }
        Some(PlsParts { beta, pwrss, logdet_l, logdet_rx, blups })
    }

    /// Minimizes the profiled deviance and assembles the fit.
    pub fn fit(&self) -> Result<MixedModelFit> {
        let x0 = self.start_theta();
        let lower = self.theta_lower_bounds();
        let upper = vec![f64::INFINITY; x0.len()];
        let min = minimize_bounded(|th| self.objective(th), &x0, &lower, &upper, &self.options.optimizer);
        let sol = self
            .solve(&min.x)
            .ok_or_else(|| Error::SingularDesign("no finite deviance found for any covariance factor".into()))?;
        Ok(self.assemble(min.x, sol, min.converged, min.evaluations))
    }

    fn assemble(&self, theta: Vec<f64>, sol: Solution, converged: bool, evaluations: usize) -> MixedModelFit {
        let q = self.q;
        let mut lambda = vec![0.0; q * q];
        unpack_lambda(&theta, q, &mut lambda);
        let mut sigma = Matrix::zeros(q, q);
        for i in 0..q {
            for j in 0..q {
                sigma[(i, j)] = sol.sigma2 * (0..q).map(|k| lambda[i * q + k] * lambda[j * q + k]).sum::<f64>();
            }
        }
        let singular = (0..q).any(|i| lambda[i * q + i] < 1e-4);
        let dropped_columns = (0..self.p_full).filter(|j| !self.active.contains(j)).collect();
        MixedModelFit {
            spec: self.spec.clone(),
            estimator: self.options.estimator,
            beta: sol.beta,
            sigma,
            sigma2: sol.sigma2,
            theta,
            child_ids: self.child_ids.clone(),
            baselines: self.baselines.clone(),
            blups: sol.blups,
            deviance: sol.deviance,
            converged,
            singular,
            evaluations,
            dropped_columns,
            excluded_children: self.excluded.clone(),
        }
    }
}

struct Buffers<'a> {
    m: &'a mut [f64],
    l: &'a mut [f64],
    c: &'a mut [f64],
    acc: &'a mut [f64],
}

/// Runs [`absorb_child`] over every child, returning the summed `log |L Lᵀ|`.
#[inline(always)]
fn absorb_all(
    q: usize,
    w: usize,
    lambda: &[f64],
    ztz: &[f64],
    ztw: &[f64],
    bufs: &mut Buffers<'_>,
    mut saved: Option<&mut Vec<(Vec<f64>, Vec<f64>)>>,
) -> Option<f64> {
    let mut total = 0.0;
    for (ztz, ztw) in ztz.chunks_exact(q * q).zip(ztw.chunks_exact(q * w)) {
        total += absorb_child(q, w, lambda, ztz, ztw, bufs.m, bufs.l, bufs.c, bufs.acc)?;
        if let Some(saved) = saved.as_mut() {
            saved.push((bufs.l.to_vec(), bufs.c.to_vec()));
        }
    }
    Some(total)
}

/// Folds one child's block into the fixed-effect Schur complement: factors
/// `L Lᵀ = Λᵀ ZᵀZ Λ + I`, overwrites `c` with `L⁻¹ Λᵀ Zᵀ[X y]` and subtracts
/// `cᵀc` from the lower triangle of `acc`. Returns `log |L Lᵀ|`.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn absorb_child(
    q: usize,
    w: usize,
    lambda: &[f64],
    ztz: &[f64],
    ztw: &[f64],
    m: &mut [f64],
    l: &mut [f64],
    c: &mut [f64],
    acc: &mut [f64],
) -> Option<f64> {
    let (lambda, ztz, ztw) = (&lambda[..q * q], &ztz[..q * q], &ztw[..q * w]);
    let (m, l, c, acc) = (&mut m[..q * q], &mut l[..q * q], &mut c[..q * w], &mut acc[..w * w]);
    // m = ZᵀZ Λ
    for a in 0..q {
        for d in 0..q {
            let mut s = 0.0;
            for b in d..q {
                s += ztz[a * q + b] * lambda[b * q + d];
            }
            m[a * q + d] = s;
        }
    }
    // l = Λᵀ m + I (lower triangle), then factor
    for r in 0..q {
        for d in 0..=r {
            let mut s = if r == d { 1.0 } else { 0.0 };
            for a in r..q {
                s += lambda[a * q + r] * m[a * q + d];
            }
            l[r * q + d] = s;
        }
    }
    if !cholesky_in_place(l, q) {
        return None;
    }
    let mut det = 1.0;
    for i in 0..q {
        det *= l[i * q + i];
    }

    for r in 0..q {
        for j in 0..w {
            let mut s = 0.0;
            for a in r..q {
                s += lambda[a * q + r] * ztw[a * w + j];
            }
            c[r * w + j] = s;
        }
    }
    for i in 0..q {
        let inv = 1.0 / l[i * q + i];
        for j in 0..w {
            let mut s = c[i * w + j];
            for k in 0..i {
                s -= l[i * q + k] * c[k * w + j];
            }
            c[i * w + j] = s * inv;
        }
    }
    for a in 0..w {
        for b in 0..=a {
            let mut s = 0.0;
            for r in 0..q {
                s += c[r * w + a] * c[r * w + b];
            }
            acc[a * w + b] -= s;
        }
    }
    Some(2.0 * det.ln())
}

struct PlsParts {
    beta: Vec<f64>,
    pwrss: f64,
    logdet_l: f64,
    logdet_rx: f64,
    blups: Vec<Vec<f64>>,
}

/// Least-squares line through `(age, z)`: slope and, with ≥ 3 points, the
/// residual variance.
fn ols_line(ms: &[crate::data::Measurement]) -> Option<(f64, Option<f64>)> {
    if ms.len() < 2 {
        return None;
    }
    let n = ms.len() as f64;
    let mt = ms.iter().map(|m| m.age).sum::<f64>() / n;
    let mz = ms.iter().map(|m| m.zscore).sum::<f64>() / n;
    let sxx: f64 = ms.iter().map(|m| (m.age - mt).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = ms.iter().map(|m| (m.age - mt) * (m.zscore - mz)).sum();
    let slope = sxy / sxx;
    let var = (ms.len() > 2).then(|| {
        ms.iter().map(|m| (m.zscore - mz - slope * (m.age - mt)).powi(2)).sum::<f64>() / (n - 2.0)
    });
    Some((slope, var))
}

fn start_scale(slopes: &[f64], residual_vars: &[f64]) -> f64 {
    if slopes.len() < 2 || residual_vars.is_empty() {
        return 1.0;
    }
    let n = slopes.len() as f64;
    let mean = slopes.iter().sum::<f64>() / n;
    let between = slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let within = residual_vars.iter().sum::<f64>() / residual_vars.len() as f64;
    if !(within > 0.0) || !between.is_finite() {
        return 1.0;
    }
    (between / within).sqrt().clamp(0.1, 10.0)
}

/// A fitted mixed model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedModelFit {
    pub spec: ModelSpec,
    pub estimator: Estimator,
    /// Fixed effects: the `q` random-effect means, then the interaction
    /// coefficient for conditional kinds.
    pub beta: Vec<f64>,
    /// Random-effect covariance `Σ`.
    pub sigma: Matrix,
    pub sigma2: f64,
    pub theta: Vec<f64>,
    /// Fitted children in id order.
    pub child_ids: Vec<String>,
    pub baselines: Vec<Option<f64>>,
    /// Random-effect deviations from the fixed effects, one vector per child.
    pub blups: Vec<Vec<f64>>,
    pub deviance: f64,
    pub converged: bool,
    /// Some diagonal entry of `Λ` is (numerically) zero.
    pub singular: bool,
    pub evaluations: usize,
    /// Fixed-effect columns that were identically zero and fixed at 0.
    pub dropped_columns: Vec<usize>,
    /// Children left out of a conditional fit for having fewer than 2 observations.
    pub excluded_children: Vec<String>,
}

impl MixedModelFit {
    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn child_index(&self, child: &str) -> Result<usize> {
        self.child_ids
            .binary_search_by(|c| c.as_str().cmp(child))
            .map_err(|_| Error::UnknownChild(child.to_string()))
    }

    /// Child-specific coefficients: fixed random-effect means plus the BLUP.
    pub fn coefficients(&self, child: &str) -> Result<Vec<f64>> {
        let i = self.child_index(child)?;
        Ok(self.blups[i].iter().zip(&self.beta).map(|(b, m)| m + b).collect())
    }

    /// Coefficient on `t · z_baseline` (0 for unconditional kinds).
    pub fn interaction(&self) -> f64 {
        if self.spec.include_baseline_interaction() {
            self.beta[self.spec.n_random()]
        } else {
            0.0
        }
    }

    pub fn baseline_of(&self, child: &str) -> Result<Option<f64>> {
        Ok(self.baselines[self.child_index(child)?])
    }

    /// Predicted z-scores for one child. `baseline_z` must be supplied exactly
    /// for conditional kinds.
    pub fn predict(&self, child: &str, times: &[f64], baseline_z: Option<f64>) -> Result<Vec<f64>> {
        let coef = self.coefficients(child)?;
        let conditional = self.spec.include_baseline_interaction();
        if conditional != baseline_z.is_some() {
            return Err(if conditional {
                Error::MissingBaseline(child.to_string())
            } else {
                Error::InvalidConfig(format!("{} takes no baseline", self.spec.kind))
            });
        }
        let gamma = self.interaction();
        let z0 = baseline_z.unwrap_or(0.0);
        let mut row = vec![0.0; self.spec.n_random()];
        times
            .iter()
            .map(|&t| {
                self.spec.random_row(t, &mut row)?;
                Ok(row.iter().zip(&coef).map(|(r, c)| r * c).sum::<f64>() + gamma * t * z0)
            })
            .collect()
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary {
            kind: self.spec.kind.to_string(),
            estimator: self.estimator,
            knots: self.spec.knots.as_ref().map(|k| k.nodes().to_vec()),
            beta: self.beta.clone(),
            sigma: self.sigma.to_rows(),
            sigma2: self.sigma2,
            deviance: self.deviance,
            converged: self.converged,
            singular: self.singular,
            evaluations: self.evaluations,
            blups: self.child_ids.iter().cloned().zip(self.blups.iter().cloned()).collect(),
        }
    }
}

/// JSON-friendly view of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub kind: String,
    pub estimator: Estimator,
    pub knots: Option<Vec<f64>>,
    pub beta: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub sigma2: f64,
    pub deviance: f64,
    pub converged: bool,
    pub singular: bool,
    pub evaluations: usize,
    pub blups: BTreeMap<String, Vec<f64>>,
}

/// Fits `spec` to `dataset` by REML with default optimizer settings.
pub fn fit(dataset: &GrowthDataset, spec: &ModelSpec) -> Result<MixedModelFit> {
    fit_with(dataset, spec, FitOptions::default())
}

pub fn fit_with(dataset: &GrowthDataset, spec: &ModelSpec, options: FitOptions) -> Result<MixedModelFit> {
    MixedModel::new(dataset, spec, options)?.fit()
}

/// Profiled REML deviance (`-2` × restricted log-likelihood) at `theta`;
/// `+∞` when the marginal covariance is numerically singular.
pub fn reml_deviance(dataset: &GrowthDataset, spec: &ModelSpec, theta: &[f64]) -> Result<f64> {
    Ok(MixedModel::new(dataset, spec, FitOptions::default())?.objective(theta))
}
