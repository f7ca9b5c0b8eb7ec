//! Box-constrained Nelder–Mead minimization.
//!
//! Trial points are projected onto the box before evaluation. Dimension-adaptive
//! coefficients keep the simplex from collapsing in higher dimensions. After
//! the simplex converges it is rebuilt around the best vertex; the search stops
//! once a restart no longer improves the objective.

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOptions {
    /// Edge length of the initial simplex along each coordinate.
    pub initial_step: f64,
    /// Convergence when `f_max - f_min <= rel_tol * |f_min| + abs_tol`.
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Optional bound on the simplex diameter (0 disables the check).
    pub x_tol: f64,
    pub max_evals: usize,
    pub max_restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { initial_step: 0.25, rel_tol: 1e-8, abs_tol: 1e-12, x_tol: 0.0, max_evals: 10_000, max_restarts: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

struct Bounded<'a, F> {
    f: F,
    lower: &'a [f64],
    upper: &'a [f64],
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Bounded<'_, F> {
    fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(self.lower).zip(self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    fn eval(&mut self, x: &mut [f64]) -> f64 {
        self.project(x);
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Minimizes `f` over the box `[lower, upper]` starting from `x0`.
pub fn minimize_bounded<F>(f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(lower.len(), n);
    assert_eq!(upper.len(), n);
    let mut problem = Bounded { f, lower, upper, evals: 0 };

    let mut best = x0.to_vec();
    let mut best_value = problem.eval(&mut best);
    if n == 0 {
        return Minimum { x: best, value: best_value, evaluations: problem.evals, converged: true };
    }

    let mut converged = false;
    for restart in 0..=opts.max_restarts {
        let (x, value, ok) = simplex_search(&mut problem, &best, best_value, opts);
        let improvement = best_value - value;
        let scale = opts.rel_tol * value.abs() + opts.abs_tol;
        if value <= best_value {
            best = x;
            best_value = value;
        }
        if !ok {
            break;
        }
        if restart > 0 && improvement <= scale {
            converged = true;
            break;
        }
        if problem.evals >= opts.max_evals {
            break;
        }
    }
    Minimum { x: best, value: best_value, evaluations: problem.evals, converged }
}

/// One Nelder–Mead run from a fresh simplex around `start`. Returns the best
/// vertex and whether the tolerance was met within the evaluation budget.
fn simplex_search<F: FnMut(&[f64]) -> f64>(
    problem: &mut Bounded<'_, F>,
    start: &[f64],
    start_value: f64,
    opts: &NelderMeadOptions,
) -> (Vec<f64>, f64, bool) {
    let n = start.len();
    let nf = n as f64;
    let (reflect, expand, contract, shrink) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut values: Vec<f64> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    values.push(start_value);
    for i in 0..n {
        let mut v = start.to_vec();
        let step = opts.initial_step * start[i].abs().max(1.0);
        v[i] = if start[i] + step <= problem.upper[i] { start[i] + step } else { start[i] - step };
        let fv = problem.eval(&mut v);
        simplex.push(v);
        values.push(fv);
    }

    let mut order: Vec<usize> = (0..=n).collect();
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];

    loop {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let (ib, iw, isw) = (order[0], order[n], order[n - 1]);
        let (fb, fw, fsw) = (values[ib], values[iw], values[isw]);

        let spread_ok = fw - fb <= opts.rel_tol * fb.abs() + opts.abs_tol;
        let size_ok = opts.x_tol <= 0.0
            || simplex
                .iter()
                .all(|v| v.iter().zip(&simplex[ib]).all(|(a, b)| (a - b).abs() <= opts.x_tol));
        if fb.is_finite() && spread_ok && size_ok {
            return (simplex[ib].clone(), fb, true);
        }
        if problem.evals >= opts.max_evals {
            return (simplex[ib].clone(), fb, false);
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&simplex[i]) {
                *c += x / nf;
            }
        }

        for k in 0..n {
            trial[k] = centroid[k] + reflect * (centroid[k] - simplex[iw][k]);
        }
        let fr = problem.eval(&mut trial);

        if fr < fb {
            for k in 0..n {
                trial2[k] = centroid[k] + expand * (trial[k] - centroid[k]);
            }
            let fe = problem.eval(&mut trial2);
            if fe < fr {
                simplex[iw].copy_from_slice(&trial2);
                values[iw] = fe;
            } else {
                simplex[iw].copy_from_slice(&trial);
                values[iw] = fr;
            }
            continue;
        }
        if fr < fsw {
            simplex[iw].copy_from_slice(&trial);
            values[iw] = fr;
            continue;
        }

        // contraction: outside if the reflection improved on the worst vertex
        let outside = fr < fw;
        for k in 0..n {
            trial2[k] = if outside {
                centroid[k] + contract * (trial[k] - centroid[k])
            } else {
                centroid[k] + contract * (simplex[iw][k] - centroid[k])
            };
        }
        let fc = problem.eval(&mut trial2);
        if (outside && fc <= fr) || (!outside && fc < fw) {
            simplex[iw].copy_from_slice(&trial2);
            values[iw] = fc;
            continue;
        }

        let best = simplex[ib].clone();
        for &i in &order[1..] {
            for k in 0..n {
                simplex[i][k] = best[k] + shrink * (simplex[i][k] - best[k]);
            }
            let mut v = std::mem::take(&mut simplex[i]);
            values[i] = problem.eval(&mut v);
            simplex[i] = v;
        }
    }
}
