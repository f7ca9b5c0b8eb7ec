//! Degree-1 B-spline ("tent") bases used by the broken-stick model.
//!
//! A basis over knots `κ_1 < … < κ_K < κ_{K+1}` has `K + 1` functions; function
//! `k` peaks at 1 on knot `k` and falls linearly to 0 at the neighbouring
//! knots. The left boundary coincides with the first internal knot.

use serde::{Deserialize, Serialize};

use crate::data::AnalysisWindow;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    /// `κ_1 … κ_K` followed by the right boundary `κ_{K+1}`.
    nodes: Vec<f64>,
}

impl KnotVector {
    /// `internal` holds `κ_1 < … < κ_K`; `κ_1` doubles as the left boundary.
    pub fn new(internal: &[f64], right_boundary: f64) -> Result<Self> {
        if internal.is_empty() {
            return Err(Error::InvalidKnots("at least one internal knot is required".into()));
        }
        let mut nodes = internal.to_vec();
        nodes.push(right_boundary);
        if nodes.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidKnots("knots must be finite".into()));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidKnots(format!("knots must be strictly increasing: {nodes:?}")));
        }
        Ok(Self { nodes })
    }

    /// `n_internal` evenly spaced internal knots starting at the window start,
    /// with the window end as right boundary. Four knots over `[0, 1]` give
    /// `{0, 0.25, 0.5, 0.75}`.
    pub fn evenly_spaced(window: &AnalysisWindow, n_internal: usize) -> Result<Self> {
        if n_internal == 0 {
            return Err(Error::InvalidKnots("at least one internal knot is required".into()));
        }
        let step = window.width() / n_internal as f64;
        let internal: Vec<f64> = (0..n_internal).map(|i| window.start() + step * i as f64).collect();
        Self::new(&internal, window.end())
    }

    pub fn internal(&self) -> &[f64] {
        &self.nodes[..self.nodes.len() - 1]
    }

    /// All distinct knot positions, `κ_1 … κ_{K+1}`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn left(&self) -> f64 {
        self.nodes[0]
    }

    pub fn right(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Number of basis functions, `K + 1`.
    pub fn n_basis(&self) -> usize {
        self.nodes.len()
    }

    /// Number of inter-knot segments, `K`.
    pub fn n_segments(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn contains(&self, t: f64) -> bool {
        self.left() <= t && t <= self.right()
    }

    /// Index `j` of the segment `[κ_j, κ_{j+1}]` holding `t`; the right boundary
    /// belongs to the last segment.
    fn segment_of(&self, t: f64) -> usize {
        let last = self.n_segments() - 1;
        match self.nodes.partition_point(|&k| k <= t) {
            0 => 0,
            p => (p - 1).min(last),
        }
    }

    /// Writes the basis row for `t` into `out` (length `n_basis`).
    pub fn basis_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        if !self.contains(t) {
            return Err(Error::OutsideBoundary { age: t, lower: self.left(), upper: self.right() });
        }
        debug_assert_eq!(out.len(), self.n_basis());
        out.iter_mut().for_each(|v| *v = 0.0);
        let j = self.segment_of(t);
        let (lo, hi) = (self.nodes[j], self.nodes[j + 1]);
        let w = (t - lo) / (hi - lo);
        out[j] = 1.0 - w;
        out[j + 1] = w;
        Ok(())
    }
}

/// Basis values of every tent function at age `t`.
pub fn basis_row(t: f64, knots: &KnotVector) -> Result<Vec<f64>> {
    let mut row = vec![0.0; knots.n_basis()];
    knots.basis_into(t, &mut row)?;
    Ok(row)
}

/// Stacks `basis_row` for every age; the result has `K + 1` columns.
pub fn design_matrix(ages: &[f64], knots: &KnotVector) -> Result<Matrix> {
    let mut m = Matrix::zeros(ages.len(), knots.n_basis());
    for (i, &t) in ages.iter().enumerate() {
        knots.basis_into(t, m.row_mut(i))?;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quarter_knots() -> KnotVector {
        KnotVector::new(&[0.0, 0.25, 0.5, 0.75], 1.0).unwrap()
    }

    fn assert_row(actual: &[f64], expected: &[f64]) {
        assert_eq!(actual.len(), expected.len());
        for (a, e) in actual.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12, "{actual:?} vs {expected:?}");
        }
    }

    #[test]
    fn knots_are_tent_peaks() {
        let k = quarter_knots();
        for (i, &t) in k.nodes().iter().enumerate() {
            let row = basis_row(t, &k).unwrap();
            let mut unit = vec![0.0; 5];
            unit[i] = 1.0;
            assert_row(&row, &unit);
        }
    }

    #[test]
    fn hand_evaluated_rows() {
        let k = quarter_knots();
        assert_row(&basis_row(0.125, &k).unwrap(), &[0.5, 0.5, 0.0, 0.0, 0.0]);
        assert_row(&basis_row(0.6, &k).unwrap(), &[0.0, 0.0, 0.6, 0.4, 0.0]);
    }

    #[test]
    fn outside_boundary_is_rejected() {
        let k = quarter_knots();
        assert!(basis_row(-0.01, &k).is_err());
        assert!(basis_row(1.01, &k).is_err());
    }

    #[test]
    fn design_matrix_shapes() {
        let k = quarter_knots();
        let empty = design_matrix(&[], &k).unwrap();
        assert_eq!((empty.rows(), empty.cols()), (0, 5));

        let id = design_matrix(k.nodes(), &k).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(id[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }

        let m = design_matrix(&[0.125, 0.6], &k).unwrap();
        assert_row(m.row(0), &[0.5, 0.5, 0.0, 0.0, 0.0]);
        assert_row(m.row(1), &[0.0, 0.0, 0.6, 0.4, 0.0]);
    }

    #[test]
    fn evenly_spaced_defaults() {
        let k = KnotVector::evenly_spaced(&AnalysisWindow::first_year(), 4).unwrap();
        assert_eq!(k.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(k.n_segments(), 4);
    }

    #[test]
    fn invalid_knots() {
        assert!(KnotVector::new(&[], 1.0).is_err());
        assert!(KnotVector::new(&[0.0, 0.5, 0.5], 1.0).is_err());
        assert!(KnotVector::new(&[0.0, 1.0], 1.0).is_err());
    }

    /// Evaluates the same piecewise-linear function through the truncated-line
    /// basis `{1, t, (t - κ_2)_+, …, (t - κ_K)_+}`.
    fn truncated_eval(knots: &KnotVector, values_at_nodes: &[f64], t: f64) -> f64 {
        let n = knots.nodes();
        let slopes: Vec<f64> = (0..knots.n_segments())
            .map(|k| (values_at_nodes[k + 1] - values_at_nodes[k]) / (n[k + 1] - n[k]))
            .collect();
        let intercept = values_at_nodes[0] - slopes[0] * n[0];
        let mut f = intercept + slopes[0] * t;
        for k in 1..knots.n_segments() {
            f += (slopes[k] - slopes[k - 1]) * (t - n[k]).max(0.0);
        }
        f
    }

    proptest! {
        #[test]
        fn partition_of_unity(t in 0.0f64..=1.0) {
            let row = basis_row(t, &quarter_knots()).unwrap();
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(row.iter().filter(|v| **v != 0.0).count() <= 2);
        }

        #[test]
        fn linear_within_segment(seg in 0usize..4, a in 0.0f64..=1.0, b in 0.0f64..=1.0, lam in 0.0f64..=1.0) {
            let k = quarter_knots();
            let lo = k.nodes()[seg];
            let t = lo + 0.25 * a;
            let u = lo + 0.25 * b;
            let mix = basis_row(lam * t + (1.0 - lam) * u, &k).unwrap();
            let rt = basis_row(t, &k).unwrap();
            let ru = basis_row(u, &k).unwrap();
            for i in 0..5 {
                prop_assert!((mix[i] - (lam * rt[i] + (1.0 - lam) * ru[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn matches_truncated_line_basis(
            coefs in proptest::collection::vec(-5.0f64..5.0, 5),
            t in 0.0f64..=1.0,
        ) {
            let k = quarter_knots();
            let row = basis_row(t, &k).unwrap();
            let bspline: f64 = row.iter().zip(&coefs).map(|(b, c)| b * c).sum();
            prop_assert!((bspline - truncated_eval(&k, &coefs, t)).abs() < 1e-10);
        }
    }
}
