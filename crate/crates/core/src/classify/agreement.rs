//! Percentage discordance and Cohen's kappa between two classifications.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::Classification;
use crate::error::{Error, Result};

/// One-sided level for the kappa significance test.
pub const SIGNIFICANCE_LEVEL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    /// Children labelled by both classifications.
    pub n: usize,
    pub only_in_first: usize,
    pub only_in_second: usize,
    /// 2×2 table: `[[both faltering, first only], [second only, neither]]`.
    pub counts: [[usize; 2]; 2],
    pub percent_discordance: f64,
    /// `None` when chance agreement is 1 and kappa is undefined.
    pub kappa: Option<f64>,
    pub kappa_z: Option<f64>,
    pub kappa_p: Option<f64>,
    pub significant: bool,
}

/// Compares two classifications on the children they share. The kappa test is
/// one-sided against `κ = 0` using the large-sample standard error under the
/// null hypothesis of chance agreement.
pub fn agreement(a: &Classification, b: &Classification) -> Result<AgreementStats> {
    let mut counts = [[0usize; 2]; 2];
    let mut n = 0;
    for (id, la) in &a.labels {
        if let Some(lb) = b.labels.get(id) {
            let i = usize::from(!la.is_faltering());
            let j = usize::from(!lb.is_faltering());
            counts[i][j] += 1;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData("the classifications share no children".into()));
    }
    let only_in_first = a.labels.len() - n;
    let only_in_second = b.labels.len() - n;

    let nf = n as f64;
    let p = |i: usize, j: usize| counts[i][j] as f64 / nf;
    let p_o = p(0, 0) + p(1, 1);
    let row = [p(0, 0) + p(0, 1), p(1, 0) + p(1, 1)];
    let col = [p(0, 0) + p(1, 0), p(0, 1) + p(1, 1)];
    let p_e = row[0] * col[0] + row[1] * col[1];
    let percent_discordance = 100.0 * (counts[0][1] + counts[1][0]) as f64 / nf;

    let (kappa, kappa_z, kappa_p) = if (1.0 - p_e).abs() <= 1e-15 {
        (None, None, None)
    } else {
        let kappa = (p_o - p_e) / (1.0 - p_e);
        let cross: f64 = (0..2).map(|i| row[i] * col[i] * (row[i] + col[i])).sum();
        let var0 = (p_e + p_e * p_e - cross) / (nf * (1.0 - p_e).powi(2));
        if var0 > 0.0 {
            let z = kappa / var0.sqrt();
            (Some(kappa), Some(z), Some(0.5 * erfc(z / std::f64::consts::SQRT_2)))
        } else {
            (Some(kappa), None, None)
        }
    };
    let significant = kappa_p.is_some_and(|p| p < SIGNIFICANCE_LEVEL);
    Ok(AgreementStats { n, only_in_first, only_in_second, counts, percent_discordance, kappa, kappa_z, kappa_p, significant })
}
