//! Quantile-threshold classification.

use super::{Classification, Label, Method};
use crate::error::{Error, Result};
use crate::velocity::VelocityTable;

/// Labels the `⌊proportion · n⌋` lowest velocities as faltering. Ties are
/// broken by child id, so the result is deterministic.
pub fn threshold_classify(velocities: &VelocityTable, proportion: f64) -> Result<Classification> {
    if !(0.0..1.0).contains(&proportion) {
        return Err(Error::InvalidConfig(format!("threshold proportion must lie in [0, 1), got {proportion}")));
    }
    // entries iterate in id order and the sort is stable
    let mut ranked: Vec<(&String, f64)> = velocities.entries.iter().map(|(k, v)| (k, *v)).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    let n_low = ((proportion * ranked.len() as f64) + 1e-9).floor() as usize;

    let labels = ranked
        .iter()
        .enumerate()
        .map(|(rank, (id, _))| ((*id).clone(), if rank < n_low { Label::Faltering } else { Label::NonFaltering }))
        .collect();
    let threshold = n_low.checked_sub(1).map(|i| ranked[i].1);
    Ok(Classification { method: Method::Threshold, labels, posteriors: None, threshold, cutoff: Some(proportion) })
}
