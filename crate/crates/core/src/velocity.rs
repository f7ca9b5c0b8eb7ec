//! Per-child growth velocities under the eight supported metrics.
//!
//! SDS-family metrics come straight from the data: the change in z-score
//! between the first and last in-window measurements, optionally adjusted for
//! regression to the mean (cSDS). Model-based metrics are per-year slopes read
//! off fitted mixed models: the child's random slope (RS, cRS), the
//! duration-weighted mean of broken-stick segment slopes (ARS, cARS) or their
//! minimum (MRS, cMRS).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{baseline, followup, AnalysisWindow, GrowthDataset};
use crate::error::{Error, Result};
use crate::mixed::{fit_with, FitOptions, MixedModelFit, ModelKind, ModelSpec};
use crate::spline::KnotVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "SDS")]
    Sds,
    #[serde(rename = "cSDS")]
    CSds,
    #[serde(rename = "RS")]
    Rs,
    #[serde(rename = "cRS")]
    CRs,
    #[serde(rename = "ARS")]
    Ars,
    #[serde(rename = "cARS")]
    CArs,
    #[serde(rename = "MRS")]
    Mrs,
    #[serde(rename = "cMRS")]
    CMrs,
}

impl Metric {
    pub const ALL: [Metric; 8] =
        [Metric::Sds, Metric::CSds, Metric::Rs, Metric::CRs, Metric::Ars, Metric::CArs, Metric::Mrs, Metric::CMrs];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Sds => "SDS",
            Metric::CSds => "cSDS",
            Metric::Rs => "RS",
            Metric::CRs => "cRS",
            Metric::Ars => "ARS",
            Metric::CArs => "cARS",
            Metric::Mrs => "MRS",
            Metric::CMrs => "cMRS",
        }
    }

    /// The mixed model this metric is read from, if any.
    pub fn model_kind(self) -> Option<ModelKind> {
        match self {
            Metric::Sds | Metric::CSds => None,
            Metric::Rs => Some(ModelKind::RandomSlopes),
            Metric::CRs => Some(ModelKind::ConditionalRandomSlopes),
            Metric::Ars | Metric::Mrs => Some(ModelKind::BrokenStick),
            Metric::CArs | Metric::CMrs => Some(ModelKind::ConditionalBrokenStick),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown metric {s:?}")))
    }
}

/// Velocities for one metric; every child is either an entry or undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityTable {
    pub metric: Metric,
    pub entries: BTreeMap<String, f64>,
    pub undefined: Vec<String>,
}

impl VelocityTable {
    pub fn new(metric: Metric) -> Self {
        Self { metric, entries: BTreeMap::new(), undefined: Vec::new() }
    }

    pub fn get(&self, child: &str) -> Option<f64> {
        self.entries.get(child).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Defined velocities in child-id order.
    pub fn values(&self) -> Vec<f64> {
        self.entries.values().copied().collect()
    }

    /// `child_id,metric,velocity,defined`; undefined children have an empty velocity.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["child_id", "metric", "velocity", "defined"])?;
        let mut rows: Vec<(&str, Option<f64>)> = self.entries.iter().map(|(k, v)| (k.as_str(), Some(*v))).collect();
        rows.extend(self.undefined.iter().map(|k| (k.as_str(), None)));
        rows.sort_by(|a, b| a.0.cmp(b.0));
        for (id, v) in rows {
            let vel = v.map(|x| x.to_string()).unwrap_or_default();
            out.write_record([id, self.metric.name(), &vel, if v.is_some() { "true" } else { "false" }])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut table: Option<VelocityTable> = None;
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::MalformedRow { row, message: e.to_string() })?;
            let bad = |m: &str| Error::MalformedRow { row, message: m.to_string() };
            let id = rec.get(0).ok_or_else(|| bad("missing child_id"))?.to_string();
            let metric: Metric = rec.get(1).ok_or_else(|| bad("missing metric"))?.parse()?;
            let t = table.get_or_insert_with(|| VelocityTable::new(metric));
            if t.metric != metric {
                return Err(bad("mixed metrics in one table"));
            }
            match rec.get(3) {
                Some("true") => {
                    let v: f64 = rec
                        .get(2)
                        .and_then(|s| s.parse().ok())
                        .filter(|v: &f64| v.is_finite())
                        .ok_or_else(|| bad("invalid velocity"))?;
                    t.entries.insert(id, v);
                }
                Some("false") => t.undefined.push(id),
                _ => return Err(bad("defined flag must be true or false")),
            }
        }
        table.ok_or(Error::EmptyDataset)
    }
}

/// Classical SDS: followup minus baseline z-score.
pub fn sds(dataset: &GrowthDataset) -> VelocityTable {
    let window = dataset.window();
    let mut table = VelocityTable::new(Metric::Sds);
    for child in dataset.children() {
        match (baseline(child, &window), followup(child, &window)) {
            (Ok(b), Some(f)) => {
                table.entries.insert(child.id().to_string(), f.zscore - b.zscore);
            }
            _ => table.undefined.push(child.id().to_string()),
        }
    }
    table
}

fn pearson(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Conditional SDS: `(z_1 - r z_0) / sqrt(1 - r²)` with `r` the cohort
/// correlation between baseline and followup z-scores.
pub fn csds(dataset: &GrowthDataset) -> Result<VelocityTable> {
    let window = dataset.window();
    let mut table = VelocityTable::new(Metric::CSds);
    let mut pairs = Vec::new();
    let mut ids = Vec::new();
    for child in dataset.children() {
        match (baseline(child, &window), followup(child, &window)) {
            (Ok(b), Some(f)) => {
                pairs.push((b.zscore, f.zscore));
                ids.push(child.id().to_string());
            }
            _ => table.undefined.push(child.id().to_string()),
        }
    }
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!("{} complete baseline/followup pairs, need 3", pairs.len())));
    }
    let r = pearson(&pairs);
    if !r.is_finite() || (1.0 - r.abs()) <= 1e-12 {
        return Err(Error::Degenerate(format!("baseline/followup correlation r = {r}")));
    }
    let denom = (1.0 - r * r).sqrt();
    for (id, (z0, z1)) in ids.into_iter().zip(pairs) {
        table.entries.insert(id, (z1 - r * z0) / denom);
    }
    Ok(table)
}

fn expect_kind(fit: &MixedModelFit, expected: ModelKind) -> Result<()> {
    if fit.kind() != expected {
        return Err(Error::KindMismatch { expected: expected.to_string(), found: fit.kind().to_string() });
    }
    Ok(())
}

/// Random slope `ω_{i1}` = fixed slope + the child's slope deviation.
pub fn rs(fit: &MixedModelFit) -> Result<VelocityTable> {
    expect_kind(fit, ModelKind::RandomSlopes)?;
    let mut table = VelocityTable::new(Metric::Rs);
    for (id, b) in fit.child_ids.iter().zip(&fit.blups) {
        table.entries.insert(id.clone(), fit.beta[1] + b[1]);
    }
    Ok(table)
}

/// Conditional random slope: difference of predictions at the window ends
/// divided by the window width.
pub fn crs(fit: &MixedModelFit, baselines: &BTreeMap<String, f64>, window: &AnalysisWindow) -> Result<VelocityTable> {
    expect_kind(fit, ModelKind::ConditionalRandomSlopes)?;
    let mut table = VelocityTable::new(Metric::CRs);
    for id in &fit.child_ids {
        let z0 = *baselines.get(id).ok_or_else(|| Error::MissingBaseline(id.clone()))?;
        let p = fit.predict(id, &[window.start(), window.end()], Some(z0))?;
        table.entries.insert(id.clone(), (p[1] - p[0]) / window.width());
    }
    table.undefined = fit.excluded_children.clone();
    Ok(table)
}

/// Per-child slopes of the predicted broken-stick trajectory on each segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSlopes {
    pub knots: KnotVector,
    pub conditional: bool,
    pub slopes: BTreeMap<String, Vec<f64>>,
    pub undefined: Vec<String>,
}

/// Segment slopes from predictions at consecutive knots. Conditional fits use
/// `baselines` when given, otherwise the baselines recorded in the fit.
pub fn segment_slopes(fit: &MixedModelFit, baselines: Option<&BTreeMap<String, f64>>) -> Result<SegmentSlopes> {
    let kind = fit.kind();
    if !kind.is_broken_stick() {
        return Err(Error::KindMismatch { expected: "BrokenStick or cBrokenStick".into(), found: kind.to_string() });
    }
    let knots = fit.spec.knots().expect("broken-stick fit carries knots").clone();
    let nodes = knots.nodes();
    let mut slopes = BTreeMap::new();
    for (i, id) in fit.child_ids.iter().enumerate() {
        let z0 = if kind.is_conditional() {
            let z = match baselines {
                Some(map) => map.get(id).copied(),
                None => fit.baselines[i],
            };
            Some(z.ok_or_else(|| Error::MissingBaseline(id.clone()))?)
        } else {
            None
        };
        let pred = fit.predict(id, nodes, z0)?;
        let s: Vec<f64> = (0..knots.n_segments())
            .map(|k| (pred[k + 1] - pred[k]) / (nodes[k + 1] - nodes[k]))
            .collect();
        slopes.insert(id.clone(), s);
    }
    Ok(SegmentSlopes { knots, conditional: kind.is_conditional(), slopes, undefined: fit.excluded_children.clone() })
}

/// Duration-weighted mean of the segment slopes.
pub fn ars(slopes: &SegmentSlopes) -> VelocityTable {
    let nodes = slopes.knots.nodes();
    let span = slopes.knots.right() - slopes.knots.left();
    let mut table = VelocityTable::new(if slopes.conditional { Metric::CArs } else { Metric::Ars });
    for (id, s) in &slopes.slopes {
        let v = s.iter().enumerate().map(|(k, v)| v * (nodes[k + 1] - nodes[k])).sum::<f64>() / span;
        table.entries.insert(id.clone(), v);
    }
    table.undefined = slopes.undefined.clone();
    table
}

/// Minimum segment slope.
pub fn mrs(slopes: &SegmentSlopes) -> VelocityTable {
    let mut table = VelocityTable::new(if slopes.conditional { Metric::CMrs } else { Metric::Mrs });
    for (id, s) in &slopes.slopes {
        table.entries.insert(id.clone(), s.iter().copied().fold(f64::INFINITY, f64::min));
    }
    table.undefined = slopes.undefined.clone();
    table
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    pub knots: KnotVector,
    pub fit_options: FitOptions,
}

impl MetricConfig {
    /// Four evenly spaced internal knots over the window.
    pub fn for_window(window: &AnalysisWindow) -> Result<Self> {
        Ok(Self { knots: KnotVector::evenly_spaced(window, 4)?, fit_options: FitOptions::default() })
    }

    fn spec_for(&self, kind: ModelKind) -> ModelSpec {
        match kind {
            ModelKind::RandomSlopes => ModelSpec::random_slopes(),
            ModelKind::ConditionalRandomSlopes => ModelSpec::conditional_random_slopes(),
            ModelKind::BrokenStick => ModelSpec::broken_stick(self.knots.clone()),
            ModelKind::ConditionalBrokenStick => ModelSpec::conditional_broken_stick(self.knots.clone()),
        }
    }
}

/// Velocity tables plus the fits they were read from.
#[derive(Debug, Clone)]
pub struct MetricRun {
    pub tables: Vec<VelocityTable>,
    pub fits: BTreeMap<String, MixedModelFit>,
}

/// Computes one metric, fitting whatever model it needs.
pub fn compute(metric: Metric, dataset: &GrowthDataset, config: &MetricConfig) -> Result<VelocityTable> {
    let mut run = compute_many(&[metric], dataset, config)?;
    Ok(run.tables.remove(0))
}

/// Computes several metrics, fitting each required model once.
pub fn compute_many(metrics: &[Metric], dataset: &GrowthDataset, config: &MetricConfig) -> Result<MetricRun> {
    let mut fits: BTreeMap<String, MixedModelFit> = BTreeMap::new();
    for kind in metrics.iter().filter_map(|m| m.model_kind()) {
        let key = kind.to_string();
        if !fits.contains_key(&key) {
            let fit = fit_with(dataset, &config.spec_for(kind), config.fit_options.clone())?;
            fits.insert(key, fit);
        }
    }
    let baselines = dataset.baselines();
    let window = dataset.window();
    let mut tables = Vec::with_capacity(metrics.len());
    for &metric in metrics {
        let fit = metric.model_kind().map(|k| &fits[&k.to_string()]);
        let table = match metric {
            Metric::Sds => sds(dataset),
            Metric::CSds => csds(dataset)?,
            Metric::Rs => rs(fit.unwrap())?,
            Metric::CRs => crs(fit.unwrap(), &baselines, &window)?,
            Metric::Ars | Metric::CArs => ars(&segment_slopes(fit.unwrap(), Some(&baselines))?),
            Metric::Mrs | Metric::CMrs => mrs(&segment_slopes(fit.unwrap(), Some(&baselines))?),
        };
        tables.push(table);
    }
    Ok(MetricRun { tables, fits })
}
