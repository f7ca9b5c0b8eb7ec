//! Synthetic cohorts with known faltering subgroups, and the benchmark that
//! scores every velocity metric × classifier against the truth.
//!
//! The general population follows `z = ω t + ε` with `ω ~ N(-1, σ_ω)`. Four
//! faltering subgroups are mixed in: mild and severe (steeper straight
//! lines), and two broken lines that change slope at `κ = 1/3` years, where
//! the slope after the break is drawn directly (level-off around 0, catch-up
//! around 0.75). There is no intercept.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    agreement, fit_gmm2, mm_classify, threshold_classify, AgreementStats, Classification, Label, Method,
    MixtureOptions,
};
use crate::data::{AnalysisWindow, ChildSeries, GrowthDataset, Measurement};
use crate::error::{Error, Result};
use crate::mixed::{FitOptions, MixedModel, ModelSpec};
use crate::rng;
use crate::spline::KnotVector;
use crate::velocity::{ars, mrs, rs, sds, segment_slopes, Metric, VelocityTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subgroup {
    General,
    Mild,
    Severe,
    Level,
    Catchup,
}

impl Subgroup {
    pub const FALTERING: [Subgroup; 4] = [Subgroup::Mild, Subgroup::Severe, Subgroup::Level, Subgroup::Catchup];

    pub fn is_faltering(self) -> bool {
        self != Subgroup::General
    }

    pub fn name(self) -> &'static str {
        match self {
            Subgroup::General => "General",
            Subgroup::Mild => "Mild",
            Subgroup::Severe => "Severe",
            Subgroup::Level => "Level",
            Subgroup::Catchup => "Catchup",
        }
    }

    /// Mean slope before the break and, for broken subgroups, after it.
    fn slope_means(self) -> (f64, Option<f64>) {
        match self {
            Subgroup::General => (-1.0, None),
            Subgroup::Mild => (-2.5, None),
            Subgroup::Severe => (-4.5, None),
            Subgroup::Level => (-3.5, Some(0.0)),
            Subgroup::Catchup => (-4.5, Some(0.75)),
        }
    }

    fn faltering_index(self) -> Option<usize> {
        Subgroup::FALTERING.iter().position(|s| *s == self)
    }
}

/// Noise-free trajectory of one simulated child.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub slope: f64,
    /// `(break age, slope after the break)` for broken-line subgroups.
    pub after_break: Option<(f64, f64)>,
}

impl Trajectory {
    pub fn eval(&self, t: f64) -> f64 {
        match self.after_break {
            Some((kappa, s2)) if t >= kappa => self.slope * kappa + s2 * (t - kappa),
            _ => self.slope * t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Dense,
    Sparse,
}

impl Design {
    /// Inclusive range of observations per child.
    pub fn obs_range(self) -> (usize, usize) {
        match self {
            Design::Dense => (6, 12),
            Design::Sparse => (2, 6),
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::Dense => "dense",
            Design::Sparse => "sparse",
        })
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dense" => Ok(Design::Dense),
            "sparse" => Ok(Design::Sparse),
            other => Err(Error::InvalidConfig(format!("unknown design {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_children: usize,
    pub proportion_faltering: f64,
    /// Relative sizes of the mild, severe, level and catch-up subgroups.
    pub subgroup_ratio: [u32; 4],
    pub sigma_omega: f64,
    pub sigma_epsilon: f64,
    pub break_age: f64,
    pub obs_range: (usize, usize),
    pub internal_knots: Vec<f64>,
    pub right_boundary: f64,
    pub n_replications: usize,
    pub seed: u64,
    pub mixture: MixtureOptions,
}

impl ScenarioConfig {
    /// The benchmark defaults: 1000 children, `σ_ω = 0.25`, `σ_ε = 0.3`, a
    /// break at 1/3 years, knots at 0, 0.25, 0.5 and 0.75, 100 replications.
    pub fn new(proportion_faltering: f64, design: Design, seed: u64) -> Self {
        Self {
            n_children: 1000,
            proportion_faltering,
            subgroup_ratio: [5, 2, 2, 1],
            sigma_omega: 0.25,
            sigma_epsilon: 0.3,
            break_age: 1.0 / 3.0,
            obs_range: design.obs_range(),
            internal_knots: vec![0.0, 0.25, 0.5, 0.75],
            right_boundary: 1.0,
            n_replications: 100,
            seed,
            mixture: MixtureOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_children < 4 {
            return bad(format!("n_children = {} is too small", self.n_children));
        }
        if !(0.0..1.0).contains(&self.proportion_faltering) {
            return bad(format!("proportion_faltering must lie in [0, 1), got {}", self.proportion_faltering));
        }
        if self.subgroup_ratio.iter().all(|r| *r == 0) {
            return bad("subgroup ratio must have a positive entry".into());
        }
        if !(self.sigma_omega >= 0.0 && self.sigma_epsilon >= 0.0) {
            return bad("standard deviations must be non-negative".into());
        }
        if !(0.0 < self.break_age && self.break_age < 1.0) {
            return bad(format!("break age must lie in (0, 1), got {}", self.break_age));
        }
        let (lo, hi) = self.obs_range;
        if lo < 2 || lo > hi {
            return bad(format!("observation range {lo}..={hi} must start at 2 or more"));
        }
        if self.n_replications == 0 {
            return bad("at least one replication is required".into());
        }
        self.knots().map(|_| ())
    }

    pub fn knots(&self) -> Result<KnotVector> {
        KnotVector::new(&self.internal_knots, self.right_boundary)
    }

    pub fn n_faltering(&self) -> usize {
        (self.proportion_faltering * self.n_children as f64).round() as usize
    }

    /// Subgroup sizes in the configured ratio, summing to the faltering total
    /// (largest remainders absorb rounding).
    pub fn subgroup_counts(&self) -> [usize; 4] {
        let total = self.n_faltering();
        let weight: u32 = self.subgroup_ratio.iter().sum();
        let exact: Vec<f64> = self.subgroup_ratio.iter().map(|r| total as f64 * *r as f64 / weight as f64).collect();
        let mut counts = [0usize; 4];
        for (c, e) in counts.iter_mut().zip(&exact) {
            *c = e.floor() as usize;
        }
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let assigned: usize = counts.iter().sum();
        for &i in order.iter().take(total - assigned) {
            counts[i] += 1;
        }
        counts
    }
}

/// A generated cohort and the truth behind it.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub dataset: GrowthDataset,
    pub subgroups: BTreeMap<String, Subgroup>,
    pub trajectories: BTreeMap<String, Trajectory>,
}

fn normal(mean: f64, sd: f64) -> Result<Normal<f64>> {
    Normal::new(mean, sd).map_err(|e| Error::InvalidConfig(e.to_string()))
}

/// Observation ages: one in `[0, 1/12]`, one in `[11/12, 1]`, the rest in between.
fn sample_ages<R: Rng>(rng: &mut R, count: usize) -> Vec<f64> {
    let mut ages = Vec::with_capacity(count);
    ages.push(rng.random_range(0.0..=1.0 / 12.0));
    if count >= 2 {
        ages.push(rng.random_range(11.0 / 12.0..=1.0));
    }
    for _ in 2..count {
        ages.push(rng.random_range(1.0 / 12.0..=11.0 / 12.0));
    }
    ages.sort_by(f64::total_cmp);
    ages
}

/// Draws the cohort for one replication. Children `0 .. n_general` belong to
/// the general population, followed by the mild, severe, level and catch-up
/// subgroups.
pub fn generate_population(cfg: &ScenarioConfig, replication: usize) -> Result<Cohort> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, replication as u64);
    let counts = cfg.subgroup_counts();
    let n_general = cfg.n_children - counts.iter().sum::<usize>();
    let mut plan = vec![Subgroup::General; n_general];
    for (s, &c) in Subgroup::FALTERING.iter().zip(&counts) {
        plan.extend(std::iter::repeat_n(*s, c));
    }

    let width = (cfg.n_children - 1).to_string().len();
    let noise = normal(0.0, cfg.sigma_epsilon)?;
    let mut children = Vec::with_capacity(cfg.n_children);
    let mut subgroups = BTreeMap::new();
    let mut trajectories = BTreeMap::new();
    for (i, group) in plan.into_iter().enumerate() {
        let id = format!("c{i:0width$}");
        let (m1, m2) = group.slope_means();
        let slope = normal(m1, cfg.sigma_omega)?.sample(&mut rng);
        let after_break = match m2 {
            Some(m2) => Some((cfg.break_age, normal(m2, cfg.sigma_omega)?.sample(&mut rng))),
            None => None,
        };
        let traj = Trajectory { slope, after_break };
        let count = rng.random_range(cfg.obs_range.0..=cfg.obs_range.1);
        let ms = sample_ages(&mut rng, count)
            .into_iter()
            .map(|t| Measurement::new(t, traj.eval(t) + noise.sample(&mut rng)))
            .collect::<Result<Vec<_>>>()?;
        children.push(ChildSeries::new(id.clone(), ms)?);
        subgroups.insert(id.clone(), group);
        trajectories.insert(id, traj);
    }
    let dataset = GrowthDataset::new(children, AnalysisWindow::first_year(), f64::INFINITY)?;
    Ok(Cohort { dataset, subgroups, trajectories })
}

/// The unconditional metrics scored in the benchmark.
pub const SCORED_METRICS: [Metric; 4] = [Metric::Sds, Metric::Rs, Metric::Ars, Metric::Mrs];
pub const METHODS: [Method; 2] = [Method::Threshold, Method::Mixture];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub metric: Metric,
    pub method: Method,
    /// True positives in the mild, severe, level and catch-up subgroups.
    pub true_positives: [usize; 4],
    pub total: usize,
    pub n_flagged: usize,
    /// The mixture fit failed or collapsed (mixture method only).
    pub degenerate: bool,
    /// Every EM run kept its log-likelihood non-decreasing (always true for
    /// the threshold method).
    pub em_monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub subgroup_sizes: [usize; 4],
    pub outcomes: Vec<Outcome>,
    /// Threshold vs mixture agreement for each metric.
    pub agreement: Vec<(Metric, AgreementStats)>,
    pub rs_converged: bool,
    pub broken_stick_converged: bool,
}

impl ReplicationResult {
    pub fn outcome(&self, metric: Metric, method: Method) -> &Outcome {
        self.outcomes
            .iter()
            .find(|o| o.metric == metric && o.method == method)
            .expect("every scored metric and method is present")
    }
}

fn score(labels: &Classification, truth: &BTreeMap<String, Subgroup>) -> ([usize; 4], usize) {
    let mut tp = [0usize; 4];
    for id in labels.faltering() {
        if let Some(k) = truth.get(id).and_then(|s| s.faltering_index()) {
            tp[k] += 1;
        }
    }
    (tp, tp.iter().sum())
}

/// Mixture labels plus (degenerate, monotone) flags. A failed fit labels
/// nobody faltering.
fn mixture_labels(table: &VelocityTable, seed: u64, opts: &MixtureOptions) -> (Classification, bool, bool) {
    match fit_gmm2(table, seed, opts) {
        Ok(mix) => {
            let flags = (mix.params.collapsed, mix.params.monotone);
            (mm_classify(&mix, 0.5), flags.0, flags.1)
        }
        Err(_) => {
            let labels = table.entries.keys().map(|k| (k.clone(), Label::NonFaltering)).collect();
            let none = Classification { method: Method::Mixture, labels, posteriors: None, threshold: None, cutoff: Some(0.5) };
            (none, true, true)
        }
    }
}

/// Generates one cohort, fits the random-slopes and broken-stick models,
/// and scores SDS, RS, ARS and MRS under threshold and mixture classification.
pub fn run_replication(cfg: &ScenarioConfig, replication: usize) -> Result<ReplicationResult> {
    let cohort = generate_population(cfg, replication)?;
    let ds = &cohort.dataset;
    let rs_fit = MixedModel::new(ds, &ModelSpec::random_slopes(), FitOptions::default())?.fit()?;
    let bs_fit = MixedModel::new(ds, &ModelSpec::broken_stick(cfg.knots()?), FitOptions::default())?.fit()?;
    let slopes = segment_slopes(&bs_fit, None)?;
    let tables = [sds(ds), rs(&rs_fit)?, ars(&slopes), mrs(&slopes)];

    let mut outcomes = Vec::with_capacity(8);
    let mut agreements = Vec::with_capacity(4);
    for (k, table) in tables.iter().enumerate() {
        let th = threshold_classify(table, cfg.proportion_faltering)?;
        let seed = rng::derive_seed(cfg.seed, &[replication as u64, k as u64]);
        let (mm, degenerate, em_monotone) = mixture_labels(table, seed, &cfg.mixture);
        for (labels, method, degenerate, em_monotone) in
            [(&th, Method::Threshold, false, true), (&mm, Method::Mixture, degenerate, em_monotone)]
        {
            let (true_positives, total) = score(labels, &cohort.subgroups);
            outcomes.push(Outcome {
                metric: table.metric,
                method,
                true_positives,
                total,
                n_flagged: labels.n_faltering(),
                degenerate,
                em_monotone,
            });
        }
        agreements.push((table.metric, agreement(&th, &mm)?));
    }
    Ok(ReplicationResult {
        replication,
        subgroup_sizes: cfg.subgroup_counts(),
        outcomes,
        agreement: agreements,
        rs_converged: rs_fit.converged,
        broken_stick_converged: bs_fit.converged,
    })
}

/// Runs every replication of a scenario. Replications are independent and
/// may run in parallel; results come back in replication order.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Vec<ReplicationResult>> {
    cfg.validate()?;
    (0..cfg.n_replications).into_par_iter().map(|r| run_replication(cfg, r)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruePositiveRow {
    pub metric: Metric,
    pub method: Method,
    pub per_subgroup: [f64; 4],
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub metric: Metric,
    pub percent_discordance: f64,
    /// Mean kappa over replications where it is defined.
    pub kappa: f64,
    /// Percentage of replications whose kappa test is significant.
    pub percent_significant: f64,
}

/// Replication averages in the layout of the benchmark tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub n_replications: usize,
    pub subgroup_sizes: [usize; 4],
    pub true_positives: Vec<TruePositiveRow>,
    pub agreement: Vec<AgreementRow>,
    pub nonconverged_fits: usize,
    pub degenerate_mixtures: usize,
}

impl ScenarioReport {
    pub fn row(&self, metric: Metric, method: Method) -> Option<&TruePositiveRow> {
        self.true_positives.iter().find(|r| r.metric == metric && r.method == method)
    }

    pub fn agreement_for(&self, metric: Metric) -> Option<&AgreementRow> {
        self.agreement.iter().find(|r| r.metric == metric)
    }

    /// Subgroup rows plus a total row; one TH and one MM column per metric.
    pub fn write_true_positive_table<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["subgroup".to_string(), "N".to_string()];
        for m in SCORED_METRICS {
            for method in METHODS {
                header.push(format!("{m}_{method}"));
            }
        }
        out.write_record(&header)?;
        let cell = |m: Metric, method: Method, k: Option<usize>| -> String {
            self.row(m, method)
                .map(|r| format!("{:.2}", k.map_or(r.total, |k| r.per_subgroup[k])))
                .unwrap_or_default()
        };
        for (k, s) in Subgroup::FALTERING.iter().enumerate() {
            let mut rec = vec![s.name().to_string(), self.subgroup_sizes[k].to_string()];
            for m in SCORED_METRICS {
                for method in METHODS {
                    rec.push(cell(m, method, Some(k)));
                }
            }
            out.write_record(&rec)?;
        }
        let mut rec = vec!["Total".to_string(), self.subgroup_sizes.iter().sum::<usize>().to_string()];
        for m in SCORED_METRICS {
            for method in METHODS {
                rec.push(cell(m, method, None));
            }
        }
        out.write_record(&rec)?;
        out.flush()?;
        Ok(())
    }

    /// `metric,percent_discordance,kappa,percent_significant`.
    pub fn write_agreement_table<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["metric", "percent_discordance", "kappa", "percent_significant"])?;
        for row in &self.agreement {
            out.write_record([
                row.metric.to_string(),
                format!("{:.2}", row.percent_discordance),
                format!("{:.2}", row.kappa),
                format!("{:.0}", row.percent_significant),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Averages replication results.
pub fn aggregate(results: &[ReplicationResult]) -> Result<ScenarioReport> {
    let first = results.first().ok_or_else(|| Error::InsufficientData("no replications to aggregate".into()))?;
    let n = results.len() as f64;

    let mut true_positives = Vec::new();
    for m in SCORED_METRICS {
        for method in METHODS {
            let mut per_subgroup = [0.0; 4];
            let mut total = 0.0;
            for r in results {
                let o = r.outcome(m, method);
                for (acc, tp) in per_subgroup.iter_mut().zip(o.true_positives) {
                    *acc += tp as f64;
                }
                total += o.total as f64;
            }
            per_subgroup.iter_mut().for_each(|v| *v /= n);
            true_positives.push(TruePositiveRow { metric: m, method, per_subgroup, total: total / n });
        }
    }

    let mut agreement = Vec::new();
    for m in SCORED_METRICS {
        let stats: Vec<&AgreementStats> =
            results.iter().filter_map(|r| r.agreement.iter().find(|(mm, _)| *mm == m).map(|(_, s)| s)).collect();
        let kappas: Vec<f64> = stats.iter().filter_map(|s| s.kappa).collect();
        agreement.push(AgreementRow {
            metric: m,
            percent_discordance: stats.iter().map(|s| s.percent_discordance).sum::<f64>() / n,
            kappa: if kappas.is_empty() { f64::NAN } else { kappas.iter().sum::<f64>() / kappas.len() as f64 },
            percent_significant: 100.0 * stats.iter().filter(|s| s.significant).count() as f64 / n,
        });
    }

    let nonconverged_fits = results.iter().map(|r| usize::from(!r.rs_converged) + usize::from(!r.broken_stick_converged)).sum();
    let degenerate_mixtures = results.iter().flat_map(|r| &r.outcomes).filter(|o| o.degenerate).count();
    Ok(ScenarioReport {
        n_replications: results.len(),
        subgroup_sizes: first.subgroup_sizes,
        true_positives,
        agreement,
        nonconverged_fits,
        degenerate_mixtures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(proportion: f64, design: Design) -> ScenarioConfig {
        ScenarioConfig { n_children: 200, n_replications: 2, ..ScenarioConfig::new(proportion, design, 11) }
    }

    #[test]
    fn subgroup_counts_follow_ratio() {
        assert_eq!(ScenarioConfig::new(0.05, Design::Dense, 0).subgroup_counts(), [25, 10, 10, 5]);
        assert_eq!(ScenarioConfig::new(0.10, Design::Dense, 0).subgroup_counts(), [50, 20, 20, 10]);
        assert_eq!(ScenarioConfig::new(0.20, Design::Dense, 0).subgroup_counts(), [100, 40, 40, 20]);
        let odd = ScenarioConfig { n_children: 130, ..ScenarioConfig::new(0.1, Design::Dense, 0) };
        assert_eq!(odd.subgroup_counts().iter().sum::<usize>(), 13);
        assert_eq!(ScenarioConfig::new(0.0, Design::Dense, 0).subgroup_counts(), [0; 4]);
    }

    #[test]
    fn noise_free_trajectories() {
        let cfg = ScenarioConfig { sigma_omega: 0.0, sigma_epsilon: 0.0, ..small(0.2, Design::Dense) };
        let cohort = generate_population(&cfg, 0).unwrap();
        for (id, g) in &cohort.subgroups {
            let tr = cohort.trajectories[id];
            match g {
                Subgroup::Mild => assert_eq!(tr.eval(1.0), -2.5),
                Subgroup::Level => assert!((tr.eval(1.0) + 7.0 / 6.0).abs() < 1e-12),
                Subgroup::Catchup => assert!((tr.eval(1.0) + 1.0).abs() < 1e-12),
                Subgroup::Severe => assert_eq!(tr.eval(1.0), -4.5),
                Subgroup::General => assert_eq!(tr.eval(1.0), -1.0),
            }
            for m in cohort.dataset.child(id).unwrap().measurements() {
                assert_eq!(m.zscore, tr.eval(m.age));
            }
        }
    }

    #[test]
    fn observation_schedule() {
        for design in [Design::Dense, Design::Sparse] {
            let cfg = small(0.1, design);
            let cohort = generate_population(&cfg, 1).unwrap();
            let (lo, hi) = cfg.obs_range;
            for child in cohort.dataset.children() {
                let ages: Vec<f64> = child.measurements().iter().map(|m| m.age).collect();
                assert!((lo..=hi).contains(&ages.len()));
                assert!(ages.iter().all(|a| (0.0..=1.0).contains(a)));
                assert_eq!(ages.iter().filter(|a| **a <= 1.0 / 12.0).count(), 1);
                assert_eq!(ages.iter().filter(|a| **a >= 11.0 / 12.0).count(), 1);
            }
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let cfg = small(0.1, Design::Dense);
        let a = generate_population(&cfg, 3).unwrap();
        let b = generate_population(&cfg, 3).unwrap();
        let c = generate_population(&cfg, 4).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_ne!(a.dataset, c.dataset);
        let counts = a.subgroups.values().filter(|s| s.is_faltering()).count();
        assert_eq!(counts, 20);
    }

    #[test]
    fn zero_proportion_has_no_true_positives() {
        let cfg = ScenarioConfig { n_children: 120, ..small(0.0, Design::Dense) };
        let r = run_replication(&cfg, 0).unwrap();
        for o in &r.outcomes {
            assert_eq!(o.total, 0);
            if o.method == Method::Threshold {
                assert_eq!(o.n_flagged, 0);
            }
        }
    }

    #[test]
    fn aggregate_of_one_is_identity() {
        let cfg = ScenarioConfig { n_children: 150, ..small(0.2, Design::Dense) };
        let r = run_replication(&cfg, 0).unwrap();
        let rep = aggregate(std::slice::from_ref(&r)).unwrap();
        for o in &r.outcomes {
            let row = rep.row(o.metric, o.method).unwrap();
            assert_eq!(row.total, o.total as f64);
            for k in 0..4 {
                assert_eq!(row.per_subgroup[k], o.true_positives[k] as f64);
                assert!(o.true_positives[k] <= r.subgroup_sizes[k]);
            }
        }
        for (m, s) in &r.agreement {
            let a = rep.agreement_for(*m).unwrap();
            assert_eq!(a.percent_discordance, s.percent_discordance);
        }
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = small(0.1, Design::Dense);
        cfg.obs_range = (1, 4);
        assert!(cfg.validate().is_err());
        let cfg = small(1.2, Design::Dense);
        assert!(cfg.validate().is_err());
    }
}
