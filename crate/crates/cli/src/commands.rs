use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use falter_core::classify::{
    agreement, fit_gmm2, histogram, mm_classify, threshold_classify, Classification, Gmm2, Label, MixtureOptions,
};
use falter_core::data::{ingest, AgeUnit, AnalysisWindow, GrowthDataset, IngestReport, DEFAULT_EXCLUSION_BOUND};
use falter_core::mixed::{Estimator, FitOptions, FitSummary, MixedModelFit};
use falter_core::simulation::{aggregate, run_scenario, Design, ReplicationResult, ScenarioConfig, ScenarioReport};
use falter_core::spline::KnotVector;
use falter_core::velocity::{compute_many, Metric, MetricConfig, VelocityTable};

use crate::config::{
    resolve_seed, AnalyzeArgs, ClassifierChoice, ClassifyArgs, DataArgs, EstimatorChoice, FileConfig, Merge,
    ModelArgs, SimulateArgs,
};
use crate::output::OutputDir;
use crate::{Cli, Command, Failure};

const DEFAULT_BINS: usize = 30;
const DEFAULT_SAMPLE: usize = 5;
const DEFAULT_CUTOFF: f64 = 0.5;

fn config_error(message: impl Into<String>) -> anyhow::Error {
    Failure::Config(message.into()).into()
}

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let out = cli.out.clone().or(file.out.clone()).unwrap_or_else(|| PathBuf::from("falter-out"));
    let threads = cli.threads.or(file.threads);
    if let Some(n) = threads {
        if n == 0 {
            return Err(config_error("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Simulate { sim, model } => simulate(sim.merge(file.simulate), model.merge(file.model), &out),
        Command::Analyze { data, model, classify, analyze } => analyze_cmd(
            data.merge(file.data),
            model.merge(file.model),
            classify.merge(file.classify),
            analyze.merge(file.analyze),
            &out,
        ),
        Command::Velocity { data, model, metrics } => {
            let metrics = metrics.or(file.analyze.metrics);
            velocity_cmd(data.merge(file.data), model.merge(file.model), metrics, &out)
        }
        Command::Classify { velocities, classify, bins } => {
            classify_cmd(&velocities, classify.merge(file.classify), bins.or(file.analyze.bins), &out)
        }
        Command::Agree { first, second } => agree_cmd(&first, &second, &out),
        Command::Report { replications } => report_cmd(&replications, &out),
    }
}

#[derive(Serialize)]
struct SimulateManifest<'a> {
    design: Design,
    scenario: &'a ScenarioConfig,
}

fn simulate(args: SimulateArgs, model: ModelArgs, out: &Path) -> Result<()> {
    let proportion = args.proportion.ok_or_else(|| config_error("simulate needs --proportion"))?;
    let design: Design = args.design.as_deref().unwrap_or("dense").parse()?;
    let seed = resolve_seed(args.seed);
    let mut scenario = ScenarioConfig::new(proportion, design, seed);
    if let Some(n) = args.reps {
        scenario.n_replications = n;
    }
    if let Some(n) = args.children {
        scenario.n_children = n;
    }
    if let Some(s) = args.sigma_omega {
        scenario.sigma_omega = s;
    }
    if let Some(s) = args.sigma_epsilon {
        scenario.sigma_epsilon = s;
    }
    if let Some(k) = model.knots {
        scenario.internal_knots = k;
    }
    scenario.validate()?;

    let results = run_scenario(&scenario)?;
    let report = aggregate(&results)?;
    let mut dir = OutputDir::create(out)?;
    write_report(&mut dir, &report)?;
    dir.write("replications.jsonl", |w| {
        for r in &results {
            serde_json::to_writer(&mut *w, r)?;
            writeln!(w)?;
        }
        Ok(())
    })?;
    print_report(&report);
    let root = dir.finish("simulate", &SimulateManifest { design, scenario: &scenario })?;
    eprintln!("wrote {}", root.display());
    Ok(())
}

fn write_report(dir: &mut OutputDir, report: &ScenarioReport) -> Result<()> {
    dir.write("true_positives.csv", |w| Ok(report.write_true_positive_table(w)?))?;
    dir.write("agreement.csv", |w| Ok(report.write_agreement_table(w)?))?;
    dir.write_json("report.json", report)
}

fn print_report(report: &ScenarioReport) {
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "true positives (mean over {} replications)", report.n_replications);
    let _ = report.write_true_positive_table(&mut stdout);
    let _ = writeln!(stdout, "\nthreshold vs mixture agreement");
    let _ = report.write_agreement_table(&mut stdout);
    if report.nonconverged_fits > 0 || report.degenerate_mixtures > 0 {
        let _ = writeln!(
            stdout,
            "\n{} non-converged model fits, {} degenerate mixture fits",
            report.nonconverged_fits, report.degenerate_mixtures
        );
    }
}

fn report_cmd(replications: &Path, out: &Path) -> Result<()> {
    let file = File::open(replications).with_context(|| format!("opening {}", replications.display()))?;
    let mut results = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ReplicationResult = serde_json::from_str(&line)
            .map_err(|e| falter_core::Error::MalformedRow { row: i + 1, message: e.to_string() })?;
        results.push(r);
    }
    let report = aggregate(&results)?;
    let mut dir = OutputDir::create(out)?;
    write_report(&mut dir, &report)?;
    print_report(&report);
    dir.finish("report", &serde_json::json!({ "replications": replications }))?;
    Ok(())
}

#[derive(Serialize)]
struct ResolvedData {
    input: PathBuf,
    age_unit: AgeUnit,
    window: [f64; 2],
    exclusion_bound: f64,
    internal_knots: Vec<f64>,
    right_boundary: f64,
    estimator: Estimator,
    drop_baseline_row: bool,
}

fn load_data(data: &DataArgs, model: &ModelArgs) -> Result<(GrowthDataset, IngestReport, MetricConfig, ResolvedData)> {
    let input = data.input.clone().ok_or_else(|| config_error("--input is required"))?;
    let age_unit: AgeUnit = data.age_unit.as_deref().unwrap_or("years").parse()?;
    let window = AnalysisWindow::new(data.window_start.unwrap_or(0.0), data.window_end.unwrap_or(1.0))?;
    let bound = data.exclusion_bound.unwrap_or(DEFAULT_EXCLUSION_BOUND);
    let mut config = MetricConfig::for_window(&window)?;
    if let Some(k) = &model.knots {
        config.knots = KnotVector::new(k, window.end())?;
    }
    let estimator = match model.estimator.unwrap_or(EstimatorChoice::Reml) {
        EstimatorChoice::Reml => Estimator::Reml,
        EstimatorChoice::Ml => Estimator::Ml,
    };
    let drop_baseline_row = model.drop_baseline_row.unwrap_or(false);
    config.fit_options = FitOptions { estimator, drop_baseline_row, ..FitOptions::default() };

    let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
    let (dataset, report) = ingest(file, age_unit, window, bound).with_context(|| format!("reading {}", input.display()))?;
    let resolved = ResolvedData {
        input,
        age_unit,
        window: [window.start(), window.end()],
        exclusion_bound: bound,
        internal_knots: config.knots.internal().to_vec(),
        right_boundary: config.knots.right(),
        estimator,
        drop_baseline_row,
    };
    Ok((dataset, report, config, resolved))
}

fn parse_metrics(names: Option<Vec<String>>) -> Result<Vec<Metric>> {
    let names = names.ok_or_else(|| config_error("--metrics is required"))?;
    let mut metrics = Vec::new();
    for n in names {
        let m: Metric = n.trim().parse()?;
        if !metrics.contains(&m) {
            metrics.push(m);
        }
    }
    if metrics.is_empty() {
        return Err(config_error("no metrics requested"));
    }
    Ok(metrics)
}

fn fit_summaries(fits: &BTreeMap<String, MixedModelFit>) -> BTreeMap<String, FitSummary> {
    fits.iter().map(|(k, f)| (k.clone(), f.summary())).collect()
}

#[derive(Serialize)]
struct VelocityManifest<'a> {
    data: &'a ResolvedData,
    metrics: &'a [Metric],
    ingest: &'a IngestReport,
}

fn velocity_cmd(data: DataArgs, model: ModelArgs, metrics: Option<Vec<String>>, out: &Path) -> Result<()> {
    let metrics = parse_metrics(metrics)?;
    let (dataset, ingest_report, config, resolved) = load_data(&data, &model)?;
    let run = compute_many(&metrics, &dataset, &config)?;
    let mut dir = OutputDir::create(out)?;
    for table in &run.tables {
        dir.write(&format!("velocity_{}.csv", table.metric), |w| Ok(table.write_csv(w)?))?;
    }
    if !run.fits.is_empty() {
        dir.write_json("fits.json", &fit_summaries(&run.fits))?;
    }
    dir.finish("velocity", &VelocityManifest { data: &resolved, metrics: &metrics, ingest: &ingest_report })?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct ResolvedClassifier {
    classifier: ClassifierChoice,
    proportion: Option<f64>,
    cutoff: f64,
    seed: u64,
}

fn resolve_classifier(args: &ClassifyArgs) -> Result<ResolvedClassifier> {
    let classifier = args.classifier.unwrap_or(ClassifierChoice::Mixture);
    if classifier == ClassifierChoice::Threshold && args.proportion.is_none() {
        return Err(config_error("the threshold classifier needs --proportion"));
    }
    let cutoff = args.cutoff.unwrap_or(DEFAULT_CUTOFF);
    if !(0.0..=1.0).contains(&cutoff) {
        return Err(config_error(format!("cutoff must lie in [0, 1], got {cutoff}")));
    }
    Ok(ResolvedClassifier { classifier, proportion: args.proportion, cutoff, seed: resolve_seed(args.seed) })
}

#[derive(Serialize)]
struct ClassificationSummary<'a> {
    metric: Metric,
    method: String,
    n_classified: usize,
    n_faltering: usize,
    undefined: &'a [String],
    threshold: Option<f64>,
    cutoff: Option<f64>,
    mixture: Option<&'a Gmm2>,
}

/// Classifies one table and writes labels, a summary and, for the mixture
/// rule, histogram plot data.
fn classify_and_write(
    dir: &mut OutputDir,
    table: &VelocityTable,
    cls: &ResolvedClassifier,
    bins: usize,
    seed: u64,
) -> Result<Classification> {
    let metric = table.metric;
    let (labels, mixture) = match cls.classifier {
        ClassifierChoice::Threshold => (threshold_classify(table, cls.proportion.unwrap_or_default())?, None),
        ClassifierChoice::Mixture => {
            let mix = fit_gmm2(table, seed, &MixtureOptions::default())
                .with_context(|| format!("fitting the mixture to {metric}"))?;
            (mm_classify(&mix, cls.cutoff), Some(mix))
        }
    };
    dir.write(&format!("labels_{metric}.csv"), |w| Ok(labels.write_csv(w)?))?;
    if let Some(mix) = &mixture {
        let bins = histogram(&table.values(), &mix.params, bins);
        dir.write(&format!("histogram_{metric}.csv"), |w| {
            writeln!(w, "lower,upper,count,faltering_density,non_faltering_density")?;
            for b in &bins {
                writeln!(w, "{},{},{},{},{}", b.lower, b.upper, b.count, b.faltering_density, b.non_faltering_density)?;
            }
            Ok(())
        })?;
    }
    let summary = ClassificationSummary {
        metric,
        method: labels.method.to_string(),
        n_classified: labels.labels.len(),
        n_faltering: labels.n_faltering(),
        undefined: &table.undefined,
        threshold: labels.threshold,
        cutoff: labels.cutoff,
        mixture: mixture.as_ref().map(|m| &m.params),
    };
    dir.write_json(&format!("summary_{metric}.json"), &summary)?;
    Ok(labels)
}

#[derive(Serialize)]
struct ClassifyManifest<'a> {
    velocities: &'a Path,
    classifier: &'a ResolvedClassifier,
    bins: usize,
}

fn classify_cmd(velocities: &Path, args: ClassifyArgs, bins: Option<usize>, out: &Path) -> Result<()> {
    let cls = resolve_classifier(&args)?;
    let bins = bins.unwrap_or(DEFAULT_BINS);
    let file = File::open(velocities).with_context(|| format!("opening {}", velocities.display()))?;
    let table = VelocityTable::read_csv(file).with_context(|| format!("reading {}", velocities.display()))?;
    let mut dir = OutputDir::create(out)?;
    let labels = classify_and_write(&mut dir, &table, &cls, bins, cls.seed)?;
    println!("{}: {} of {} children faltering ({})", table.metric, labels.n_faltering(), labels.labels.len(), labels.method);
    dir.finish("classify", &ClassifyManifest { velocities, classifier: &cls, bins })?;
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeManifest<'a> {
    data: &'a ResolvedData,
    metrics: &'a [Metric],
    classifier: &'a ResolvedClassifier,
    bins: usize,
    sample: usize,
    ingest: &'a IngestReport,
}

fn analyze_cmd(data: DataArgs, model: ModelArgs, classify: ClassifyArgs, analyze: AnalyzeArgs, out: &Path) -> Result<()> {
    let metrics = parse_metrics(analyze.metrics)?;
    let cls = resolve_classifier(&classify)?;
    let bins = analyze.bins.unwrap_or(DEFAULT_BINS);
    let sample = analyze.sample.unwrap_or(DEFAULT_SAMPLE);
    let (dataset, ingest_report, config, resolved) = load_data(&data, &model)?;
    let run = compute_many(&metrics, &dataset, &config)?;

    let mut dir = OutputDir::create(out)?;
    let baselines = dataset.baselines();
    for (k, table) in run.tables.iter().enumerate() {
        let metric = table.metric;
        dir.write(&format!("velocity_{metric}.csv"), |w| Ok(table.write_csv(w)?))?;
        let seed = falter_core::rng::derive_seed(cls.seed, &[k as u64]);
        let labels = classify_and_write(&mut dir, table, &cls, bins, seed)?;
        println!("{metric}: {} of {} children faltering ({})", labels.n_faltering(), labels.labels.len(), labels.method);
        if let Some(kind) = metric.model_kind() {
            let fit = &run.fits[&kind.to_string()];
            dir.write(&format!("trajectories_{metric}.csv"), |w| {
                write_trajectories(w, &dataset, fit, &labels, &baselines, sample)
            })?;
        }
    }
    if !run.fits.is_empty() {
        dir.write_json("fits.json", &fit_summaries(&run.fits))?;
    }
    dir.finish(
        "analyze",
        &AnalyzeManifest { data: &resolved, metrics: &metrics, classifier: &cls, bins, sample, ingest: &ingest_report },
    )?;
    Ok(())
}

/// Observed measurements and the fitted curve on a 0.05-year grid for the
/// first `sample` children of each label.
fn write_trajectories(
    w: &mut dyn Write,
    dataset: &GrowthDataset,
    fit: &MixedModelFit,
    labels: &Classification,
    baselines: &BTreeMap<String, f64>,
    sample: usize,
) -> Result<()> {
    writeln!(w, "child_id,label,source,age,zscore")?;
    let window = dataset.window();
    let steps = ((window.width() / 0.05).round() as usize).max(1);
    let grid: Vec<f64> = (0..=steps).map(|i| window.start() + window.width() * i as f64 / steps as f64).collect();
    for wanted in [Label::Faltering, Label::NonFaltering] {
        let chosen = labels
            .labels
            .iter()
            .filter(|(id, l)| **l == wanted && fit.child_index(id).is_ok())
            .map(|(id, _)| id)
            .take(sample);
        for id in chosen {
            let child = dataset.child(id).expect("labelled child is in the dataset");
            for m in child.in_window(&window) {
                writeln!(w, "{id},{wanted},observed,{},{}", m.age, m.zscore)?;
            }
            let z0 = fit.kind().is_conditional().then(|| baselines[id.as_str()]);
            for (t, z) in grid.iter().zip(fit.predict(id, &grid, z0)?) {
                writeln!(w, "{id},{wanted},predicted,{t},{z}")?;
            }
        }
    }
    Ok(())
}

fn read_labels(path: &Path) -> Result<Classification> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Classification::read_csv(file).with_context(|| format!("reading {}", path.display()))
}

fn agree_cmd(first: &Path, second: &Path, out: &Path) -> Result<()> {
    let a = read_labels(first)?;
    let b = read_labels(second)?;
    let stats = agreement(&a, &b)?;
    let mut dir = OutputDir::create(out)?;
    dir.write_json("agreement.json", &stats)?;
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    println!(
        "n = {} (only first {}, only second {}), %D = {:.2}, kappa = {}, z = {}, p = {}",
        stats.n,
        stats.only_in_first,
        stats.only_in_second,
        stats.percent_discordance,
        fmt(stats.kappa),
        fmt(stats.kappa_z),
        fmt(stats.kappa_p),
    );
    dir.finish("agree", &serde_json::json!({ "first": first, "second": second }))?;
    Ok(())
}
