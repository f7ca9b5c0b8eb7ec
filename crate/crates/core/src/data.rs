//! Longitudinal z-score data: measurements, per-child series and ingestion.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Days per year used when converting ages recorded in days.
pub const DAYS_PER_YEAR: f64 = 365.25;

/// Default bound on |z| above which a measurement is treated as implausible.
pub const DEFAULT_EXCLUSION_BOUND: f64 = 6.0;

/// One standardized measurement at a given age (years).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub age: f64,
    pub zscore: f64,
}

impl Measurement {
    pub fn new(age: f64, zscore: f64) -> Result<Self> {
        if !age.is_finite() || age < 0.0 {
            return Err(Error::InvalidConfig(format!("age must be finite and non-negative, got {age}")));
        }
        if !zscore.is_finite() {
            return Err(Error::InvalidConfig(format!("z-score must be finite, got {zscore}")));
        }
        Ok(Self { age, zscore })
    }
}

/// Closed age interval `[start, end]` (years) over which velocities are computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    start: f64,
    end: f64,
}

impl AnalysisWindow {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(Error::InvalidWindow { start, end });
        }
        Ok(Self { start, end })
    }

    /// The first year of life, `[0, 1]`.
    pub fn first_year() -> Self {
        Self { start: 0.0, end: 1.0 }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn width(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, age: f64) -> bool {
        self.start <= age && age <= self.end
    }
}

/// All measurements for one child, sorted strictly by age.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildSeries {
    id: String,
    measurements: Vec<Measurement>,
}

impl ChildSeries {
    /// Builds a series, sorting by age. Duplicate ages and empty series are rejected.
    pub fn new(id: impl Into<String>, mut measurements: Vec<Measurement>) -> Result<Self> {
        let id = id.into();
        if measurements.is_empty() {
            return Err(Error::InsufficientData(format!("child {id} has no measurements")));
        }
        measurements.sort_by(|a, b| a.age.total_cmp(&b.age));
        if let Some(w) = measurements.windows(2).find(|w| w[0].age == w[1].age) {
            return Err(Error::DuplicateMeasurement { child: id, age: w[0].age });
        }
        Ok(Self { id, measurements })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn measurements(&self) -> &[Measurement] {
        &self.measurements
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn in_window<'a>(&'a self, window: &'a AnalysisWindow) -> impl Iterator<Item = &'a Measurement> + 'a {
        self.measurements.iter().filter(move |m| window.contains(m.age))
    }
}

/// The in-window measurement with the smallest age.
pub fn baseline(series: &ChildSeries, window: &AnalysisWindow) -> Result<Measurement> {
    series
        .in_window(window)
        .next()
        .copied()
        .ok_or_else(|| Error::NoInWindow(series.id().to_string()))
}

/// The in-window measurement with the largest age, provided a distinct baseline exists.
pub fn followup(series: &ChildSeries, window: &AnalysisWindow) -> Option<Measurement> {
    let mut inside = series.in_window(window);
    let first = inside.next()?;
    inside.last().filter(|m| m.age > first.age).copied()
}

/// A validated cohort of child series restricted to an analysis window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthDataset {
    children: Vec<ChildSeries>,
    window: AnalysisWindow,
    exclusion_bound: f64,
}

impl GrowthDataset {
    /// Validates that every measurement is inside the window and within the
    /// exclusion bound, and that child ids are unique. Children are stored in
    /// id order.
    pub fn new(mut children: Vec<ChildSeries>, window: AnalysisWindow, exclusion_bound: f64) -> Result<Self> {
        if !(exclusion_bound > 0.0) {
            return Err(Error::InvalidConfig(format!("exclusion bound must be positive, got {exclusion_bound}")));
        }
        if children.is_empty() {
            return Err(Error::EmptyDataset);
        }
        children.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in children.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::InvalidConfig(format!("duplicate child id {}", pair[0].id)));
            }
        }
        for child in &children {
            for m in &child.measurements {
                if !window.contains(m.age) {
                    return Err(Error::InvalidConfig(format!(
                        "child {} has age {} outside the window",
                        child.id, m.age
                    )));
                }
                if m.zscore.abs() > exclusion_bound {
                    return Err(Error::InvalidConfig(format!(
                        "child {} has |z| = {} above the exclusion bound",
                        child.id,
                        m.zscore.abs()
                    )));
                }
            }
        }
        Ok(Self { children, window, exclusion_bound })
    }

    pub fn children(&self) -> &[ChildSeries] {
        &self.children
    }

    pub fn window(&self) -> AnalysisWindow {
        self.window
    }

    pub fn exclusion_bound(&self) -> f64 {
        self.exclusion_bound
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn n_measurements(&self) -> usize {
        self.children.iter().map(ChildSeries::len).sum()
    }

    pub fn child(&self, id: &str) -> Option<&ChildSeries> {
        self.children
            .binary_search_by(|c| c.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.children[i])
    }

    /// Baseline z-score for every child.
    pub fn baselines(&self) -> BTreeMap<String, f64> {
        self.children
            .iter()
            .filter_map(|c| baseline(c, &self.window).ok().map(|m| (c.id.clone(), m.zscore)))
            .collect()
    }

    /// Writes the canonical `child_id,age,zscore` form, sorted by child then age.
    pub fn write_canonical<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["child_id", "age", "zscore"])?;
        for child in &self.children {
            for m in &child.measurements {
                out.write_record([child.id.clone(), m.age.to_string(), m.zscore.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeUnit {
    Days,
    Years,
}

impl AgeUnit {
    pub fn to_years(self, age: f64) -> f64 {
        match self {
            AgeUnit::Days => age / DAYS_PER_YEAR,
            AgeUnit::Years => age,
        }
    }
}

impl FromStr for AgeUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "days" | "day" | "d" => Ok(AgeUnit::Days),
            "years" | "year" | "y" => Ok(AgeUnit::Years),
            other => Err(Error::InvalidConfig(format!("unknown age unit {other:?}"))),
        }
    }
}

impl fmt::Display for AgeUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgeUnit::Days => "days",
            AgeUnit::Years => "years",
        })
    }
}

/// Counts describing what ingestion kept and dropped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_retained: usize,
    pub excluded_outside_window: usize,
    pub excluded_extreme_zscore: usize,
    pub children_retained: usize,
    pub children_dropped: Vec<String>,
}

fn detect_delimiter(header: &str) -> u8 {
    if header.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

/// Reads a `child_id,age,zscore` table (comma or tab separated) and applies the
/// window and exclusion rules. Line numbers in errors count the header as line 1.
pub fn ingest<R: Read>(
    mut input: R,
    unit: AgeUnit,
    window: AnalysisWindow,
    exclusion_bound: f64,
) -> Result<(GrowthDataset, IngestReport)> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let header = text.lines().next().ok_or(Error::EmptyDataset)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(header))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let columns = reader.headers()?.clone();
    let find = |name: &str| {
        columns
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::MalformedRow { row: 1, message: format!("missing column {name:?}") })
    };
    let (id_col, age_col, z_col) = (find("child_id")?, find("age")?, find("zscore")?);

    let mut report = IngestReport::default();
    let mut seen: HashSet<(String, u64)> = HashSet::new();
    let mut all_ids: BTreeMap<String, ()> = BTreeMap::new();
    let mut kept: BTreeMap<String, Vec<Measurement>> = BTreeMap::new();

    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::MalformedRow { row: line, message: e.to_string() })?;
        report.rows_read += 1;
        let field = |col: usize| {
            record
                .get(col)
                .ok_or_else(|| Error::MalformedRow { row: line, message: "too few fields".into() })
        };
        let id = field(id_col)?.to_string();
        if id.is_empty() {
            return Err(Error::MalformedRow { row: line, message: "empty child_id".into() });
        }
        let parse = |col: usize, what: &str| -> Result<f64> {
            let raw = field(col)?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::MalformedRow { row: line, message: format!("invalid {what} {raw:?}") })
        };
        let age = unit.to_years(parse(age_col, "age")?);
        let z = parse(z_col, "zscore")?;
        if age < 0.0 {
            return Err(Error::MalformedRow { row: line, message: format!("negative age {age}") });
        }
        if !seen.insert((id.clone(), age.to_bits())) {
            return Err(Error::DuplicateMeasurement { child: id, age });
        }
        all_ids.insert(id.clone(), ());

        if !window.contains(age) {
            report.excluded_outside_window += 1;
            continue;
        }
        if z.abs() > exclusion_bound {
            report.excluded_extreme_zscore += 1;
            continue;
        }
        kept.entry(id).or_default().push(Measurement { age, zscore: z });
    }

    report.children_dropped = all_ids.keys().filter(|id| !kept.contains_key(*id)).cloned().collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let children = kept
        .into_iter()
        .map(|(id, ms)| ChildSeries::new(id, ms))
        .collect::<Result<Vec<_>>>()?;
    let dataset = GrowthDataset::new(children, window, exclusion_bound)?;
    report.children_retained = dataset.len();
    report.rows_retained = dataset.n_measurements();
    Ok((dataset, report))
}
