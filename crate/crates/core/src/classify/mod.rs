//! Faltering classification from velocity tables and agreement between
//! classifications.

mod agreement;
mod mixture;
mod threshold;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use agreement::{agreement, AgreementStats, SIGNIFICANCE_LEVEL};
pub use mixture::{fit_gmm2, fit_gmm2_values, histogram, mm_classify, Gmm2, HistogramBin, MixtureFit, MixtureOptions};
pub use threshold::threshold_classify;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Faltering,
    NonFaltering,
}

impl Label {
    pub fn is_faltering(self) -> bool {
        self == Label::Faltering
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Faltering => "faltering",
            Label::NonFaltering => "non-faltering",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "faltering" => Ok(Label::Faltering),
            "non-faltering" => Ok(Label::NonFaltering),
            other => Err(Error::InvalidConfig(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "MM")]
    Mixture,
    #[serde(rename = "TH")]
    Threshold,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Mixture => "MM",
            Method::Threshold => "TH",
        })
    }
}

/// Labels for every child with a defined velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub method: Method,
    pub labels: BTreeMap<String, Label>,
    /// Posterior probability of the faltering component (mixture only).
    pub posteriors: Option<BTreeMap<String, f64>>,
    /// Largest velocity labelled faltering (threshold only).
    pub threshold: Option<f64>,
    pub cutoff: Option<f64>,
}

impl Classification {
    pub fn n_faltering(&self) -> usize {
        self.labels.values().filter(|l| l.is_faltering()).count()
    }

    pub fn faltering(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().filter(|(_, l)| l.is_faltering()).map(|(k, _)| k.as_str())
    }

    /// `child_id,label,posterior`; the posterior column is empty for threshold labels.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["child_id", "label", "posterior"])?;
        for (id, label) in &self.labels {
            let post = self
                .posteriors
                .as_ref()
                .and_then(|p| p.get(id))
                .map(|p| p.to_string())
                .unwrap_or_default();
            out.write_record([id.as_str(), &label.to_string(), &post])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut labels = BTreeMap::new();
        let mut posteriors = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::MalformedRow { row, message: e.to_string() })?;
            let id = rec.get(0).filter(|s| !s.is_empty()).ok_or(Error::MalformedRow {
                row,
                message: "missing child_id".into(),
            })?;
            let label: Label = rec
                .get(1)
                .unwrap_or_default()
                .parse()
                .map_err(|e: Error| Error::MalformedRow { row, message: e.to_string() })?;
            if let Some(p) = rec.get(2).filter(|s| !s.is_empty()) {
                let p: f64 = p.parse().map_err(|_| Error::MalformedRow { row, message: format!("bad posterior {p:?}") })?;
                posteriors.insert(id.to_string(), p);
            }
            if labels.insert(id.to_string(), label).is_some() {
                return Err(Error::MalformedRow { row, message: format!("duplicate child {id}") });
            }
        }
        let method = if posteriors.is_empty() { Method::Threshold } else { Method::Mixture };
        Ok(Self {
            method,
            labels,
            posteriors: (!posteriors.is_empty()).then_some(posteriors),
            threshold: None,
            cutoff: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_keeps_labels_and_posteriors() {
        let mut labels = BTreeMap::new();
        labels.insert("a".to_string(), Label::Faltering);
        labels.insert("b".to_string(), Label::NonFaltering);
        let mut post = BTreeMap::new();
        post.insert("a".to_string(), 0.9);
        post.insert("b".to_string(), 1e-7);
        let c = Classification { method: Method::Mixture, labels, posteriors: Some(post), threshold: None, cutoff: None };
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = Classification::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.labels, c.labels);
        assert_eq!(back.posteriors, c.posteriors);
        assert_eq!(back.method, Method::Mixture);
    }

    #[test]
    fn bad_label_is_rejected() {
        let text = "child_id,label,posterior\na,maybe,\n";
        assert!(matches!(Classification::read_csv(text.as_bytes()), Err(Error::MalformedRow { row: 2, .. })));
    }
}
