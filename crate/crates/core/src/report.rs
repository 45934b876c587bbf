//! Named sensitivity indices with their uncertainty or deduced bounds.

use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::data::{fmt_f64, DataError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    #[serde(rename = "MC")]
    Mc,
    #[serde(rename = "Eq")]
    Eq,
    #[serde(rename = "Q2")]
    Q2,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Mc => "MC",
            Method::Eq => "Eq",
            Method::Q2 => "Q2",
        })
    }
}

/// `[lo, hi]`, or `(lo, hi]` when `lo_open`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_open: bool,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        (if self.lo_open { x > self.lo } else { x >= self.lo }) && x <= self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let open = if self.lo_open { "(" } else { "[" };
        write!(f, "{open}{}, {}]", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexReport {
    pub name: String,
    pub estimate: f64,
    pub sd: Option<f64>,
    pub interval: Option<Interval>,
    pub method: Method,
    pub caveat: Option<String>,
}

impl IndexReport {
    pub fn mc(name: impl Into<String>, estimate: f64, sd: Option<f64>) -> Self {
        Self {
            name: name.into(),
            estimate,
            sd,
            interval: None,
            method: Method::Mc,
            caveat: None,
        }
    }

    /// A structurally deduced exact value.
    pub fn exact(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            estimate: value,
            sd: None,
            interval: None,
            method: Method::Eq,
            caveat: None,
        }
    }

    /// A structurally deduced interval; the estimate carries the upper bound.
    pub fn bounded(name: impl Into<String>, interval: Interval) -> Self {
        Self {
            name: name.into(),
            estimate: interval.hi,
            sd: None,
            interval: Some(interval),
            method: Method::Eq,
            caveat: None,
        }
    }

    pub fn with_caveat(mut self, caveat: impl Into<String>) -> Self {
        self.caveat = Some(caveat.into());
        self
    }
}

pub fn find<'a>(reports: &'a [IndexReport], name: &str) -> Option<&'a IndexReport> {
    reports.iter().find(|r| r.name == name)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Table layout: index, value, sd, interval_lo, interval_hi, method, caveat.
pub fn write_report_csv<W: Write>(reports: &[IndexReport], out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "value", "sd", "interval_lo", "interval_hi", "lo_open", "method", "caveat"])?;
    for r in reports {
        w.write_record([
            r.name.clone(),
            fmt_f64(r.estimate),
            opt(r.sd),
            opt(r.interval.map(|i| i.lo)),
            opt(r.interval.map(|i| i.hi)),
            r.interval.map(|i| i.lo_open.to_string()).unwrap_or_default(),
            r.method.to_string(),
            r.caveat.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
