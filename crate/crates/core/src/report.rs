//! Plain CSV tables. Floats use Rust's shortest round-trip formatting, so
//! parsing and re-emitting a table reproduces it byte for byte.

use std::fmt::Write as _;

use crate::sim::BerResult;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::DimensionMismatch {
                expected: self.header.len(),
                actual: row.len(),
            });
        }
        if let Some(cell) = row.iter().find(|c| c.contains([',', '\n', '\r', '"'])) {
            return Err(Error::InvalidConfig(format!("cell '{cell}' needs quoting")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.header.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidConfig("empty CSV".into()))?;
        let mut t = Table::new(header.split(','));
        for line in lines {
            t.push(line.split(',').map(str::to_owned).collect())?;
        }
        Ok(t)
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn ber_table(r: &BerResult) -> Table {
    let mut t = Table::new(["user", "snr_db", "trials", "errors", "ber", "ci_lo", "ci_hi"]);
    for row in &r.rows {
        t.push(vec![
            row.user.to_string(),
            fmt_f64(row.snr_db),
            row.trials.to_string(),
            row.errors.to_string(),
            fmt_f64(row.ber),
            fmt_f64(row.ci_lo),
            fmt_f64(row.ci_hi),
        ])
        .expect("ber rows have seven plain cells");
    }
    t
}

/// `snr_db, rate_bits_per_re, scheme_label` rows.
pub fn rate_table(curves: &[(String, Vec<(f64, f64)>)]) -> Result<Table> {
    let mut t = Table::new(["snr_db", "rate_bits_per_re", "scheme_label"]);
    for (label, points) in curves {
        for &(snr, rate) in points {
            t.push(vec![fmt_f64(snr), fmt_f64(rate), label.clone()])?;
        }
    }
    Ok(t)
}
