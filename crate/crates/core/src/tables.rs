//! Tabular output: multipliers, poles, log-determinant samples and oracle
//! eigenvalues, as CSV or as a JSON array of row objects.

use std::io::Write;
use std::path::Path;

use serde_json::{Map, Value};

use crate::charmat::LogdetSample;
use crate::error::Result;
use crate::scalar::{cabs, Cx, Scalar};
use crate::spectrum::{MultiplierRecord, PoleSet};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Real(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            // shortest round-trip representation, stable across runs
            Cell::Real(x) => format!("{x:?}"),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Real(x) => serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number),
            Cell::Int(i) => Value::from(*i),
            Cell::Text(s) => Value::from(s.as_str()),
        }
    }
}

fn real<T: Scalar>(x: T) -> Cell {
    Cell::Real(x.to_f64_lossy())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl Table {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = self
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(c, v)| ((*c).to_string(), v.json()))
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }

    pub fn write(&self, out: impl Write, format: Format) -> Result<()> {
        match format {
            Format::Csv => self.write_csv(out),
            Format::Json => {
                let mut out = out;
                serde_json::to_writer_pretty(&mut out, &self.to_json())?;
                out.write_all(b"\n")?;
                Ok(())
            }
        }
    }

    /// Writes `<dir>/<stem>.<ext>` and returns its path.
    pub fn save(&self, dir: &Path, stem: &str, format: Format) -> Result<std::path::PathBuf> {
        let path = dir.join(format!("{stem}.{}", format.extension()));
        let file = std::io::BufWriter::new(std::fs::File::create(&path)?);
        self.write(file, format)?;
        Ok(path)
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => crate::Error::Io(io),
        other => crate::Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

pub const MULTIPLIER_COLUMNS: [&str; 9] = [
    "re_lambda",
    "im_lambda",
    "abs_lambda",
    "re_mu",
    "im_mu",
    "alg_mult",
    "geom_mult",
    "max_chain_len",
    "residual",
];

pub fn multiplier_table<T: Scalar>(records: &[MultiplierRecord<T>]) -> Table {
    let mut t = Table::new(MULTIPLIER_COLUMNS.to_vec());
    for r in records {
        t.push(vec![
            real(r.lambda.re),
            real(r.lambda.im),
            real(cabs(r.lambda)),
            real(r.mu_star.re),
            real(r.mu_star.im),
            Cell::Int(r.alg_mult as u64),
            Cell::Int(r.geom_mult as u64),
            Cell::Int(r.max_chain_len() as u64),
            real(r.residual),
        ]);
    }
    t
}

pub fn pole_table<T: Scalar>(poles: &PoleSet<T>) -> Table {
    let mut t = Table::new(vec!["re_mu", "im_mu", "est_mult"]);
    for (mu, q) in &poles.poles {
        t.push(vec![real(mu.re), real(mu.im), Cell::Int(*q as u64)]);
    }
    t
}

pub fn logdet_table<T: Scalar>(samples: &[LogdetSample<T>]) -> Table {
    let mut t = Table::new(vec!["re_mu", "im_mu", "re_logdet", "im_logdet", "status"]);
    for s in samples {
        let (a, b) = match s.logdet {
            Some(z) => (real(z.re), real(z.im)),
            None => (Cell::Real(f64::NAN), Cell::Real(f64::NAN)),
        };
        t.push(vec![real(s.mu.re), real(s.mu.im), a, b, Cell::Text(s.status.clone())]);
    }
    t
}

/// Oracle eigenvalues in the multiplier layout; `mu = 1 / lambda`, and the
/// cluster size fills the multiplicity column.
pub fn oracle_table<T: Scalar>(eigs: &[(Cx<T>, usize)]) -> Table {
    let mut t = Table::new(vec!["re_lambda", "im_lambda", "abs_lambda", "re_mu", "im_mu", "alg_mult"]);
    for (l, q) in eigs {
        let mu = l.inv();
        t.push(vec![
            real(l.re),
            real(l.im),
            real(cabs(*l)),
            real(mu.re),
            real(mu.im),
            Cell::Int(*q as u64),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cx;

    #[test]
    fn csv_and_json_shapes() {
        let t = oracle_table(&[(cx(2.0f64, 0.0), 1), (cx(0.5, 0.5), 2)]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "re_lambda,im_lambda,abs_lambda,re_mu,im_mu,alg_mult");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("2.0,0.0,2.0,0.5,"));
        let j = t.to_json();
        assert_eq!(j[1]["alg_mult"], 2);
    }

    #[test]
    fn nan_becomes_null() {
        assert_eq!(Cell::Real(f64::NAN).json(), Value::Null);
    }
}
