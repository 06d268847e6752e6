//! Curve CSV files: optional `#` header lines, then `unit,stratum,t_1,...,t_d`,
//! then one row per unit. Strata are 1-based in the file; an empty cell is an
//! unobserved value.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use csv::{ReaderBuilder, Trim, WriterBuilder};
use ndarray::Array2;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub instants: Vec<f64>,
    pub units: Vec<usize>,
    /// 0-based.
    pub strata: Vec<usize>,
    /// NaN where unobserved.
    pub values: Array2<f64>,
    pub observed: Array2<bool>,
}

impl CurveTable {
    pub fn n_rows(&self) -> usize {
        self.units.len()
    }
}

/// Provenance lines written at the top of every output file.
#[derive(Debug, Clone, PartialEq)]
pub struct HeaderBlock {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub extra: Vec<(String, String)>,
}

impl HeaderBlock {
    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("curvesurvey {}", env!("CARGO_PKG_VERSION")),
            format!("command: {}", self.command),
            format!("config_sha256: {}", self.config_hash),
            format!("seed: {}", self.seed),
        ];
        out.extend(self.extra.iter().map(|(k, v)| format!("{k}: {v}")));
        out
    }

    pub fn write_comments(&self, out: &mut impl Write) -> std::io::Result<()> {
        for line in self.lines() {
            writeln!(out, "# {line}")?;
        }
        Ok(())
    }
}

fn csv_error(path: &Path, line: u64, message: impl Into<String>) -> CliError {
    CliError::Csv {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn read_curves(path: &Path) -> Result<CurveTable> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(Trim::All)
        .from_reader(file);

    let mut instants = None;
    let mut units = Vec::new();
    let mut strata = Vec::new();
    let mut cells: Vec<Option<f64>> = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let Some(instants) = instants.as_ref() else {
            if record.len() < 4 {
                return Err(csv_error(
                    path,
                    line,
                    "header needs unit, stratum and at least two instants",
                ));
            }
            let parsed = record
                .iter()
                .skip(2)
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| csv_error(path, line, format!("instant '{c}' is not a number")))
                })
                .collect::<Result<Vec<_>>>()?;
            instants = Some(parsed);
            continue;
        };
        if record.len() != instants.len() + 2 {
            return Err(csv_error(
                path,
                line,
                format!("expected {} fields, found {}", instants.len() + 2, record.len()),
            ));
        }
        let unit: usize = record[0].parse().map_err(|_| {
            csv_error(
                path,
                line,
                format!("unit id '{}' is not a non-negative integer", &record[0]),
            )
        })?;
        if !seen.insert(unit) {
            return Err(csv_error(path, line, format!("duplicate unit id {unit}")));
        }
        let stratum: usize = record[1].parse().ok().filter(|&s| s >= 1).ok_or_else(|| {
            csv_error(
                path,
                line,
                format!("stratum '{}' is not a positive integer", &record[1]),
            )
        })?;
        units.push(unit);
        strata.push(stratum - 1);
        for (j, c) in record.iter().skip(2).enumerate() {
            if c.is_empty() {
                cells.push(None);
            } else {
                let v: f64 = c.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                    csv_error(
                        path,
                        line,
                        format!("value '{c}' at instant {} is not a finite number", j + 1),
                    )
                })?;
                cells.push(Some(v));
            }
        }
    }
    let instants = instants.ok_or_else(|| csv_error(path, 1, "file has no header row"))?;
    let shape = (units.len(), instants.len());
    let values = Array2::from_shape_vec(shape, cells.iter().map(|c| c.unwrap_or(f64::NAN)).collect())
        .expect("rows checked to equal width");
    let observed = Array2::from_shape_vec(shape, cells.iter().map(Option::is_some).collect()).expect("same shape");
    Ok(CurveTable {
        instants,
        units,
        strata,
        values,
        observed,
    })
}

pub fn write_curves(out: &mut impl Write, header: &HeaderBlock, table: &CurveTable) -> std::io::Result<()> {
    header.write_comments(out)?;
    let mut w = WriterBuilder::new().flexible(false).from_writer(out);
    let mut head = vec!["unit".to_string(), "stratum".to_string()];
    head.extend(table.instants.iter().map(|t| t.to_string()));
    w.write_record(&head)?;
    for (i, (&u, &s)) in table.units.iter().zip(&table.strata).enumerate() {
        let mut row = vec![u.to_string(), (s + 1).to_string()];
        for j in 0..table.instants.len() {
            row.push(if table.observed[[i, j]] {
                table.values[[i, j]].to_string()
            } else {
                String::new()
            });
        }
        w.write_record(&row)?;
    }
    w.flush()
}
