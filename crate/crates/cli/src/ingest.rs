//! CSV ingestion into typed observations.
//!
//! The file must carry a header row. Column typing comes from the config's
//! mapping; continuous covariates are optionally min-max rescaled to [0, 1]
//! column by column. Cluster identifiers may be arbitrary strings and get
//! dense numeric ids in order of first appearance.

use std::collections::HashMap;
use std::path::Path;

use didcc_core::Sample;

use crate::config::ColumnMap;
use crate::CliError;

fn err(row: usize, column: &str, what: impl std::fmt::Display) -> CliError {
    CliError::Ingestion(format!("row {row}, column '{column}': {what}"))
}

struct ColumnIndex {
    outcome: usize,
    treatment: usize,
    period: usize,
    continuous: Vec<usize>,
    unordered: Vec<usize>,
    ordered: Vec<usize>,
    cluster: Option<usize>,
}

fn locate(headers: &csv::StringRecord, map: &ColumnMap) -> Result<ColumnIndex, CliError> {
    let find = |name: &str| -> Result<usize, CliError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Ingestion(format!("missing column '{name}' in header")))
    };
    Ok(ColumnIndex {
        outcome: find(&map.outcome)?,
        treatment: find(&map.treatment)?,
        period: find(&map.period)?,
        continuous: map.continuous.iter().map(|c| find(c)).collect::<Result<_, _>>()?,
        unordered: map.unordered.iter().map(|c| find(c)).collect::<Result<_, _>>()?,
        ordered: map.ordered.iter().map(|c| find(c)).collect::<Result<_, _>>()?,
        cluster: map.cluster.as_ref().map(|c| find(c)).transpose()?,
    })
}

/// Read and type the input file. `rescale_continuous` maps each continuous
/// column onto [0, 1] by its observed min and max (columns without spread
/// are left alone).
pub fn ingest_csv(
    path: &Path,
    map: &ColumnMap,
    rescale_continuous: bool,
) -> Result<Vec<Sample>, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Ingestion(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Ingestion(format!("cannot read header: {e}")))?
        .clone();
    let index = locate(&headers, map)?;

    let parse_f64 = |row: usize, field: &str, column: &str| -> Result<f64, CliError> {
        field
            .trim()
            .parse::<f64>()
            .map_err(|_| err(row, column, format!("cannot parse '{field}' as a number")))
    };
    let parse_i64 = |row: usize, field: &str, column: &str| -> Result<i64, CliError> {
        field
            .trim()
            .parse::<i64>()
            .map_err(|_| err(row, column, format!("cannot parse '{field}' as an integer")))
    };
    let parse_binary = |row: usize, field: &str, column: &str| -> Result<u8, CliError> {
        match field.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(err(row, column, format!("expected 0 or 1, got '{other}'"))),
        }
    };

    let mut clusters: HashMap<String, u64> = HashMap::new();
    let mut data = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // header is row 1
        let record =
            record.map_err(|e| CliError::Ingestion(format!("row {row}: {e}")))?;
        let field = |idx: usize, column: &str| -> Result<&str, CliError> {
            record.get(idx).ok_or_else(|| err(row, column, "missing field"))
        };
        let y = parse_f64(row, field(index.outcome, &map.outcome)?, &map.outcome)?;
        if !y.is_finite() {
            return Err(err(row, &map.outcome, "outcome is not finite"));
        }
        let d = parse_binary(row, field(index.treatment, &map.treatment)?, &map.treatment)?;
        let t = parse_binary(row, field(index.period, &map.period)?, &map.period)?;
        let mut x_c = Vec::with_capacity(index.continuous.len());
        for (idx, name) in index.continuous.iter().zip(&map.continuous) {
            let v = parse_f64(row, field(*idx, name)?, name)?;
            if !v.is_finite() {
                return Err(err(row, name, "covariate is not finite"));
            }
            x_c.push(v);
        }
        let mut x_u = Vec::with_capacity(index.unordered.len());
        for (idx, name) in index.unordered.iter().zip(&map.unordered) {
            x_u.push(parse_i64(row, field(*idx, name)?, name)?);
        }
        let mut x_o = Vec::with_capacity(index.ordered.len());
        for (idx, name) in index.ordered.iter().zip(&map.ordered) {
            x_o.push(parse_i64(row, field(*idx, name)?, name)?);
        }
        let cluster = match index.cluster {
            None => None,
            Some(idx) => {
                let key = field(idx, map.cluster.as_deref().unwrap_or("cluster"))?.to_string();
                let next = clusters.len() as u64;
                Some(*clusters.entry(key).or_insert(next))
            }
        };
        data.push(Sample { y, d, t, x_c, x_u, x_o, cluster });
    }
    if data.is_empty() {
        return Err(CliError::Ingestion("input contains no data rows".into()));
    }

    if rescale_continuous {
        for c in 0..map.continuous.len() {
            let min = data.iter().map(|s| s.x_c[c]).fold(f64::INFINITY, f64::min);
            let max = data.iter().map(|s| s.x_c[c]).fold(f64::NEG_INFINITY, f64::max);
            if max > min {
                for s in &mut data {
                    s.x_c[c] = (s.x_c[c] - min) / (max - min);
                }
            }
        }
    }
    Ok(data)
}
