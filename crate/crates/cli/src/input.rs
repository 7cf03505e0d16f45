//! CSV input: header-mapped column roles, validation, and descriptive
//! summary artifacts.

use std::path::Path;

use zimed_core::data::{validate_dataset, Dataset, DatasetSummary, Schema};

use crate::config::{MediatorSel, SchemaSpec};
use crate::error::AppError;

pub struct LoadedData {
    pub dataset: Dataset,
    pub summary: DatasetSummary,
    /// Mediator column names, in dataset column order.
    pub taxa: Vec<String>,
    /// Optional unassigned-read counts per subject.
    pub unassigned: Option<Vec<f64>>,
}

/// Reads a headered CSV and maps columns to roles by name. Cells in mapped
/// numeric columns must parse as f64; empty / NA cells become NaN and are
/// rejected downstream by dataset validation with row/column detail.
pub fn load_dataset(path: &Path, spec: &SchemaSpec) -> Result<LoadedData, AppError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| AppError::Io(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> =
        reader.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let find = |name: &str| -> Result<usize, AppError> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            AppError::Data(format!("column '{name}' not found in {}", path.display()))
        })
    };
    let find_all = |names: &[String]| -> Result<Vec<usize>, AppError> {
        names.iter().map(|n| find(n)).collect()
    };

    let mediator_idx: Vec<usize> = match &spec.mediators {
        MediatorSel::Cols(names) => find_all(names)?,
        MediatorSel::Prefix(prefix) => {
            let idx: Vec<usize> = headers
                .iter()
                .enumerate()
                .filter(|(_, h)| h.starts_with(prefix.as_str()))
                .map(|(i, _)| i)
                .collect();
            if idx.is_empty() {
                return Err(AppError::Data(format!(
                    "no columns with prefix '{prefix}' in {}",
                    path.display()
                )));
            }
            idx
        }
    };
    let taxa: Vec<String> = mediator_idx.iter().map(|&i| headers[i].clone()).collect();

    let id_idx = match &spec.id {
        Some(name) => match find(name) {
            Ok(i) => Some(i),
            Err(_) if spec.id_optional => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    let c3_idx = match find_all(&spec.c3) {
        Ok(v) => v,
        Err(_) if spec.c3_optional => Vec::new(),
        Err(e) => return Err(e),
    };
    let schema = Schema {
        id: id_idx,
        exposure: find(&spec.exposure)?,
        c1: find_all(&spec.c1)?,
        c2: find_all(&spec.c2)?,
        c3: c3_idx,
        mediators: mediator_idx,
        offset: find(&spec.offset)?,
        outcome: find(&spec.outcome)?,
    };
    let unassigned_idx = spec.unassigned.as_deref().map(find).transpose()?;

    // mapped numeric columns, parsed strictly
    let mut numeric: Vec<usize> = Vec::new();
    numeric.push(schema.exposure);
    numeric.extend(&schema.c1);
    numeric.extend(&schema.c2);
    numeric.extend(&schema.c3);
    numeric.extend(&schema.mediators);
    numeric.push(schema.offset);
    numeric.push(schema.outcome);
    numeric.extend(unassigned_idx);
    numeric.sort_unstable();
    numeric.dedup();

    let mut raw: Vec<Vec<f64>> = Vec::new();
    let mut ids: Vec<String> = Vec::new();
    let mut unassigned: Vec<f64> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(AppError::Data(format!(
                "row {row}: expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        let mut vals = vec![f64::NAN; headers.len()];
        for &col in &numeric {
            let cell = record[col].trim();
            vals[col] = match cell {
                "" | "NA" | "na" | "NaN" | "nan" => f64::NAN,
                s => s.parse::<f64>().map_err(|_| {
                    AppError::Data(format!(
                        "row {row}, column '{}': '{s}' is not numeric",
                        headers[col]
                    ))
                })?,
            };
        }
        if let Some(i) = id_idx {
            ids.push(record[i].trim().to_string());
        }
        if let Some(i) = unassigned_idx {
            unassigned.push(vals[i]);
        }
        raw.push(vals);
    }
    if raw.is_empty() {
        return Err(AppError::Data(format!("{} contains no data rows", path.display())));
    }

    let (dataset, summary) =
        validate_dataset(&raw, if id_idx.is_some() { Some(&ids) } else { None }, &schema)?;
    Ok(LoadedData {
        dataset,
        summary,
        taxa,
        unassigned: unassigned_idx.map(|_| unassigned),
    })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - h.floor()) * (sorted[hi] - sorted[lo])
}

/// Writes `summary.csv` (per-taxon zero proportion, count quantiles, and
/// skewness, with a degenerate flag for constant taxa) and `depth.csv`
/// (per-subject total reads: mediator row sums plus unassigned reads when
/// provided).
pub fn write_summary_stats(
    out_dir: &Path,
    data: &LoadedData,
) -> Result<(), AppError> {
    let ds = &data.dataset;
    let n = ds.n();
    let zero_props = ds.zero_proportions();

    let mut w = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    w.write_record([
        "taxon", "zero_prop", "min", "q25", "median", "q75", "max", "skewness", "degenerate",
    ])?;
    for (j, name) in data.taxa.iter().enumerate() {
        let mut vals: Vec<f64> = ds.mediators.column(j).iter().cloned().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = vals.iter().sum::<f64>() / n as f64;
        let m2 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let m3 = vals.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n as f64;
        let degenerate = m2 == 0.0;
        let skewness = if degenerate { 0.0 } else { m3 / m2.powf(1.5) };
        w.write_record([
            name.clone(),
            fmt(zero_props[j]),
            fmt(vals[0]),
            fmt(quantile(&vals, 0.25)),
            fmt(quantile(&vals, 0.50)),
            fmt(quantile(&vals, 0.75)),
            fmt(vals[n - 1]),
            fmt(skewness),
            degenerate.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out_dir.join("depth.csv"))?;
    w.write_record(["id", "depth"])?;
    for i in 0..n {
        let mut depth: f64 = ds.mediators.row(i).iter().sum();
        if let Some(u) = &data.unassigned {
            depth += u[i];
        }
        w.write_record([ds.subject_id[i].clone(), fmt(depth)])?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip decimal rendering (stable across runs).
pub fn fmt(x: f64) -> String {
    format!("{x}")
}
