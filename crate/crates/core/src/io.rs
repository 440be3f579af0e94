//! File formats.
//!
//! CSV numbers are written with 17 significant digits (`{:.16e}`), so every
//! value parses back to the same `f64`. JSON uses the shortest representation
//! that round-trips.

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{Basis, TimeGrid};
use crate::error::{Error, Result};
use crate::evaluate::{CellSummary, SweepResult};
use crate::masked::{Mask, MaskedMatrix, ObservationSet, PatientRecord, TreatmentMatrix};
use crate::simulate::{SimConfig, SimOutput};
use crate::solver::{FitResult, Method};

pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_num(field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("cannot parse {what} `{field}`")))
}

fn headers_match(reader: &mut csv::Reader<impl Read>, want: &[&str]) -> Result<()> {
    let got: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if got != want {
        return Err(Error::Parse(format!("expected header {}, got {}", want.join(","), got.join(","))));
    }
    Ok(())
}

/// Reads long-format observations (`patient_id,time,value`) and optional
/// treatments (`patient_id,treatment_time`, empty time meaning untreated).
/// Patients keep the order of their first appearance.
pub fn read_observations(obs: impl Read, treatments: Option<impl Read>) -> Result<ObservationSet> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(obs);
    headers_match(&mut reader, &["patient_id", "time", "value"])?;
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut patients: Vec<PatientRecord> = Vec::new();
    for row in reader.records() {
        let row = row?;
        if row.len() != 3 {
            return Err(Error::Parse(format!("expected 3 fields, got {}", row.len())));
        }
        let id = row[0].to_string();
        let time = parse_num(&row[1], "time")?;
        let value = parse_num(&row[2], "value")?;
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            patients.push(PatientRecord {
                id,
                times: Vec::new(),
                values: Vec::new(),
                treatment_time: None,
            });
            patients.len() - 1
        });
        patients[slot].times.push(time);
        patients[slot].values.push(value);
    }
    if let Some(t) = treatments {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(t);
        headers_match(&mut reader, &["patient_id", "treatment_time"])?;
        for row in reader.records() {
            let row = row?;
            let slot = *index
                .get(&row[0])
                .ok_or_else(|| Error::Parse(format!("treatment for unknown patient `{}`", &row[0])))?;
            let field = row.get(1).unwrap_or("");
            patients[slot].treatment_time = if field.is_empty() {
                None
            } else {
                Some(parse_num(field, "treatment_time")?)
            };
        }
    }
    let set = ObservationSet { patients };
    set.validate()?;
    Ok(set)
}

pub fn write_observations(out: impl Write, obs: &ObservationSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "time", "value"])?;
    for p in &obs.patients {
        for (&t, &v) in p.times.iter().zip(&p.values) {
            w.write_record([p.id.as_str(), &fmt_num(t), &fmt_num(v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_treatments(out: impl Write, obs: &ObservationSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "treatment_time"])?;
    for p in &obs.patients {
        let t = p.treatment_time.map(fmt_num).unwrap_or_default();
        w.write_record([p.id.as_str(), &t])?;
    }
    w.flush()?;
    Ok(())
}

/// Observed cells of a gridded matrix as per-patient records at grid times;
/// treatment times are the grid times of the onsets. Rows without
/// observations are skipped.
pub fn gridded_to_records(
    y: &MaskedMatrix,
    treatments: &TreatmentMatrix,
    grid: &TimeGrid,
    ids: &[String],
) -> Result<ObservationSet> {
    crate::error::check_shape(y.shape(), treatments.shape())?;
    if ids.len() != y.nrows() || grid.len() != y.ncols() {
        return Err(Error::InvalidSize("ids or grid do not match the matrix".into()));
    }
    let points = grid.points();
    let patients = (0..y.nrows())
        .filter(|&i| y.mask().row_count(i) > 0)
        .map(|i| {
            let cols: Vec<usize> = (0..y.ncols()).filter(|&j| y.mask().get(i, j)).collect();
            PatientRecord {
                id: ids[i].clone(),
                times: cols.iter().map(|&j| points[j]).collect(),
                values: cols.iter().map(|&j| y.raw_values()[(i, j)]).collect(),
                treatment_time: treatments.onsets()[i].map(|o| points[o]),
            }
        })
        .collect();
    Ok(ObservationSet { patients })
}

/// Headerless `rows x cols` CSV; `None` cells are left empty.
pub fn write_wide(out: impl Write, rows: usize, cols: usize, cell: impl Fn(usize, usize) -> Option<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..rows {
        let row: Vec<String> = (0..cols).map(|j| cell(i, j).map(fmt_num).unwrap_or_default()).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix(out: impl Write, m: &DMatrix<f64>) -> Result<()> {
    write_wide(out, m.nrows(), m.ncols(), |i, j| Some(m[(i, j)]))
}

pub fn write_masked(out: impl Write, y: &MaskedMatrix) -> Result<()> {
    write_wide(out, y.nrows(), y.ncols(), |i, j| y.get(i, j))
}

/// Reads a headerless wide CSV; empty cells become `None`.
pub fn read_wide(input: impl Read) -> Result<Vec<Vec<Option<f64>>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|f| if f.is_empty() { Ok(None) } else { parse_num(f, "cell").map(Some) })
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(rows)
}

fn dims(rows: &[Vec<Option<f64>>]) -> Result<(usize, usize)> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse("ragged rows".into()));
    }
    Ok((rows.len(), cols))
}

/// Dense matrix from a wide CSV without empty cells.
pub fn read_matrix(input: impl Read) -> Result<DMatrix<f64>> {
    let rows = read_wide(input)?;
    let (n, t) = dims(&rows)?;
    let mut m = DMatrix::zeros(n, t);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = v.ok_or_else(|| Error::Parse(format!("empty cell ({i}, {j})")))?;
        }
    }
    Ok(m)
}

pub fn read_masked(input: impl Read) -> Result<MaskedMatrix> {
    let rows = read_wide(input)?;
    let (n, t) = dims(&rows)?;
    let values = DMatrix::from_fn(n, t, |i, j| rows[i][j].unwrap_or(f64::NAN));
    let mask = Mask::from_fn(n, t, |i, j| rows[i][j].is_some());
    MaskedMatrix::new(values, mask)
}

/// Zero-one wide CSV: cells equal to 1 are in the mask.
pub fn read_mask(input: impl Read) -> Result<Mask> {
    let m = read_matrix(input)?;
    if m.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Parse("mask cells must be 0 or 1".into()));
    }
    Ok(Mask::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] == 1.0))
}

pub fn write_mask(out: impl Write, mask: &Mask) -> Result<()> {
    let (n, t) = mask.shape();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..n {
        let row: Vec<&str> = (0..t).map(|j| if mask.get(i, j) { "1" } else { "0" }).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse(format!("matrix rows must have {cols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// JSON form of a [`FitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub method: Method,
    /// Row-major `N x K`.
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub mu: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub degenerate_treatment: bool,
    pub loss_trace: Vec<f64>,
    pub fixed_point_residual: [f64; 2],
    /// Row labels of `W`.
    #[serde(default)]
    pub patient_ids: Vec<String>,
    /// MSE on held-out test entries, when a test set was drawn.
    #[serde(default)]
    pub test_mse: Option<f64>,
    /// Constant subtracted from `Y` before fitting; predictions include it.
    #[serde(default)]
    pub offset: f64,
}

impl FitDocument {
    pub fn from_fit(fit: &FitResult) -> Self {
        Self {
            method: fit.method,
            w: rows_of(&fit.w),
            mu: fit.mu,
            lambda: fit.lambda,
            iterations: fit.iterations,
            converged: fit.converged,
            degenerate_treatment: fit.degenerate_treatment,
            loss_trace: fit.loss_trace.clone(),
            fixed_point_residual: [fit.fixed_point_residual.0, fit.fixed_point_residual.1],
            patient_ids: Vec::new(),
            test_mse: None,
            offset: 0.0,
        }
    }

    pub fn w_matrix(&self) -> Result<DMatrix<f64>> {
        from_rows(&self.w, self.w.first().map_or(0, |r| r.len()))
    }
}

/// Ground truth written next to simulated observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSidecar {
    #[serde(rename = "W_true")]
    pub w_true: Vec<Vec<f64>>,
    pub mu_true: f64,
    /// Zero-based grid column of each patient's onset; `null` when untreated.
    pub onsets: Vec<Option<usize>>,
    pub patient_ids: Vec<String>,
    pub seed: u64,
    pub config: SimConfig,
}

impl SimSidecar {
    pub fn from_output(sim: &SimOutput, ids: &[String]) -> Self {
        Self {
            w_true: rows_of(&sim.w_true),
            mu_true: sim.mu_true,
            onsets: sim.treatments.onsets().to_vec(),
            patient_ids: ids.to_vec(),
            seed: sim.config.seed,
            config: sim.config.clone(),
        }
    }

    pub fn w_matrix(&self) -> Result<DMatrix<f64>> {
        from_rows(&self.w_true, self.config.k)
    }
}

pub fn write_json<T: Serialize>(out: impl Write, value: &T) -> Result<()> {
    let mut out = out;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(input: impl Read) -> Result<T> {
    Ok(serde_json::from_reader(input)?)
}

/// `T x K` basis matrix, headerless.
pub fn write_basis(out: impl Write, basis: &Basis) -> Result<()> {
    write_matrix(out, basis.matrix())
}

/// Principal curves as columns `time,pc1,...`.
pub fn write_curves(out: impl Write, grid: &TimeGrid, curves: &[DVector<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend((1..=curves.len()).map(|m| format!("pc{m}")));
    w.write_record(&header)?;
    for (j, &t) in grid.points().iter().enumerate() {
        let mut row = vec![fmt_num(t)];
        row.extend(curves.iter().map(|c| fmt_num(c[j])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per record: `method,mu,rho,lambda,replication,mse,rse_mu`.
pub fn write_sweep(out: impl Write, result: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "mu", "rho", "lambda", "replication", "mse", "rse_mu"])?;
    for r in &result.records {
        w.write_record([
            r.method.as_str(),
            &fmt_num(r.mu),
            &fmt_num(r.rho),
            &fmt_num(r.lambda),
            &r.replication.to_string(),
            &fmt_num(r.mse),
            &fmt_num(r.rse_mu),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Mean test MSE with one row per method and one column per `(rho, mu)`
/// cell, `rho` outermost, followed by one row of mean RSE for CSI.
pub fn write_table(out: impl Write, summary: &[CellSummary]) -> Result<()> {
    let rhos = sorted_unique(summary.iter().map(|c| c.rho).collect());
    let mus = sorted_unique(summary.iter().map(|c| c.mu).collect());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["metric".to_string(), "method".to_string()];
    for &rho in &rhos {
        for &mu in &mus {
            header.push(format!("rho={rho};mu={mu}"));
        }
    }
    w.write_record(&header)?;
    let lookup = |m: Method, rho: f64, mu: f64| summary.iter().find(|c| c.method == m && c.rho == rho && c.mu == mu);
    let rows: [(&str, Method, fn(&CellSummary) -> f64); 3] = [
        ("mse", Method::Sli, |c| c.mse_mean),
        ("mse", Method::Csi, |c| c.mse_mean),
        ("rse_mu", Method::Csi, |c| c.rse_mean),
    ];
    for (metric, method, value) in rows {
        let mut row = vec![metric.to_string(), method.as_str().to_string()];
        for &rho in &rhos {
            for &mu in &mus {
                row.push(lookup(method, rho, mu).map(|c| fmt_num(value(c))).unwrap_or_default());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Long plot data `mu,rho,metric,value` with metrics `mse_csi`, `mse_sli`
/// and `rse_mu`.
pub fn write_plot_data(out: impl Write, summary: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mu", "rho", "metric", "value"])?;
    let mut rows: Vec<(f64, f64, &str, f64)> = Vec::new();
    for c in summary {
        match c.method {
            Method::Csi => {
                rows.push((c.mu, c.rho, "mse_csi", c.mse_mean));
                rows.push((c.mu, c.rho, "rse_mu", c.rse_mean));
            }
            Method::Sli => rows.push((c.mu, c.rho, "mse_sli", c.mse_mean)),
        }
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(b.2)));
    for (mu, rho, metric, value) in rows {
        w.write_record([&fmt_num(mu), &fmt_num(rho), metric, &fmt_num(value)])?;
    }
    w.flush()?;
    Ok(())
}
