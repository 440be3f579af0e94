//! Sparse observation matrix `Y` with its mask, the treatment step matrix,
//! the entrywise projections, and gridding of irregular per-patient records.

use nalgebra::DMatrix;

use crate::basis::TimeGrid;
use crate::error::{check_shape, Error, Result};

/// Boolean `N x T` matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, fill: bool) -> Self {
        Self {
            rows,
            cols,
            bits: vec![fill; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                bits.push(f(i, j));
            }
        }
        Self { rows, cols, bits }
    }

    pub fn from_row_major(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::InvalidSize(format!(
                "mask buffer has {} entries, expected {}",
                bits.len(),
                rows * cols
            )));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.bits[i * self.cols + j] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    /// Set entries in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.cols;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(k, _)| (k / cols, k % cols))
    }

    pub fn row_count(&self, i: usize) -> usize {
        self.bits[i * self.cols..(i + 1) * self.cols]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a || b)
    }

    /// Entries set in `self` but not in `other`.
    pub fn minus(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a && !b)
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.shape() == other.shape() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn is_disjoint(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !(a && b))
    }

    fn zip(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        assert_eq!(self.shape(), other.shape(), "mask shapes differ");
        Mask {
            rows: self.rows,
            cols: self.cols,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

/// `Y` together with the observed set `Omega`. Unobserved cells hold NaN; the
/// mask is the ground truth and numeric code only reads observed cells.
#[derive(Debug, Clone)]
pub struct MaskedMatrix {
    values: DMatrix<f64>,
    mask: Mask,
}

impl MaskedMatrix {
    pub fn new(mut values: DMatrix<f64>, mask: Mask) -> Result<Self> {
        check_shape(values.shape(), mask.shape())?;
        for i in 0..mask.nrows() {
            for j in 0..mask.ncols() {
                if mask.get(i, j) {
                    if !values[(i, j)].is_finite() {
                        return Err(Error::InvalidConfig(format!(
                            "observed entry ({i}, {j}) is not finite"
                        )));
                    }
                } else {
                    values[(i, j)] = f64::NAN;
                }
            }
        }
        Ok(Self { values, mask })
    }

    pub fn fully_observed(values: DMatrix<f64>) -> Result<Self> {
        let mask = Mask::new(values.nrows(), values.ncols(), true);
        Self::new(values, mask)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    /// Raw storage, NaN where unobserved.
    pub fn raw_values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.mask.get(i, j).then(|| self.values[(i, j)])
    }

    /// `P_Omega(Y)`: observed values, zero elsewhere.
    pub fn zero_filled(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.nrows(), self.ncols(), |i, j| {
            if self.mask.get(i, j) {
                self.values[(i, j)]
            } else {
                0.0
            }
        })
    }

    /// Same values restricted to `sub`, which must be a subset of the mask.
    pub fn restrict(&self, sub: &Mask) -> Result<Self> {
        check_shape(self.shape(), sub.shape())?;
        if !sub.is_subset_of(&self.mask) {
            return Err(Error::MaskNotSubset);
        }
        Self::new(self.values.clone(), sub.clone())
    }

    /// Observed entries as `(row, col, value)` in row-major order.
    pub fn observed(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.mask.indices().map(|(i, j)| (i, j, self.values[(i, j)]))
    }
}

/// Equal masks and equal observed values; the sentinel is not compared.
impl PartialEq for MaskedMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.mask == other.mask && self.observed().zip(other.observed()).all(|(a, b)| a.2 == b.2)
    }
}

/// `N x T` zero-one step matrix; row `i` is one from column `onset[i]` on.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentMatrix {
    onset: Vec<Option<usize>>,
    dense: DMatrix<f64>,
}

impl TreatmentMatrix {
    /// `onset[i] = None` means never treated within the grid.
    pub fn new(onset: Vec<Option<usize>>, cols: usize) -> Result<Self> {
        if let Some(bad) = onset.iter().flatten().find(|&&o| o >= cols) {
            return Err(Error::InvalidSize(format!(
                "treatment onset {bad} outside 0..{cols}"
            )));
        }
        let dense = DMatrix::from_fn(onset.len(), cols, |i, j| match onset[i] {
            Some(o) if j >= o => 1.0,
            _ => 0.0,
        });
        Ok(Self { onset, dense })
    }

    pub fn untreated(rows: usize, cols: usize) -> Self {
        Self {
            onset: vec![None; rows],
            dense: DMatrix::zeros(rows, cols),
        }
    }

    pub fn onsets(&self) -> &[Option<usize>] {
        &self.onset
    }

    pub fn dense(&self) -> &DMatrix<f64> {
        &self.dense
    }

    pub fn shape(&self) -> (usize, usize) {
        self.dense.shape()
    }

    #[inline]
    pub fn is_treated(&self, i: usize, j: usize) -> bool {
        matches!(self.onset[i], Some(o) if j >= o)
    }

    /// `Omega_S` as a mask.
    pub fn support(&self) -> Mask {
        let (n, t) = self.shape();
        Mask::from_fn(n, t, |i, j| self.is_treated(i, j))
    }

    /// Rows `rows` of this matrix, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let onset = rows.iter().map(|&i| self.onset[i]).collect();
        Self::new(onset, self.dense.ncols()).expect("onsets already validated")
    }
}

/// Irregularly sampled measurements of one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub treatment_time: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationSet {
    pub patients: Vec<PatientRecord>,
}

impl ObservationSet {
    pub fn validate(&self) -> Result<()> {
        for p in &self.patients {
            if p.times.len() != p.values.len() {
                return Err(Error::InvalidConfig(format!(
                    "patient {}: {} times but {} values",
                    p.id,
                    p.times.len(),
                    p.values.len()
                )));
            }
            if p.times.is_empty() {
                return Err(Error::InvalidConfig(format!("patient {} has no observations", p.id)));
            }
            if p.values.iter().chain(&p.times).any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!("patient {}: non-finite value", p.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CollisionPolicy {
    #[default]
    Error,
    Average,
}

/// Output of [`grid_observations`].
#[derive(Debug, Clone)]
pub struct GriddedData {
    pub y: MaskedMatrix,
    pub treatments: TreatmentMatrix,
    pub patient_ids: Vec<String>,
    /// Observations merged into an already occupied cell (`Average` policy).
    pub collisions: usize,
}

/// Grid column for a treatment time: nearest point, clamped to 0 below the
/// grid, `None` when it rounds past the last point.
pub fn treatment_onset(grid: &TimeGrid, s: Option<f64>) -> Option<usize> {
    let s = s.filter(|v| v.is_finite())?;
    let pos = ((s - grid.t_min()) / grid.spacing() + 0.5).floor();
    if pos < 0.0 {
        Some(0)
    } else if pos >= grid.len() as f64 {
        None
    } else {
        Some(pos as usize)
    }
}

pub fn grid_observations(
    obs: &ObservationSet,
    grid: &TimeGrid,
    policy: CollisionPolicy,
) -> Result<GriddedData> {
    obs.validate()?;
    let n = obs.len();
    let t = grid.len();
    let mut sums = DMatrix::<f64>::zeros(n, t);
    let mut counts = vec![0usize; n * t];
    let mut collisions = 0;
    for (i, p) in obs.patients.iter().enumerate() {
        for (&time, &value) in p.times.iter().zip(&p.values) {
            let j = grid.nearest_index(time).ok_or_else(|| Error::OutOfRange {
                patient: p.id.clone(),
                time,
                t_min: grid.t_min(),
                t_max: grid.t_max(),
            })?;
            let c = &mut counts[i * t + j];
            if *c > 0 {
                if policy == CollisionPolicy::Error {
                    return Err(Error::Collision {
                        patient: p.id.clone(),
                        column: j,
                    });
                }
                collisions += 1;
            }
            *c += 1;
            sums[(i, j)] += value;
        }
    }
    let mask = Mask::from_fn(n, t, |i, j| counts[i * t + j] > 0);
    let values = DMatrix::from_fn(n, t, |i, j| {
        let c = counts[i * t + j];
        if c > 0 {
            sums[(i, j)] / c as f64
        } else {
            f64::NAN
        }
    });
    let onset = obs
        .patients
        .iter()
        .map(|p| treatment_onset(grid, p.treatment_time))
        .collect();
    Ok(GriddedData {
        y: MaskedMatrix::new(values, mask)?,
        treatments: TreatmentMatrix::new(onset, t)?,
        patient_ids: obs.patients.iter().map(|p| p.id.clone()).collect(),
        collisions,
    })
}

/// `P_Omega(A)`.
pub fn project(a: &DMatrix<f64>, mask: &Mask) -> Result<DMatrix<f64>> {
    check_shape(a.shape(), mask.shape())?;
    Ok(DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| {
        if mask.get(i, j) {
            a[(i, j)]
        } else {
            0.0
        }
    }))
}

/// `P_Omega^perp(A) = A - P_Omega(A)`.
pub fn project_complement(a: &DMatrix<f64>, mask: &Mask) -> Result<DMatrix<f64>> {
    check_shape(a.shape(), mask.shape())?;
    Ok(DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| {
        if mask.get(i, j) {
            0.0
        } else {
            a[(i, j)]
        }
    }))
}
