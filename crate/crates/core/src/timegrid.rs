//! Time grids, causal two-time storage, and the residual-pair solve.
//!
//! All integrators in this crate discretize two-time quantities F(t, t') on a
//! uniform grid t_j = j * eta and store only the causal half t >= t'. Memory
//! integrals become eta-weighted sums with both endpoints included, and the
//! pair (R_A, C_A) of residual response and correlation is obtained from the
//! self-energies by a triangular solve that proceeds strictly row by row, so a
//! run can be extended without touching (or even re-reading) earlier rows.
//!
//! Storage layout: row i of a [`CausalField`] holds the i + 1 entries
//! F(t_i, t_0) .. F(t_i, t_i), packed contiguously at offset i (i + 1) / 2 of
//! one flat vector. Contiguous rows are what the solvers' inner loops want;
//! column access is rewritten as row-wise accumulation instead.

use std::io::{self, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("row length {got} does not match the next row length {want}")]
    RowLength { got: usize, want: usize },
    #[error("binary field dump is malformed: {0}")]
    BadDump(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Uniform grid with step `eta`; `horizon` counts completed steps, so times
/// t_0 .. t_horizon are defined. Times are always derived from the index to
/// keep them exactly reproducible across runs of different lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub eta: f64,
    pub horizon: usize,
}

impl TimeGrid {
    pub fn new(eta: f64, horizon: usize) -> Self {
        assert!(eta > 0.0 && eta.is_finite(), "step size must be positive");
        Self { eta, horizon }
    }

    /// Grid covering [0, t_max] with the last node at or beyond t_max.
    pub fn to_time(eta: f64, t_max: f64) -> Self {
        let horizon = (t_max / eta).ceil() as usize;
        Self::new(eta, horizon)
    }

    #[inline]
    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.eta
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.horizon).map(|j| self.time(j)).collect()
    }
}

/// Lower-triangular two-time field on a uniform grid.
///
/// A symmetric field (correlation-like) answers F(i, j) for i < j by mirroring;
/// a non-symmetric field (response-like) is causal and returns 0 there. The
/// diagonal is stored explicitly in both cases.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalField {
    data: Vec<f64>,
    rows: usize,
    symmetric: bool,
}

#[inline]
fn row_offset(i: usize) -> usize {
    i * (i + 1) / 2
}

impl CausalField {
    pub fn new(symmetric: bool) -> Self {
        Self { data: Vec::new(), rows: 0, symmetric }
    }

    /// Preallocates storage for `rows_cap` rows so long runs never reallocate
    /// (reallocation would transiently double the footprint of large fields).
    pub fn with_capacity(symmetric: bool, rows_cap: usize) -> Self {
        Self {
            data: Vec::with_capacity(row_offset(rows_cap)),
            rows: 0,
            symmetric,
        }
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    /// Number of completed rows; the last defined time index is rows - 1.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Appends row `rows` (length rows + 1). Existing entries are never
    /// touched, which is what makes checkpoint-and-continue exact.
    pub fn extend(&mut self, row: &[f64]) -> Result<(), GridError> {
        if row.len() != self.rows + 1 {
            return Err(GridError::RowLength { got: row.len(), want: self.rows + 1 });
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// Row i as a contiguous slice of length i + 1.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[row_offset(i)..row_offset(i) + i + 1]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[row_offset(i)..row_offset(i) + i + 1]
    }

    /// F(i, j) with the symmetry/causality convention applied above the
    /// diagonal. Panics if either index is outside the completed rows.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(
            i < self.rows && j < self.rows,
            "two-time index ({i}, {j}) outside horizon {}",
            self.rows
        );
        if j <= i {
            self.data[row_offset(i) + j]
        } else if self.symmetric {
            self.data[row_offset(j) + i]
        } else {
            0.0
        }
    }

    /// out[i] += sum_j F(i, j) x[j] over i, j < x.len(), for a symmetric field.
    ///
    /// Runs in two contiguous passes per row (a dot for j <= i and an axpy for
    /// j < i mirrored), which keeps the dominant solver cost vectorizable.
    pub fn sym_matvec_add(&self, x: &[f64], out: &mut [f64]) {
        assert!(self.symmetric, "sym_matvec_add requires a symmetric field");
        let n = x.len();
        assert!(n <= self.rows && out.len() == n);
        for i in 0..n {
            let row = self.row(i);
            let mut acc = 0.0;
            for j in 0..=i {
                acc += row[j] * x[j];
            }
            out[i] += acc;
            let xi = x[i];
            if xi != 0.0 {
                for j in 0..i {
                    out[j] += xi * row[j];
                }
            }
        }
    }

    /// Serializes the field: magic "DMFT", version, horizon (last completed
    /// time index), grid step, then the packed rows as little-endian f64.
    pub fn write_binary<W: Write>(&self, w: &mut W, eta: f64) -> Result<(), GridError> {
        assert!(self.rows > 0, "cannot dump an empty field");
        w.write_all(b"DMFT")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&((self.rows - 1) as u32).to_le_bytes())?;
        w.write_all(&eta.to_le_bytes())?;
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a field written by [`CausalField::write_binary`]; the symmetry
    /// convention is not part of the format and must be supplied.
    pub fn read_binary<R: Read>(r: &mut R, symmetric: bool) -> Result<(Self, f64), GridError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"DMFT" {
            return Err(GridError::BadDump("bad magic bytes".into()));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != 1 {
            return Err(GridError::BadDump(format!("unsupported version {version}")));
        }
        r.read_exact(&mut u32buf)?;
        let horizon = u32::from_le_bytes(u32buf) as usize;
        let mut f64buf = [0u8; 8];
        r.read_exact(&mut f64buf)?;
        let eta = f64::from_le_bytes(f64buf);
        let rows = horizon + 1;
        let mut data = Vec::with_capacity(row_offset(rows));
        for _ in 0..row_offset(rows) {
            r.read_exact(&mut f64buf)?;
            data.push(f64::from_le_bytes(f64buf));
        }
        Ok((Self { data, rows, symmetric }, eta))
    }
}

/// eta * sum_{s = lo}^{hi} F(t, s) G(s, tp), both endpoints included.
///
/// The inclusive left endpoint is what turns the continuum delta convention
/// R(t'+, t') = 1 into plain sums: a response field evaluated at its own time
/// argument is stored as 0 and the delta lives in the residual response's
/// diagonal 1 / eta instead.
pub fn causal_sum(
    f: &CausalField,
    g: &CausalField,
    t: usize,
    tp: usize,
    range: std::ops::RangeInclusive<usize>,
    eta: f64,
) -> f64 {
    let mut acc = 0.0;
    for s in range {
        acc += f.get(t, s) * g.get(s, tp);
    }
    eta * acc
}

/// Residual response/correlation pair, grown one row per step.
///
/// Discrete equations being solved, with B = I + eta * Sigma_R (unit lower
/// triangular because Sigma_R is strictly causal):
///
///   B R_A = (1 / eta) I            =>  R_A = (1 / eta) B^{-1}
///   C_A = -(eta R_A) Sigma_C (eta R_A)^T
///
/// Row T of R_A only involves rows s < T, so both fields extend append-only;
/// re-running with a longer horizon reproduces earlier rows bit for bit.
#[derive(Debug, Clone)]
pub struct ResponseCorrelation {
    pub r_a: CausalField,
    pub c_a: CausalField,
    eta: f64,
    scratch: Vec<f64>,
}

impl ResponseCorrelation {
    pub fn new(eta: f64, rows_cap: usize) -> Self {
        Self {
            r_a: CausalField::with_capacity(false, rows_cap),
            c_a: CausalField::with_capacity(true, rows_cap),
            eta,
            scratch: Vec::new(),
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Appends row T given row T of Sigma_R (length T + 1, zero diagonal) and
    /// the full Sigma_C field up to row T.
    pub fn extend_row(&mut self, sigma_r_row: &[f64], sigma_c: &CausalField) {
        let t = self.r_a.rows();
        assert_eq!(sigma_r_row.len(), t + 1, "self-energy row has wrong length");
        assert_eq!(sigma_c.rows(), t + 1, "correlation self-energy lags the response row");
        assert!(
            sigma_r_row[t] == 0.0,
            "response self-energy must be strictly causal (zero diagonal)"
        );

        // R_A(T, j) = (1/eta) delta_{Tj} - eta sum_{s<T} Sigma_R(T, s) R_A(s, j),
        // accumulated as axpy over earlier rows so every access is contiguous.
        let mut r_row = vec![0.0; t + 1];
        for s in 0..t {
            let coeff = -self.eta * sigma_r_row[s];
            if coeff != 0.0 {
                let prev = self.r_a.row(s);
                for j in 0..=s {
                    r_row[j] += coeff * prev[j];
                }
            }
        }
        r_row[t] += 1.0 / self.eta;
        self.r_a.extend(&r_row).expect("row length is rows + 1 by construction");

        // C_A(T, k) = -sum_{j,l} b_T[j] Sigma_C(j, l) b_k[l] with b = eta R_A:
        // first y = Sigma_C b_T (symmetric matvec), then one dot per column k.
        let b_t: Vec<f64> = r_row.iter().map(|v| v * self.eta).collect();
        self.scratch.clear();
        self.scratch.resize(t + 1, 0.0);
        sigma_c.sym_matvec_add(&b_t, &mut self.scratch);
        let mut c_row = vec![0.0; t + 1];
        for k in 0..=t {
            let rk = self.r_a.row(k);
            let mut acc = 0.0;
            for j in 0..=k {
                acc += self.scratch[j] * rk[j];
            }
            c_row[k] = -self.eta * acc;
        }
        self.c_a.extend(&c_row).expect("row length is rows + 1 by construction");
    }
}

/// Batch form of the row-by-row solve: consumes full self-energy fields and
/// returns the completed pair.
pub fn solve_response_correlation(
    sigma_r: &CausalField,
    sigma_c: &CausalField,
    eta: f64,
) -> (CausalField, CausalField) {
    assert_eq!(sigma_r.rows(), sigma_c.rows(), "self-energies must share a horizon");
    let rows = sigma_r.rows();
    let mut pair = ResponseCorrelation::new(eta, rows);
    let mut truncated = CausalField::with_capacity(true, rows);
    for t in 0..rows {
        truncated.extend(sigma_c.row(t)).expect("row lengths match by construction");
        pair.extend_row(sigma_r.row(t), &truncated);
    }
    (pair.r_a, pair.c_a)
}
