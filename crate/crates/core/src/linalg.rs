//! Complex state vectors, sparse operators and short-time propagators.
//!
//! Operators are stored in compressed sparse row layout so that applying an
//! operator costs O(nnz). Dense helpers backed by `nalgebra` exist only for
//! oracle-scale work (matrix exponentials, eigen-decompositions).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest dimension accepted by the dense routines.
pub const DENSE_LIMIT: usize = 4096;

/// Default relative tolerance of [`expm_action`].
pub const DEFAULT_PROPAGATOR_TOL: f64 = 1e-9;

const NORMALIZATION_TOL: f64 = 1e-10;
const HERMITIAN_TOL: f64 = 1e-12;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// A pure state in some finite basis. Normalization is checked where it
/// matters, never assumed.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amps: Vec<C64>,
}

impl StateVector {
    pub fn new(amps: Vec<C64>) -> Self {
        Self { amps }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { amps: vec![ZERO; dim] }
    }

    /// The unit vector `|index⟩`.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::IndexOutOfRange { index, len: dim });
        }
        let mut v = Self::zeros(dim);
        v.amps[index] = ONE;
        Ok(v)
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self::new(values.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    /// Rescale to unit norm, returning the norm before rescaling.
    pub fn normalize(&mut self) -> Result<f64> {
        let norm = self.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm);
        }
        let inv = 1.0 / norm;
        self.amps.iter_mut().for_each(|a| *a *= inv);
        Ok(norm)
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    pub fn scale(&mut self, factor: C64) {
        self.amps.iter_mut().for_each(|a| *a *= factor);
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: C64, other: &StateVector) -> Result<()> {
        check_dim(self.dim(), other.dim())?;
        for (a, b) in self.amps.iter_mut().zip(&other.amps) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.amps.iter().all(|a| a.re.is_finite() && a.im.is_finite())
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}

/// `⟨u|v⟩`, conjugating `u`.
pub fn inner(u: &StateVector, v: &StateVector) -> Result<C64> {
    check_dim(u.dim(), v.dim())?;
    Ok(u.amps.iter().zip(&v.amps).map(|(a, b)| a.conj() * b).sum())
}

/// Sparse complex matrix in CSR layout.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearOperator {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<C64>,
    hermitian_hint: bool,
}

impl LinearOperator {
    /// Build from `(row, col, value)` triplets. Duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets<T>(rows: usize, cols: usize, triplets: T) -> Result<Self>
    where
        T: IntoIterator<Item = (usize, usize, C64)>,
    {
        let mut entries: Vec<(usize, usize, C64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= rows {
                return Err(Error::IndexOutOfRange { index: r, len: rows });
            }
            if c >= cols {
                return Err(Error::IndexOutOfRange { index: c, len: cols });
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<C64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        let mut row_of = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_of.push(r);
                last = Some((r, c));
            }
        }
        // drop exact zeros produced by cancellation
        let mut keep_cols = Vec::with_capacity(col_idx.len());
        let mut keep_vals = Vec::with_capacity(values.len());
        for ((c, v), r) in col_idx.into_iter().zip(values).zip(row_of) {
            if v != ZERO {
                keep_cols.push(c);
                keep_vals.push(v);
                row_ptr[r + 1] += 1;
            }
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx: keep_cols,
            values: keep_vals,
            hermitian_hint: false,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
            hermitian_hint: rows == cols,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![ONE; dim]).with_hint_unchecked(true)
    }

    pub fn diagonal(values: &[C64]) -> Self {
        let n = values.len();
        Self::from_triplets(n, n, values.iter().enumerate().map(|(i, &v)| (i, i, v)))
            .expect("diagonal indices are in range")
    }

    pub fn real_diagonal(values: &[f64]) -> Self {
        let vals: Vec<C64> = values.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::diagonal(&vals).with_hint_unchecked(true)
    }

    /// From a row-major dense array.
    pub fn from_dense(rows: usize, cols: usize, data: &[C64]) -> Result<Self> {
        check_dim(rows * cols, data.len())?;
        Self::from_triplets(
            rows,
            cols,
            data.iter()
                .enumerate()
                .filter(|(_, v)| **v != ZERO)
                .map(|(k, &v)| (k / cols, k % cols, v)),
        )
    }

    pub fn from_matrix(m: &DMatrix<C64>) -> Self {
        let (rows, cols) = m.shape();
        let mut trip = Vec::new();
        for c in 0..cols {
            for r in 0..rows {
                let v = m[(r, c)];
                if v != ZERO {
                    trip.push((r, c, v));
                }
            }
        }
        Self::from_triplets(rows, cols, trip).expect("indices in range")
    }

    pub fn dim_in(&self) -> usize {
        self.cols
    }

    pub fn dim_out(&self) -> usize {
        self.rows
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn hermitian_hint(&self) -> bool {
        self.hermitian_hint
    }

    /// Mark as Hermitian after verifying `A == A†` within 1e-12 relative.
    pub fn with_hermitian_hint(self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::InvalidArgument(format!(
                "hermitian operator must be square, got {}x{}",
                self.rows, self.cols
            )));
        }
        let dev = self.hermitian_deviation();
        if dev > HERMITIAN_TOL {
            return Err(Error::InvalidArgument(format!(
                "operator is not Hermitian (relative deviation {dev:e})"
            )));
        }
        Ok(self.with_hint_unchecked(true))
    }

    pub(crate) fn with_hint_unchecked(mut self, hint: bool) -> Self {
        self.hermitian_hint = hint;
        self
    }

    /// Iterate over stored entries as `(row, col, value)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        if row >= self.rows {
            return ZERO;
        }
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.col_idx[range.clone()].binary_search(&col) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => ZERO,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest absolute deviation of `A - A†`, relative to `max |A_ij|`.
    /// Non-square operators report infinity.
    pub fn hermitian_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for (r, c, v) in self.triplets() {
            let d = (v - self.get(c, r).conj()).norm();
            worst = worst.max(d);
        }
        worst / scale
    }

    /// Location and size of the largest Hermiticity violation.
    pub fn worst_hermitian_violation(&self) -> Option<(usize, usize, f64)> {
        let mut worst: Option<(usize, usize, f64)> = None;
        for (r, c, v) in self.triplets() {
            let d = (v - self.get(c, r).conj()).norm();
            if d > worst.map_or(0.0, |w| w.2) {
                worst = Some((r, c, d));
            }
        }
        worst
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        self.hermitian_deviation() <= rel_tol
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// `y = A x` on raw slices.
    pub(crate) fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *out = acc;
        }
    }

    /// `⟨x|A|x⟩` without allocating.
    pub(crate) fn quadratic_form(&self, x: &[C64]) -> C64 {
        let mut acc = ZERO;
        for (r, xr) in x.iter().enumerate().take(self.rows) {
            let mut row = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row += self.values[k] * x[self.col_idx[k]];
            }
            acc += xr.conj() * row;
        }
        acc
    }

    pub fn apply(&self, v: &StateVector) -> Result<StateVector> {
        check_dim(self.cols, v.dim())?;
        let mut out = vec![ZERO; self.rows];
        self.apply_into(&v.amps, &mut out);
        Ok(StateVector::new(out))
    }

    pub fn adjoint(&self) -> Self {
        let trip: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v.conj())).collect();
        Self::from_triplets(self.cols, self.rows, trip)
            .expect("transposed indices are in range")
            .with_hint_unchecked(self.hermitian_hint)
    }

    pub fn scale(&self, factor: C64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out.hermitian_hint = self.hermitian_hint && factor.im == 0.0;
        out
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        self.scale(C64::new(factor, 0.0))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch { expected: self.rows, found: other.rows });
        }
        check_dim(self.cols, other.cols)?;
        let out = Self::from_triplets(self.rows, self.cols, self.triplets().chain(other.triplets()))?;
        Ok(out.with_hint_unchecked(self.hermitian_hint && other.hermitian_hint))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale_real(-1.0))
    }

    /// Sparse product `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        check_dim(self.cols, other.rows)?;
        let mut trip = Vec::new();
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let mid = self.col_idx[k];
                let a = self.values[k];
                for k2 in other.row_ptr[mid]..other.row_ptr[mid + 1] {
                    trip.push((r, other.col_idx[k2], a * other.values[k2]));
                }
            }
        }
        Self::from_triplets(self.rows, other.cols, trip)
    }

    /// Embed as a block of a larger operator at `(row_offset, col_offset)`.
    pub fn embed(&self, rows: usize, cols: usize, row_offset: usize, col_offset: usize) -> Result<Self> {
        if row_offset + self.rows > rows || col_offset + self.cols > cols {
            return Err(Error::InvalidArgument("block does not fit".into()));
        }
        Self::from_triplets(
            rows,
            cols,
            self.triplets().map(|(r, c, v)| (r + row_offset, c + col_offset, v)),
        )
    }

    /// Maximum absolute column sum (the induced 1-norm).
    pub fn norm_one(&self) -> f64 {
        let mut cols = vec![0.0; self.cols];
        for (_, c, v) in self.triplets() {
            cols[c] += v.norm();
        }
        cols.into_iter().fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::from_element(self.rows, self.cols, ZERO);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }
}

/// `op · v`.
pub fn apply(op: &LinearOperator, v: &StateVector) -> Result<StateVector> {
    op.apply(v)
}

/// `⟨v|op|v⟩` for a normalized `v`.
pub fn expectation(op: &LinearOperator, v: &StateVector) -> Result<C64> {
    check_dim(op.dim_in(), v.dim())?;
    check_dim(op.dim_out(), v.dim())?;
    let norm = v.norm();
    if (norm - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotNormalized { norm });
    }
    let value = op.quadratic_form(&v.amps);
    if op.hermitian_hint() {
        Ok(C64::new(value.re, 0.0))
    } else {
        Ok(value)
    }
}

/// Parameters of the scaled Taylor propagator.
const TAYLOR_MAX_STEP_NORM: f64 = 2.0;
const TAYLOR_MAX_TERMS: usize = 60;

/// Computes `exp(gen·dt)·v` by substepped Taylor series.
///
/// The generator is shifted by its mean diagonal, the interval is cut into
/// `s` substeps with `dt·‖gen − μ‖₁ / s ≤ 2`, and each substep keeps enough
/// Taylor terms that the a-priori truncation bound stays below `tol / s`
/// relative to the substep input. The result is not renormalized.
pub fn expm_action(gen: &LinearOperator, v: &StateVector, dt: f64, tol: f64) -> Result<StateVector> {
    if !gen.is_square() {
        return Err(Error::InvalidArgument("generator must be square".into()));
    }
    check_dim(gen.dim_in(), v.dim())?;
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be finite and >= 0, got {dt}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be > 0, got {tol}")));
    }
    let mut ws = TaylorWorkspace::new(gen.dim_in());
    let mut out = v.clone();
    ws.propagate(gen, &mut out.amps, dt, tol)?;
    Ok(out)
}

/// Reusable buffers for repeated propagation with one generator.
#[derive(Debug, Clone)]
pub(crate) struct TaylorWorkspace {
    term: Vec<C64>,
    next: Vec<C64>,
}

impl TaylorWorkspace {
    pub(crate) fn new(dim: usize) -> Self {
        Self { term: vec![ZERO; dim], next: vec![ZERO; dim] }
    }

    pub(crate) fn propagate(&mut self, gen: &LinearOperator, x: &mut [C64], dt: f64, tol: f64) -> Result<()> {
        let n = gen.dim_in();
        if dt == 0.0 || n == 0 {
            return Ok(());
        }
        self.term.resize(n, ZERO);
        self.next.resize(n, ZERO);
        let mu = gen.trace() / n as f64;
        let shifted_norm = shifted_norm_one(gen, mu);
        let shift_factor = (mu * dt).exp();
        if shifted_norm == 0.0 {
            x.iter_mut().for_each(|a| *a *= shift_factor);
            return Ok(());
        }
        let substeps = ((dt * shifted_norm) / TAYLOR_MAX_STEP_NORM).ceil().max(1.0);
        let h = dt / substeps;
        let theta = h * shifted_norm;
        let per_step_tol = tol / substeps;
        let (terms, bound) = taylor_terms(theta, per_step_tol);
        if bound > per_step_tol {
            return Err(Error::NoConvergence { achieved: bound * substeps });
        }
        let step_shift = (mu * h).exp();
        let substeps = substeps as usize;
        for _ in 0..substeps {
            self.term.copy_from_slice(x);
            for k in 1..=terms {
                gen.apply_into(&self.term, &mut self.next);
                let c = h / k as f64;
                let mut any = false;
                for (t, (nx, xi)) in self.term.iter_mut().zip(self.next.iter().zip(x.iter_mut())) {
                    // (gen - mu) term, scaled
                    let val = (*nx - mu * *t) * c;
                    *t = val;
                    *xi += val;
                    any |= val != ZERO;
                }
                if !any {
                    break;
                }
            }
            x.iter_mut().for_each(|a| *a *= step_shift);
        }
        Ok(())
    }
}

fn shifted_norm_one(gen: &LinearOperator, mu: C64) -> f64 {
    let n = gen.dim_in();
    let mut cols = vec![0.0; n];
    let mut diag_seen = vec![false; n];
    for (r, c, v) in gen.triplets() {
        if r == c {
            cols[c] += (v - mu).norm();
            diag_seen[c] = true;
        } else {
            cols[c] += v.norm();
        }
    }
    for (c, seen) in diag_seen.into_iter().enumerate() {
        if !seen {
            cols[c] += mu.norm();
        }
    }
    cols.into_iter().fold(0.0, f64::max)
}

/// Smallest truncation order whose remainder bound `e^θ θ^{m+1}/(m+1)!` is
/// at most `tol`, together with the bound itself.
fn taylor_terms(theta: f64, tol: f64) -> (usize, f64) {
    let mut power = theta; // θ^{m+1}/(m+1)! for m = 0
    let growth = theta.exp();
    for m in 0..TAYLOR_MAX_TERMS {
        let bound = growth * power;
        if bound <= tol {
            return (m, bound);
        }
        power *= theta / (m + 2) as f64;
    }
    (TAYLOR_MAX_TERMS, growth * power)
}

/// Dense matrix exponential `exp(m·t)`.
pub fn dense_expm(m: &DMatrix<C64>, t: f64) -> Result<DMatrix<C64>> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(Error::InvalidArgument("matrix must be square".into()));
    }
    if rows > DENSE_LIMIT {
        return Err(Error::SizeExceeded { dim: rows, max: DENSE_LIMIT });
    }
    Ok((m * C64::new(t, 0.0)).exp())
}

/// Lowest eigenvalue and eigenvector of a Hermitian operator (dense).
pub fn lowest_eigenpair(op: &LinearOperator) -> Result<(f64, StateVector)> {
    if !op.is_square() {
        return Err(Error::InvalidArgument("operator must be square".into()));
    }
    if op.dim_in() > DENSE_LIMIT {
        return Err(Error::SizeExceeded { dim: op.dim_in(), max: DENSE_LIMIT });
    }
    if op.dim_in() == 0 {
        return Err(Error::InvalidArgument("empty operator".into()));
    }
    let eig = op.to_dense().symmetric_eigen();
    let (idx, &value) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty spectrum");
    let col = eig.eigenvectors.column(idx);
    // fix the global phase so the largest component is real and positive
    let pivot = col.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or(ONE);
    let phase = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { ONE };
    let v = StateVector::new(col.iter().map(|a| a * phase).collect());
    Ok((value, v.normalized()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn sigma_x() -> LinearOperator {
        LinearOperator::from_dense(2, 2, &[ZERO, ONE, ONE, ZERO]).unwrap()
    }

    fn sigma_minus() -> LinearOperator {
        // basis {e, g}: |g⟩⟨e|
        LinearOperator::from_triplets(2, 2, [(1, 0, ONE)]).unwrap()
    }

    #[test]
    fn apply_examples() {
        let id = LinearOperator::identity(2);
        let e = StateVector::basis(2, 0).unwrap();
        assert_eq!(apply(&id, &e).unwrap(), e);
        let g = StateVector::basis(2, 1).unwrap();
        assert_eq!(apply(&sigma_minus(), &e).unwrap(), g);
        let n = LinearOperator::real_diagonal(&[0.0, 1.0, 2.0]);
        let two = StateVector::basis(3, 2).unwrap();
        let out = apply(&n, &two).unwrap();
        assert_eq!(out.amplitudes(), &[ZERO, ZERO, c(2.0, 0.0)]);
        assert!(matches!(
            apply(&id, &StateVector::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn inner_examples() {
        let e = StateVector::basis(2, 0).unwrap();
        let g = StateVector::basis(2, 1).unwrap();
        assert_eq!(inner(&e, &g).unwrap(), ZERO);
        let v = StateVector::new(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        assert!((inner(&v, &v).unwrap() - ONE).norm() < 1e-15);
        let alpha = c(0.3, -1.7);
        let mut w = v.clone();
        w.scale(alpha);
        assert!((inner(&v, &w).unwrap() - alpha).norm() < 1e-15);
        assert!(inner(&v, &StateVector::zeros(3)).is_err());
    }

    #[test]
    fn expectation_examples() {
        let sp = sigma_minus().adjoint();
        let proj = sp.matmul(&sigma_minus()).unwrap().with_hermitian_hint().unwrap();
        let e = StateVector::basis(2, 0).unwrap();
        let g = StateVector::basis(2, 1).unwrap();
        assert_eq!(expectation(&proj, &e).unwrap(), ONE);
        assert_eq!(expectation(&proj, &g).unwrap(), ZERO);
        let unnormalized = StateVector::from_real(&[1.0, 1.0]);
        assert!(matches!(expectation(&proj, &unnormalized), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn csr_sums_duplicates_and_drops_zeros() {
        let op = LinearOperator::from_triplets(2, 2, [(0, 1, ONE), (0, 1, ONE), (1, 0, ONE), (1, 0, -ONE)])
            .unwrap();
        assert_eq!(op.nnz(), 1);
        assert_eq!(op.get(0, 1), c(2.0, 0.0));
        assert!(LinearOperator::from_triplets(2, 2, [(2, 0, ONE)]).is_err());
    }

    #[test]
    fn hermitian_hint_is_verified() {
        assert!(sigma_x().with_hermitian_hint().is_ok());
        assert!(sigma_minus().with_hermitian_hint().is_err());
        let rect = LinearOperator::zeros(2, 3);
        assert!(rect.with_hermitian_hint().is_err());
    }

    #[test]
    fn expm_action_pauli_rotation() {
        // exp(-i (π/2) σx)|e⟩ = cos(π/2)|e⟩ - i sin(π/2)|g⟩ = -i|g⟩
        let gen = sigma_x().scale(c(0.0, -PI / 2.0));
        let e = StateVector::basis(2, 0).unwrap();
        let out = expm_action(&gen, &e, 1.0, 1e-12).unwrap();
        assert!((out.amplitudes()[0]).norm() < 1e-12);
        assert!((out.amplitudes()[1] - c(0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn expm_action_zero_generator_is_identity() {
        let gen = LinearOperator::zeros(3, 3);
        let v = StateVector::new(vec![c(0.1, 0.2), c(-0.3, 0.0), c(0.0, 0.9)]);
        assert_eq!(expm_action(&gen, &v, 2.5, 1e-9).unwrap(), v);
    }

    #[test]
    fn expm_action_diagonal_decay() {
        let gamma = 0.7;
        let t = 3.2;
        let gen = LinearOperator::from_triplets(2, 2, [(0, 0, c(-gamma / 2.0, 0.0))]).unwrap();
        let e = StateVector::basis(2, 0).unwrap();
        let out = expm_action(&gen, &e, t, 1e-12).unwrap();
        assert!((out.amplitudes()[0].re - (-gamma * t / 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn expm_action_reports_unreachable_tolerance() {
        let gen = sigma_x().scale(c(0.0, -1.0));
        let e = StateVector::basis(2, 0).unwrap();
        assert!(matches!(
            expm_action(&gen, &e, 1.0, 1e-300),
            Err(Error::NoConvergence { .. })
        ));
        assert!(expm_action(&gen, &e, -1.0, 1e-9).is_err());
    }

    #[test]
    fn dense_expm_examples() {
        let zero = DMatrix::from_element(3, 3, ZERO);
        let id = dense_expm(&zero, 1.3).unwrap();
        assert!((id - DMatrix::identity(3, 3)).norm() < 1e-14);

        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.5, 0.0), c(-1.2, 0.3)]));
        let ed = dense_expm(&d, 1.0).unwrap();
        assert!((ed[(0, 0)] - c(0.5, 0.0).exp()).norm() < 1e-13);
        assert!((ed[(1, 1)] - c(-1.2, 0.3).exp()).norm() < 1e-13);
        assert!(ed[(0, 1)].norm() < 1e-14);

        let m = sigma_x().to_dense() * c(0.0, -1.0);
        let minus_id = dense_expm(&m, PI).unwrap();
        assert!((minus_id + DMatrix::<C64>::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn dense_expm_rejects_oversize() {
        let big = DMatrix::from_element(DENSE_LIMIT + 1, 1, ZERO);
        assert!(dense_expm(&big, 1.0).is_err());
    }

    #[test]
    fn lowest_eigenpair_of_sigma_x() {
        let (val, vec) = lowest_eigenpair(&sigma_x()).unwrap();
        assert!((val + 1.0).abs() < 1e-12);
        let s = 1.0 / 2f64.sqrt();
        assert!((vec.amplitudes()[0].norm() - s).abs() < 1e-12);
        assert!((vec.amplitudes()[0] + vec.amplitudes()[1]).norm() < 1e-12);
    }

    #[test]
    fn taylor_order_bound_is_monotone_in_tolerance() {
        let (m1, _) = taylor_terms(2.0, 1e-6);
        let (m2, _) = taylor_terms(2.0, 1e-12);
        assert!(m2 > m1);
    }
}
