//! Minimal sparse/dense linear algebra used throughout the crate: row-compressed
//! matrices built from assembly triplets, a banded sparse Cholesky for SPD systems,
//! plain conjugate gradients, power iteration for spectral radii, and block
//! composition of coupled systems.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("triplet index ({row}, {col}) out of range for a {nrows}x{ncols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
    #[error("block ({row}, {col}) has shape {got_rows}x{got_cols}, expected {want_rows}x{want_cols}")]
    BlockDimensionMismatch {
        row: usize,
        col: usize,
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("dimension mismatch: matrix is {nrows}x{ncols}, vector has length {len}")]
    VectorDimensionMismatch {
        nrows: usize,
        ncols: usize,
        len: usize,
    },
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("matrix is not symmetric positive definite (non-positive pivot at row {row})")]
    NotSpd { row: usize },
    #[error("CG did not converge in {max_iter} iterations (last residual {residual:.3e})")]
    NoConvergence { max_iter: usize, residual: f64 },
    #[error("power iteration did not converge in {max_iter} iterations (last estimate {estimate:.6e})")]
    PowerNoConvergence { max_iter: usize, estimate: f64 },
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// Row-compressed sparse matrix. Column indices are strictly increasing within
/// each row and explicit zeros are dropped during finalization.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    symmetry_hint: bool,
}

impl SparseMatrix {
    /// Builds a matrix from assembly triplets; duplicate (row, col) entries are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, SparseError> {
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(SparseError::IndexOutOfRange {
                    row: r,
                    col: c,
                    nrows,
                    ncols,
                });
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        let mut it = sorted.into_iter().peekable();
        while let Some((r, c, mut v)) = it.next() {
            while let Some(&(r2, c2, v2)) = it.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    it.next();
                } else {
                    break;
                }
            }
            if v != 0.0 {
                row_ptr[r + 1] += 1;
                col_idx.push(c);
                values.push(v);
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut m = SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
            symmetry_hint: false,
        };
        m.symmetry_hint = m.check_symmetry();
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &triplets).expect("identity triplets are in range")
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self::from_triplets(nrows, ncols, &[]).expect("empty triplets are in range")
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut triplets = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &triplets).expect("dense entries are in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn symmetry_hint(&self) -> bool {
        self.symmetry_hint
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        match self.col_idx[lo..hi].binary_search(&col) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        self.col_idx[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn check_symmetry(&self) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        let tol = 1e-12 * self.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                if j > i && (v - self.get(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let mut s = 0.0;
            for (j, v) in self.row(i) {
                s += v * x[j];
            }
            y[i] = s;
        }
        y
    }

    /// y = A^T x
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "transpose matvec dimension mismatch");
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            let xi = x[i];
            if xi != 0.0 {
                for (j, v) in self.row(i) {
                    y[j] += v * xi;
                }
            }
        }
        y
    }

    /// y += s * A x
    pub fn matvec_acc(&self, x: &[f64], s: f64, y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for (j, v) in self.row(i) {
                acc += v * x[j];
            }
            y[i] += s * acc;
        }
    }

    pub fn scaled(&self, s: f64) -> SparseMatrix {
        let mut m = self.clone();
        for v in &mut m.values {
            *v *= s;
        }
        m
    }

    /// Entrywise sum; shapes must agree.
    pub fn add(&self, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.nrows, other.nrows);
        assert_eq!(self.ncols, other.ncols);
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.nrows {
            triplets.extend(self.row(i).map(|(j, v)| (i, j, v)));
            triplets.extend(other.row(i).map(|(j, v)| (i, j, v)));
        }
        SparseMatrix::from_triplets(self.nrows, self.ncols, &triplets)
            .expect("summed entries stay in range")
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.ncols]; self.nrows];
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                dense[i][j] = v;
            }
        }
        dense
    }
}

/// One block of a composed matrix: a matrix reference and a scale factor
/// (use -1.0 for sign flips).
#[derive(Clone, Copy)]
pub struct Block<'a> {
    pub matrix: &'a SparseMatrix,
    pub scale: f64,
}

impl<'a> Block<'a> {
    pub fn new(matrix: &'a SparseMatrix) -> Self {
        Block { matrix, scale: 1.0 }
    }

    pub fn scaled(matrix: &'a SparseMatrix, scale: f64) -> Self {
        Block { matrix, scale }
    }
}

/// Assembles a block matrix from a grid of optional blocks. Missing blocks are
/// zero; all blocks in a row (column) must agree on the row (column) count.
pub fn block_compose(blocks: &[Vec<Option<Block>>]) -> Result<SparseMatrix, SparseError> {
    let nbr = blocks.len();
    let nbc = blocks.first().map_or(0, |r| r.len());
    let mut row_sizes = vec![None; nbr];
    let mut col_sizes = vec![None; nbc];
    for (bi, brow) in blocks.iter().enumerate() {
        assert_eq!(brow.len(), nbc, "ragged block grid");
        for (bj, b) in brow.iter().enumerate() {
            if let Some(b) = b {
                let (r, c) = (b.matrix.nrows(), b.matrix.ncols());
                match row_sizes[bi] {
                    None => row_sizes[bi] = Some(r),
                    Some(want) if want != r => {
                        return Err(SparseError::BlockDimensionMismatch {
                            row: bi,
                            col: bj,
                            got_rows: r,
                            got_cols: c,
                            want_rows: want,
                            want_cols: col_sizes[bj].unwrap_or(c),
                        })
                    }
                    _ => {}
                }
                match col_sizes[bj] {
                    None => col_sizes[bj] = Some(c),
                    Some(want) if want != c => {
                        return Err(SparseError::BlockDimensionMismatch {
                            row: bi,
                            col: bj,
                            got_rows: r,
                            got_cols: c,
                            want_rows: row_sizes[bi].unwrap_or(r),
                            want_cols: want,
                        })
                    }
                    _ => {}
                }
            }
        }
    }
    let row_sizes: Vec<usize> = row_sizes.into_iter().map(|s| s.unwrap_or(0)).collect();
    let col_sizes: Vec<usize> = col_sizes.into_iter().map(|s| s.unwrap_or(0)).collect();
    let mut row_off = vec![0usize; nbr];
    for i in 1..nbr {
        row_off[i] = row_off[i - 1] + row_sizes[i - 1];
    }
    let mut col_off = vec![0usize; nbc];
    for j in 1..nbc {
        col_off[j] = col_off[j - 1] + col_sizes[j - 1];
    }
    let nrows: usize = row_sizes.iter().sum();
    let ncols: usize = col_sizes.iter().sum();

    let mut triplets = Vec::new();
    for (bi, brow) in blocks.iter().enumerate() {
        for (bj, b) in brow.iter().enumerate() {
            if let Some(b) = b {
                for i in 0..b.matrix.nrows() {
                    for (j, v) in b.matrix.row(i) {
                        triplets.push((row_off[bi] + i, col_off[bj] + j, b.scale * v));
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(nrows, ncols, &triplets)
}

/// Banded Cholesky factorization of an SPD matrix with natural ordering.
/// Structured meshes keep the bandwidth moderate, which is all we need at
/// the problem sizes targeted here.
pub struct CholeskyFactor {
    dim: usize,
    bandwidth: usize,
    // Lower factor stored row-major: band[i * (bw + 1) + d] = L[i][i - bw + d].
    band: Vec<f64>,
}

impl CholeskyFactor {
    pub fn factor(a: &SparseMatrix) -> Result<Self, SolverError> {
        assert_eq!(a.nrows(), a.ncols(), "Cholesky needs a square matrix");
        let n = a.nrows();
        let mut bw = 0usize;
        for i in 0..n {
            for (j, _) in a.row(i) {
                if j <= i {
                    bw = bw.max(i - j);
                }
            }
        }
        let stride = bw + 1;
        let mut band = vec![0.0; n * stride];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    band[i * stride + (bw - (i - j))] = v;
                }
            }
        }
        // In-place banded Cholesky.
        for i in 0..n {
            let start = i.saturating_sub(bw);
            for j in start..=i {
                let mut s = band[i * stride + (bw - (i - j))];
                let kstart = start.max(j.saturating_sub(bw));
                for k in kstart..j {
                    s -= band[i * stride + (bw - (i - k))] * band[j * stride + (bw - (j - k))];
                }
                if j == i {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(SolverError::NotSpd { row: i });
                    }
                    band[i * stride + bw] = s.sqrt();
                } else {
                    band[i * stride + (bw - (i - j))] = s / band[j * stride + bw];
                }
            }
        }
        Ok(CholeskyFactor {
            dim: n,
            bandwidth: bw,
            band,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim);
        let (n, bw) = (self.dim, self.bandwidth);
        let stride = bw + 1;
        let mut x = b.to_vec();
        // Forward substitution L y = b.
        for i in 0..n {
            let start = i.saturating_sub(bw);
            let mut s = x[i];
            for j in start..i {
                s -= self.band[i * stride + (bw - (i - j))] * x[j];
            }
            x[i] = s / self.band[i * stride + bw];
        }
        // Back substitution L^T x = y.
        for i in (0..n).rev() {
            let mut s = x[i];
            let end = (i + bw).min(n - 1);
            for j in (i + 1)..=end {
                s -= self.band[j * stride + (bw - (j - i))] * x[j];
            }
            x[i] = s / self.band[i * stride + bw];
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    Direct,
    Cg,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub factorization_reused: bool,
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// sqrt(x^T M x) for SPD M; tiny negative round-off is clamped to zero.
pub fn energy_norm(m: &SparseMatrix, x: &[f64]) -> f64 {
    let q = dot(x, &m.matvec(x));
    let floor = 1e-14 * dot(x, x);
    if q.abs() <= floor {
        0.0
    } else {
        q.max(0.0).sqrt()
    }
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub const DEFAULT_TOL: f64 = 1e-10;

/// Solves A x = b for SPD A. Direct mode factors once per call; reuse a
/// [`CholeskyFactor`] directly when the same matrix is solved repeatedly.
pub fn solve_spd(
    a: &SparseMatrix,
    b: &[f64],
    mode: SolveMode,
    tol: f64,
) -> Result<SolveReport, SolverError> {
    if b.len() != a.ncols() {
        return Err(SparseError::VectorDimensionMismatch {
            nrows: a.nrows(),
            ncols: a.ncols(),
            len: b.len(),
        }
        .into());
    }
    match mode {
        SolveMode::Direct => {
            let factor = CholeskyFactor::factor(a)?;
            let x = factor.solve(b);
            let mut r = b.to_vec();
            a.matvec_acc(&x, -1.0, &mut r);
            Ok(SolveReport {
                solution: x,
                residual_norm: norm2(&r),
                iterations: 0,
                factorization_reused: false,
            })
        }
        SolveMode::Cg => {
            let apply = |x: &[f64], y: &mut [f64]| {
                y.fill(0.0);
                a.matvec_acc(x, 1.0, y);
            };
            let (x, residual, iterations) = cg(apply, b, None, tol, 20 * b.len().max(50))?;
            Ok(SolveReport {
                solution: x,
                residual_norm: residual,
                iterations,
                factorization_reused: false,
            })
        }
    }
}

/// Plain conjugate gradients on an SPD operator given as a callback.
/// Terminates when the residual drops below `tol * (1 + ||b||)`.
pub fn cg<F>(
    apply: F,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64, usize), SolverError>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let threshold = tol * (1.0 + norm2(b));
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    let mut r = b.to_vec();
    if x0.is_some() {
        let mut ax = vec![0.0; n];
        apply(&x, &mut ax);
        for i in 0..n {
            r[i] -= ax[i];
        }
    }
    let mut rnorm = norm2(&r);
    if rnorm <= threshold {
        return Ok((x, rnorm, 0));
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            log::warn!("CG operator not positive definite (p^T A p = {pap:.3e})");
            if pap == 0.0 {
                return Err(SolverError::NoConvergence {
                    max_iter: it,
                    residual: rnorm,
                });
            }
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        rnorm = rr_new.sqrt();
        if rnorm <= threshold {
            return Ok((x, rnorm, it));
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(SolverError::NoConvergence {
        max_iter,
        residual: rnorm,
    })
}

/// Dominant eigenvalue magnitude of a linear operator via power iteration.
/// Starts from the all-ones vector; if the Rayleigh quotient stagnates at
/// zero the iteration is re-seeded with an index-weighted vector.
pub fn spectral_radius<F>(
    apply: F,
    dim: usize,
    tol: f64,
    max_iter: usize,
) -> Result<f64, SolverError>
where
    F: Fn(&[f64], &mut [f64]),
{
    assert!(dim >= 1, "spectral_radius needs dim >= 1");
    let run = |seed: Vec<f64>| -> Result<Option<f64>, SolverError> {
        let mut v = seed;
        let nv = norm2(&v);
        for vi in &mut v {
            *vi /= nv;
        }
        let mut w = vec![0.0; dim];
        let mut rho = 0.0;
        for _ in 0..max_iter {
            apply(&v, &mut w);
            let wnorm = norm2(&w);
            rho = dot(&v, &w);
            if wnorm <= tol * 1e-3 {
                // Operator annihilates the iterate; re-seed before concluding 0.
                return Ok(None);
            }
            // Relative eigenvalue residual ||A v - rho v|| <= tol * |rho|.
            let mut res = 0.0;
            for i in 0..dim {
                let d = w[i] - rho * v[i];
                res += d * d;
            }
            let res = res.sqrt();
            if rho.abs() > 0.0 && res <= tol * rho.abs() {
                return Ok(Some(rho.abs()));
            }
            if rho.abs() <= f64::MIN_POSITIVE.sqrt() {
                // Rayleigh quotient stagnated at zero: signal a re-seed.
                return Ok(None);
            }
            for i in 0..dim {
                v[i] = w[i] / wnorm;
            }
        }
        Err(SolverError::PowerNoConvergence {
            max_iter,
            estimate: rho.abs(),
        })
    };
    match run(vec![1.0; dim])? {
        Some(rho) => Ok(rho),
        None => {
            let seed: Vec<f64> = (0..dim).map(|i| (i + 1) as f64).collect();
            match run(seed)? {
                Some(rho) => Ok(rho),
                None => Ok(0.0),
            }
        }
    }
}
