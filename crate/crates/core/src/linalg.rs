//! Dense linear-algebra helpers shared by the kernel, dynamics and covariance code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let eig = symmetrize(m).symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        SymEigen { values, vectors }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// V · diag(f(λ)) · Vᵀ
    pub fn map(&self, f: impl FnMut(f64) -> f64) -> DMatrix<f64> {
        let coeffs = self.values.map(f);
        let mut scaled = self.vectors.clone();
        for (j, c) in coeffs.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*c);
        }
        let mut out = &scaled * self.vectors.transpose();
        symmetrize_mut(&mut out);
        out
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    symmetrize_mut(&mut out);
    out
}

pub fn symmetrize_mut(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Fails unless `m` is square, symmetric (to roundoff) and strictly positive definite.
pub fn check_spd(m: &DMatrix<f64>) -> Result<SymEigen> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = max_abs(&(m - m.transpose()));
    if asym > 1e-10 * max_abs(m).max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidArgument(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let eig = SymEigen::new(m);
    let min = eig.values.get(0).copied().unwrap_or(0.0);
    if m.nrows() == 0 || min <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min,
        });
    }
    Ok(eig)
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = check_spd(m)?;
    Ok(eig.map(|v| 1.0 / v))
}

/// Solves `m x = b` for a small general square matrix.
pub fn solve_small(m: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lu = m.clone().lu();
    lu.solve(b)
        .ok_or_else(|| Error::Singular(format!("{}x{} system", m.nrows(), m.ncols())))
}

/// vᵀ M v
pub fn quad_form(v: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    v.dot(&(m * v))
}

/// Indices of rows kept after deleting the `k` rows of block `block`.
pub fn keep_indices(total: usize, block: usize, k: usize) -> Vec<usize> {
    (0..total).filter(|r| r / k != block).collect()
}

pub fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_rows(v: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|&r| v[r]))
}

pub fn select_cols(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

pub fn select_matrix_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// SplitMix64, the generator behind sketch index selection.
///
/// Used instead of a library RNG so that other implementations (the Python
/// exporter) can reproduce kept indices bit for bit.
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

    pub fn new(seed: u64) -> Self {
        SplitMix64(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(Self::GAMMA);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Uniform `k`-subset of `0..n`, returned sorted.
///
/// Partial Fisher–Yates: for `i in 0..k`, swap position `i` with
/// `i + next_u64() % (n - i)`. The modulo bias is below 2⁻³² for any
/// realistic layer size.
pub fn sample_without_replacement(n: usize, k: usize, seed: u64) -> Vec<usize> {
    assert!(k <= n);
    let mut rng = SplitMix64::new(seed);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + (rng.next_u64() % (n - i) as u64) as usize;
        pool.swap(i, j);
    }
    let mut out = pool[..k].to_vec();
    out.sort_unstable();
    out
}
