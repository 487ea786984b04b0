//! Dense row-major matrices, a one-sided Jacobi SVD, and the POD helpers
//! built on top of it (energy truncation, projection, basis change).

use crate::error::{Result, RomError};

/// Singular values below this fraction of the largest one count as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

const MAX_SWEEPS: usize = 80;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(RomError::shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(RomError::shape("ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(RomError::shape("ragged columns"));
        }
        let mut m = Self::zeros(rows, columns.len());
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    /// Columns `start..end` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, end - start);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.data[i * self.cols + start..i * self.cols + end]);
        }
        out
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_range(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(RomError::shape(format!(
                "cannot subtract {:?} from {:?}",
                other.shape(),
                self.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix { data, ..*self })
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(RomError::shape(format!(
                "matvec: {}x{} times vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ · x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(RomError::shape(format!(
                "transposed matvec: {}x{} against vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            axpy(xi, self.row(i), &mut out);
        }
        Ok(out)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(RomError::shape(format!(
            "matmul: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik != 0.0 {
                axpy(aik, b.row(k), out_row);
            }
        }
    }
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(RomError::shape(format!(
            "transposed matmul: ({}x{})ᵀ times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let brow = b.row(k);
        for (i, &aki) in a.row(k).iter().enumerate() {
            if aki != 0.0 {
                axpy(aki, brow, &mut out.data[i * b.cols..(i + 1) * b.cols]);
            }
        }
    }
    Ok(out)
}

/// Thin SVD `s = u · diag(sigma) · vt`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    /// Number of singular values above the rank tolerance.
    pub fn rank(&self) -> usize {
        self.sigma.iter().filter(|&&s| s > 0.0).count()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows {
            for (j, s) in self.sigma.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        matmul(&us, &self.vt).expect("svd factors are conformant")
    }
}

/// Singular value decomposition by one-sided (Hestenes) Jacobi rotations.
///
/// The rotations act on the columns of whichever orientation has fewer
/// columns, so a tall snapshot matrix is orthogonalized in its small
/// (time) dimension. Returns `min(rows, cols)` singular values.
pub fn svd(s: &Matrix) -> Result<SvdResult> {
    if s.rows == 0 || s.cols == 0 {
        return Err(RomError::input("svd of an empty matrix"));
    }
    if !s.is_finite() {
        return Err(RomError::input("svd input contains non-finite entries"));
    }
    if s.rows >= s.cols {
        let (u, sigma, v) = jacobi_tall(s);
        Ok(SvdResult {
            u,
            sigma,
            vt: v.transpose(),
        })
    } else {
        // sᵀ = U Σ Vᵀ  =>  s = V Σ Uᵀ
        let (u, sigma, v) = jacobi_tall(&s.transpose());
        let mut out = SvdResult {
            u: v,
            sigma,
            vt: u.transpose(),
        };
        fix_signs(&mut out);
        Ok(out)
    }
}

/// Returns `(u, sigma, v)` for `a` with `rows >= cols`.
fn jacobi_tall(a: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let (m, n) = a.shape();
    // column-major working copies
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                rotate_pair(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(usize, f64)> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (j, dot(c, c).sqrt()))
        .collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));

    let sigma_max = order[0].1;
    let cutoff = RANK_TOLERANCE * sigma_max;
    let mut sigma = Vec::with_capacity(n);
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v = Matrix::zeros(n, n);
    let mut deficient = Vec::new();
    for (k, &(j, s)) in order.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            sigma.push(s);
            ucols.push(cols[j].iter().map(|x| x / s).collect());
        } else {
            sigma.push(0.0);
            ucols.push(vec![0.0; m]);
            deficient.push(k);
        }
        v.set_column(k, &vcols[j]);
    }

    // Rotations leave tiny non-orthogonality in columns with small sigma.
    let rank = n - deficient.len();
    reorthonormalize(&mut ucols[..rank]);
    complete_basis(&mut ucols, rank);

    let mut u = Matrix::zeros(m, n);
    for (k, c) in ucols.iter().enumerate() {
        u.set_column(k, c);
    }
    let mut out = SvdResult {
        u,
        sigma,
        vt: v.transpose(),
    };
    fix_signs(&mut out);
    (out.u, out.sigma, out.vt.transpose())
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (xp, xq) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *xp;
        let b = *xq;
        *xp = c * a - s * b;
        *xq = s * a + c * b;
    }
}

/// Two passes of modified Gram-Schmidt over nearly orthonormal columns.
fn reorthonormalize(cols: &mut [Vec<f64>]) {
    for _ in 0..2 {
        for j in 0..cols.len() {
            let (done, rest) = cols.split_at_mut(j);
            let cj = &mut rest[0];
            for prev in done.iter() {
                let proj = dot(prev, cj);
                axpy(-proj, prev, cj);
            }
            let norm = dot(cj, cj).sqrt();
            cj.iter_mut().for_each(|x| *x /= norm);
        }
    }
}

/// Fills columns `start..` with unit vectors orthogonal to everything before.
fn complete_basis(cols: &mut [Vec<f64>], start: usize) {
    let m = cols.first().map_or(0, Vec::len);
    let mut candidate = 0;
    for j in start..cols.len() {
        while candidate < m {
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for prev in cols[..j].iter() {
                    let proj = dot(prev, &e);
                    axpy(-proj, prev, &mut e);
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 0.5 {
                e.iter_mut().for_each(|x| *x /= norm);
                cols[j] = e;
                break;
            }
        }
    }
}

/// Make the largest-magnitude entry of each left singular vector non-negative.
fn fix_signs(svd: &mut SvdResult) {
    let (m, n) = svd.u.shape();
    for j in 0..n {
        let mut best = 0.0f64;
        let mut best_val = 0.0;
        for i in 0..m {
            let v = svd.u[(i, j)];
            if v.abs() > best {
                best = v.abs();
                best_val = v;
            }
        }
        if best_val < 0.0 {
            for i in 0..m {
                svd.u[(i, j)] = -svd.u[(i, j)];
            }
            for x in svd.vt.row_mut(j) {
                *x = -*x;
            }
        }
    }
}

/// Truncated POD basis: leading left singular vectors of a snapshot matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    pub modes: Matrix,
    /// All singular values of the decomposition, not only the retained ones.
    pub singular_values: Vec<f64>,
    pub energy_ratio: f64,
    pub full_dim: usize,
}

impl PodBasis {
    pub fn n_pod(&self) -> usize {
        self.modes.cols()
    }

    /// Identity basis over `R^n` (no reduction).
    pub fn identity(n: usize) -> Self {
        Self {
            modes: Matrix::identity(n),
            singular_values: vec![1.0; n],
            energy_ratio: 1.0,
            full_dim: n,
        }
    }

    /// Keeps only the first `n` modes.
    pub fn truncated(&self, n: usize) -> Result<PodBasis> {
        if n == 0 || n > self.n_pod() {
            return Err(RomError::input(format!(
                "cannot truncate a {}-mode basis to {n} modes",
                self.n_pod()
            )));
        }
        let total: f64 = self.singular_values.iter().sum();
        let kept: f64 = self.singular_values[..n].iter().sum();
        Ok(PodBasis {
            modes: self.modes.columns(0, n),
            singular_values: self.singular_values.clone(),
            energy_ratio: if total > 0.0 { kept / total } else { 1.0 },
            full_dim: self.full_dim,
        })
    }

    /// `modes · coeffs`: back to full order.
    pub fn lift(&self, coeffs: &Matrix) -> Result<Matrix> {
        matmul(&self.modes, coeffs)
    }
}

/// Smallest number of modes whose cumulative singular-value ratio reaches
/// `target_energy`.
pub fn energy_rank(sigma: &[f64], target_energy: f64) -> Result<usize> {
    if !(target_energy > 0.0 && target_energy <= 1.0) {
        return Err(RomError::input(format!(
            "target energy {target_energy} outside (0, 1]"
        )));
    }
    let total: f64 = sigma.iter().sum();
    if total <= 0.0 {
        return Err(RomError::Degenerate("all singular values are zero".into()));
    }
    let mut cum = 0.0;
    for (i, s) in sigma.iter().enumerate() {
        cum += s;
        if cum / total >= target_energy {
            return Ok(i + 1);
        }
    }
    Ok(sigma.iter().rposition(|&s| s > 0.0).map_or(1, |i| i + 1))
}

pub fn pod_truncate(svd: &SvdResult, target_energy: f64) -> Result<PodBasis> {
    let n = energy_rank(&svd.sigma, target_energy)?;
    let total: f64 = svd.sigma.iter().sum();
    let kept: f64 = svd.sigma[..n].iter().sum();
    Ok(PodBasis {
        modes: svd.u.columns(0, n),
        singular_values: svd.sigma.clone(),
        energy_ratio: kept / total,
        full_dim: svd.u.rows(),
    })
}

/// Reduced coordinates `modesᵀ · s`.
pub fn pod_project(basis: &PodBasis, s: &Matrix) -> Result<Matrix> {
    if s.rows() != basis.full_dim {
        return Err(RomError::shape(format!(
            "projecting {}-row snapshots onto a basis over R^{}",
            s.rows(),
            basis.full_dim
        )));
    }
    matmul_tn(&basis.modes, s)
}

/// `M = toᵀ · from`, mapping `from` coordinates into `to` coordinates.
pub fn basis_change(from: &PodBasis, to: &PodBasis) -> Result<Matrix> {
    if from.full_dim != to.full_dim {
        return Err(RomError::shape(format!(
            "basis change between R^{} and R^{}",
            from.full_dim, to.full_dim
        )));
    }
    matmul_tn(&to.modes, &from.modes)
}
