//! Sparse-symmetric building blocks: banded Cholesky, conjugate gradients,
//! and shift-invert Lanczos for generalized eigenproblems A x = λ M x with
//! diagonal mass M.
//!
//! The polar stiffness matrices have half-bandwidth nφ once the radial index
//! is major, so a dense-band LLᵀ factorization (O(n·bw²)) is cheap and exact;
//! Lanczos with full reorthogonalization on M^{1/2} A⁻¹ M^{1/2} then delivers
//! the lowest part of the spectrum with machine-precision M-orthogonality.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix not positive definite at row {0} (pivot {1:.3e})")]
    NotPositiveDefinite(usize, f64),
    #[error("conjugate gradients hit nonpositive curvature (p^T A p = {0:.3e})")]
    IndefiniteOperator(f64),
    #[error("conjugate gradients failed to reach tolerance {tol:.1e} in {iters} iterations (residual {res:.3e})")]
    CgStalled { tol: f64, iters: usize, res: f64 },
    #[error("Lanczos produced only {got} converged eigenpairs of {want} requested")]
    NotConverged { got: usize, want: usize },
}

/// Symmetric banded matrix, lower band stored row-major:
/// `data[i * (bw + 1) + d]` holds A[i, i - d] for d = 0..=bw.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    pub n: usize,
    pub bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        if d > self.bw {
            0.0
        } else {
            self.data[hi * (self.bw + 1) + d]
        }
    }

    /// Adds `v` to A[i, j] (and by symmetry A[j, i]); |i - j| must fit the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        assert!(d <= self.bw, "entry ({i},{j}) outside bandwidth {}", self.bw);
        self.data[hi * (self.bw + 1) + d] += v;
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.fill(0.0);
        let w = self.bw + 1;
        for i in 0..self.n {
            let row = &self.data[i * w..(i + 1) * w];
            y[i] += row[0] * x[i];
            let dmax = self.bw.min(i);
            for d in 1..=dmax {
                let j = i - d;
                let a = row[d];
                if a != 0.0 {
                    y[i] += a * x[j];
                    y[j] += a * x[i];
                }
            }
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * (self.bw + 1)]).collect()
    }

    /// In-place LLᵀ factorization; the band layout is reused for L.
    pub fn cholesky(mut self) -> Result<BandCholesky, LinalgError> {
        let w = self.bw + 1;
        for i in 0..self.n {
            let jmin = i.saturating_sub(self.bw);
            for j in jmin..=i {
                let kmin = jmin.max(j.saturating_sub(self.bw));
                let mut sum = self.data[i * w + (i - j)];
                for k in kmin..j {
                    sum -= self.data[i * w + (i - k)] * self.data[j * w + (j - k)];
                }
                if j < i {
                    self.data[i * w + (i - j)] = sum / self.data[j * w];
                } else {
                    if sum <= 0.0 {
                        return Err(LinalgError::NotPositiveDefinite(i, sum));
                    }
                    self.data[i * w] = sum.sqrt();
                }
            }
        }
        Ok(BandCholesky { n: self.n, bw: self.bw, data: self.data })
    }
}

/// Lower-banded Cholesky factor; solves A x = b by forward/back substitution.
pub struct BandCholesky {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandCholesky {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let w = self.bw + 1;
        // L y = b
        for i in 0..self.n {
            let dmax = self.bw.min(i);
            let mut sum = b[i];
            for d in 1..=dmax {
                sum -= self.data[i * w + d] * b[i - d];
            }
            b[i] = sum / self.data[i * w];
        }
        // L^T x = y
        for i in (0..self.n).rev() {
            let mut sum = b[i];
            let dmax = self.bw.min(self.n - 1 - i);
            for d in 1..=dmax {
                sum -= self.data[(i + d) * w + d] * b[i + d];
            }
            b[i] = sum / self.data[i * w];
        }
    }
}

/// Deterministic xorshift64* stream; used for reproducible start vectors.
pub struct DetRng(u64);

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng(seed.max(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545F4914F6CDD1D)
    }

    /// Uniform in (-1, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 52) as f64 * 2.0 - 1.0
    }
}

/// Sparse symmetric matrix in CSR form with the full (two-sided) pattern
/// stored, so matvec is a plain row sweep; built once from an edge list.
#[derive(Clone, Debug)]
pub struct CsrSym {
    pub n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrSym {
    /// Assembles from a diagonal and undirected edges (i, j, a_ij), i ≠ j;
    /// repeated edges accumulate.
    pub fn from_edges(diag: Vec<f64>, edges: &[(u32, u32, f64)]) -> Self {
        let n = diag.len();
        let mut counts = vec![1usize; n];
        for &(a, b, _) in edges {
            counts[a as usize] += 1;
            counts[b as usize] += 1;
        }
        let mut row_ptr = vec![0usize; n + 1];
        for i in 0..n {
            row_ptr[i + 1] = row_ptr[i] + counts[i];
        }
        let nnz = row_ptr[n];
        let mut col_idx = vec![0u32; nnz];
        let mut vals = vec![0.0; nnz];
        let mut fill = row_ptr.clone();
        for (i, &d) in diag.iter().enumerate() {
            col_idx[fill[i]] = i as u32;
            vals[fill[i]] = d;
            fill[i] += 1;
        }
        for &(a, b, v) in edges {
            col_idx[fill[a as usize]] = b;
            vals[fill[a as usize]] = v;
            fill[a as usize] += 1;
            col_idx[fill[b as usize]] = a;
            vals[fill[b as usize]] = v;
            fill[b as usize] += 1;
        }
        // sort each row and merge duplicate columns
        let mut out_col = Vec::with_capacity(nnz);
        let mut out_val = Vec::with_capacity(nnz);
        let mut out_ptr = vec![0usize; n + 1];
        let mut row: Vec<(u32, f64)> = Vec::new();
        for i in 0..n {
            row.clear();
            for k in row_ptr[i]..row_ptr[i + 1] {
                row.push((col_idx[k], vals[k]));
            }
            row.sort_by_key(|e| e.0);
            for &(c, v) in row.iter() {
                if let Some(last) = out_col.last() {
                    if *last == c && out_ptr[i] < out_col.len() {
                        *out_val.last_mut().unwrap() += v;
                        continue;
                    }
                }
                out_col.push(c);
                out_val.push(v);
            }
            out_ptr[i + 1] = out_col.len();
        }
        CsrSym { n, row_ptr: out_ptr, col_idx: out_col, vals: out_val }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.col_idx[k] as usize];
            }
            y[i] = s;
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] as usize == i {
                    d[i] = self.vals[k];
                }
            }
        }
        d
    }

    /// Adds `v[i]` to the diagonal in place.
    pub fn add_diag(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] as usize == i {
                    self.vals[k] += v[i];
                }
            }
        }
    }
}

/// Zero-fill incomplete Cholesky factor on the lower-triangular pattern of a
/// `CsrSym`, with automatic diagonal shifting when a pivot fails; the shift
/// trades preconditioner quality for existence and is recorded in `shift`.
pub struct IncompleteCholesky {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
    pub shift: f64,
}

impl IncompleteCholesky {
    pub fn factor(a: &CsrSym) -> Result<Self, LinalgError> {
        let n = a.n;
        // extract the lower-triangular pattern (including the diagonal last)
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx: Vec<u32> = Vec::new();
        let mut lower_a: Vec<f64> = Vec::new();
        for i in 0..n {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                if (a.col_idx[k] as usize) <= i {
                    col_idx.push(a.col_idx[k]);
                    lower_a.push(a.vals[k]);
                }
            }
            row_ptr[i + 1] = col_idx.len();
        }
        let amax = lower_a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut shift = 0.0;
        'retry: loop {
            let mut vals = lower_a.clone();
            for i in 0..n {
                let end = row_ptr[i + 1] - 1; // diagonal sits last in the row
                vals[end] += shift;
                for kk in row_ptr[i]..=end {
                    let j = col_idx[kk] as usize;
                    // subtract Σ_{t < j} L[i,t] · L[j,t] over the shared pattern
                    let mut s = vals[kk];
                    let (mut pi, mut pj) = (row_ptr[i], row_ptr[j]);
                    while pi < kk && pj + 1 < row_ptr[j + 1] {
                        let (ci, cj) = (col_idx[pi], col_idx[pj]);
                        if ci == cj {
                            s -= vals[pi] * vals[pj];
                            pi += 1;
                            pj += 1;
                        } else if ci < cj {
                            pi += 1;
                        } else {
                            pj += 1;
                        }
                    }
                    if j < i {
                        vals[kk] = s / vals[row_ptr[j + 1] - 1];
                    } else if s <= 0.0 {
                        shift = if shift == 0.0 { 1e-3 * amax } else { shift * 10.0 };
                        if shift > 10.0 * amax {
                            return Err(LinalgError::NotPositiveDefinite(i, s));
                        }
                        continue 'retry;
                    } else {
                        vals[kk] = s.sqrt();
                    }
                }
            }
            return Ok(IncompleteCholesky { n, row_ptr, col_idx, vals, shift });
        }
    }

    /// z ← (L Lᵀ)⁻¹ r by forward and back substitution.
    pub fn solve(&self, r: &[f64], z: &mut [f64]) {
        assert_eq!(r.len(), self.n);
        z.copy_from_slice(r);
        for i in 0..self.n {
            let end = self.row_ptr[i + 1] - 1;
            let mut s = z[i];
            for k in self.row_ptr[i]..end {
                s -= self.vals[k] * z[self.col_idx[k] as usize];
            }
            z[i] = s / self.vals[end];
        }
        for i in (0..self.n).rev() {
            let end = self.row_ptr[i + 1] - 1;
            z[i] /= self.vals[end];
            let zi = z[i];
            for k in self.row_ptr[i]..end {
                z[self.col_idx[k] as usize] -= self.vals[k] * zi;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgSolution {
    pub iterations: usize,
    pub residual: f64,
}

/// Preconditioned conjugate gradients for s.p.d. operators given as closures.
///
/// `diag` supplies a Jacobi preconditioner. Fails on nonpositive curvature,
/// which doubles as the zero-Dirichlet-eigenvalue detector for -Δ + q.
pub fn conjugate_gradients<F>(
    apply: F,
    b: &[f64],
    x: &mut [f64],
    diag: Option<&[f64]>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgSolution, LinalgError>
where
    F: Fn(&[f64], &mut [f64]),
{
    let precond = |r: &[f64], z: &mut [f64]| match diag {
        Some(d) => {
            for i in 0..r.len() {
                z[i] = r[i] / d[i];
            }
        }
        None => z.copy_from_slice(r),
    };
    preconditioned_conjugate_gradients(apply, precond, b, x, rel_tol, max_iter)
}

/// Conjugate gradients with an arbitrary s.p.d. preconditioner closure
/// z ← M⁻¹r (e.g. an incomplete Cholesky solve).
pub fn preconditioned_conjugate_gradients<F, P>(
    apply: F,
    precond: P,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgSolution, LinalgError>
where
    F: Fn(&[f64], &mut [f64]),
    P: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
    }
    let bnorm = norm2(b).max(1e-300);
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = norm2(&r) / bnorm;
    if res <= rel_tol {
        return Ok(CgSolution { iterations: 0, residual: res });
    }
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(LinalgError::IndefiniteOperator(pap));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm2(&r) / bnorm;
        if res <= rel_tol {
            return Ok(CgSolution { iterations: it, residual: res });
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(LinalgError::CgStalled { tol: rel_tol, iters: max_iter, res })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Converged eigenpair of the pencil A x = λ M x, M-normalized.
pub struct EigenPair {
    pub lambda: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
}

/// Smallest `k` eigenpairs of A x = λ M x with A symmetric banded positive
/// definite and M diagonal positive, by shift-invert Lanczos with full
/// reorthogonalization.
pub fn smallest_eigenpairs_banded(
    a: &BandMatrix,
    m_diag: &[f64],
    k: usize,
    seed: u64,
) -> Result<Vec<EigenPair>, LinalgError> {
    let n = a.n;
    assert_eq!(m_diag.len(), n);
    let chol = a.clone().cholesky()?;
    let sqrt_m: Vec<f64> = m_diag.iter().map(|&m| m.sqrt()).collect();
    let apply_inv = |x: &[f64], y: &mut [f64]| {
        for i in 0..n {
            y[i] = x[i] * sqrt_m[i];
        }
        chol.solve_in_place(y);
        for i in 0..n {
            y[i] *= sqrt_m[i];
        }
    };
    let m_steps = (2 * k + 40).min(n);
    let (thetas, vectors) = lanczos_symmetric(apply_inv, n, m_steps, seed);
    // Largest θ of the inverse operator = smallest λ of the pencil.
    let mut order: Vec<usize> = (0..thetas.len()).collect();
    order.sort_by(|&i, &j| thetas[j].partial_cmp(&thetas[i]).unwrap());
    let mut out = Vec::with_capacity(k);
    let mut ax = vec![0.0; n];
    for &idx in order.iter().take(k.min(order.len())) {
        let theta = thetas[idx];
        if theta <= 0.0 {
            break;
        }
        let lambda = 1.0 / theta;
        // transform back: x = M^{-1/2} z, then M-normalize
        let mut x: Vec<f64> = vectors[idx].iter().zip(&sqrt_m, ).map(|(&z, &s)| z / s).collect();
        let xnorm = (0..n).map(|i| x[i] * x[i] * m_diag[i]).sum::<f64>().sqrt();
        for v in x.iter_mut() {
            *v /= xnorm;
        }
        a.matvec(&x, &mut ax);
        let mut resid2 = 0.0;
        for i in 0..n {
            let r = ax[i] - lambda * m_diag[i] * x[i];
            resid2 += r * r / m_diag[i];
        }
        let residual = resid2.sqrt() / (1.0 + lambda);
        out.push(EigenPair { lambda, vector: x, residual });
    }
    if out.len() < k {
        return Err(LinalgError::NotConverged { got: out.len(), want: k });
    }
    out.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).unwrap());
    Ok(out)
}

/// Plain symmetric Lanczos with full reorthogonalization; returns Ritz values
/// and vectors of the operator itself.
pub fn lanczos_symmetric<F>(apply: F, n: usize, m_steps: usize, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>)
where
    F: Fn(&[f64], &mut [f64]),
{
    let mut rng = DetRng::new(seed ^ 0x9E3779B97F4A7C15);
    let mut v: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut basis: Vec<Vec<f64>> = vec![v.clone()];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    for j in 0..m_steps {
        apply(&basis[j], &mut w);
        let alpha = dot(&basis[j], &w);
        alphas.push(alpha);
        for i in 0..n {
            w[i] -= alpha * basis[j][i];
        }
        if j > 0 {
            let b = betas[j - 1];
            for i in 0..n {
                w[i] -= b * basis[j - 1][i];
            }
        }
        // full reorthogonalization, two passes
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                for i in 0..n {
                    w[i] -= c * q[i];
                }
            }
        }
        let beta = norm2(&w);
        if beta < 1e-13 || j + 1 == m_steps {
            break;
        }
        betas.push(beta);
        let next: Vec<f64> = w.iter().map(|&x| x / beta).collect();
        basis.push(next);
    }
    let m = alphas.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut thetas = Vec::with_capacity(m);
    let mut vectors = Vec::with_capacity(m);
    for c in 0..m {
        thetas.push(eig.eigenvalues[c]);
        let mut x = vec![0.0; n];
        for (j, q) in basis.iter().enumerate() {
            let s = eig.eigenvectors[(j, c)];
            for i in 0..n {
                x[i] += s * q[i];
            }
        }
        vectors.push(x);
    }
    (thetas, vectors)
}
