//! Dense matrix kernels, seeded orthogonal sampling, SVD and subspace geometry.

pub mod io;

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense real matrix in 64-bit floating point.
pub type Matrix = DMatrix<f64>;

/// Identifier of the sampling algorithm behind [`Seed`]. Bump when the mapping
/// from seed to samples changes.
pub const RNG_ALGORITHM: &str = "chacha8-v1";

/// Relative threshold below which a singular value counts as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Seed for every random draw in the crate.
///
/// A seed maps to a ChaCha8 stream via `seed_from_u64`, so identical seeds give
/// bit-identical samples on every platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Seed(pub u64);

impl Seed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent child seed, used to give each component of an experiment
    /// its own stream.
    pub fn derive(self, stream: u64) -> Seed {
        // splitmix64 finalizer over the pair
        let mut z = self
            .0
            .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Seed(z ^ (z >> 31))
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    // column-major fill keeps the stream order independent of nalgebra internals
    let mut m = Matrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// ε-scaled Haar-orthogonal matrix: `WᵀW = ε²I` when tall, `WWᵀ = ε²I` when wide.
pub fn random_orthogonal(rows: usize, cols: usize, eps: f64, seed: Seed) -> Result<Matrix> {
    random_orthogonal_with(rows, cols, eps, &mut seed.rng())
}

pub fn random_orthogonal_with<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    eps: f64,
    rng: &mut R,
) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::arg(format!(
            "orthogonal matrix needs positive dimensions, got {rows}x{cols}"
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::arg(format!("scale must be positive, got {eps}")));
    }
    let (n, k) = (rows.max(cols), rows.min(cols));
    let qr = gaussian(n, k, rng).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q *= eps;
    Ok(if rows >= cols { q } else { q.transpose() })
}

/// `‖WᵀW/ε² − I‖_F` for tall `W`, `‖WWᵀ/ε² − I‖_F` for wide.
pub fn orthogonality_residual(w: &Matrix, eps: f64) -> f64 {
    let g = if w.nrows() >= w.ncols() {
        w.tr_mul(w)
    } else {
        w * w.transpose()
    };
    let k = g.nrows();
    (g / (eps * eps) - Matrix::identity(k, k)).norm()
}

/// Maximum deviation of `QᵀQ` from the identity.
pub fn orthonormality_residual(q: &Matrix) -> f64 {
    let k = q.ncols();
    (q.tr_mul(q) - Matrix::identity(k, k)).norm()
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::arg(format!("{what} has non-finite entries")))
    }
}

/// Thin SVD with singular values in descending order.
#[derive(Debug, Clone)]
pub struct SvdTriple {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl SvdTriple {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    /// Number of singular values above `RANK_TOL` times the largest.
    pub fn rank(&self) -> usize {
        let top = self.s.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&s| s > RANK_TOL * top).count()
    }
}

/// Relative reconstruction error above which a decomposition is rejected.
const SVD_CHECK_TOL: f64 = 1e-10;

fn svd_once(m: &Matrix) -> Option<SvdTriple> {
    let dec = SVD::try_new(m.clone(), true, true, 5.0 * f64::EPSILON, 0)?;
    let (u, vt) = (dec.u?, dec.v_t?);
    let mut order: Vec<usize> = (0..dec.singular_values.len()).collect();
    order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
    let t = SvdTriple {
        u: Matrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]),
        s: order.iter().map(|&k| dec.singular_values[k]).collect(),
        v: Matrix::from_fn(vt.ncols(), order.len(), |i, j| vt[(order[j], i)]),
    };
    let scale = m.norm().max(f64::MIN_POSITIVE);
    ((t.reconstruct() - m).norm() <= SVD_CHECK_TOL * scale).then_some(t)
}

/// Thin SVD, verified by reconstruction. The iterative solver occasionally
/// returns an inconsistent factorization for exactly structured or badly
/// conditioned input, so the transpose, a fixed random two-sided rotation and
/// finally a Jacobi sweep are tried before giving up.
pub fn svd(m: &Matrix) -> Result<SvdTriple> {
    if m.is_empty() {
        return Err(Error::arg("svd of an empty matrix"));
    }
    ensure_finite(m, "svd input")?;
    if let Some(t) = svd_once(m) {
        return Ok(t);
    }
    if let Some(t) = svd_once(&m.transpose()) {
        return Ok(SvdTriple { u: t.v, s: t.s, v: t.u });
    }
    let mut rng = Seed(0x5eed_5fd0).rng();
    let q = random_orthogonal_with(m.nrows(), m.nrows(), 1.0, &mut rng)?;
    let p = random_orthogonal_with(m.ncols(), m.ncols(), 1.0, &mut rng)?;
    if let Some(t) = svd_once(&(&q * m * &p)) {
        return Ok(SvdTriple {
            u: q.tr_mul(&t.u),
            s: t.s,
            v: p * t.v,
        });
    }
    let t = jacobi_svd(m)?;
    let scale = m.norm().max(f64::MIN_POSITIVE);
    if (t.reconstruct() - m).norm() > SVD_CHECK_TOL * scale {
        return Err(Error::DegenerateData("svd failed its reconstruction check".into()));
    }
    Ok(t)
}

/// One-sided Jacobi SVD. Slower than the bidiagonal solver but accurate for
/// small singular values of ill-conditioned input.
fn jacobi_svd(m: &Matrix) -> Result<SvdTriple> {
    if m.nrows() < m.ncols() {
        let t = jacobi_svd(&m.transpose())?;
        return Ok(SvdTriple { u: t.v, s: t.s, v: t.u });
    }
    let n = m.ncols();
    let mut a = m.clone();
    let mut v = Matrix::identity(n, n);
    for _ in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for x in [&mut a, &mut v] {
                    for i in 0..x.nrows() {
                        let (xp, xq) = (x[(i, p)], x[(i, q)]);
                        x[(i, p)] = c * xp - s * xq;
                        x[(i, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let floor = norms[order[0]] * n as f64 * f64::EPSILON;
    let kept = order.iter().take_while(|&&j| norms[j] > floor).count();
    let mut u = Matrix::zeros(m.nrows(), n);
    for (k, &j) in order.iter().take(kept).enumerate() {
        u.set_column(k, &(a.column(j) / norms[j]));
    }
    if kept < n {
        let comp = orthogonal_complement(&u.columns(0, kept).into_owned())?;
        u.columns_mut(kept, n - kept).copy_from(&comp.columns(0, n - kept));
    }
    Ok(SvdTriple {
        u,
        s: order.iter().enumerate().map(|(k, &j)| if k < kept { norms[j] } else { 0.0 }).collect(),
        v: Matrix::from_fn(n, n, |i, k| v[(i, order[k])]),
    })
}

fn check_orthonormal(q: &Matrix, name: &str) -> Result<()> {
    let res = orthonormality_residual(q);
    if res > 1e-8 {
        return Err(Error::arg(format!(
            "{name} columns are not orthonormal (residual {res:e})"
        )));
    }
    Ok(())
}

/// Projector distance `‖AAᵀ − BBᵀ‖_F` between two column spans.
pub fn subspace_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::arg(format!(
            "subspaces live in different spaces ({} vs {} rows)",
            a.nrows(),
            b.nrows()
        )));
    }
    check_orthonormal(a, "first basis")?;
    check_orthonormal(b, "second basis")?;
    Ok((a * a.transpose() - b * b.transpose()).norm())
}

/// Distance from `span(a)` to the nearest point of the larger `span(c)`:
/// `√2·‖A − C CᵀA‖_F`, which reduces to [`subspace_distance`] when both spans
/// have the same dimension.
pub fn containment_distance(a: &Matrix, c: &Matrix) -> f64 {
    let resid = a - c * c.tr_mul(a);
    std::f64::consts::SQRT_2 * resid.norm()
}

/// Left-multiplies `X` by `(XXᵀ)^{-1/2}` so that the rows become orthonormal.
pub fn whiten(x: &Matrix) -> Result<Matrix> {
    let (d, n) = x.shape();
    if n < d {
        return Err(Error::DegenerateData(format!(
            "cannot whiten {d}x{n}: fewer samples than features"
        )));
    }
    ensure_finite(x, "whiten input")?;
    let eig = SymmetricEigen::new(x * x.transpose());
    let top = eig.eigenvalues.max();
    let low = eig.eigenvalues.min();
    if !(top > 0.0) || low <= RANK_TOL * top {
        return Err(Error::DegenerateData(format!(
            "input is rank deficient (eigenvalues in [{low:e}, {top:e}])"
        )));
    }
    let mut q = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        q.column_mut(j).scale_mut(lam.sqrt().recip());
    }
    Ok(q * eig.eigenvectors.tr_mul(x))
}

/// Orthonormal basis for the column span of `m`, dropping directions whose
/// singular value is below `RANK_TOL` times the largest.
pub fn orthonormal_span(m: &Matrix) -> Result<Matrix> {
    if m.ncols() == 0 {
        return Ok(Matrix::zeros(m.nrows(), 0));
    }
    let t = svd(m)?;
    let k = t.rank();
    Ok(t.u.columns(0, k).into_owned())
}

/// Orthonormal basis of the orthogonal complement of `span(q)` for orthonormal `q`.
pub fn orthogonal_complement(q: &Matrix) -> Result<Matrix> {
    let d = q.nrows();
    let k = q.ncols();
    if k >= d {
        return Ok(Matrix::zeros(d, 0));
    }
    let proj = Matrix::identity(d, d) - q * q.transpose();
    let eig = SymmetricEigen::new(proj);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    Ok(Matrix::from_fn(d, d - k, |i, j| eig.eigenvectors[(i, order[j])]))
}

/// Concatenates two matrices with equal row counts side by side.
pub fn hcat(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = Matrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Product `ms[k−1] ⋯ ms[0]`, or `None` for an empty slice.
pub fn chain_product(ms: &[Matrix]) -> Option<Matrix> {
    let mut it = ms.iter();
    let first = it.next()?.clone();
    Some(it.fold(first, |acc, w| w * acc))
}

/// Coordinate-list matrix, used for residuals living on an observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    /// Positions of the nonzero entries of `mask`, in column-major order.
    pub fn support(mask: &Matrix) -> Vec<(usize, usize)> {
        let mut idx = Vec::new();
        for j in 0..mask.ncols() {
            for i in 0..mask.nrows() {
                if mask[(i, j)] != 0.0 {
                    idx.push((i, j));
                }
            }
        }
        idx
    }

    pub fn norm_squared(&self) -> f64 {
        self.entries.iter().map(|e| e.2 * e.2).sum()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.nrows, self.ncols);
        for &(i, j, v) in &self.entries {
            m[(i, j)] = v;
        }
        m
    }

    /// `self · b`.
    pub fn mul_dense(&self, b: &Matrix) -> Matrix {
        assert_eq!(self.ncols, b.nrows());
        let bt = b.transpose();
        let mut out_t = Matrix::zeros(b.ncols(), self.nrows);
        for &(i, j, v) in &self.entries {
            out_t.column_mut(i).axpy(v, &bt.column(j), 1.0);
        }
        out_t.transpose()
    }

    /// `selfᵀ · b`.
    pub fn tr_mul_dense(&self, b: &Matrix) -> Matrix {
        assert_eq!(self.nrows, b.nrows());
        let bt = b.transpose();
        let mut out_t = Matrix::zeros(b.ncols(), self.ncols);
        for &(i, j, v) in &self.entries {
            out_t.column_mut(j).axpy(v, &bt.column(i), 1.0);
        }
        out_t.transpose()
    }

    /// `self · pᵀ`.
    pub fn mul_dense_t(&self, p: &Matrix) -> Matrix {
        assert_eq!(self.ncols, p.ncols());
        let mut out_t = Matrix::zeros(p.nrows(), self.nrows);
        for &(i, j, v) in &self.entries {
            out_t.column_mut(i).axpy(v, &p.column(j), 1.0);
        }
        out_t.transpose()
    }
}
