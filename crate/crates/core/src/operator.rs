//! Points of the operator set: trace-one finite-rank Hermitian operators on
//! ℂ^f with at most `n` positive and `n` negative eigenvalues.

use crate::error::{CfsError, Result};
use crate::group::GroupElement;
use crate::linalg::{self, CMat, C64};

/// Relative Hermiticity tolerance (against the largest entry modulus).
pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-10;
/// Default rank threshold relative to the largest eigenvalue modulus.
pub const DEFAULT_RELATIVE_RANK_TOL: f64 = 1e-9;
/// Singular-value threshold used when intersecting orthonormal bases.
const INTERSECTION_SV_TOL: f64 = 1e-8;

/// The nonzero part of a spectral decomposition, `x = P diag(vals) Pᴴ`.
#[derive(Debug, Clone)]
pub struct SpectralFactor {
    /// f × r, orthonormal columns.
    pub vecs: CMat,
    pub vals: Vec<f64>,
}

impl SpectralFactor {
    pub fn rank(&self) -> usize {
        self.vals.len()
    }

    /// Factor of `U x U⁻¹`.
    pub fn conjugated(&self, u: &CMat) -> SpectralFactor {
        SpectralFactor { vecs: u * &self.vecs, vals: self.vals.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct OperatorPoint {
    mat: CMat,
    n: usize,
    eigenvalues: Vec<f64>,
    eigenvectors: CMat,
    factor: SpectralFactor,
    rank_tol: f64,
}

/// Closed-chain eigenvalues of `xy`, zero-padded to `2n` entries and sorted by
/// descending modulus, then by phase in (−π, π].
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedChainSpectrum {
    pub eigenvalues: Vec<C64>,
}

impl ClosedChainSpectrum {
    pub fn moduli(&self) -> impl Iterator<Item = f64> + '_ {
        self.eigenvalues.iter().map(|z| z.norm())
    }
}

fn default_rank_tol(eigenvalues: &[f64]) -> f64 {
    let largest = eigenvalues.iter().fold(0.0_f64, |acc, l| acc.max(l.abs()));
    DEFAULT_RELATIVE_RANK_TOL * largest
}

/// Validate `mat` and build a point with its cached spectral factorization.
/// `rank_tol` is an absolute threshold; eigenvalues with `|λ| ≤ rank_tol`
/// count as zero.
pub fn make_point(mat: CMat, n: usize, rank_tol: f64) -> Result<OperatorPoint> {
    if !mat.is_square() {
        return Err(CfsError::DimensionMismatch { expected: mat.nrows(), found: mat.ncols() });
    }
    if n == 0 {
        return Err(CfsError::InvalidArgument("spin dimension must be positive".into()));
    }
    if !(rank_tol >= 0.0) {
        return Err(CfsError::InvalidArgument(format!("rank_tol must be nonnegative, got {rank_tol}")));
    }
    let scale = linalg::max_abs(&mat);
    let defect = linalg::hermitian_defect(&mat);
    if defect > HERMITIAN_TOL * scale {
        return Err(CfsError::NotHermitian { defect });
    }
    let tr = linalg::trace(&mat);
    if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
        return Err(CfsError::TraceNotOne { trace: tr.re });
    }
    let (eigenvalues, eigenvectors) = linalg::hermitian_eigen(&mat);
    OperatorPoint::from_parts(mat, n, eigenvalues, eigenvectors, rank_tol)
}

impl OperatorPoint {
    /// Validating constructor with the default relative rank threshold.
    pub fn new(mat: CMat, n: usize) -> Result<OperatorPoint> {
        if !mat.is_square() {
            return Err(CfsError::DimensionMismatch { expected: mat.nrows(), found: mat.ncols() });
        }
        let (vals, _) = linalg::hermitian_eigen(&mat);
        let tol = default_rank_tol(&vals);
        make_point(mat, n, tol)
    }

    /// Diagonal point from real entries.
    pub fn diagonal(entries: &[f64], n: usize) -> Result<OperatorPoint> {
        let f = entries.len();
        let mat = CMat::from_fn(f, f, |i, j| if i == j { C64::new(entries[i], 0.0) } else { C64::new(0.0, 0.0) });
        OperatorPoint::new(mat, n)
    }

    /// Rank-one projector onto the normalized vector `v`.
    pub fn projector(v: &[C64], n: usize) -> Result<OperatorPoint> {
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(CfsError::InvalidArgument("projector onto the zero vector".into()));
        }
        let f = v.len();
        let mat = CMat::from_fn(f, f, |i, j| v[i] * v[j].conj() / (norm * norm));
        OperatorPoint::new(mat, n)
    }

    fn from_parts(mat: CMat, n: usize, eigenvalues: Vec<f64>, eigenvectors: CMat, rank_tol: f64) -> Result<OperatorPoint> {
        let positive = eigenvalues.iter().filter(|&&l| l > rank_tol).count();
        let negative = eigenvalues.iter().filter(|&&l| l < -rank_tol).count();
        if positive > n || negative > n {
            return Err(CfsError::SignatureViolation { positive, negative, n });
        }
        let f = mat.nrows();
        // Nonzero eigenpairs in order of descending |λ|.
        let mut keep: Vec<usize> = (0..f).filter(|&i| eigenvalues[i].abs() > rank_tol).collect();
        keep.sort_by(|&a, &b| eigenvalues[b].abs().total_cmp(&eigenvalues[a].abs()));
        let mut vecs = CMat::zeros(f, keep.len());
        for (dst, &src) in keep.iter().enumerate() {
            vecs.set_column(dst, &eigenvectors.column(src));
        }
        let vals = keep.iter().map(|&i| eigenvalues[i]).collect();
        Ok(OperatorPoint { mat, n, eigenvalues, eigenvectors, factor: SpectralFactor { vecs, vals }, rank_tol })
    }

    pub fn mat(&self) -> &CMat {
        &self.mat
    }
    pub fn f(&self) -> usize {
        self.mat.nrows()
    }
    pub fn n(&self) -> usize {
        self.n
    }
    /// All f eigenvalues, ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
    pub fn eigenvectors(&self) -> &CMat {
        &self.eigenvectors
    }
    pub fn factor(&self) -> &SpectralFactor {
        &self.factor
    }
    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    /// Orthonormal basis of the spin space `x(H)` at threshold `tol`.
    pub fn range_basis(&self, tol: f64) -> CMat {
        let cols: Vec<usize> = (0..self.f()).filter(|&i| self.eigenvalues[i].abs() > tol).collect();
        let mut b = CMat::zeros(self.f(), cols.len());
        for (dst, &src) in cols.iter().enumerate() {
            b.set_column(dst, &self.eigenvectors.column(src));
        }
        b
    }
}

/// Random valid point of rank `2n`: `n` positive and `n` negative eigenvalues
/// on a Haar-random eigenbasis, normalized to trace one.
pub fn random_point<R: rand::Rng>(rng: &mut R, f: usize, n: usize) -> Result<OperatorPoint> {
    if 2 * n > f {
        return Err(CfsError::DimensionMismatch { expected: 2 * n, found: f });
    }
    let pos: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let pos_sum: f64 = pos.iter().sum();
    // Negative eigenvalues absorb at most half of the positive mass.
    let neg: Vec<f64> = (0..n).map(|_| -rng.random_range(0.05..1.0) * pos_sum / (2.0 * n as f64)).collect();
    let total = pos_sum + neg.iter().sum::<f64>();
    let mut diag = vec![0.0; f];
    for (i, v) in pos.iter().chain(neg.iter()).enumerate() {
        diag[i] = v / total;
    }
    let u = crate::group::haar_sample_rng(rng, f);
    let d = CMat::from_fn(f, f, |i, j| if i == j { C64::new(diag[i], 0.0) } else { C64::new(0.0, 0.0) });
    let mut mat = u.mat() * d * u.mat().adjoint();
    symmetrize(&mut mat);
    OperatorPoint::new(mat, n)
}

/// Replace `m` by `(m + mᴴ)/2` and force a real diagonal.
pub(crate) fn symmetrize(m: &mut CMat) {
    let f = m.nrows();
    for i in 0..f {
        m[(i, i)] = C64::new(m[(i, i)].re, 0.0);
        for j in (i + 1)..f {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

fn check_pair(x: &OperatorPoint, y: &OperatorPoint) -> Result<()> {
    if x.f() != y.f() {
        return Err(CfsError::DimensionMismatch { expected: x.f(), found: y.f() });
    }
    if x.n != y.n {
        return Err(CfsError::DimensionMismatch { expected: x.n, found: y.n });
    }
    Ok(())
}

/// Row-major `D_x (P_xᴴ P_y) D_y (P_yᴴ P_x)`, whose spectrum is the nonzero
/// spectrum of `xy`.
fn reduced_chain(px: &SpectralFactor, py: &SpectralFactor) -> Vec<C64> {
    let f = px.vecs.nrows();
    let rx = px.rank();
    let ry = py.rank();
    let mut m = vec![C64::new(0.0, 0.0); rx * ry];
    for i in 0..rx {
        for j in 0..ry {
            let mut s = C64::new(0.0, 0.0);
            for k in 0..f {
                s += px.vecs[(k, i)].conj() * py.vecs[(k, j)];
            }
            m[i * ry + j] = s;
        }
    }
    let mut a = vec![C64::new(0.0, 0.0); rx * rx];
    for i in 0..rx {
        for l in 0..rx {
            let mut s = C64::new(0.0, 0.0);
            for j in 0..ry {
                s += m[i * ry + j] * py.vals[j] * m[l * ry + j].conj();
            }
            a[i * rx + l] = s * px.vals[i];
        }
    }
    a
}

fn sort_spectrum(eigs: &mut [C64]) {
    eigs.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then_with(|| phase_key(*a).total_cmp(&phase_key(*b))));
}

/// Phase in (−π, π]; `arg` returns [−π, π], so −π is mapped to π.
fn phase_key(z: C64) -> f64 {
    let p = z.arg();
    if p == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        p
    }
}

/// Closed-chain spectrum from the low-rank factors alone.
pub fn closed_chain_spectrum_factors(px: &SpectralFactor, py: &SpectralFactor, n: usize) -> ClosedChainSpectrum {
    let rx = px.rank();
    let reduced = reduced_chain(px, py);
    let mut eigs = linalg::small_eigenvalues(&reduced, rx);
    eigs.resize(2 * n, C64::new(0.0, 0.0));
    sort_spectrum(&mut eigs);
    ClosedChainSpectrum { eigenvalues: eigs }
}

pub fn closed_chain_spectrum(x: &OperatorPoint, y: &OperatorPoint) -> Result<ClosedChainSpectrum> {
    check_pair(x, y)?;
    Ok(closed_chain_spectrum_factors(&x.factor, &y.factor, x.n))
}

/// `U x U⁻¹`. The spectral data is transported rather than recomputed.
pub fn conjugate(u: &GroupElement, x: &OperatorPoint) -> Result<OperatorPoint> {
    if u.dim() != x.f() {
        return Err(CfsError::DimensionMismatch { expected: x.f(), found: u.dim() });
    }
    let um = u.mat();
    let mat = um * &x.mat * um.adjoint();
    Ok(OperatorPoint {
        mat,
        n: x.n,
        eigenvalues: x.eigenvalues.clone(),
        eigenvectors: um * &x.eigenvectors,
        factor: x.factor.conjugated(um),
        rank_tol: x.rank_tol,
    })
}

/// Rank of `x` at threshold `rank_tol`; the point is regular iff this is `2n`.
pub fn spin_space_dim(x: &OperatorPoint, rank_tol: f64) -> usize {
    x.eigenvalues.iter().filter(|l| l.abs() > rank_tol).count()
}

/// `dim(S_x ∩ S_y)` from the ranks of the two range bases and of their
/// concatenation.
pub fn spin_intersection_dim(x: &OperatorPoint, y: &OperatorPoint, rank_tol: f64) -> Result<usize> {
    if x.f() != y.f() {
        return Err(CfsError::DimensionMismatch { expected: x.f(), found: y.f() });
    }
    let bx = x.range_basis(rank_tol);
    let by = y.range_basis(rank_tol);
    let f = x.f();
    let mut joined = CMat::zeros(f, bx.ncols() + by.ncols());
    for j in 0..bx.ncols() {
        joined.set_column(j, &bx.column(j));
    }
    for j in 0..by.ncols() {
        joined.set_column(bx.ncols() + j, &by.column(j));
    }
    let joint_rank = linalg::numeric_rank(&joined, INTERSECTION_SV_TOL);
    Ok(bx.ncols() + by.ncols() - joint_rank)
}
