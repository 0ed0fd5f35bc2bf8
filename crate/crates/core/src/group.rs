//! Unitary group elements, Haar sampling and the time-translation subgroup.

use rand::Rng;

use crate::error::{CfsError, Result};
use crate::linalg::{self, CMat, C64};
use crate::rng;

pub const UNITARY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    mat: CMat,
}

impl GroupElement {
    /// Validating constructor: `‖UᴴU − I‖_max ≤ 1e-10`.
    pub fn new(mat: CMat) -> Result<GroupElement> {
        if !mat.is_square() {
            return Err(CfsError::DimensionMismatch { expected: mat.nrows(), found: mat.ncols() });
        }
        let defect = linalg::unitarity_defect(&mat);
        if !(defect <= UNITARY_TOL) {
            return Err(CfsError::NotUnitary { defect });
        }
        Ok(GroupElement { mat })
    }

    pub fn identity(f: usize) -> GroupElement {
        GroupElement { mat: CMat::identity(f, f) }
    }

    pub fn mat(&self) -> &CMat {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn inverse(&self) -> GroupElement {
        GroupElement { mat: self.mat.adjoint() }
    }

    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        GroupElement { mat: &self.mat * &other.mat }
    }

    /// `self · exp(iεA)` for Hermitian `A`: a step along a geodesic.
    pub fn geodesic_step(&self, a: &CMat, eps: f64) -> GroupElement {
        GroupElement { mat: &self.mat * linalg::expm_i_hermitian(a, eps) }
    }
}

/// Haar-distributed unitary from a given stream.
pub fn haar_sample_rng<R: Rng>(rng: &mut R, f: usize) -> GroupElement {
    let z = rng::complex_gaussian(rng, f, f);
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..f {
        let d = r[(j, j)];
        let norm = d.norm();
        let phase = if norm > 0.0 { d / norm } else { C64::new(1.0, 0.0) };
        for i in 0..f {
            q[(i, j)] *= phase;
        }
    }
    GroupElement { mat: q }
}

pub fn haar_sample(f: usize, seed: u64) -> GroupElement {
    haar_sample_rng(&mut rng::stream(seed, "haar", 0), f)
}

/// Generator `H` of the time translations `U_τ = exp(−iτH)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    mat: CMat,
    /// Set when `H` is diagonal; enables the exact diagonal exponential.
    diagonal: Option<Vec<f64>>,
}

impl Generator {
    pub fn new(mat: CMat) -> Result<Generator> {
        if !mat.is_square() {
            return Err(CfsError::DimensionMismatch { expected: mat.nrows(), found: mat.ncols() });
        }
        let defect = linalg::hermitian_defect(&mat);
        if defect > 1e-12 * linalg::max_abs(&mat).max(1.0) {
            return Err(CfsError::NotHermitian { defect });
        }
        let f = mat.nrows();
        let is_diag = (0..f).all(|i| (0..f).all(|j| i == j || mat[(i, j)] == C64::new(0.0, 0.0)));
        let diagonal = is_diag.then(|| (0..f).map(|i| mat[(i, i)].re).collect());
        Ok(Generator { mat, diagonal })
    }

    /// `H = diag(2π k_j / period)`; the `k_j` must be integers so that
    /// `U_period = 1`.
    pub fn periodic(frequencies: &[f64], period: f64) -> Result<Generator> {
        if !(period > 0.0) {
            return Err(CfsError::InvalidArgument(format!("period must be positive, got {period}")));
        }
        if let Some(&k) = frequencies.iter().find(|k| !k.is_finite() || k.fract() != 0.0) {
            return Err(CfsError::NonPeriodicGenerator { frequency: k });
        }
        let omega: Vec<f64> = frequencies.iter().map(|k| 2.0 * std::f64::consts::PI * k / period).collect();
        let f = omega.len();
        let mat = CMat::from_fn(f, f, |i, j| if i == j { C64::new(omega[i], 0.0) } else { C64::new(0.0, 0.0) });
        Ok(Generator { mat, diagonal: Some(omega) })
    }

    pub fn mat(&self) -> &CMat {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// `πHπ` for the coordinate projector onto the first `d` basis vectors.
    pub fn restricted(&self, d: usize) -> Generator {
        let f = self.dim();
        let mat = CMat::from_fn(f, f, |i, j| if i < d && j < d { self.mat[(i, j)] } else { C64::new(0.0, 0.0) });
        let diagonal = self.diagonal.as_ref().map(|w| w.iter().enumerate().map(|(i, &x)| if i < d { x } else { 0.0 }).collect());
        Generator { mat, diagonal }
    }
}

/// `U_τ = exp(−iτH)`.
pub fn time_translation(tau: f64, generator: &Generator) -> GroupElement {
    match &generator.diagonal {
        Some(omega) => {
            let f = omega.len();
            let mut m = CMat::zeros(f, f);
            for (i, w) in omega.iter().enumerate() {
                let (s, c) = (-tau * w).sin_cos();
                m[(i, i)] = C64::new(c, s);
            }
            GroupElement { mat: m }
        }
        None => GroupElement { mat: linalg::expm_i_hermitian(&generator.mat, -tau) },
    }
}

/// Haar sampler on the block subgroup `U(d) ⊕ 1` of `U(f)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSampler {
    pub dims: usize,
    pub f: usize,
}

impl BlockSampler {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> GroupElement {
        if self.dims == self.f {
            return haar_sample_rng(rng, self.f);
        }
        let mut m = CMat::identity(self.f, self.f);
        if self.dims > 0 {
            let block = haar_sample_rng(rng, self.dims);
            m.view_mut((0, 0), (self.dims, self.dims)).copy_from(block.mat());
        }
        GroupElement { mat: m }
    }

    /// Random Hermitian direction supported on the block.
    pub fn hermitian_direction<R: Rng>(&self, rng: &mut R) -> CMat {
        let mut a = CMat::zeros(self.f, self.f);
        if self.dims > 0 {
            let block = rng::unit_hermitian(rng, self.dims);
            a.view_mut((0, 0), (self.dims, self.dims)).copy_from(&block);
        }
        a
    }
}

pub fn subgroup_restriction(dims: usize, f: usize) -> Result<BlockSampler> {
    if dims > f {
        return Err(CfsError::DimensionMismatch { expected: f, found: dims });
    }
    Ok(BlockSampler { dims, f })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_f1_is_unit_modulus_and_deterministic() {
        let u = haar_sample(1, 11);
        assert!((u.mat()[(0, 0)].norm() - 1.0).abs() <= 1e-15);
        assert_eq!(u, haar_sample(1, 11));
        assert_ne!(u, haar_sample(1, 12));
    }

    #[test]
    fn haar_is_unitary() {
        for seed in 0..20 {
            let u = haar_sample(5, seed);
            assert!(linalg::unitarity_defect(u.mat()) < 1e-13);
        }
    }

    #[test]
    fn rejects_non_unitary() {
        let m = CMat::identity(2, 2) * C64::new(1.05, 0.0);
        assert!(matches!(GroupElement::new(m), Err(CfsError::NotUnitary { .. })));
    }

    #[test]
    fn time_translation_group_law_and_period() {
        let g = Generator::periodic(&[0.0, 1.0, 2.0, -3.0], 1.0).unwrap();
        assert_eq!(time_translation(0.0, &g), GroupElement::identity(4));
        let a = time_translation(0.3, &g);
        let b = time_translation(0.45, &g);
        let ab = time_translation(0.75, &g);
        assert!(linalg::max_abs(&(a.mat() * b.mat() - ab.mat())) < 1e-12);
        let p = time_translation(1.0, &g);
        assert!(linalg::max_abs(&(p.mat() - CMat::identity(4, 4))) < 1e-12);
    }

    #[test]
    fn dense_generator_matches_diagonal() {
        let g = Generator::periodic(&[1.0, 2.0], 1.0).unwrap();
        let u = haar_sample(2, 3);
        let dense = Generator::new(u.mat() * g.mat() * u.mat().adjoint()).unwrap();
        assert!(dense.diagonal.is_none());
        let lhs = time_translation(0.2, &dense);
        let rhs = u.mat() * time_translation(0.2, &g).mat() * u.mat().adjoint();
        assert!(linalg::max_abs(&(lhs.mat() - rhs)) < 1e-12);
    }

    #[test]
    fn non_integer_frequency() {
        assert!(matches!(Generator::periodic(&[0.0, 1.5], 1.0), Err(CfsError::NonPeriodicGenerator { .. })));
    }

    #[test]
    fn non_hermitian_generator() {
        let m = CMat::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
        assert!(matches!(Generator::new(m), Err(CfsError::NotHermitian { .. })));
    }

    #[test]
    fn block_sampler_structure() {
        let full = subgroup_restriction(4, 4).unwrap();
        let mut r1 = rng::stream(5, "haar", 2);
        let mut r2 = rng::stream(5, "haar", 2);
        assert_eq!(full.sample(&mut r1), haar_sample_rng(&mut r2, 4));

        let zero = subgroup_restriction(0, 4).unwrap();
        assert_eq!(zero.sample(&mut r1), GroupElement::identity(4));

        let half = subgroup_restriction(2, 4).unwrap();
        let u = half.sample(&mut r1);
        for i in 2..4 {
            for j in 0..4 {
                let expect = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
                assert_eq!(u.mat()[(i, j)], expect);
                assert_eq!(u.mat()[(j, i)], expect);
            }
        }
        assert!(matches!(subgroup_restriction(5, 4), Err(CfsError::DimensionMismatch { .. })));
    }
}
