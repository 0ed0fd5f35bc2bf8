//! Dense complex linear algebra helpers.
//!
//! The f×f work (Hermitian eigendecompositions, ranks, matrix functions) goes
//! through nalgebra. The closed-chain eigenproblem is small and non-normal, so
//! it has its own Hessenberg reduction plus shifted QR iteration below.

use nalgebra::DMatrix;
use num_complex::Complex;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Largest entry modulus.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Largest entry modulus of `m - mᴴ`.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let (r, c) = m.shape();
    debug_assert_eq!(r, c);
    let mut worst = 0.0_f64;
    for i in 0..r {
        for j in i..c {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Largest entry modulus of `uᴴu - I`.
pub fn unitarity_defect(u: &CMat) -> f64 {
    let g = u.adjoint() * u;
    let n = g.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((g[(i, j)] - target).norm());
        }
    }
    worst
}

pub fn trace(m: &CMat) -> C64 {
    (0..m.nrows()).map(|i| m[(i, i)]).sum()
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
///
/// The input is symmetrized first so that round-off asymmetry does not leak
/// into the solver.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// `exp(i·t·A)` for Hermitian `A`.
pub fn expm_i_hermitian(a: &CMat, t: f64) -> CMat {
    let (vals, vecs) = hermitian_eigen(a);
    let n = vals.len();
    let mut scaled = vecs.clone();
    for (j, lam) in vals.iter().enumerate() {
        let phase = C64::from_polar(1.0, t * lam);
        for i in 0..n {
            scaled[(i, j)] *= phase;
        }
    }
    scaled * vecs.adjoint()
}

/// Number of singular values above `tol`.
pub fn numeric_rank(m: &CMat, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Row-major square matrix used by the small eigensolver.
struct Small {
    m: usize,
    a: Vec<C64>,
}

impl Small {
    #[inline]
    fn at(&self, i: usize, j: usize) -> C64 {
        self.a[i * self.m + j]
    }
    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut C64 {
        &mut self.a[i * self.m + j]
    }

    /// Householder reduction to upper Hessenberg form (similarity transform).
    fn to_hessenberg(&mut self) {
        let m = self.m;
        if m < 3 {
            return;
        }
        let mut v = vec![ZERO; m];
        for k in 0..m - 2 {
            let norm_x = (k + 1..m).map(|i| self.at(i, k).norm_sqr()).sum::<f64>().sqrt();
            if norm_x == 0.0 {
                continue;
            }
            let x0 = self.at(k + 1, k);
            let phase = if x0.norm() == 0.0 { ONE } else { x0 / x0.norm() };
            let alpha = -phase * norm_x;
            for i in 0..m {
                v[i] = ZERO;
            }
            for i in k + 1..m {
                v[i] = self.at(i, k);
            }
            v[k + 1] -= alpha;
            let vnorm2: f64 = (k + 1..m).map(|i| v[i].norm_sqr()).sum();
            if vnorm2 == 0.0 {
                continue;
            }
            let beta = 2.0 / vnorm2;
            // A <- (I - beta v vᴴ) A
            for j in 0..m {
                let mut s = ZERO;
                for i in k + 1..m {
                    s += v[i].conj() * self.at(i, j);
                }
                s *= beta;
                for i in k + 1..m {
                    *self.at_mut(i, j) -= v[i] * s;
                }
            }
            // A <- A (I - beta v vᴴ)
            for i in 0..m {
                let mut s = ZERO;
                for j in k + 1..m {
                    s += self.at(i, j) * v[j];
                }
                s *= beta;
                for j in k + 1..m {
                    *self.at_mut(i, j) -= s * v[j].conj();
                }
            }
            for i in k + 2..m {
                *self.at_mut(i, k) = ZERO;
            }
        }
    }
}

/// Eigenvalue of the 2×2 block `[[a, b], [c, d]]` closest to `d`.
fn wilkinson_shift(a: C64, b: C64, c: C64, d: C64) -> C64 {
    let half_tr = (a + d) * 0.5;
    let disc = ((a - d) * 0.5).powi(2) + b * c;
    let root = disc.sqrt();
    let l1 = half_tr + root;
    let l2 = half_tr - root;
    if (l1 - d).norm() <= (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

/// Complex Givens rotation `(c, s)` with `[[c, s], [-s̄, c]]·[a; b] = [r; 0]`.
fn givens(a: C64, b: C64) -> (f64, C64) {
    let na = a.norm();
    let nb = b.norm();
    if nb == 0.0 {
        return (1.0, ZERO);
    }
    if na == 0.0 {
        return (0.0, b.conj() / nb);
    }
    let r = na.hypot(nb);
    let c = na / r;
    let s = (a / na) * b.conj() / r;
    (c, s)
}

/// Eigenvalues (with algebraic multiplicity) of a small general complex
/// matrix given row-major, via Hessenberg reduction and Wilkinson-shifted QR
/// sweeps with deflation.
pub fn small_eigenvalues(rows: &[C64], m: usize) -> Vec<C64> {
    assert_eq!(rows.len(), m * m, "matrix data does not match dimension");
    match m {
        0 => return Vec::new(),
        1 => return vec![rows[0]],
        _ => {}
    }
    let mut h = Small { m, a: rows.to_vec() };
    h.to_hessenberg();
    let norm = h.a.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()));
    let mut eigs = vec![ZERO; m];
    let mut hi = m - 1;
    let mut iter = 0usize;
    let max_iter = 60 * m;
    let mut total = 0usize;
    loop {
        if hi == 0 {
            eigs[0] = h.at(0, 0);
            break;
        }
        // Locate the start of the unreduced block ending at `hi`.
        let mut lo = hi;
        while lo > 0 {
            let s = h.at(lo, lo).norm() + h.at(lo - 1, lo - 1).norm();
            let sub = h.at(lo, lo - 1).norm();
            let scale = if s == 0.0 { norm } else { s };
            if sub <= f64::EPSILON * scale {
                *h.at_mut(lo, lo - 1) = ZERO;
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            eigs[hi] = h.at(hi, hi);
            hi -= 1;
            iter = 0;
            continue;
        }
        total += 1;
        if total > max_iter * m {
            // Unconverged: report the current diagonal of the remaining block.
            for k in 0..=hi {
                eigs[k] = h.at(k, k);
            }
            break;
        }
        iter += 1;
        let mu = if iter % 11 == 10 {
            // exceptional shift to break cycles
            h.at(hi, hi) + C64::new(h.at(hi, hi - 1).norm(), 0.0)
        } else {
            wilkinson_shift(
                h.at(hi - 1, hi - 1),
                h.at(hi - 1, hi),
                h.at(hi, hi - 1),
                h.at(hi, hi),
            )
        };
        for k in lo..=hi {
            *h.at_mut(k, k) -= mu;
        }
        let mut rots: Vec<(f64, C64)> = Vec::with_capacity(hi - lo);
        for k in lo..hi {
            let (c, s) = givens(h.at(k, k), h.at(k + 1, k));
            for j in k..=hi {
                let x = h.at(k, j);
                let y = h.at(k + 1, j);
                *h.at_mut(k, j) = x * c + s * y;
                *h.at_mut(k + 1, j) = -s.conj() * x + y * c;
            }
            rots.push((c, s));
        }
        for (idx, &(c, s)) in rots.iter().enumerate() {
            let k = lo + idx;
            let last = (k + 1).min(hi);
            for i in lo..=last {
                let x = h.at(i, k);
                let y = h.at(i, k + 1);
                *h.at_mut(i, k) = x * c + y * s.conj();
                *h.at_mut(i, k + 1) = -x * s + y * c;
            }
        }
        for k in lo..=hi {
            *h.at_mut(k, k) += mu;
        }
    }
    eigs
}
