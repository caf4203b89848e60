//! Matrix-analysis kernels.
//!
//! Everything here works on small dense symmetric matrices through a
//! symmetric eigendecomposition `A = U diag(λ) Uᵀ`. The half-Sylvester
//! operator `φ_B(A)` solves `B^{1/2} C + C B^{1/2} = A`; in the eigenbasis of
//! `B` it is the entrywise division `[UᵀAU]_ij / (√λ_i + √λ_j)`, which is also
//! the directional derivative of the matrix square root.

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;

use crate::{Error, Mat, Result, Vector};

/// Relative tolerance under which negative eigenvalues count as round-off.
pub const TOL_PSD: f64 = 1e-10;
/// Relative floor on eigenvalues for strict positive definiteness.
pub const TOL_PD: f64 = 1e-12;

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct EigenFactorization {
    pub u: Mat,
    pub lambda: Vector,
}

impl EigenFactorization {
    pub fn new(a: &Mat) -> Self {
        let sym = symmetrize(a);
        let eig = SymmetricEigen::new(sym);
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let lambda = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut u = Mat::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            u.set_column(dst, &eig.eigenvectors.column(src));
        }
        Self { u, lambda }
    }

    /// `U diag(f(λ)) Uᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        let d = self.lambda.map(f);
        let mut scaled = self.u.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= d[j];
        }
        &scaled * self.u.transpose()
    }

    fn spectral_norm(&self) -> f64 {
        self.lambda.iter().fold(0.0_f64, |m, l| m.max(l.abs()))
    }

    fn min(&self) -> f64 {
        self.lambda[self.lambda.len() - 1]
    }

    fn require_pd(&self) -> Result<()> {
        let n = self.lambda.len();
        if n == 0 {
            return Ok(());
        }
        let lmin = self.min();
        if !(lmin > TOL_PD * self.spectral_norm()) || lmin <= 0.0 {
            return Err(Error::Singular);
        }
        Ok(())
    }

    fn clamped_for_psd(&self) -> Result<Vector> {
        if self.lambda.is_empty() {
            return Ok(self.lambda.clone());
        }
        let lmin = self.min();
        if lmin < -TOL_PSD * self.spectral_norm() {
            return Err(Error::NotPsd(lmin));
        }
        let floor = TOL_PD * self.spectral_norm();
        Ok(self.lambda.map(|l| if l < floor { 0.0 } else { l }))
    }
}

pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

/// Spectral norm of an arbitrary square matrix.
pub fn op_norm(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.clone().singular_values().max()
}

pub fn sym_sqrt(a: &Mat) -> Result<Mat> {
    let e = EigenFactorization::new(a);
    let lam = e.clamped_for_psd()?;
    let f = EigenFactorization { u: e.u, lambda: lam };
    Ok(f.map(f64::sqrt))
}

/// `A^{-1/2}` for strictly positive definite `A`.
pub fn sym_inv_sqrt(a: &Mat) -> Result<Mat> {
    let e = EigenFactorization::new(a);
    e.require_pd()?;
    Ok(e.map(|l| 1.0 / l.sqrt()))
}

/// Divided-difference kernel `[Uᵀ X U]_ij / (√λ_i + √λ_j)` mapped back.
fn half_sylvester(e: &EigenFactorization, x: &Mat) -> Mat {
    let s = e.lambda.map(f64::sqrt);
    let mut t = e.u.transpose() * x * &e.u;
    let n = s.len();
    for i in 0..n {
        for j in 0..n {
            t[(i, j)] /= s[i] + s[j];
        }
    }
    &e.u * t * e.u.transpose()
}

/// Directional derivative of `A ↦ A^{1/2}` at `A` along `dA`.
pub fn sym_sqrt_derivative(a: &Mat, da: &Mat) -> Result<Mat> {
    let e = EigenFactorization::new(a);
    e.require_pd()?;
    Ok(symmetrize(&half_sylvester(&e, da)))
}

/// `φ_B(A)`: the unique `C` with `B^{1/2} C + C B^{1/2} = A`.
///
/// `A` need not be symmetric; the result is symmetric when `A` is.
pub fn phi(b: &Mat, a: &Mat) -> Result<Mat> {
    let e = EigenFactorization::new(b);
    e.require_pd()?;
    let c = half_sylvester(&e, a);
    debug_assert!({
        let n = b.nrows() as f64;
        let bound = 0.5 * n.sqrt() * (1.0 / e.min()).sqrt() * op_norm(a);
        op_norm(&c) <= bound * (1.0 + 1e-10) + 1e-300
    });
    Ok(c)
}

/// 𝔎₁(B, A, C) = tr(B^{-1/2}φ(A)²B^{-1/2}φ(C)) + tr((φ(A)B^{-1/2})² C B^{-1/2}).
///
/// Equal to `(1/π) ∫ tr((A(t²+B)⁻¹)² C (t²+B)⁻¹) dt`.
pub fn frak_k1(b: &Mat, a: &Mat, c: &Mat) -> Result<f64> {
    let e = EigenFactorization::new(b);
    e.require_pd()?;
    let bm = e.map(|l| 1.0 / l.sqrt());
    let pa = half_sylvester(&e, a);
    let pc = half_sylvester(&e, c);
    let t1 = (&bm * &pa * &pa * &bm * &pc).trace();
    let pab = &pa * &bm;
    let t2 = (&pab * &pab * c * &bm).trace();
    Ok(t1 + t2)
}

/// 𝔎₂(B, A, C) = `(1/2π) ∫ tr((A(t²+B)⁻¹ C (t²+B)⁻¹)²) dt`.
///
/// Evaluated as a residue sum in the eigenbasis of `B`: with `s = √λ(B)`,
/// `Ã = UᵀAU`, `C̃ = UᵀCU`, the value is
/// `½ Σ_{ijkl} Ã_ij C̃_jk Ã_kl C̃_li · q(s_i, s_j, s_k, s_l)` where `q` is
/// [`quartic_integral`].
pub fn frak_k2(b: &Mat, a: &Mat, c: &Mat) -> Result<f64> {
    let e = EigenFactorization::new(b);
    e.require_pd()?;
    let s: Vec<f64> = e.lambda.iter().map(|l| l.sqrt()).collect();
    let at = e.u.transpose() * a * &e.u;
    let ct = e.u.transpose() * c * &e.u;
    let n = s.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let aij = at[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for k in 0..n {
                let cjk = ct[(j, k)];
                if cjk == 0.0 {
                    continue;
                }
                for l in 0..n {
                    let w = aij * cjk * at[(k, l)] * ct[(l, i)];
                    if w != 0.0 {
                        total += w * quartic4(s[i], s[j], s[k], s[l]);
                    }
                }
            }
        }
    }
    Ok(0.5 * total)
}

/// `(1/π) ∫ ∏_i (t² + x_i²)⁻¹ dt` for two to four positive `x_i`.
pub fn quartic_integral(x: &[f64]) -> Result<f64> {
    if x.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::BadConfig("quartic_integral needs positive arguments".into()));
    }
    match x.len() {
        2 => Ok(1.0 / ((x[0] + x[1]) * x[0] * x[1])),
        3 => {
            let f1 = x[0] + x[1] + x[2];
            let f3 = x[0] * x[1] * x[2];
            Ok(f1 / (f3 * (x[0] + x[1]) * (x[0] + x[2]) * (x[1] + x[2])))
        }
        4 => Ok(quartic4(x[0], x[1], x[2], x[3])),
        n => Err(Error::BadArity(n)),
    }
}

fn quartic4(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let f1 = a + b + c + d;
    let f2 = a * b + a * c + a * d + b * c + b * d + c * d;
    let f3 = a * b * c + a * b * d + a * c * d + b * c * d;
    let f4 = a * b * c * d;
    let pairs = (a + b) * (a + c) * (a + d) * (b + c) * (b + d) * (c + d);
    (f1 * f2 - f3) / (f4 * pairs)
}

/// `∫ (C₁t² + C₂)⁻¹ dt = π C₁^{-1/2} (C₁^{-1/2} C₂ C₁^{-1/2})^{-1/2} C₁^{-1/2}`.
pub fn inv_residue(c1: &Mat, c2: &Mat) -> Result<Mat> {
    let r = sym_inv_sqrt(c1)?;
    let m = symmetrize(&(&r * c2 * &r));
    let mi = sym_inv_sqrt(&m)?;
    Ok(symmetrize(&(&r * mi * &r)) * PI)
}

/// `∫ (1+t²)⁻¹ log det(C₁t² + C₂) dt = π log det C₁ + 2π log det(I + (C₁^{-1/2}C₂C₁^{-1/2})^{1/2})`.
pub fn logdet_residue(c1: &Mat, c2: &Mat) -> Result<f64> {
    let e1 = EigenFactorization::new(c1);
    e1.require_pd()?;
    let ld1: f64 = e1.lambda.iter().map(|l| l.ln()).sum();
    let r = e1.map(|l| 1.0 / l.sqrt());
    let m = symmetrize(&(&r * c2 * &r));
    let em = EigenFactorization::new(&m);
    em.require_pd()?;
    let ld2: f64 = em.lambda.iter().map(|l| (1.0 + l.sqrt()).ln()).sum();
    Ok(PI * ld1 + 2.0 * PI * ld2)
}

/// Right-hand side of `‖A − B‖ ≤ √l ‖(A+B)⁻¹‖ ‖A² − B²‖`.
pub fn sqrt_perturbation_bound(a: &Mat, b: &Mat) -> Result<f64> {
    let l = a.nrows() as f64;
    let s = EigenFactorization::new(&(a + b));
    s.require_pd()?;
    let inv_norm = 1.0 / s.min();
    let diff = a * a - b * b;
    Ok(l.sqrt() * inv_norm * op_norm(&diff))
}

/// Log-determinant of a symmetric positive definite matrix via Cholesky.
pub fn logdet_pd(a: &Mat) -> Result<f64> {
    let ch = nalgebra::Cholesky::new(a.clone()).ok_or(Error::Singular)?;
    Ok(2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}
