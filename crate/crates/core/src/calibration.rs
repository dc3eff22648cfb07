//! Flat-space calibration of the density constant.
//!
//! In the normal chart of a factor with `|λ|`, the harmonic forms of the
//! model on `C` have unit-weighted values `w^a e^{-k|λ||w|²}` (or their
//! conjugates). Their Gram matrix over a large disc, with the same volume
//! normalization as the torus, gives the Bergman density of `C` directly.
//! Comparing it with `b₀ k^n` pins the curvature, weight and volume
//! conventions independently of the theta machinery.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;

use crate::model::ProductModel;

type C64 = Complex64;

/// Number of monomials `w^0 … w^{N-1}` in the truncated disc basis.
pub const MONOMIALS: usize = 24;
const ANGULAR_NODES: usize = 64;
const RADIAL_NODES: usize = 1500;

/// Density of the flat model `(C, e^{-2k|λ||w|²}, vn·dx dy)` at `w`, from
/// the quadrature Gram matrix of the first [`MONOMIALS`] monomials on a disc
/// of radius `6 / sqrt(2k|λ|)`.
pub fn c_model_density(lambda_abs: f64, k: u32, volume_normalization: f64, w: C64) -> f64 {
    let a = 2.0 * f64::from(k) * lambda_abs;
    let radius = 6.0 / a.sqrt();
    let dr = radius / RADIAL_NODES as f64;
    let dth = 2.0 * PI / ANGULAR_NODES as f64;
    let mut gram = DMatrix::<C64>::zeros(MONOMIALS, MONOMIALS);
    let mut powers = vec![C64::new(0.0, 0.0); MONOMIALS];
    for ir in 0..RADIAL_NODES {
        let r = (ir as f64 + 0.5) * dr;
        let radial = (-a * r * r).exp() * r * dr * dth * volume_normalization;
        for it in 0..ANGULAR_NODES {
            let z = C64::from_polar(r, it as f64 * dth);
            let mut p = C64::new(1.0, 0.0);
            for slot in powers.iter_mut() {
                *slot = p;
                p *= z;
            }
            for i in 0..MONOMIALS {
                for j in 0..MONOMIALS {
                    gram[(i, j)] += powers[i] * powers[j].conj() * radial;
                }
            }
        }
    }
    let chol = Cholesky::new(gram).expect("monomial gram is positive definite");
    let mut p = C64::new(1.0, 0.0);
    let v = DVector::from_fn(MONOMIALS, |_, _| {
        let out = p;
        p *= w;
        out
    });
    let x = chol.solve(&v);
    let quad: C64 = v.iter().zip(x.iter()).map(|(a, b)| a.conj() * b).sum();
    quad.re * (-a * w.norm_sqr()).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub k: u32,
    /// Product of per-factor disc densities at the chart origin.
    pub disc_density: f64,
    /// `b₀ kⁿ`.
    pub expected: f64,
    /// Largest relative gap over the sampled chart points.
    pub relative_error: f64,
}

/// Compare the disc densities with `b₀ kⁿ` at the origin and at a few
/// points within `1/sqrt(k|λ|)` of it.
pub fn c_model_check(model: &ProductModel, k: u32) -> CalibrationReport {
    let vn = model.frame().volume_normalization;
    let expected = model.b0() * f64::from(k).powi(model.dim() as i32);
    let offsets = [0.0, 0.3, 0.7, 1.0];
    let mut worst = 0.0f64;
    let mut at_origin = 0.0;
    for (i, &s) in offsets.iter().enumerate() {
        let d: f64 = model
            .factors()
            .iter()
            .map(|f| {
                let l = f.weight_scale().abs();
                let w = C64::from_polar(s / (f64::from(k) * l).sqrt(), 0.4 + i as f64);
                c_model_density(l, k, vn, w)
            })
            .product();
        if i == 0 {
            at_origin = d;
        }
        worst = worst.max((d - expected).abs() / expected);
    }
    CalibrationReport {
        k,
        disc_density: at_origin,
        expected,
        relative_error: worst,
    }
}
