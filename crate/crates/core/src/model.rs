//! Flat model manifolds: products of elliptic curves `C/(Z + τZ)` carrying a
//! Hermitian line bundle whose curvature has one constant eigenvalue per
//! factor.
//!
//! Conventions used throughout the crate:
//!
//! * On each factor the holomorphic coordinate is `z = x + τ y` with lattice
//!   coordinates `(x, y) ∈ [0, 1)²`.
//! * The global frame of `L` has `|1|²_h = e^{-2φ₀}`,
//!   `φ₀(z) = π d (Im z)² / Im τ`. Up to a pluriharmonic term this is
//!   `λ |z|²` with `λ = π d / (2 Im τ)`.
//! * `R^L = 2∂∂̄φ`, so the eigenvalue of `Ṙ^L` on `∂/∂z` is `2λ`.
//! * `⟨∂/∂z | ∂/∂z⟩ = 1`, hence the Riemannian metric is twice the Euclidean
//!   one and `dV_M` is twice the Euclidean area element on every factor.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Metric constants shared by every downstream formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricFrame {
    /// Ratio of `dV_M` to the Euclidean area element, per factor.
    pub volume_normalization: f64,
    /// Ratio of `g`-lengths to Euclidean lengths in the `z` plane.
    pub length_scale: f64,
    /// Pointwise norm of `dz̄_1 ∧ … ∧ dz̄_q`.
    pub form_frame_norm: f64,
}

impl MetricFrame {
    pub const STANDARD: MetricFrame = MetricFrame {
        volume_normalization: 2.0,
        length_scale: std::f64::consts::SQRT_2,
        form_frame_norm: 1.0,
    };

    /// The real metric `g = (⟨·,·⟩ + conj)/2` on one factor, in the real
    /// coordinates `(Re z, Im z)`.
    pub fn riemannian_g(&self) -> [[f64; 2]; 2] {
        let s = self.length_scale * self.length_scale;
        [[s, 0.0], [0.0, s]]
    }
}

impl Default for MetricFrame {
    fn default() -> Self {
        Self::STANDARD
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusFactor {
    tau: Complex64,
    degree: i32,
}

impl TorusFactor {
    pub fn new(tau: Complex64, degree: i32) -> Result<Self> {
        if !(tau.im > 0.0) {
            return Err(Error::NonPositiveImTau(tau.im));
        }
        if degree == 0 {
            return Err(Error::ZeroDegree);
        }
        Ok(Self { tau, degree })
    }

    pub fn tau(&self) -> Complex64 {
        self.tau
    }

    pub fn degree(&self) -> i32 {
        self.degree
    }

    /// `λ = π d / (2 Im τ)`; carries the sign of the degree.
    pub fn weight_scale(&self) -> f64 {
        PI * f64::from(self.degree) / (2.0 * self.tau.im)
    }

    /// Eigenvalue of `Ṙ^L` along this factor.
    pub fn curvature_eigenvalue(&self) -> f64 {
        2.0 * self.weight_scale()
    }

    /// Euclidean area of the fundamental domain.
    pub fn area(&self) -> f64 {
        self.tau.im
    }

    pub fn point(&self, lattice: [f64; 2]) -> Complex64 {
        Complex64::new(lattice[0], 0.0) + self.tau * lattice[1]
    }

    pub fn lattice_coords(&self, z: Complex64) -> [f64; 2] {
        let y = z.im / self.tau.im;
        [z.re - y * self.tau.re, y]
    }

    pub fn reduce(&self, z: Complex64) -> Complex64 {
        let [x, y] = self.lattice_coords(z);
        self.point([x.rem_euclid(1.0), y.rem_euclid(1.0)])
    }

    /// Global weight `φ₀(z) = π d (Im z)² / Im τ` of `L` (not of `L^k`).
    pub fn weight(&self, z: Complex64) -> f64 {
        PI * f64::from(self.degree) * z.im * z.im / self.tau.im
    }

    /// `ω = (i/2π) R^L` restricted to this factor, as the coefficient of
    /// `d(Re z) ∧ d(Im z)`.
    pub fn omega_coefficient(&self) -> f64 {
        2.0 * self.weight_scale() / PI
    }

    /// Uniform `n × n` grid in lattice coordinates, offset by half a cell
    /// from the origin. Row-major in `y`, then `x`.
    pub fn grid(&self, n: usize) -> Vec<Complex64> {
        let step = 1.0 / n as f64;
        (0..n)
            .flat_map(|b| (0..n).map(move |a| [(a as f64 + 0.5) * step, (b as f64 + 0.5) * step]))
            .map(|c| self.point(c))
            .collect()
    }

    /// Shortest Euclidean displacement between two points of the factor,
    /// searched over the nine nearest lattice translates.
    pub fn min_displacement(&self, a: Complex64, b: Complex64) -> Complex64 {
        let [dx, dy] = self.lattice_coords(b - a);
        let base = [dx - dx.round(), dy - dy.round()];
        let mut best = self.point(base);
        for i in -1..=1 {
            for j in -1..=1 {
                let cand = self.point([base[0] + f64::from(i), base[1] + f64::from(j)]);
                if cand.norm() < best.norm() {
                    best = cand;
                }
            }
        }
        best
    }
}

/// A point of `M`, stored as lattice coordinates per factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    coords: Vec<[f64; 2]>,
}

impl Point {
    pub fn new(coords: Vec<[f64; 2]>) -> Self {
        Self { coords }
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn reduced(&self) -> Self {
        Self {
            coords: self
                .coords
                .iter()
                .map(|c| [c[0].rem_euclid(1.0), c[1].rem_euclid(1.0)])
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductModel {
    factors: Vec<TorusFactor>,
    n_minus: usize,
    frame: MetricFrame,
}

impl ProductModel {
    /// Builds a model, reordering factors so that negative degrees come first.
    /// The relative order inside each sign class is preserved.
    pub fn new(factors: Vec<TorusFactor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::EmptyModel);
        }
        let (mut neg, pos): (Vec<_>, Vec<_>) = factors.into_iter().partition(|f| f.degree < 0);
        let n_minus = neg.len();
        neg.extend(pos);
        Ok(Self {
            factors: neg,
            n_minus,
            frame: MetricFrame::STANDARD,
        })
    }

    /// Convenience constructor from `(tau, degree)` pairs.
    pub fn from_specs(specs: &[(Complex64, i32)]) -> Result<Self> {
        let factors = specs
            .iter()
            .map(|&(tau, d)| TorusFactor::new(tau, d))
            .collect::<Result<Vec<_>>>()?;
        Self::new(factors)
    }

    /// Square tori (`τ = i`) with the given degrees.
    pub fn square(degrees: &[i32]) -> Result<Self> {
        let specs: Vec<_> = degrees.iter().map(|&d| (Complex64::i(), d)).collect();
        Self::from_specs(&specs)
    }

    pub fn factors(&self) -> &[TorusFactor] {
        &self.factors
    }

    pub fn factor(&self, i: usize) -> &TorusFactor {
        &self.factors[i]
    }

    pub fn frame(&self) -> &MetricFrame {
        &self.frame
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn n_minus(&self) -> usize {
        self.n_minus
    }

    pub fn n_plus(&self) -> usize {
        self.dim() - self.n_minus
    }

    /// The distinguished multi-index `J₀ = (1, …, n₋)`, one-based.
    pub fn j0(&self) -> Vec<usize> {
        (1..=self.n_minus).collect()
    }

    /// Diagonal matrix of `Ṙ^L` eigenvalues in the coordinate frame.
    pub fn curvature_matrix(&self) -> DMatrix<f64> {
        self.curvature_matrix_power(1)
    }

    /// Same for `L^{⊗k}`.
    pub fn curvature_matrix_power(&self, k: u32) -> DMatrix<f64> {
        let diag: Vec<f64> = self
            .factors
            .iter()
            .map(|f| f64::from(k) * f.curvature_eigenvalue())
            .collect();
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag))
    }

    /// Counts of negative and positive curvature eigenvalues.
    pub fn signature(&self) -> (usize, usize) {
        let r = self.curvature_matrix();
        let neg = r.diagonal().iter().filter(|&&v| v < 0.0).count();
        (neg, self.dim() - neg)
    }

    /// `(2π)^{-n} |det Ṙ^L|`.
    pub fn b0(&self) -> f64 {
        self.factors
            .iter()
            .map(|f| f.curvature_eigenvalue().abs() / (2.0 * PI))
            .product()
    }

    /// `dim H^{n₋}(M, L^k) = k^n Π |d_j|`.
    pub fn section_count(&self, k: u32) -> usize {
        self.factors
            .iter()
            .map(|f| k as usize * f.degree.unsigned_abs() as usize)
            .product()
    }

    /// Volume of `M` with respect to `dV_M`.
    pub fn volume(&self) -> f64 {
        self.factors
            .iter()
            .map(|f| self.frame.volume_normalization * f.area())
            .product()
    }

    /// Real components of `ω` in the coordinates
    /// `(Re z_1, Im z_1, …, Re z_n, Im z_n)`. Constant in the point.
    pub fn omega(&self, _z: &Point) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for (j, f) in self.factors.iter().enumerate() {
            let c = f.omega_coefficient();
            m[(2 * j, 2 * j + 1)] = c;
            m[(2 * j + 1, 2 * j)] = -c;
        }
        m
    }

    pub fn to_complex(&self, p: &Point) -> Vec<Complex64> {
        self.factors
            .iter()
            .zip(p.coords())
            .map(|(f, &c)| f.point(c))
            .collect()
    }

    pub fn from_complex(&self, z: &[Complex64]) -> Point {
        Point::new(
            self.factors
                .iter()
                .zip(z)
                .map(|(f, &zj)| f.lattice_coords(zj))
                .collect(),
        )
    }

    /// Geodesic distance under the flat metric `g`.
    pub fn distance(&self, x: &Point, y: &Point) -> f64 {
        let zx = self.to_complex(x);
        let zy = self.to_complex(y);
        let sq: f64 = self
            .factors
            .iter()
            .zip(zx.iter().zip(&zy))
            .map(|(f, (&a, &b))| f.min_displacement(a, b).norm_sqr())
            .sum();
        self.frame.length_scale * sq.sqrt()
    }

    pub fn normal_chart(&self, p: &Point) -> NormalChart {
        NormalChart {
            factors: self.factors.clone(),
            base: self.to_complex(p),
            basepoint: p.clone(),
        }
    }
}

/// Affine holomorphic chart `w = z - z(p)` with the frame `s_p = e^{H_p} s`
/// in which the weight of `L` is exactly `Σ λ_j |w_j|²`.
///
/// Per factor `H_p(w) = φ₀(p) - i (2π d / Im τ) Im(p) w - λ w²`, a
/// holomorphic function with `Re H_p = φ₀(p + w) - λ|w|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalChart {
    factors: Vec<TorusFactor>,
    base: Vec<Complex64>,
    basepoint: Point,
}

impl NormalChart {
    pub fn basepoint(&self) -> &Point {
        &self.basepoint
    }

    /// Complex coordinates of the base point (unreduced lift).
    pub fn base(&self) -> &[Complex64] {
        &self.base
    }

    pub fn factors(&self) -> &[TorusFactor] {
        &self.factors
    }

    pub fn lambda(&self) -> Vec<f64> {
        self.factors.iter().map(TorusFactor::weight_scale).collect()
    }

    /// Absolute coordinates of the chart point `w`.
    pub fn absolute(&self, w: &[Complex64]) -> Vec<Complex64> {
        self.base.iter().zip(w).map(|(b, w)| b + w).collect()
    }

    /// The weight `Σ λ_j |w_j|²` of `L` in the chart frame.
    pub fn weight(&self, w: &[Complex64]) -> f64 {
        self.factors
            .iter()
            .zip(w)
            .map(|(f, w)| f.weight_scale() * w.norm_sqr())
            .sum()
    }

    /// Gauge function of one factor: `s_p = e^{H} s` on that factor.
    pub fn factor_gauge(&self, j: usize, w: Complex64) -> Complex64 {
        let f = &self.factors[j];
        let p = self.base[j];
        let lam = f.weight_scale();
        let lin = 2.0 * PI * f64::from(f.degree) * p.im / f.tau.im;
        Complex64::new(f.weight(p), 0.0) - Complex64::i() * lin * w - lam * w * w
    }

    /// Total gauge function `H_p(w) = Σ_j H_{p,j}(w_j)`.
    pub fn gauge(&self, w: &[Complex64]) -> Complex64 {
        w.iter()
            .enumerate()
            .map(|(j, &wj)| self.factor_gauge(j, wj))
            .sum()
    }

    /// Multiplier taking a unit-weighted value `f e^{-kφ₀}` at `p + w` on
    /// factor `j` to the chart-frame coefficient `f e^{-kH}`:
    /// `e^{kλ|w|²} · e^{-ik Im H(w)}`.
    pub fn factor_chart_multiplier(&self, j: usize, k: u32, w: Complex64) -> Complex64 {
        let kf = f64::from(k);
        let lam = self.factors[j].weight_scale();
        let h = self.factor_gauge(j, w);
        Complex64::from_polar((kf * lam * w.norm_sqr()).exp(), -kf * h.im)
    }

    /// Unimodular part of [`Self::factor_chart_multiplier`]; relates
    /// unit-weighted values to the localized kernel `P_{k,s}`.
    pub fn factor_phase(&self, j: usize, k: u32, w: Complex64) -> Complex64 {
        let h = self.factor_gauge(j, w);
        Complex64::from_polar(1.0, -f64::from(k) * h.im)
    }

    /// First derivatives `(∂_w, ∂_w̄)` of the multiplier at `w = 0`.
    pub fn factor_multiplier_derivative(&self, j: usize, k: u32) -> (Complex64, Complex64) {
        let f = &self.factors[j];
        let g =
            Complex64::i() * (f64::from(k) * PI * f64::from(f.degree) * self.base[j].im / f.tau.im);
        (g, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sq(d: i32) -> TorusFactor {
        TorusFactor::new(Complex64::i(), d).unwrap()
    }

    #[test]
    fn curvature_single_factor() {
        let m = ProductModel::new(vec![sq(1)]).unwrap();
        let r = m.curvature_matrix();
        assert!((sq(1).weight_scale() - PI / 2.0).abs() < 1e-15);
        assert!((r[(0, 0)] - PI).abs() < 1e-15);
        let m = ProductModel::new(vec![sq(-1)]).unwrap();
        assert!((m.curvature_matrix()[(0, 0)] + PI).abs() < 1e-15);
    }

    #[test]
    fn curvature_from_weight_hessian() {
        // R^L = 2 ∂∂̄ φ₀; ∂∂̄ = Δ/4 on a function of (Re z, Im z).
        let f = TorusFactor::new(Complex64::new(0.3, 1.7), 3).unwrap();
        let h = 1e-3;
        let z = Complex64::new(0.2, 0.4);
        let phi = |z: Complex64| f.weight(z);
        let lap =
            (phi(z + h) + phi(z - h) + phi(z + Complex64::i() * h) + phi(z - Complex64::i() * h)
                - 4.0 * phi(z))
                / (h * h);
        let eig = 2.0 * lap / 4.0;
        assert!((eig - f.curvature_eigenvalue()).abs() < 1e-6);
    }

    #[test]
    fn product_is_blockwise_and_sorted() {
        let m = ProductModel::new(vec![sq(1), sq(-1)]).unwrap();
        assert_eq!(m.factor(0).degree(), -1);
        let r = m.curvature_matrix();
        assert!((r[(0, 0)] + PI).abs() < 1e-15);
        assert!((r[(1, 1)] - PI).abs() < 1e-15);
        assert_eq!(r[(0, 1)], 0.0);
        assert_eq!(m.j0(), vec![1]);
    }

    #[test]
    fn signatures() {
        assert_eq!(ProductModel::square(&[-1]).unwrap().signature(), (1, 0));
        assert_eq!(ProductModel::square(&[-1, 2]).unwrap().signature(), (1, 1));
        assert_eq!(ProductModel::square(&[3]).unwrap().signature(), (0, 1));
        assert_eq!(
            TorusFactor::new(Complex64::i(), 0).unwrap_err(),
            Error::ZeroDegree
        );
        assert!(TorusFactor::new(Complex64::new(0.0, -1.0), 1).is_err());
    }

    #[test]
    fn signature_invariant_under_permutation() {
        let a = ProductModel::square(&[2, -1, 1, -3]).unwrap();
        let b = ProductModel::square(&[-3, 1, -1, 2]).unwrap();
        assert_eq!(a.signature(), (2, 2));
        assert_eq!(a.signature(), b.signature());
        assert!(a.factors()[..2].iter().all(|f| f.degree() < 0));
    }

    #[test]
    fn omega_integrates_to_degree() {
        for (tau, d) in [(Complex64::i(), 1), (Complex64::new(0.4, 0.8), -3)] {
            let f = TorusFactor::new(tau, d).unwrap();
            let m = ProductModel::new(vec![f]).unwrap();
            let w = m.omega(&Point::new(vec![[0.1, 0.2]]));
            // ∫ c dx∧dy over the fundamental domain, Euclidean area Im τ.
            let integral = w[(0, 1)] * f.area();
            assert!((integral - f64::from(d)).abs() < 1e-14);
        }
    }

    #[test]
    fn omega_sign_flip_and_direct_sum() {
        let p = Point::new(vec![[0.0, 0.0], [0.5, 0.5]]);
        let a = ProductModel::square(&[-2, 1]).unwrap().omega(&p);
        let b = ProductModel::square(&[2, -1]).unwrap();
        // Not literally the same model after sorting, so compare blocks.
        let b1 = ProductModel::square(&[2])
            .unwrap()
            .omega(&Point::new(vec![[0.0; 2]]));
        assert!((a[(0, 1)] + b1[(0, 1)]).abs() < 1e-15);
        assert_eq!(a[(0, 2)], 0.0);
        assert_eq!(b.signature(), (1, 1));
        // Closed and non-degenerate: constant coefficients, nonzero det.
        assert!(a.determinant().abs() > 0.0);
    }

    #[test]
    fn tensor_power_scaling() {
        let m = ProductModel::square(&[-1, 2]).unwrap();
        let r1 = m.curvature_matrix();
        let r5 = m.curvature_matrix_power(5);
        assert!((r5 - r1 * 5.0).norm() < 1e-13);
    }

    #[test]
    fn distance_cases() {
        let m = ProductModel::square(&[1]).unwrap();
        let o = Point::new(vec![[0.0, 0.0]]);
        let h = Point::new(vec![[0.5, 0.0]]);
        assert_eq!(m.distance(&o, &o), 0.0);
        // Brute force over nine translates, scaled by the metric.
        let f = m.factor(0);
        let mut best = f64::INFINITY;
        for i in -1..=1 {
            for j in -1..=1 {
                let d = (f.point([0.5 + f64::from(i), f64::from(j)])).norm();
                best = best.min(d);
            }
        }
        assert!((m.distance(&o, &h) - best * m.frame().length_scale).abs() < 1e-15);
        assert!((m.distance(&o, &h) - 0.5 * std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn distance_symmetric_and_triangle() {
        let m = ProductModel::from_specs(&[(Complex64::new(0.3, 0.9), -1), (Complex64::i(), 2)])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pt = || Point::new((0..2).map(|_| [rng.random(), rng.random()]).collect());
        for _ in 0..200 {
            let (a, b, c) = (pt(), pt(), pt());
            assert_eq!(m.distance(&a, &b), m.distance(&b, &a));
            assert!(m.distance(&a, &c) <= m.distance(&a, &b) + m.distance(&b, &c) + 1e-12);
        }
    }

    #[test]
    fn riemannian_g_is_twice_euclidean() {
        let g = MetricFrame::STANDARD.riemannian_g();
        assert!((g[0][0] - 2.0).abs() < 1e-15 && g[0][1] == 0.0);
    }

    #[test]
    fn normal_chart_weight_and_gauge() {
        let m = ProductModel::from_specs(&[(Complex64::new(0.2, 1.1), -1), (Complex64::i(), 2)])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Point::new(vec![[0.3, 0.7], [0.6, 0.2]]);
        let chart = m.normal_chart(&p);
        assert_eq!(chart.weight(&[Complex64::new(0.0, 0.0); 2]), 0.0);
        // Origin chart: gauge is the pure quadratic -λw², no constant/linear part.
        let o = m.normal_chart(&Point::new(vec![[0.0, 0.0], [0.0, 0.0]]));
        let w = Complex64::new(0.1, 0.05);
        let lam = m.factor(0).weight_scale();
        assert!((o.factor_gauge(0, w) + lam * w * w).norm() < 1e-15);
        // Re H_p(w) = φ₀(p+w) - λ|w|² on each factor.
        for _ in 0..50 {
            let w: Vec<Complex64> = (0..2)
                .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let abs = chart.absolute(&w);
            for j in 0..2 {
                let f = m.factor(j);
                let lhs = chart.factor_gauge(j, w[j]).re;
                let rhs = f.weight(abs[j]) - f.weight_scale() * w[j].norm_sqr();
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reduce_and_lattice_roundtrip() {
        let f = TorusFactor::new(Complex64::new(0.5, 0.8), 1).unwrap();
        let z = f.point([2.3, -1.4]);
        let r = f.lattice_coords(f.reduce(z));
        assert!((r[0] - 0.3).abs() < 1e-12 && (r[1] - 0.6).abs() < 1e-12);
    }
}
