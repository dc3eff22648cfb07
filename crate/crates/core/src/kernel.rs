//! Bergman projector kernel, diagonal density and the Gaussian phase model.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{fit_linear, strictly_decreasing, top_half, LinearFit, MIN_FIT_SAMPLES};
use crate::harmonic::{decode_index, HarmonicBasis};
use crate::model::{NormalChart, Point, ProductModel};

type C64 = Complex64;

/// `P_{k,J₀,J₀}(x, y)` in the global theta frame, with the unimodular gauge
/// factors that transport it to a normal-chart frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSample {
    pub x: Vec<C64>,
    pub y: Vec<C64>,
    pub k: u32,
    /// `Σ_j u_j(x) conj(u_j(y))` with unit-weighted values `u_j`.
    pub value: C64,
    pub gauge_x: C64,
    pub gauge_y: C64,
}

impl KernelSample {
    /// The value in the frame carrying the gauge factors.
    pub fn localized(&self) -> C64 {
        self.gauge_x * self.value * self.gauge_y.conj()
    }
}

/// `Σ_j a_j conj(b_j)`.
fn hermitian_dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

/// Kernel scalar between two absolute (unreduced) coordinate vectors.
pub fn kernel_value(basis: &HarmonicBasis, x: &[C64], y: &[C64]) -> C64 {
    match basis.mix() {
        None => basis
            .factor_bases()
            .iter()
            .enumerate()
            .map(|(i, fb)| hermitian_dot(&fb.values(x[i]), &fb.values(y[i])))
            .product(),
        Some(_) => hermitian_dot(&basis.values(x), &basis.values(y)),
    }
}

pub fn kernel(basis: &HarmonicBasis, x: &Point, y: &Point) -> KernelSample {
    let model = basis.model();
    let zx = model.to_complex(x);
    let zy = model.to_complex(y);
    let one = C64::new(1.0, 0.0);
    KernelSample {
        value: kernel_value(basis, &zx, &zy),
        x: zx,
        y: zy,
        k: basis.k(),
        gauge_x: one,
        gauge_y: one,
    }
}

/// Kernel between chart points `w_x`, `w_y`, carrying the frame change to
/// the chart frame `s_p`.
pub fn kernel_in_chart(
    basis: &HarmonicBasis,
    chart: &NormalChart,
    wx: &[C64],
    wy: &[C64],
) -> KernelSample {
    let k = basis.k();
    let phase = |w: &[C64]| -> C64 {
        w.iter()
            .enumerate()
            .map(|(j, &wj)| chart.factor_phase(j, k, wj))
            .product()
    };
    let zx = chart.absolute(wx);
    let zy = chart.absolute(wy);
    KernelSample {
        value: kernel_value(basis, &zx, &zy),
        gauge_x: phase(wx),
        gauge_y: phase(wy),
        x: zx,
        y: zy,
        k,
    }
}

/// Density of states `Σ_j |S_{j,J₀}(z)|²` at an absolute coordinate vector.
pub fn density_at(basis: &HarmonicBasis, z: &[C64]) -> f64 {
    match basis.mix() {
        None => basis
            .factor_bases()
            .iter()
            .zip(z)
            .map(|(fb, &zj)| fb.values(zj).iter().map(C64::norm_sqr).sum::<f64>())
            .product(),
        Some(_) => basis.values(z).iter().map(C64::norm_sqr).sum(),
    }
}

pub fn density(basis: &HarmonicBasis, z: &Point) -> f64 {
    density_at(basis, &basis.model().to_complex(z))
}

/// All points of the product grid with `n` points per real dimension,
/// lexicographic with the first factor slowest.
pub fn product_grid(model: &ProductModel, n: usize) -> Vec<Vec<C64>> {
    let grids: Vec<Vec<C64>> = model.factors().iter().map(|f| f.grid(n)).collect();
    let sizes: Vec<usize> = grids.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().product();
    (0..total)
        .map(|idx| {
            decode_index(idx, &sizes)
                .iter()
                .zip(&grids)
                .map(|(&i, g)| g[i])
                .collect()
        })
        .collect()
}

/// `∫ density dV` by the trapezoidal rule; equals the number of sections
/// for a complete orthonormal basis.
pub fn trace(basis: &HarmonicBasis, grid_n: usize) -> f64 {
    let model = basis.model();
    match basis.mix() {
        None => basis
            .factor_bases()
            .iter()
            .map(|fb| {
                let f = fb.set.factor();
                let pts = f.grid(grid_n);
                let s: f64 = pts
                    .iter()
                    .map(|&z| fb.values(z).iter().map(C64::norm_sqr).sum::<f64>())
                    .sum();
                s * model.frame().volume_normalization * f.area() / pts.len() as f64
            })
            .product(),
        Some(_) => {
            let pts = product_grid(model, grid_n);
            let vals: Vec<f64> = pts.par_iter().map(|z| density_at(basis, z)).collect();
            vals.iter().sum::<f64>() * model.volume() / pts.len() as f64
        }
    }
}

/// `⟨f, S_j⟩` for every basis section, by quadrature on the product grid.
/// `f` receives absolute coordinates and returns a unit-weighted value.
pub fn projection_coefficients(
    basis: &HarmonicBasis,
    grid_n: usize,
    f: &(dyn Fn(&[C64]) -> C64 + Sync),
) -> Vec<C64> {
    let model = basis.model();
    let pts = product_grid(model, grid_n);
    let len = basis.len();
    let parts: Vec<Vec<C64>> = pts
        .par_iter()
        .map(|z| {
            let fz = f(z);
            basis.values(z).iter().map(|s| fz * s.conj()).collect()
        })
        .collect();
    let cell = model.volume() / pts.len() as f64;
    let mut out = vec![C64::new(0.0, 0.0); len];
    for p in parts {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out.into_iter().map(|c| c * cell).collect()
}

/// `(P f)(z) = Σ_j ⟨f, S_j⟩ S_j(z)` from precomputed coefficients.
pub fn apply_projection(basis: &HarmonicBasis, coeffs: &[C64], z: &[C64]) -> C64 {
    basis.values(z).iter().zip(coeffs).map(|(s, c)| c * s).sum()
}

/// `‖P(P f) - P f‖ / ‖P f‖` in coefficient space, both projections by
/// quadrature at resolution `grid_n`.
pub fn idempotence_defect(
    basis: &HarmonicBasis,
    grid_n: usize,
    f: &(dyn Fn(&[C64]) -> C64 + Sync),
) -> f64 {
    let once = projection_coefficients(basis, grid_n, f);
    let pf = |z: &[C64]| apply_projection(basis, &once, z);
    let twice = projection_coefficients(basis, grid_n, &pf);
    let num: f64 = once
        .iter()
        .zip(&twice)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    let den: f64 = once.iter().map(C64::norm_sqr).sum();
    (num / den).sqrt()
}

/// Largest `|∫ P(x, y) g(y) dV(y) - g(x)| / max|g|` over the points `xs`,
/// where `g` is a unit-weighted form on the same bundle. Zero up to
/// quadrature error exactly when `g` lies in the range of `P`.
pub fn reproducing_defect(
    basis: &HarmonicBasis,
    grid_n: usize,
    g: &(dyn Fn(&[C64]) -> C64 + Sync),
    xs: &[Vec<C64>],
) -> f64 {
    let coeffs = projection_coefficients(basis, grid_n, g);
    let scale = xs.iter().map(|x| g(x).norm()).fold(0.0, f64::max);
    xs.iter()
        .map(|x| (apply_projection(basis, &coeffs, x) - g(x)).norm())
        .fold(0.0, f64::max)
        / scale
}

/// Leading-order model of the localized kernel in a normal chart:
/// `P_{k,s}(z, w) ≈ b₀ kⁿ e^{ikΨ(z, w)}` with the quadratic phase
/// `Ψ(z, w) = i Σ|λ_j||z_j - w_j|² + i Σ λ_j (z̄_j w_j - z_j w̄_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionModel {
    pub b0: f64,
    pub lambda: Vec<f64>,
    /// Best constant in `Im Ψ(z, w) ≥ c |z - w|²`.
    pub c_lower: f64,
    pub chart: NormalChart,
}

impl ExpansionModel {
    pub fn psi(&self, z: &[C64], w: &[C64]) -> C64 {
        let i = C64::i();
        self.lambda
            .iter()
            .zip(z.iter().zip(w))
            .map(|(&l, (&a, &b))| {
                i * l.abs() * (a - b).norm_sqr() + i * l * (a.conj() * b - a * b.conj())
            })
            .sum()
    }

    pub fn leading(&self, k: u32) -> f64 {
        self.b0 * f64::from(k).powi(self.lambda.len() as i32)
    }

    pub fn kernel(&self, k: u32, z: &[C64], w: &[C64]) -> C64 {
        self.leading(k) * (C64::i() * f64::from(k) * self.psi(z, w)).exp()
    }
}

pub fn expansion_model(model: &ProductModel, p: &Point) -> ExpansionModel {
    let chart = model.normal_chart(p);
    let lambda = chart.lambda();
    let c_lower = lambda.iter().map(|l| l.abs()).fold(f64::INFINITY, f64::min);
    ExpansionModel {
        b0: model.b0(),
        lambda,
        c_lower,
        chart,
    }
}

/// Normal chart centred at the midpoint of the shortest segment from `y` to
/// `x`, with the chart coordinates of both points.
pub fn midpoint_chart(
    model: &ProductModel,
    x: &Point,
    y: &Point,
) -> (NormalChart, Vec<C64>, Vec<C64>) {
    let zx = model.to_complex(x);
    let zy = model.to_complex(y);
    let d: Vec<C64> = model
        .factors()
        .iter()
        .zip(zx.iter().zip(&zy))
        .map(|(f, (&a, &b))| f.min_displacement(b, a))
        .collect();
    let mid: Vec<C64> = zy.iter().zip(&d).map(|(b, d)| b + d * 0.5).collect();
    let chart = model.normal_chart(&model.from_complex(&mid));
    let wx = d.iter().map(|d| d * 0.5).collect();
    let wy = d.iter().map(|d| -d * 0.5).collect();
    (chart, wx, wy)
}

/// Euclidean chart separation `|x - y|` (shortest representative).
pub fn chart_separation(model: &ProductModel, x: &Point, y: &Point) -> f64 {
    let (_, wx, wy) = midpoint_chart(model, x, y);
    wx.iter()
        .zip(&wy)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffDiagonalSample {
    pub k: u32,
    /// `ln(|P(x,y)|² / (P(x,x) P(y,y)))`.
    pub log_ratio: f64,
    /// `-2k Im Ψ(x, y)`.
    pub model_log_ratio: f64,
    /// `arg P_{k,s}(x, y)` in the midpoint chart.
    pub phase: f64,
    /// `k Re Ψ(x, y)`.
    pub model_phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffDiagonalFit {
    pub separation: f64,
    pub samples: Vec<OffDiagonalSample>,
    pub fit: LinearFit,
    /// Fitted decay constant: `-d/dk` of the log ratio.
    pub c_fit: f64,
    /// `2 Im Ψ(x, y)`.
    pub c_model: f64,
    pub relative_deviation: f64,
    /// Largest `|arg P_{k,s} - k Re Ψ|` modulo `2π`.
    pub max_phase_deviation: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    a - t * (a / t).round()
}

/// Fit `ln(|P_k(x,y)|²/(P_k(x,x)P_k(y,y))) ≈ -c k + const` over the bases
/// (one per ladder value) and compare with the phase model.
pub fn offdiagonal_fit(bases: &[HarmonicBasis], x: &Point, y: &Point) -> Result<OffDiagonalFit> {
    if bases.len() < MIN_FIT_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_FIT_SAMPLES,
            got: bases.len(),
        });
    }
    let model = bases[0].model();
    let (chart, wx, wy) = midpoint_chart(model, x, y);
    let em = expansion_model(model, chart.basepoint());
    let psi = em.psi(&wx, &wy);
    let samples = bases
        .iter()
        .map(|b| {
            let k = b.k();
            let s = kernel_in_chart(b, &chart, &wx, &wy);
            let dx = density_at(b, &s.x);
            let dy = density_at(b, &s.y);
            let num = s.value.norm_sqr();
            if !(num > 0.0) || !(dx > 0.0) || !(dy > 0.0) {
                return Err(Error::Underflow { k });
            }
            let kf = f64::from(k);
            Ok(OffDiagonalSample {
                k,
                log_ratio: num.ln() - dx.ln() - dy.ln(),
                model_log_ratio: -2.0 * kf * psi.im,
                phase: s.localized().arg(),
                model_phase: kf * psi.re,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ks: Vec<f64> = samples.iter().map(|s| f64::from(s.k)).collect();
    let lr: Vec<f64> = samples.iter().map(|s| s.log_ratio).collect();
    let fit = fit_linear(&ks, &lr)?;
    let c_fit = -fit.slope;
    let c_model = 2.0 * psi.im;
    let relative_deviation = if c_model > 0.0 {
        (c_fit - c_model).abs() / c_model
    } else {
        c_fit.abs()
    };
    let max_phase_deviation = samples
        .iter()
        .map(|s| wrap_angle(s.phase - s.model_phase).abs())
        .fold(0.0, f64::max);
    Ok(OffDiagonalFit {
        separation: chart_separation(model, x, y),
        samples,
        fit,
        c_fit,
        c_model,
        relative_deviation,
        max_phase_deviation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FarReport {
    pub separation: f64,
    /// `(k, |P_k(x, y)|)` over the ladder.
    pub samples: Vec<(u32, f64)>,
    /// Fit of `ln|P_k|` against `k` on the top half of the ladder.
    pub fit: Option<LinearFit>,
    pub gamma: f64,
    /// For each damping power `N`, whether `k^N |P_k|` strictly decreases
    /// over the top half of the ladder.
    pub monotone: Vec<(u32, bool)>,
    /// First ladder value where `|P_k|` left the normal floating range.
    pub underflow: Option<u32>,
    pub pass: bool,
}

pub const FAR_DAMPING_POWERS: [u32; 4] = [1, 2, 4, 8];

/// Rapid-decay check of `|P_k(x, y)|` at a large separation.
pub fn far_separation_check(bases: &[HarmonicBasis], x: &Point, y: &Point) -> Result<FarReport> {
    if bases.len() < MIN_FIT_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_FIT_SAMPLES,
            got: bases.len(),
        });
    }
    let model = bases[0].model();
    let samples: Vec<(u32, f64)> = bases
        .iter()
        .map(|b| (b.k(), kernel(b, x, y).value.norm()))
        .collect();
    let underflow = samples
        .iter()
        .find(|(_, v)| !(*v >= f64::MIN_POSITIVE))
        .map(|(k, _)| *k);
    let top = top_half(&samples);
    let (fit, gamma, monotone) = if underflow.is_some() {
        (
            None,
            f64::INFINITY,
            FAR_DAMPING_POWERS.iter().map(|&n| (n, true)).collect(),
        )
    } else {
        let ks: Vec<f64> = top.iter().map(|s| f64::from(s.0)).collect();
        let lv: Vec<f64> = top.iter().map(|s| s.1.ln()).collect();
        let fit = fit_linear(&ks, &lv)?;
        let monotone: Vec<(u32, bool)> = FAR_DAMPING_POWERS
            .iter()
            .map(|&n| {
                let damped: Vec<f64> = top
                    .iter()
                    .map(|&(k, v)| f64::from(k).powi(n as i32) * v)
                    .collect();
                (n, strictly_decreasing(&damped))
            })
            .collect();
        (Some(fit), -fit.slope, monotone)
    };
    let pass =
        underflow.is_some() || (gamma > 0.0 && monotone.iter().all(|(_, ok): &(u32, bool)| *ok));
    Ok(FarReport {
        separation: chart_separation(model, x, y),
        samples,
        fit,
        gamma,
        monotone,
        underflow,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioProfile {
    pub k: u32,
    pub t: Vec<f64>,
    /// `f_k(t) = |P(x_t, y)|² / (P(x_t, x_t) P(y, y))`, `x_t = t x + (1-t) y`.
    pub values: Vec<f64>,
    /// `e^{-2k Im Ψ(x_t, y)}`.
    pub model: Vec<f64>,
}

impl RatioProfile {
    pub fn max_model_deviation(&self, lo: f64, hi: f64) -> f64 {
        self.t
            .iter()
            .zip(self.values.iter().zip(&self.model))
            .filter(|(t, _)| **t > lo && **t < hi)
            .map(|(_, (v, m))| (v - m).abs() / m)
            .fold(0.0, f64::max)
    }
}

/// Samples `f_k` along the chart segment from `y` (`t = 0`) to `x` (`t = 1`).
pub fn ratio_profile(basis: &HarmonicBasis, x: &Point, y: &Point, ts: &[f64]) -> RatioProfile {
    let model = basis.model();
    let (chart, wx, wy) = midpoint_chart(model, x, y);
    let em = expansion_model(model, chart.basepoint());
    let zy = chart.absolute(&wy);
    let vy = basis.values(&zy);
    let dy: f64 = vy.iter().map(C64::norm_sqr).sum();
    let kf = f64::from(basis.k());
    let (values, model_vals): (Vec<f64>, Vec<f64>) = ts
        .par_iter()
        .map(|&t| {
            let wt: Vec<C64> = wx
                .iter()
                .zip(&wy)
                .map(|(a, b)| a * t + b * (1.0 - t))
                .collect();
            let vt = basis.values(&chart.absolute(&wt));
            let dt: f64 = vt.iter().map(C64::norm_sqr).sum();
            let p = hermitian_dot(&vt, &vy).norm_sqr();
            (p / (dt * dy), (-2.0 * kf * em.psi(&wt, &wy).im).exp())
        })
        .unzip();
    RatioProfile {
        k: basis.k(),
        t: ts.to_vec(),
        values,
        model: model_vals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic::DEFAULT_THETA_EPS;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn basis(degrees: &[i32], k: u32) -> HarmonicBasis {
        HarmonicBasis::build_default(&ProductModel::square(degrees).unwrap(), k).unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng, n: usize) -> Point {
        Point::new((0..n).map(|_| [rng.random(), rng.random()]).collect())
    }

    #[test]
    fn diagonal_is_real_nonnegative_and_hermitian() {
        let b = basis(&[-1, 1], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = random_point(&mut rng, 2);
            let y = random_point(&mut rng, 2);
            let d = kernel(&b, &x, &x).value;
            assert!(d.re > 0.0 && d.im.abs() < 1e-14 * d.re);
            let a = kernel(&b, &x, &y).value;
            let c = kernel(&b, &y, &x).value;
            assert!((a - c.conj()).norm() < 1e-13);
        }
    }

    #[test]
    fn trace_counts_sections() {
        for (deg, k) in [(vec![-1], 5), (vec![-2], 3), (vec![-1, 2], 2)] {
            let b = basis(&deg, k);
            let expected = b.model().section_count(k) as f64;
            let tr = trace(&b, b.resolution());
            assert!((tr - expected).abs() < 1e-8 * expected, "{tr} {expected}");
        }
    }

    #[test]
    fn density_is_translation_invariant_and_calibrated() {
        let b = basis(&[-1], 16);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d0 = density(&b, &random_point(&mut rng, 1));
        for _ in 0..100 {
            let d = density(&b, &random_point(&mut rng, 1));
            assert!((d - d0).abs() < 1e-9 * d0);
        }
        let b0 = b.model().b0();
        assert!((b0 - 0.5).abs() < 1e-15);
        assert!((d0 / 16.0 - b0).abs() / b0 <= 0.02);
    }

    #[test]
    fn density_matches_level_rescaling() {
        // L^k of degree d is the degree k·d bundle.
        let a = basis(&[-1], 6);
        let b = HarmonicBasis::build(
            &ProductModel::square(&[-6]).unwrap(),
            1,
            a.resolution(),
            DEFAULT_THETA_EPS,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let z = random_point(&mut rng, 1);
            assert!((density(&a, &z) - density(&b, &z)).abs() < 1e-10);
        }
    }

    #[test]
    fn density_is_frame_independent() {
        let b = basis(&[-1], 5);
        let model = b.model();
        let f = model.factor(0);
        let z = C64::new(0.41, 0.37);
        let direct = density_at(&b, &[z]);
        for p in [C64::new(0.4, 0.3), C64::new(0.45, 0.42)] {
            let chart = model.normal_chart(&model.from_complex(&[p]));
            let w = z - p;
            let m = chart.factor_chart_multiplier(0, 5, w);
            let lam = f.weight_scale();
            let coeff: f64 = b.values(&[z]).iter().map(|u| (u * m).norm_sqr()).sum();
            let via_chart = coeff * (-2.0 * 5.0 * lam * w.norm_sqr()).exp();
            assert!((via_chart - direct).abs() < 1e-10 * direct);
        }
    }

    #[test]
    fn unitary_remix_leaves_kernel_unchanged() {
        let b = basis(&[-1, 1], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = b.len();
        let raw = DMatrix::from_fn(n, n, |_, _| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let mixed = b.with_mix(raw.qr().q()).unwrap();
        for _ in 0..10 {
            let x = random_point(&mut rng, 2);
            let y = random_point(&mut rng, 2);
            let a = kernel(&b, &x, &y).value;
            let c = kernel(&mixed, &x, &y).value;
            assert!((a - c).norm() < 1e-10 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn reproducing_property() {
        let b = basis(&[-1], 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<Vec<C64>> = (0..10)
            .map(|_| b.model().to_complex(&random_point(&mut rng, 1)))
            .collect();
        let s0 = |z: &[C64]| b.values(z)[0];
        assert!(reproducing_defect(&b, 32, &s0, &xs) < 1e-8);
    }

    #[test]
    fn projector_is_idempotent() {
        let b = basis(&[-1, 1], 2);
        let f = |z: &[C64]| {
            let [x0, y0] = [z[0].re, z[0].im];
            C64::new(
                (2.0 * PI * x0).cos() + 0.3 * (2.0 * PI * y0).sin(),
                z[1].re.sin(),
            )
        };
        assert!(idempotence_defect(&b, 16, &f) < 1e-6);
    }

    #[test]
    fn localized_kernel_matches_phase_model() {
        // Flat models: exact up to lattice images, O(e^{-k|λ|}).
        for d in [-1, 1] {
            let b = basis(&[d], 20);
            let model = b.model().clone();
            let p = Point::new(vec![[0.31, 0.57]]);
            let em = expansion_model(&model, &p);
            let wx = [C64::new(0.05, -0.03)];
            let wy = [C64::new(-0.02, 0.06)];
            let s = kernel_in_chart(&b, &em.chart, &wx, &wy);
            let m = em.kernel(20, &wx, &wy);
            assert!(
                (s.localized() - m).norm() < 1e-9 * m.norm(),
                "{} {}",
                s.localized(),
                m
            );
        }
    }

    #[test]
    fn psi_examples() {
        let model = ProductModel::square(&[-1]).unwrap();
        let em = expansion_model(&model, &Point::new(vec![[0.0, 0.0]]));
        assert!((em.lambda[0] + PI / 2.0).abs() < 1e-15);
        let z = [C64::new(0.3, -0.2)];
        let zero = [C64::new(0.0, 0.0)];
        assert!((em.psi(&z, &zero).im - PI / 2.0 * z[0].norm_sqr()).abs() < 1e-15);
        assert_eq!(em.psi(&z, &z), C64::new(0.0, 0.0));
    }

    proptest! {
        #[test]
        fn psi_antisymmetric_and_nonnegative(
            a in prop::array::uniform4(-1.0f64..1.0),
            b in prop::array::uniform4(-1.0f64..1.0),
        ) {
            let model = ProductModel::from_specs(&[(C64::new(0.2, 0.8), -1), (C64::new(0.0, 1.3), 2)]).unwrap();
            let em = expansion_model(&model, &Point::new(vec![[0.1, 0.2], [0.3, 0.4]]));
            let z = [C64::new(a[0], a[1]), C64::new(a[2], a[3])];
            let w = [C64::new(b[0], b[1]), C64::new(b[2], b[3])];
            let lhs = em.psi(&z, &w);
            let rhs = -em.psi(&w, &z).conj();
            prop_assert!((lhs - rhs).norm() < 1e-14);
            let sep: f64 = z.iter().zip(&w).map(|(x, y)| (x - y).norm_sqr()).sum();
            prop_assert!(lhs.im >= em.c_lower * sep - 1e-14);
        }
    }

    fn ladder(deg: &[i32], ks: &[u32]) -> Vec<HarmonicBasis> {
        let model = ProductModel::square(deg).unwrap();
        let n = 4
            * *ks.last().unwrap() as usize
            * deg.iter().map(|d| d.unsigned_abs() as usize).max().unwrap();
        ks.iter()
            .map(|&k| HarmonicBasis::build(&model, k, n, DEFAULT_THETA_EPS).unwrap())
            .collect()
    }

    #[test]
    fn offdiagonal_decay_constant() {
        let bases = ladder(&[-1], &[8, 16, 24, 32, 40]);
        let y = Point::new(vec![[0.3, 0.3]]);
        let x = Point::new(vec![[0.3 + 0.06, 0.3 + 0.08]]);
        let fit = offdiagonal_fit(&bases, &x, &y).unwrap();
        assert!((fit.separation - 0.1).abs() < 1e-12);
        assert!(fit.relative_deviation < 0.10, "{fit:?}");
        // Lattice images contribute O(e^{-k|λ|}) at the low end of the ladder.
        assert!(fit.max_phase_deviation < 1e-4, "{:?}", fit.samples);
        let same = offdiagonal_fit(&bases, &y, &y).unwrap();
        assert!(same.c_fit.abs() < 1e-10);
        let x2 = Point::new(vec![[0.3 + 0.12, 0.3 + 0.16]]);
        let fit2 = offdiagonal_fit(&bases, &x2, &y).unwrap();
        assert!((fit2.c_fit / fit.c_fit - 4.0).abs() / 4.0 < 0.15);
    }

    #[test]
    fn far_decay_and_control() {
        let ks: Vec<u32> = (2..=10).map(|i| 4 * i).collect();
        let bases = ladder(&[-1], &ks);
        let y = Point::new(vec![[0.1, 0.1]]);
        let x = Point::new(vec![[0.55, 0.4]]);
        let r = far_separation_check(&bases, &x, &y).unwrap();
        assert!(r.gamma > 0.0);
        assert!(r.pass, "{r:?}");
        let ctl = far_separation_check(&bases, &y, &y).unwrap();
        assert!(!ctl.pass);
    }

    #[test]
    fn ratio_profile_bounds_and_model() {
        let b = basis(&[-1], 20);
        let y = Point::new(vec![[0.2, 0.7]]);
        let x = Point::new(vec![[0.28, 0.76]]);
        let ts: Vec<f64> = (0..64).map(|i| f64::from(i) / 63.0).collect();
        let p = ratio_profile(&b, &x, &y, &ts);
        assert!((p.values[0] - 1.0).abs() < 1e-12);
        assert!(p.values.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
        let mid = ratio_profile(&b, &x, &y, &[0.5]);
        assert!((mid.values[0] - mid.model[0]).abs() / mid.model[0] < 0.15);
    }
}
