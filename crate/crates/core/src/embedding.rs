//! The map `Φ_k` into projective space and its Fubini–Study pullback.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{fit_slope, top_half, LinearFit};
use crate::harmonic::{BasisJets, HarmonicBasis};
use crate::kernel::{density_at, product_grid};
use crate::model::{Point, ProductModel};

type C64 = Complex64;

const ZERO_NORM: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectivePoint {
    homogeneous: Vec<C64>,
}

impl ProjectivePoint {
    pub fn new(homogeneous: Vec<C64>) -> Result<Self> {
        let norm = norm(&homogeneous);
        if !(norm >= ZERO_NORM) {
            return Err(Error::ZeroVector(norm));
        }
        Ok(Self { homogeneous })
    }

    pub fn homogeneous(&self) -> &[C64] {
        &self.homogeneous
    }

    pub fn len(&self) -> usize {
        self.homogeneous.len()
    }

    pub fn is_empty(&self) -> bool {
        self.homogeneous.is_empty()
    }

    pub fn scaled(&self, c: C64) -> Result<Self> {
        Self::new(self.homogeneous.iter().map(|v| v * c).collect())
    }
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(C64::norm_sqr).sum::<f64>().sqrt()
}

/// `[S_0(z) : … : S_{d_k}(z)]`, using unit-weighted values as the lift.
pub fn phi(basis: &HarmonicBasis, z: &Point) -> Result<ProjectivePoint> {
    phi_at(basis, &basis.model().to_complex(z))
}

pub fn phi_at(basis: &HarmonicBasis, z: &[C64]) -> Result<ProjectivePoint> {
    ProjectivePoint::new(basis.values(z))
}

/// Fubini–Study distance `arccos(|⟨a,b⟩| / ‖a‖‖b‖)`, evaluated as an
/// `atan2` so that nearby points keep full relative precision.
pub fn fs_distance(a: &ProjectivePoint, b: &ProjectivePoint) -> f64 {
    fs_distance_raw(a.homogeneous(), b.homogeneous())
}

fn fs_distance_raw(a: &[C64], b: &[C64]) -> f64 {
    let na2: f64 = a.iter().map(C64::norm_sqr).sum();
    let nb = norm(b);
    let ab = dot(b, a);
    let c = ab.norm() / (na2.sqrt() * nb);
    let coef = ab / na2;
    let perp: f64 = b
        .iter()
        .zip(a)
        .map(|(y, x)| (y - coef * x).norm_sqr())
        .sum::<f64>()
        .sqrt();
    (perp / nb).atan2(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WellDefinedReport {
    /// Smallest `density / (b₀ kⁿ)` over the grid.
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub pass: bool,
}

pub const MIN_SCAN_RESOLUTION: usize = 32;

/// Normalized density over the `grid_n` grid; passes when it stays ≥ 1/2.
pub fn well_defined_check(basis: &HarmonicBasis, grid_n: usize) -> Result<WellDefinedReport> {
    if grid_n < MIN_SCAN_RESOLUTION {
        return Err(Error::ResolutionBelowFloor {
            got: grid_n,
            floor: MIN_SCAN_RESOLUTION,
        });
    }
    let model = basis.model();
    let lead = model.b0() * f64::from(basis.k()).powi(model.dim() as i32);
    let (lo, hi) = match basis.mix() {
        // The density is a product of factor densities.
        None => basis
            .factor_bases()
            .iter()
            .fold((1.0, 1.0), |(lo, hi), fb| {
                let vals: Vec<f64> = fb
                    .set
                    .factor()
                    .grid(grid_n)
                    .par_iter()
                    .map(|&z| fb.values(z).iter().map(C64::norm_sqr).sum())
                    .collect();
                let mn = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let mx = vals.iter().cloned().fold(0.0, f64::max);
                (lo * mn, hi * mx)
            }),
        Some(_) => {
            let vals: Vec<f64> = product_grid(model, grid_n)
                .par_iter()
                .map(|z| density_at(basis, z))
                .collect();
            (
                vals.iter().cloned().fold(f64::INFINITY, f64::min),
                vals.iter().cloned().fold(0.0, f64::max),
            )
        }
    };
    let min_ratio = lo / lead;
    Ok(WellDefinedReport {
        min_ratio,
        max_ratio: hi / lead,
        pass: min_ratio >= 0.5,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NearDiagonalSample {
    /// Separation in units of `1/√k`.
    pub scaled_separation: f64,
    pub separation: f64,
    pub min_distance: f64,
    pub mean_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectivityReport {
    pub min_distance: f64,
    /// Lattice coordinates of a closest pair.
    pub closest_pair: (Point, Point),
    pub near_diagonal: Vec<NearDiagonalSample>,
    /// Largest `α` with FS distance ≥ `α √k δ` on all near-diagonal samples.
    pub alpha: f64,
    pub pass: bool,
}

pub const COLLISION_THRESHOLD: f64 = 1e-10;
pub const NEAR_DIAGONAL_SCALES: [f64; 3] = [0.5, 1.0, 2.0];

/// Smallest FS distance between images of distinct points of one factor's
/// `grid_n` grid, for a one-factor vector field of lifts.
fn pairwise_min(lifts: &[Vec<C64>]) -> (f64, usize, usize) {
    let unit: Vec<Vec<C64>> = lifts
        .iter()
        .map(|v| {
            let n = norm(v);
            v.iter().map(|c| c / n).collect()
        })
        .collect();
    // Largest |⟨a,b⟩| identifies the closest pair; recompute the distance
    // of that pair accurately.
    let best = (0..unit.len())
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::NEG_INFINITY, i, i);
            for j in i + 1..unit.len() {
                let c = dot(&unit[i], &unit[j]).norm_sqr();
                if c > best.0 {
                    best = (c, i, j);
                }
            }
            best
        })
        .reduce(
            || (f64::NEG_INFINITY, 0, 0),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) {
                    b
                } else {
                    a
                }
            },
        );
    let (_, i, j) = best;
    (fs_distance_raw(&lifts[i], &lifts[j]), i, j)
}

/// Exhaustive pairwise scan on the `grid_n` grid plus the near-diagonal
/// profile. For an unmixed product basis the map is a Segre product, so
/// `cos d_FS` multiplies over factors and the global minimum is the
/// smallest per-factor minimum.
pub fn injectivity_scan(basis: &HarmonicBasis, grid_n: usize) -> Result<InjectivityReport> {
    if grid_n < MIN_SCAN_RESOLUTION {
        return Err(Error::ResolutionBelowFloor {
            got: grid_n,
            floor: MIN_SCAN_RESOLUTION,
        });
    }
    let model = basis.model();
    let (min_distance, closest_pair) = match basis.mix() {
        None => {
            let mut best: Option<(f64, Point, Point)> = None;
            for (t, fb) in basis.factor_bases().iter().enumerate() {
                let f = fb.set.factor();
                let pts = f.grid(grid_n);
                let lifts: Vec<Vec<C64>> = pts.par_iter().map(|&z| fb.values(z)).collect();
                let (d, i, j) = pairwise_min(&lifts);
                if best.as_ref().map_or(true, |b| d < b.0) {
                    let base: Vec<[f64; 2]> = vec![[0.5 / grid_n as f64; 2]; model.dim()];
                    let mut a = base.clone();
                    let mut b = base;
                    a[t] = f.lattice_coords(pts[i]);
                    b[t] = f.lattice_coords(pts[j]);
                    best = Some((d, Point::new(a), Point::new(b)));
                }
            }
            let (d, a, b) = best.expect("at least one factor");
            (d, (a, b))
        }
        Some(_) => {
            let pts = product_grid(model, grid_n);
            let lifts: Vec<Vec<C64>> = pts.par_iter().map(|z| basis.values(z)).collect();
            let (d, i, j) = pairwise_min(&lifts);
            (
                d,
                (model.from_complex(&pts[i]), model.from_complex(&pts[j])),
            )
        }
    };
    let near_diagonal = near_diagonal_profile(basis, 8);
    let alpha = near_diagonal
        .iter()
        .map(|s| s.min_distance / (f64::from(basis.k()).sqrt() * s.separation))
        .fold(f64::INFINITY, f64::min);
    Ok(InjectivityReport {
        pass: min_distance > COLLISION_THRESHOLD && alpha > 0.0,
        min_distance,
        closest_pair,
        near_diagonal,
        alpha,
    })
}

/// FS distances between `x` and `x + δ e` for `δ ∈ {0.5, 1, 2}/√k`, over
/// `bases_per_dim²` base points per factor and eight unit directions `e`.
pub fn near_diagonal_profile(
    basis: &HarmonicBasis,
    bases_per_dim: usize,
) -> Vec<NearDiagonalSample> {
    let model = basis.model();
    let n = model.dim();
    let k = f64::from(basis.k());
    let base: Vec<Vec<C64>> = model.factors()[0]
        .grid(bases_per_dim)
        .into_iter()
        .map(|z0| {
            model
                .factors()
                .iter()
                .enumerate()
                .map(|(i, f)| if i == 0 { z0 } else { f.point([0.3, 0.6]) })
                .collect()
        })
        .collect();
    NEAR_DIAGONAL_SCALES
        .iter()
        .map(|&s| {
            let delta = s / k.sqrt();
            let dists: Vec<f64> = base
                .par_iter()
                .flat_map_iter(|z| {
                    (0..8).map(move |a| {
                        let ang = f64::from(a) * PI / 4.0 + 0.1;
                        // Spread the displacement evenly over the factors.
                        let step = C64::from_polar(delta / (n as f64).sqrt(), ang);
                        let w: Vec<C64> = z.iter().map(|zi| zi + step).collect();
                        fs_distance_raw(&basis.values(z), &basis.values(&w))
                    })
                })
                .collect();
            NearDiagonalSample {
                scaled_separation: s,
                separation: delta,
                min_distance: dists.iter().cloned().fold(f64::INFINITY, f64::min),
                mean_distance: dists.iter().sum::<f64>() / dists.len() as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Differential {
    /// Columns `∂_{x_1} w, ∂_{y_1} w, …` of the lift `w`.
    pub matrix: DMatrix<C64>,
    /// Singular values of the real differential after projecting out `w`.
    pub singular_values: Vec<f64>,
    pub rank: usize,
}

pub const RANK_TOLERANCE: f64 = 1e-8;

fn real_columns(jets: &BasisJets) -> Vec<Vec<C64>> {
    let mut cols = Vec::with_capacity(2 * jets.dz.len());
    for (dz, dzb) in jets.dz.iter().zip(&jets.dzb) {
        cols.push(dz.iter().zip(dzb).map(|(a, b)| a + b).collect());
        cols.push(
            dz.iter()
                .zip(dzb)
                .map(|(a, b)| C64::i() * (a - b))
                .collect(),
        );
    }
    cols
}

/// Real-coordinate partial derivatives of the lift and the rank of `dΦ`.
pub fn differential(basis: &HarmonicBasis, z: &[C64]) -> Differential {
    let jets = basis.jets(z);
    let cols = real_columns(&jets);
    let w = &jets.values;
    let len = w.len();
    let matrix = DMatrix::from_fn(len, cols.len(), |r, c| cols[c][r]);
    let w2: f64 = w.iter().map(C64::norm_sqr).sum();
    // Tangent space of CP^N at [w] is the complement of the line C·w.
    let real = DMatrix::from_fn(2 * len, cols.len(), |r, c| {
        let v = &cols[c];
        let coef = dot(v, w) / w2;
        let proj = v[r % len] - coef * w[r % len];
        if r < len {
            proj.re
        } else {
            proj.im
        }
    });
    let mut singular_values: Vec<f64> = real.singular_values().iter().cloned().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let top = singular_values.first().cloned().unwrap_or(0.0);
    let rank = if len <= 1 {
        0
    } else {
        singular_values
            .iter()
            .filter(|&&s| s > RANK_TOLERANCE * top.max(f64::MIN_POSITIVE))
            .count()
    };
    Differential {
        matrix,
        singular_values,
        rank,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PullbackMethod {
    Jacobian,
    DdbarLog,
}

impl PullbackMethod {
    pub fn name(self) -> &'static str {
        match self {
            PullbackMethod::Jacobian => "jacobian",
            PullbackMethod::DdbarLog => "ddbar_log",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PullbackSample {
    pub z: Vec<C64>,
    pub k: u32,
    /// `(1/k) Φ*ω_FS` in the coordinates `(x_1, y_1, …, x_n, y_n)`.
    pub form: DMatrix<f64>,
    pub method: PullbackMethod,
}

impl PullbackSample {
    pub fn antisymmetry_defect(&self) -> f64 {
        (&self.form + self.form.transpose()).amax()
    }
}

/// `(1/π) Im[(⟨V_a,w⟩⟨w,V_b⟩ - ⟨V_a,V_b⟩‖w‖²)] / ‖w‖⁴` for a lift `w` with
/// real partials `V`.
pub fn fs_pullback_of_lift(w: &[C64], cols: &[Vec<C64>]) -> DMatrix<f64> {
    let w2: f64 = w.iter().map(C64::norm_sqr).sum();
    let vw: Vec<C64> = cols.iter().map(|v| dot(v, w)).collect();
    let m = cols.len();
    DMatrix::from_fn(m, m, |a, b| {
        if a == b {
            return 0.0;
        }
        let num = vw[a] * vw[b].conj() - dot(&cols[a], &cols[b]) * w2;
        num.im / (PI * w2 * w2)
    })
}

pub fn pullback_jacobian(basis: &HarmonicBasis, z: &[C64]) -> PullbackSample {
    let jets = basis.jets(z);
    let cols = real_columns(&jets);
    let form = fs_pullback_of_lift(&jets.values, &cols) / f64::from(basis.k());
    PullbackSample {
        z: z.to_vec(),
        k: basis.k(),
        form,
        method: PullbackMethod::Jacobian,
    }
}

/// Complex Hessian `∂_a ∂̄_b log Q` of `Q = Σ_j |u_j|²`, using the full
/// product rule (the `u_j` need not be holomorphic).
pub fn ddbar_log_density(jets: &BasisJets) -> DMatrix<C64> {
    let n = jets.dz.len();
    let u = &jets.values;
    let q: f64 = u.iter().map(C64::norm_sqr).sum();
    let dq: Vec<C64> = (0..n)
        .map(|a| {
            u.iter()
                .enumerate()
                .map(|(j, uj)| jets.dz[a][j] * uj.conj() + uj * jets.dzb[a][j].conj())
                .sum()
        })
        .collect();
    let dbq: Vec<C64> = (0..n)
        .map(|b| {
            u.iter()
                .enumerate()
                .map(|(j, uj)| jets.dzb[b][j] * uj.conj() + uj * jets.dz[b][j].conj())
                .sum()
        })
        .collect();
    DMatrix::from_fn(n, n, |a, b| {
        let ddq: C64 = u
            .iter()
            .enumerate()
            .map(|(j, uj)| {
                jets.dzdzb[a][b][j] * uj.conj()
                    + jets.dz[a][j] * jets.dz[b][j].conj()
                    + jets.dzb[b][j] * jets.dzb[a][j].conj()
                    + uj * jets.dzdzb[b][a][j].conj()
            })
            .sum();
        ddq / q - dq[a] * dbq[b] / (q * q)
    })
}

/// Real components of the 2-form `i Σ F_{ab̄} dz_a ∧ dz̄_b`.
pub fn real_form(f: &DMatrix<C64>) -> DMatrix<f64> {
    let n = f.nrows();
    let unit = [C64::new(1.0, 0.0), C64::i()];
    DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let (a, ua) = (r / 2, unit[r % 2]);
        let (b, ub) = (c / 2, unit[c % 2]);
        -2.0 * (f[(a, b)] * ua * ub.conj()).im
    })
}

/// `ω + (i/2πk) ∂∂̄ log Q`.
pub fn pullback_ddbar(basis: &HarmonicBasis, z: &[C64]) -> PullbackSample {
    let jets = basis.jets(z);
    let hess = ddbar_log_density(&jets);
    let k = f64::from(basis.k());
    let correction = real_form(&(hess / C64::new(2.0 * PI * k, 0.0)));
    let model = basis.model();
    let form = model.omega(&model.from_complex(z)) + correction;
    PullbackSample {
        z: z.to_vec(),
        k: basis.k(),
        form,
        method: PullbackMethod::DdbarLog,
    }
}

/// `Ω(U, JV)` for the standard complex structure; for a real `(1,1)`-form
/// this is symmetric and its signature is twice the Hermitian signature.
pub fn hermitian_part(form: &DMatrix<f64>) -> DMatrix<f64> {
    let m = form.nrows();
    let mut j = DMatrix::zeros(m, m);
    for a in 0..m / 2 {
        j[(2 * a + 1, 2 * a)] = 1.0;
        j[(2 * a, 2 * a + 1)] = -1.0;
    }
    let s = form * j;
    (&s + s.transpose()) * 0.5
}

/// `(negative, positive)` eigenvalue counts of [`hermitian_part`].
pub fn form_signature(form: &DMatrix<f64>) -> (usize, usize) {
    let ev = hermitian_part(form).symmetric_eigenvalues();
    let scale = ev.amax();
    let neg = ev.iter().filter(|&&e| e < -1e-9 * scale).count();
    let pos = ev.iter().filter(|&&e| e > 1e-9 * scale).count();
    (neg, pos)
}

/// Discrete exterior derivative `dΩ` of the sampled form field at `z`, by
/// central differences of step `h`; largest component.
pub fn closedness_residual(
    basis: &HarmonicBasis,
    z: &[C64],
    h: f64,
    method: PullbackMethod,
) -> f64 {
    let m = 2 * z.len();
    let sample = |z: &[C64]| match method {
        PullbackMethod::Jacobian => pullback_jacobian(basis, z).form,
        PullbackMethod::DdbarLog => pullback_ddbar(basis, z).form,
    };
    let deriv: Vec<DMatrix<f64>> = (0..m)
        .map(|c| {
            let step = if c % 2 == 0 {
                C64::new(h, 0.0)
            } else {
                C64::new(0.0, h)
            };
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[c / 2] += step;
            zm[c / 2] -= step;
            (sample(&zp) - sample(&zm)) / (2.0 * h)
        })
        .collect();
    let mut worst = 0.0f64;
    for a in 0..m {
        for b in a + 1..m {
            for c in b + 1..m {
                let v = deriv[a][(b, c)] + deriv[b][(c, a)] + deriv[c][(a, b)];
                worst = worst.max(v.abs());
            }
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub k: u32,
    /// Sup-grid `|(1/k)Φ*ω_FS - ω|` for the Jacobian method.
    pub error_jacobian: f64,
    pub error_ddbar: f64,
    /// Sup of first differences of the error field across the grid.
    pub derivative_error_jacobian: f64,
    pub derivative_error_ddbar: f64,
    /// Largest componentwise gap between the two methods.
    pub method_gap: f64,
    /// Whether every sampled form has the signature of `ω`.
    pub signature_preserved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// `E(k) ~ k^{-β}` fits on the top half of the ladder, when all errors
    /// are positive.
    pub fit_jacobian: Option<LinearFit>,
    pub fit_ddbar: Option<LinearFit>,
    /// Absolute size of `|ω|`; errors below `1e-9 |ω|` are roundoff.
    pub omega_scale: f64,
}

impl ConvergenceReport {
    pub fn beta(&self, method: PullbackMethod) -> Option<f64> {
        match method {
            PullbackMethod::Jacobian => self.fit_jacobian.map(|f| -f.slope),
            PullbackMethod::DdbarLog => self.fit_ddbar.map(|f| -f.slope),
        }
    }

    /// Errors at or below this level are indistinguishable from roundoff.
    pub fn roundoff_floor(&self) -> f64 {
        ROUNDOFF_FLOOR * self.omega_scale
    }

    /// Decay of `E(k)` for one method over the whole ladder or its top half.
    pub fn decay(&self, method: PullbackMethod, top_only: bool) -> Decay {
        let rows: &[ConvergenceRow] = if top_only {
            top_half(&self.rows)
        } else {
            &self.rows
        };
        let errors: Vec<(u32, f64)> = rows
            .iter()
            .map(|r| {
                let e = match method {
                    PullbackMethod::Jacobian => r.error_jacobian,
                    PullbackMethod::DdbarLog => r.error_ddbar,
                };
                (r.k, e)
            })
            .collect();
        let floor = self.roundoff_floor();
        let above: Vec<(f64, f64)> = errors
            .iter()
            .filter(|e| e.1 > floor)
            .map(|&(k, e)| (f64::from(k), e))
            .collect();
        // Strictly decreasing while above the floor, and never leaving the
        // floor once it is reached.
        let mut monotone = true;
        for w in errors.windows(2) {
            let (a, b) = (w[0].1, w[1].1);
            if a > floor && !(b < a) {
                monotone = false;
            }
            if a <= floor && b > floor {
                monotone = false;
            }
        }
        let (beta, beta_is_lower_bound) = if above.len() >= 2 {
            let xs: Vec<f64> = above.iter().map(|p| p.0.ln()).collect();
            let ys: Vec<f64> = above.iter().map(|p| p.1.ln()).collect();
            (
                crate::fit::fit_linear(&xs, &ys).ok().map(|f| -f.slope),
                false,
            )
        } else if let [(k1, e1)] = above[..] {
            // One resolved point: the drop to the floor bounds the rate.
            let next = errors.iter().find(|e| f64::from(e.0) > k1 && e.1 <= floor);
            match next {
                Some(&(k2, _)) => (Some((e1 / floor).ln() / (f64::from(k2) / k1).ln()), true),
                None => (None, false),
            }
        } else {
            (None, false)
        };
        Decay {
            errors,
            floor,
            points_above_floor: above.len(),
            monotone,
            beta,
            beta_is_lower_bound,
        }
    }
}

/// Relative roundoff level of a pulled-back form.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Decay {
    pub errors: Vec<(u32, f64)>,
    pub floor: f64,
    pub points_above_floor: usize,
    pub monotone: bool,
    /// `E ~ k^{-β}` fitted on the points above the floor.
    pub beta: Option<f64>,
    /// Set when only one point is above the floor; `beta` is then the rate
    /// needed to reach the floor by the next ladder value.
    pub beta_is_lower_bound: bool,
}

/// Grid sups of one factor's pullback error field, with the first
/// differences of the field along both grid directions.
fn factor_errors(basis: &HarmonicBasis, grid_n: usize) -> ([f64; 2], [f64; 2], f64, bool) {
    let model = basis.model();
    let f = model.factor(0);
    let omega = model.omega(&Point::new(vec![[0.0, 0.0]]));
    let pts = f.grid(grid_n);
    let (neg, pos) = model.signature();
    let samples: Vec<(f64, f64, f64, bool)> = pts
        .par_iter()
        .map(|&z| {
            let j = pullback_jacobian(basis, &[z]).form;
            let d = pullback_ddbar(basis, &[z]).form;
            let ej = j[(0, 1)] - omega[(0, 1)];
            let ed = d[(0, 1)] - omega[(0, 1)];
            let sig_ok = form_signature(&j) == (2 * neg, 2 * pos)
                && form_signature(&d) == (2 * neg, 2 * pos);
            (ej, ed, (&j - &d).amax(), sig_ok)
        })
        .collect();
    let sup =
        |sel: &dyn Fn(&Sample) -> f64| samples.iter().map(|s| sel(s).abs()).fold(0.0, f64::max);
    let h = 1.0 / grid_n as f64;
    let diff_sup = |sel: &dyn Fn(&Sample) -> f64| {
        let mut worst = 0.0f64;
        for b in 0..grid_n {
            for a in 0..grid_n {
                let here = sel(&samples[b * grid_n + a]);
                let right = sel(&samples[b * grid_n + (a + 1) % grid_n]);
                let up = sel(&samples[((b + 1) % grid_n) * grid_n + a]);
                worst = worst
                    .max((right - here).abs() / h)
                    .max((up - here).abs() / h);
            }
        }
        worst
    };
    let errs = [sup(&|s| s.0), sup(&|s| s.1)];
    let derivs = [diff_sup(&|s| s.0), diff_sup(&|s| s.1)];
    (errs, derivs, sup(&|s| s.2), samples.iter().all(|s| s.3))
}

type Sample = (f64, f64, f64, bool);

/// `E(k)` for both methods over a ladder of bases. Unmixed product bases
/// are scanned factor by factor on the `grid_n` grid (the pullback of a
/// Segre product is block diagonal) and the full cross terms are checked at
/// the `spot_points`.
pub fn convergence_report(
    bases: &[HarmonicBasis],
    grid_n: usize,
    spot_points: &[Vec<C64>],
) -> Result<ConvergenceReport> {
    if bases.len() < crate::fit::MIN_FIT_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: crate::fit::MIN_FIT_SAMPLES,
            got: bases.len(),
        });
    }
    let model: &ProductModel = bases[0].model();
    let omega = model.omega(&Point::new(vec![[0.0, 0.0]; model.dim()]));
    let (neg, pos) = model.signature();
    let rows = bases
        .iter()
        .map(|b| {
            let mut errs = [0.0f64; 2];
            let mut derivs = [0.0f64; 2];
            let mut gap = 0.0f64;
            let mut sig = true;
            if b.mix().is_none() {
                for i in 0..model.dim() {
                    let (e, d, g, s) = factor_errors(&b.factor_basis(i), grid_n);
                    for t in 0..2 {
                        errs[t] = errs[t].max(e[t]);
                        derivs[t] = derivs[t].max(d[t]);
                    }
                    gap = gap.max(g);
                    sig &= s;
                }
            }
            for z in spot_points {
                let j = pullback_jacobian(b, z).form;
                let d = pullback_ddbar(b, z).form;
                errs[0] = errs[0].max((&j - &omega).amax());
                errs[1] = errs[1].max((&d - &omega).amax());
                gap = gap.max((&j - &d).amax());
                sig &= form_signature(&j) == (2 * neg, 2 * pos);
                sig &= form_signature(&d) == (2 * neg, 2 * pos);
            }
            ConvergenceRow {
                k: b.k(),
                error_jacobian: errs[0],
                error_ddbar: errs[1],
                derivative_error_jacobian: derivs[0],
                derivative_error_ddbar: derivs[1],
                method_gap: gap,
                signature_preserved: sig,
            }
        })
        .collect::<Vec<_>>();
    let fit = |sel: &dyn Fn(&ConvergenceRow) -> f64| {
        let pairs: Vec<(f64, f64)> = top_half(&rows)
            .iter()
            .map(|r| (f64::from(r.k), sel(r)))
            .collect();
        fit_slope(&pairs).ok()
    };
    Ok(ConvergenceReport {
        fit_jacobian: fit(&|r| r.error_jacobian),
        fit_ddbar: fit(&|r| r.error_ddbar),
        omega_scale: omega.amax(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionFamily {
    /// `L_t` for `t ≤ n₋` and `L̄_t` for `t > n₋`.
    Special,
    Generic,
}

impl DirectionFamily {
    pub fn name(self) -> &'static str {
        match self {
            DirectionFamily::Special => "special",
            DirectionFamily::Generic => "generic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSums {
    pub t: usize,
    pub family: DirectionFamily,
    /// Whether the direction is `∂/∂w̄_t` (otherwise `∂/∂w_t`).
    pub conjugate: bool,
    pub sums: Vec<(u32, f64)>,
    /// True when every sum is below `1e-20` times the generic sum in the
    /// same coordinate, i.e. vanishes up to roundoff.
    pub exact_zero: bool,
    pub fit: Option<LinearFit>,
    /// Largest `|‖u‖ - 1|` of the normalized extremal form over the ladder.
    pub extremal_norm_defect: f64,
    /// Largest relative gap between `|Z ũ(p)|²` and the direct sum.
    pub extremal_identity_defect: f64,
}

impl DirectionSums {
    pub fn slope(&self) -> f64 {
        if self.exact_zero {
            f64::NEG_INFINITY
        } else {
            self.fit.map_or(f64::NAN, |f| f.slope)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub p: Point,
    pub ks: Vec<u32>,
    pub directions: Vec<DirectionSums>,
}

pub const EXACT_ZERO_RATIO: f64 = 1e-20;

/// First derivatives `(∂_{w_t}, ∂_{w̄_t}) S̃_j(p)` of the chart coefficients
/// in the normal chart at `p`, for every `t` and `j`.
pub fn chart_derivatives(basis: &HarmonicBasis, p: &Point) -> (Vec<Vec<C64>>, Vec<Vec<C64>>) {
    let model = basis.model();
    let chart = model.normal_chart(p);
    let jets = basis.jets(chart.base());
    let k = basis.k();
    let mut d = Vec::new();
    let mut db = Vec::new();
    for t in 0..model.dim() {
        let (g, gb) = chart.factor_multiplier_derivative(t, k);
        d.push(
            jets.dz[t]
                .iter()
                .zip(&jets.values)
                .map(|(a, u)| a + u * g)
                .collect(),
        );
        db.push(
            jets.dzb[t]
                .iter()
                .zip(&jets.values)
                .map(|(a, u)| a + u * gb)
                .collect(),
        );
    }
    (d, db)
}

/// Directional-derivative sums `Σ_j |(Z S̃_j)(p)|²` across a ladder, with
/// the normalized extremal form checked against the quadrature Gram matrix.
pub fn derivative_sums(bases: &[HarmonicBasis], p: &Point) -> Result<DerivativeReport> {
    let model = bases[0].model();
    let n = model.dim();
    let n_minus = model.n_minus();
    // raw[t][conj] = per-k (sum, norm defect, identity defect)
    let mut raw = vec![[Vec::new(), Vec::new()]; n];
    for b in bases {
        let (d, db) = chart_derivatives(b, p);
        let gram = b.recomputed_gram();
        for t in 0..n {
            for (ci, vals) in [&d[t], &db[t]].into_iter().enumerate() {
                let sum: f64 = vals.iter().map(C64::norm_sqr).sum();
                let (norm_defect, id_defect) = if sum > 0.0 {
                    let s = sum.sqrt();
                    let c: Vec<C64> = vals.iter().map(|v| v.conj() / s).collect();
                    let gc = &gram * DMatrix::from_column_slice(c.len(), 1, &c);
                    let nrm2: C64 = c.iter().zip(gc.iter()).map(|(a, b)| a.conj() * b).sum();
                    let z_u: C64 = c.iter().zip(vals).map(|(a, v)| a * v).sum();
                    (
                        (nrm2.re.sqrt() - 1.0).abs(),
                        (z_u.norm_sqr() - sum).abs() / sum,
                    )
                } else {
                    (0.0, 0.0)
                };
                raw[t][ci].push((b.k(), sum, norm_defect, id_defect));
            }
        }
    }
    let mut directions = Vec::new();
    for (t, pair) in raw.iter().enumerate() {
        // Special: ∂_w on negative factors, ∂_w̄ on positive factors.
        let special_conj = t >= n_minus;
        for (ci, rows) in pair.iter().enumerate() {
            let conjugate = ci == 1;
            let family = if conjugate == special_conj {
                DirectionFamily::Special
            } else {
                DirectionFamily::Generic
            };
            let other = &pair[1 - ci];
            let exact_zero = rows
                .iter()
                .zip(other)
                .all(|(a, b)| a.1 <= EXACT_ZERO_RATIO * b.1);
            let sums: Vec<(u32, f64)> = rows.iter().map(|r| (r.0, r.1)).collect();
            let fit = if exact_zero {
                None
            } else {
                let pairs: Vec<(f64, f64)> = top_half(&sums)
                    .iter()
                    .map(|&(k, v)| (f64::from(k), v))
                    .collect();
                Some(fit_slope(&pairs)?)
            };
            directions.push(DirectionSums {
                t,
                family,
                conjugate,
                sums,
                exact_zero,
                fit,
                extremal_norm_defect: if exact_zero {
                    0.0
                } else {
                    rows.iter().map(|r| r.2).fold(0.0, f64::max)
                },
                extremal_identity_defect: if exact_zero {
                    0.0
                } else {
                    rows.iter().map(|r| r.3).fold(0.0, f64::max)
                },
            });
        }
    }
    Ok(DerivativeReport {
        p: p.clone(),
        ks: bases.iter().map(HarmonicBasis::k).collect(),
        directions,
    })
}
