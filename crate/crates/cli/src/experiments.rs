//! The experiment suites and their acceptance verdicts.

use std::f64::consts::PI;

use bergman_core::calibration::c_model_check;
use bergman_core::embedding::{
    convergence_report, derivative_sums, differential, injectivity_scan, pullback_ddbar,
    pullback_jacobian, well_defined_check, DirectionFamily, COLLISION_THRESHOLD,
};
use bergman_core::harmonic::{kodaira_ratios, resolution_floor};
use bergman_core::kernel::{
    density_at, far_separation_check, offdiagonal_fit, ratio_profile, reproducing_defect, trace,
};
use bergman_core::{Complex64, DMatrix, Point, ProductModel, PullbackMethod};
use thiserror::Error;

use crate::config::Experiment;
use crate::probes::{probe_points, random_angles};
use crate::report::{lattice_point_cells, point_cells, point_header, Cell, Criterion, Table};
use crate::workspace::Workspace;

type C64 = Complex64;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Core(#[from] bergman_core::Error),
    #[error("{0}")]
    Setup(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Tables and verdicts of one experiment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub criteria: Vec<Criterion>,
}

/// Criteria owned by each experiment, with their descriptions.
pub fn criteria_of(e: Experiment) -> &'static [(&'static str, &'static str)] {
    match e {
        Experiment::Dims => &[
            (
                "A1",
                "dimension law: k^n prod|d_j| sections with a full-rank Gram matrix",
            ),
            (
                "A2",
                "harmonicity: discrete Kodaira-Laplacian residual; perturbed control detected",
            ),
        ],
        Experiment::Density => &[(
            "A3",
            "trace identity, flat-model calibration and leading density coefficient",
        )],
        Experiment::Offdiag => &[(
            "A4",
            "off-diagonal Gaussian decay rate against 2 Im Psi, quadratic in separation",
        )],
        Experiment::Far => &[("A5", "rapid decay of |P_k(x, y)| at large separation")],
        Experiment::Ratio => &[(
            "A6",
            "ratio profile in [0, 1], coincidence value 1, interior match to the phase model",
        )],
        Experiment::Embed => &[(
            "A7",
            "embedding well defined, injective with near-diagonal bound, immersive",
        )],
        Experiment::Pullback => &[(
            "A8",
            "(1/k) pullback of the Fubini-Study form converges to omega",
        )],
        Experiment::Derivs => &[(
            "A9",
            "special-direction derivative sums grow slower than generic ones",
        )],
    }
}

pub const A10_DESCRIPTION: &str =
    "byte-identical rerun, config validation self-test, run under the time budget";

fn criterion(id: &str, measured: f64, threshold: &str, pass: bool, notes: String) -> Criterion {
    let description = Experiment::ALL
        .iter()
        .flat_map(|&e| criteria_of(e).iter())
        .find(|(i, _)| *i == id)
        .map_or(A10_DESCRIPTION, |(_, d)| d);
    Criterion {
        criterion_id: id.to_string(),
        description: description.to_string(),
        measured,
        threshold: threshold.to_string(),
        pass,
        notes,
    }
}

/// Verdicts recorded when an experiment fails to run.
pub fn failed(e: Experiment, error: &str) -> Vec<Criterion> {
    criteria_of(e)
        .iter()
        .map(|(id, _)| {
            criterion(
                id,
                f64::NAN,
                "experiment completes",
                false,
                format!("failed: {error}"),
            )
        })
        .collect()
}

pub fn run_experiment(ws: &Workspace<'_>, e: Experiment) -> Result<Outcome> {
    match e {
        Experiment::Dims => dims(ws),
        Experiment::Density => density(ws),
        Experiment::Offdiag => offdiag(ws),
        Experiment::Far => far(ws),
        Experiment::Ratio => ratio(ws),
        Experiment::Embed => embed(ws),
        Experiment::Pullback => pullback(ws),
        Experiment::Derivs => derivs(ws),
    }
}

fn max_level(model: &ProductModel, k: u32) -> u32 {
    model
        .factors()
        .iter()
        .map(|f| k * f.degree().unsigned_abs())
        .max()
        .unwrap_or(0)
}

fn fmt_list<T: std::fmt::Display>(v: &[T]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

fn dims(ws: &Workspace<'_>) -> Result<Outcome> {
    let cfg = ws.config;
    let model = &ws.model;
    let hg = cfg.params.harmonic_grid;
    let mut t = Table::new(
        "dims.csv",
        &[
            "k",
            "sections",
            "expected",
            "min_gram_eigenvalue",
            "cholesky_condition",
            "orthonormality_defect",
            "max_residual",
        ],
    );
    let mut mismatches = 0usize;
    let mut min_eig_all = f64::INFINITY;
    let mut max_res = 0.0f64;
    let mut evaluated = Vec::new();
    for &k in &cfg.params.dims_ladder {
        let b = ws.basis(k)?;
        let expected = model.section_count(k);
        if b.len() != expected {
            mismatches += 1;
        }
        let min_eig: f64 = b
            .factor_bases()
            .iter()
            .map(|f| f.gram.min_eigenvalue())
            .product();
        min_eig_all = min_eig_all.min(min_eig);
        let res = if resolution_floor(max_level(model, k)) <= hg {
            let r = b.harmonicity_residuals(hg)?;
            let m = r.iter().copied().fold(0.0, f64::max);
            max_res = max_res.max(m);
            evaluated.push(k);
            m
        } else {
            f64::NAN
        };
        t.push(vec![
            k.into(),
            b.len().into(),
            expected.into(),
            min_eig.into(),
            b.max_cholesky_condition().into(),
            b.orthonormality_defect().into(),
            res.into(),
        ]);
    }

    // Control: the first section of factor 0 plus a 1% smooth bump.
    let k0 = cfg.params.dims_ladder[0];
    let fb = ws.basis(k0)?.factor_basis(0);
    let f = *model.factor(0);
    let kind = fb.factor_bases()[0].set.kind();
    let rms = 1.0 / (f.area() * model.frame().volume_normalization).sqrt();
    let bump = |z: C64| {
        let [x, y] = f.lattice_coords(z);
        (2.0 * PI * x).cos() * (2.0 * PI * y).sin()
    };
    let control = kodaira_ratios(&f, k0, kind, hg, &|z| {
        vec![fb.values(&[z])[0] + 0.01 * rms * bump(z)]
    })[0]
        / fb.spectral_scale();

    let a1 = criterion(
        "A1",
        mismatches as f64,
        "0 count mismatches; min Gram eigenvalue > gram_tol",
        mismatches == 0 && min_eig_all > cfg.gram_tol,
        format!(
            "k = {}; smallest Gram eigenvalue {min_eig_all:.3e}",
            fmt_list(&cfg.params.dims_ladder)
        ),
    );
    let a2 = criterion(
        "A2",
        max_res,
        "<= 1e-6; perturbed control >= 1e-3",
        !evaluated.is_empty() && max_res <= 1e-6 && control >= 1e-3,
        format!(
            "grid {hg}; evaluated at k = {} (levels with 4*level <= grid); control residual {control:.3e} at k = {k0}",
            fmt_list(&evaluated)
        ),
    );
    Ok(Outcome {
        tables: vec![t],
        criteria: vec![a1, a2],
    })
}

fn density(ws: &Workspace<'_>) -> Result<Outcome> {
    let cfg = ws.config;
    let model = &ws.model;
    let n = model.dim();
    let (pts, _) = probe_points(cfg, Experiment::Density);
    let mut header = point_header("z", n);
    header.extend(["k", "density", "b0k_n", "relerr"].map(String::from));
    let mut t = Table::with_header("density.csv", header);
    let mut tr = Table::new("density_trace.csv", &["k", "trace", "sections", "relerr"]);
    let mut worst_trace = 0.0f64;
    let mut worst_density = 0.0f64;
    let mut large_k = Vec::new();
    for &k in &cfg.k_ladder {
        let b = ws.basis(k)?;
        // Independent quadrature: a grid that shares no nodes with the
        // Gram grid.
        let total = trace(&b, b.resolution() + 1);
        let count = b.len() as f64;
        let e = (total - count).abs() / count;
        worst_trace = worst_trace.max(e);
        tr.push(vec![k.into(), total.into(), b.len().into(), e.into()]);
        let expected = model.b0() * f64::from(k).powi(n as i32);
        for p in &pts {
            let z = model.to_complex(p);
            let d = density_at(&b, &z);
            let rel = (d - expected).abs() / expected;
            if k >= 16 {
                worst_density = worst_density.max(rel);
            }
            let mut row = point_cells(&z);
            row.extend([k.into(), d.into(), expected.into(), rel.into()]);
            t.push(row);
        }
        if k >= 16 {
            large_k.push(k);
        }
    }
    let k_cal = *cfg.k_ladder.last().unwrap();
    let cal = c_model_check(model, k_cal);
    let mut ct = Table::new(
        "calibration.csv",
        &["k", "disc_density", "expected", "relerr"],
    );
    ct.push(vec![
        k_cal.into(),
        cal.disc_density.into(),
        cal.expected.into(),
        cal.relative_error.into(),
    ]);
    let pass = worst_trace <= 1e-8
        && cal.relative_error <= 0.01
        && !large_k.is_empty()
        && worst_density <= 0.02;
    let a3 = criterion(
        "A3",
        worst_density,
        "density relerr <= 0.02 for k >= 16; trace relerr <= 1e-8; calibration <= 0.01",
        pass,
        format!(
            "trace relerr {worst_trace:.3e}; calibration relerr {:.3e} at k = {k_cal}; density checked at k = {}",
            cal.relative_error,
            fmt_list(&large_k)
        ),
    );
    Ok(Outcome {
        tables: vec![t, tr, ct],
        criteria: vec![a3],
    })
}

/// `y` moved by chart length `s`, split evenly over the factors.
fn displaced(model: &ProductModel, y: &Point, s: f64, angles: &[f64]) -> Point {
    let n = model.dim() as f64;
    let z: Vec<C64> = model
        .to_complex(y)
        .iter()
        .zip(angles)
        .map(|(z, &a)| z + C64::from_polar(s / n.sqrt(), a))
        .collect();
    model.from_complex(&z)
}

fn pair_header(n: usize, tail: &[&str]) -> Vec<String> {
    let mut h = point_header("x", n);
    h.extend(point_header("y", n));
    h.extend(tail.iter().map(|s| s.to_string()));
    h
}

fn offdiag(ws: &Workspace<'_>) -> Result<Outcome> {
    let cfg = ws.config;
    let model = &ws.model;
    let n = model.dim();
    let (pts, mut rng) = probe_points(cfg, Experiment::Offdiag);
    let angles = random_angles(&mut rng, n);
    let y = &pts[0];
    let bases = ws.ladder(&cfg.k_ladder)?;
    let s = cfg.params.separation;
    let mut t = Table::with_header(
        "offdiag.csv",
        pair_header(n, &["k", "dist", "log_ratio", "model"]),
    );
    let mut fits = Vec::new();
    for sep in [s, 2.0 * s] {
        let x = displaced(model, y, sep, &angles);
        let fit = offdiagonal_fit(&bases, &x, y)?;
        for smp in &fit.samples {
            let mut row = lattice_point_cells(model, &x);
            row.extend(lattice_point_cells(model, y));
            row.extend([
                smp.k.into(),
                fit.separation.into(),
                smp.log_ratio.into(),
                smp.model_log_ratio.into(),
            ]);
            t.push(row);
        }
        fits.push(fit);
    }
    let dev = fits[0].relative_deviation.max(fits[1].relative_deviation);
    let quad = fits[1].c_fit / fits[0].c_fit;
    let quad_dev = (quad / 4.0 - 1.0).abs();
    let in_range = fits[1].separation <= 0.15 + 1e-12;
    let a4 = criterion(
        "A4",
        dev,
        "rate within 10% of 2 Im Psi; doubling the separation scales it by 4 within 15%; separations <= 0.15",
        dev <= 0.1 && quad_dev <= 0.15 && in_range,
        format!(
            "separations {:.4}, {:.4}; c_fit {:.6e}, {:.6e}; c_model {:.6e}, {:.6e}; doubling ratio {quad:.4}; max phase deviation {:.3e}",
            fits[0].separation,
            fits[1].separation,
            fits[0].c_fit,
            fits[1].c_fit,
            fits[0].c_model,
            fits[1].c_model,
            fits[0].max_phase_deviation.max(fits[1].max_phase_deviation)
        ),
    );
    Ok(Outcome {
        tables: vec![t],
        criteria: vec![a4],
    })
}

fn far(ws: &Workspace<'_>) -> Result<Outcome> {
    let cfg = ws.config;
    let model = &ws.model;
    let n = model.dim();
    let (pts, _) = probe_points(cfg, Experiment::Far);
    let y = &pts[0];
    let [du, dv] = cfg.params.far_offset;
    let x = Point::new(y.coords().iter().map(|[u, v]| [u + du, v + dv]).collect()).reduced();
    let bases = ws.ladder(&cfg.k_ladder)?;
    let report = far_separation_check(&bases, &x, y)?;
    // Control: at x = y the kernel grows like kⁿ and must not pass.
    let control = far_separation_check(&bases, y, y)?;
    let mut t = Table::with_header("far.csv", {
        let mut h = vec!["probe".to_string()];
        h.extend(pair_header(n, &["k", "abs_p", "ln_abs_p"]));
        h
    });
    for (label, xp, r) in [("far", &x, &report), ("diagonal", y, &control)] {
        for &(k, v) in &r.samples {
            let mut row = vec![Cell::from(label)];
            row.extend(lattice_point_cells(model, xp));
            row.extend(lattice_point_cells(model, y));
            row.extend([k.into(), v.into(), v.ln().into()]);
            t.push(row);
        }
    }
    let monotone: Vec<String> = report
        .monotone
        .iter()
        .map(|(p, ok)| format!("N={p}:{ok}"))
        .collect();
    let a5 = criterion(
        "A5",
        report.gamma,
        "separation >= 0.4; k^N |P_k| decreasing on the top half for N in {1,2,4,8}; gamma > 0; diagonal control fails",
        report.pass && report.separation >= 0.4 && !control.pass,
        format!(
            "separation {:.4}; {}; underflow {:?}; diagonal control passes: {}",
            report.separation,
            monotone.join(" "),
            report.underflow,
            control.pass
        ),
    );
    Ok(Outcome {
        tables: vec![t],
        criteria: vec![a5],
    })
}

/// Slack on the upper bound of a Cauchy-Schwarz ratio for roundoff.
const RATIO_SLACK: f64 = 1e-12;

fn ratio(ws: &Workspace<'_>) -> Result<Outcome> {
    let cfg = ws.config;
    let model = &ws.model;
    let n = model.dim();
    let (pts, mut rng) = probe_points(cfg, Experiment::Ratio);
    let k = cfg.params.ratio_k;
    let b = ws.basis(k)?;
    let m = cfg.params.ratio_samples;
    let ts: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    let mut t = Table::with_header("ratio_profile.csv", {
        let mut h = vec!["segment".to_string()];
        h.extend(pair_header(n, &["t", "f_k", "model"]));
        h
    });
    let mut in_range = true;
    let mut coincidence = 0.0f64;
    let mut interior = 0.0f64;
    for (seg, y) in pts.iter().enumerate() {
        let angles = random_angles(&mut rng, n);
        let x = displaced(model, y, cfg.params.ratio_length, &angles);
        let prof = ratio_profile(&b, &x, y, &ts);
        for ((&tv, &f), &mv) in prof.t.iter().zip(&prof.values).zip(&prof.model) {
            in_range &= (0.0..=1.0 + RATIO_SLACK).contains(&f);
            let mut row = vec![Cell::from(seg)];
            row.extend(lattice_point_cells(model, &x));
            row.extend(lattice_point_cells(model, y));
            row.extend([tv.into(), f.into(), mv.into()]);
            t.push(row);
        }
        coincidence = coincidence.max((prof.values[0] - 1.0).abs());
        interior = interior.max(prof.max_model_deviation(0.0, 1.0));
    }
    let a6 = criterion(
        "A6",
        interior,
        "f_k in [0, 1]; |f_k(coincidence) - 1| <= 1e-12; interior deviation from the model <= 0.15",
        in_range && coincidence <= 1e-12 && interior <= 0.15,
        format!(
            "k = {k}; {} segments of chart length {}; coincidence deviation {coincidence:.3e}; all values in range: {in_range}",
            pts.len(),
            cfg.params.ratio_length
        ),
    );
    Ok(Outcome {
        tables: vec![t],
        criteria: vec![a6],
    })
}

/// Odd rows copied from the preceding even rows: at even level the copy is
/// invariant under a half-period shift, so the map collides.
fn fake_mix(len: usize) -> DMatrix<C64> {
    DMatrix::from_fn(len, len, |r, c| {
        let src = r - r % 2;
        if c == src {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

fn embed(ws: &Workspace<'_>) -> Result<Outcome> {
    let cfg = ws.config;
    let model = &ws.model;
    let n = model.dim();
    let k = cfg.params.embed_k;
    let scan = cfg.params.scan_n;
    let (pts, _) = probe_points(cfg, Experiment::Embed);
    let b = ws.basis(k)?;
    let wd = well_defined_check(&b, scan)?;
    let inj = injectivity_scan(&b, scan)?;

    let mut et = Table::new("embed_scan.csv", &["quantity", "k", "parameter", "value"]);
    let mut put = |q: &str, p: f64, v: f64| et.push(vec![q.into(), k.into(), p.into(), v.into()]);
    put("min_density_ratio", scan as f64, wd.min_ratio);
    put("max_density_ratio", scan as f64, wd.max_ratio);
    put("min_fs_distance", scan as f64, inj.min_distance);
    put("alpha", scan as f64, inj.alpha);
    for s in &inj.near_diagonal {
        put("near_diagonal_min", s.scaled_separation, s.min_distance);
        put("near_diagonal_mean", s.scaled_separation, s.mean_distance);
    }

    let mut rt = Table::with_header("embed_rank.csv", {
        let mut h = point_header("z", n);
        h.extend(["k", "rank", "min_singular_value"].map(String::from));
        h
    });
    let needs_rank = b.len() > 2 * n;
    let mut ranks_ok = true;
    for p in &pts {
        let z = model.to_complex(p);
        let d = differential(&b, &z);
        ranks_ok &= !needs_rank || d.rank == 2 * n;
        let smin = d
            .singular_values
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let mut row = point_cells(&z);
        row.extend([k.into(), d.rank.into(), smin.into()]);
        rt.push(row);
    }

    // Controls on the first factor.
    let fb = b.factor_basis(0);
    let len = fb.len();
    let fake_collides = if fb.factor_bases()[0].set.level() % 2 == 0 {
        let fake = fb.with_mix(fake_mix(len))?;
        let r = injectivity_scan(&fake, scan)?;
        put("control_fake_min_fs_distance", scan as f64, r.min_distance);
        Some(r.min_distance < COLLISION_THRESHOLD)
    } else {
        None
    };
    let keep = len.div_ceil(2);
    let trunc = fb.with_mix(DMatrix::from_fn(keep, len, |r, c| {
        C64::new(if r == c { 1.0 } else { 0.0 }, 0.0)
    }))?;
    let twd = well_defined_check(&trunc, scan)?;
    let g = |z: &[C64]| fb.values(z)[len - 1];
    let xs: Vec<Vec<C64>> = pts
        .iter()
        .take(8)
        .map(|p| vec![model.to_complex(p)[0]])
        .collect();
    let grid = fb.resolution();
    let full_defect = reproducing_defect(&fb, grid, &g, &xs);
    let trunc_defect = reproducing_defect(&trunc, grid, &g, &xs);
    put(
        "control_truncated_min_density_ratio",
        scan as f64,
        twd.min_ratio,
    );
    put("control_full_reproducing_defect", grid as f64, full_defect);
    put(
        "control_truncated_reproducing_defect",
        grid as f64,
        trunc_defect,
    );

    let controls_ok = fake_collides.unwrap_or(true) && full_defect <= 1e-6 && trunc_defect >= 0.5;
    let a7 = criterion(
        "A7",
        inj.min_distance,
        "min density ratio >= 0.5; min FS distance > 0 with alpha > 0; rank 2n at every probe; controls detected",
        wd.min_ratio >= 0.5 && inj.pass && ranks_ok && controls_ok,
        format!(
            "k = {k}, scan {scan}; density ratio in [{:.4}, {:.4}]; alpha {:.4}; rank 2n at {} points: {ranks_ok}{}; fake collision: {:?}; truncated basis ratio {:.3e}, reproducing defect {:.3e} (full {:.3e})",
            wd.min_ratio,
            wd.max_ratio,
            inj.alpha,
            pts.len(),
            if needs_rank { "" } else { " (not required)" },
            fake_collides,
            twd.min_ratio,
            trunc_defect,
            full_defect
        ),
    );
    Ok(Outcome {
        tables: vec![et, rt],
        criteria: vec![a7],
    })
}

fn upper_triangle_header(dim: usize) -> Vec<String> {
    let mut h = Vec::new();
    for i in 0..dim {
        for j in i + 1..dim {
            h.push(format!("c{i}{j}"));
        }
    }
    h
}

fn pullback(ws: &Workspace<'_>) -> Result<Outcome> {
    let cfg = ws.config;
    let model = &ws.model;
    let n = model.dim();
    let (pts, _) = probe_points(cfg, Experiment::Pullback);
    let spots: Vec<Vec<C64>> = pts.iter().map(|p| model.to_complex(p)).collect();
    let bases = ws.ladder(&cfg.k_ladder)?;
    let rep = convergence_report(&bases, cfg.params.pullback_grid, &spots)?;
    let omega = model.omega(&pts[0]);

    let mut pt = Table::with_header("pullback.csv", {
        let mut h = point_header("z", n);
        h.extend(["k".to_string(), "method".to_string()]);
        h.extend(upper_triangle_header(2 * n));
        h.push("err".to_string());
        h
    });
    for b in &bases {
        for z in &spots {
            for s in [pullback_jacobian(b, z), pullback_ddbar(b, z)] {
                let mut row = point_cells(z);
                row.extend([b.k().into(), s.method.name().into()]);
                for i in 0..2 * n {
                    for j in i + 1..2 * n {
                        row.push(s.form[(i, j)].into());
                    }
                }
                row.push((&s.form - &omega).amax().into());
                pt.push(row);
            }
        }
    }
    let mut ct = Table::new(
        "convergence.csv",
        &[
            "k",
            "error_jacobian",
            "error_ddbar",
            "derivative_error_jacobian",
            "derivative_error_ddbar",
            "method_gap",
            "signature_preserved",
        ],
    );
    for r in &rep.rows {
        ct.push(vec![
            r.k.into(),
            r.error_jacobian.into(),
            r.error_ddbar.into(),
            r.derivative_error_jacobian.into(),
            r.derivative_error_ddbar.into(),
            r.method_gap.into(),
            r.signature_preserved.into(),
        ]);
    }

    let ddbar = rep.decay(PullbackMethod::DdbarLog, false);
    let jac = rep.decay(PullbackMethod::Jacobian, true);
    let beta = ddbar.beta.unwrap_or(f64::NEG_INFINITY);
    let signature = rep.rows.iter().all(|r| r.signature_preserved);
    let gap = rep.rows.iter().map(|r| r.method_gap).fold(0.0, f64::max);
    let positive = model.n_minus() == 0;
    let pass =
        ddbar.monotone && beta >= 0.8 && jac.monotone && signature && (!positive || gap <= 1e-8);
    let a8 = criterion(
        "A8",
        beta,
        "ddbar E(k) decreasing with beta >= 0.8; Jacobian E(k) decreasing over the top half; methods agree to 1e-8 on positive configs",
        pass,
        format!(
            "roundoff floor {:.1e}; ddbar monotone {} ({} points above floor{}); Jacobian top-half monotone {} ({} above floor); signature preserved {signature}; max method gap {gap:.3e}{}",
            ddbar.floor,
            ddbar.monotone,
            ddbar.points_above_floor,
            if ddbar.beta_is_lower_bound { ", beta is a lower bound" } else { "" },
            jac.monotone,
            jac.points_above_floor,
            if positive { " (positive config)" } else { " (twice the error on antiholomorphic factors)" }
        ),
    );
    Ok(Outcome {
        tables: vec![pt, ct],
        criteria: vec![a8],
    })
}

fn derivs(ws: &Workspace<'_>) -> Result<Outcome> {
    let cfg = ws.config;
    let model = &ws.model;
    let n = model.dim();
    let (pts, _) = probe_points(cfg, Experiment::Derivs);
    let p = &pts[0];
    let bases = ws.ladder(&cfg.k_ladder)?;
    let rep = derivative_sums(&bases, p)?;
    let mut t = Table::with_header("derivatives.csv", {
        let mut h = point_header("p", n);
        h.extend(["t", "family", "conjugate", "k", "sum", "slope"].map(String::from));
        h
    });
    for d in &rep.directions {
        for &(k, s) in &d.sums {
            let mut row = lattice_point_cells(model, p);
            row.extend([
                d.t.into(),
                d.family.name().into(),
                d.conjugate.into(),
                k.into(),
                s.into(),
                d.slope().into(),
            ]);
            t.push(row);
        }
    }
    let nf = n as f64;
    let m = cfg.slope_margin;
    let special: Vec<_> = rep
        .directions
        .iter()
        .filter(|d| d.family == DirectionFamily::Special)
        .collect();
    let generic: Vec<_> = rep
        .directions
        .iter()
        .filter(|d| d.family == DirectionFamily::Generic)
        .collect();
    let max_special = special
        .iter()
        .map(|d| d.slope())
        .fold(f64::NEG_INFINITY, f64::max);
    let min_generic = generic
        .iter()
        .map(|d| d.slope())
        .fold(f64::INFINITY, f64::min);
    let identity = rep
        .directions
        .iter()
        .map(|d| d.extremal_identity_defect)
        .fold(0.0, f64::max);
    let norm = rep
        .directions
        .iter()
        .map(|d| d.extremal_norm_defect)
        .fold(0.0, f64::max);
    let positive = model.n_minus() == 0;
    let special_zero = special.iter().all(|d| d.exact_zero);
    let gap = min_generic - max_special;
    let pass = max_special <= nf + m
        && min_generic >= nf + 1.0 - m
        && gap >= 0.4
        && identity <= 1e-9
        && (!positive || special_zero);
    let a9 = criterion(
        "A9",
        gap,
        "special slope <= n + margin; generic slope >= n + 1 - margin; gap >= 0.4; extremal identity <= 1e-9; positive configs: special sums zero",
        pass,
        format!(
            "n = {n}, margin {m}; max special slope {max_special:.4}; min generic slope {min_generic:.4}; special sums identically zero: {special_zero}; extremal identity defect {identity:.3e}, norm defect {norm:.3e}"
        ),
    );
    Ok(Outcome {
        tables: vec![t],
        criteria: vec![a9],
    })
}
