//! Orthonormal bases of harmonic `(0, n₋)`-forms with values in `L^k`.
//!
//! On a positive factor of degree `d` the harmonic space is spanned by the
//! level `m = k d` theta series. On a negative factor (`m = k|d|`) it is
//! spanned by the Serre-conjugate forms `e^{-2mψ} conj(θ_{m,j}) dz̄`, with
//! `ψ = π (Im z)² / Im τ`. The product basis is the Künneth tensor product,
//! always carried in the single component `dz̄_1 ∧ … ∧ dz̄_{n₋}`.
//!
//! Every section is handled through its unit-weighted value
//! `u = f e^{-kφ₀}`, so `|u|² = |S|²_h` pointwise. For both signs this is a
//! weighted theta value (or its conjugate), which keeps magnitudes O(1).

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ProductModel, TorusFactor};
use crate::theta::{basis_of_level, ThetaJet, ThetaSeries};

type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionKind {
    Holomorphic,
    ConjugateForm,
}

/// Jet of a unit-weighted section value in the coordinate `z` of one factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionJet {
    pub u: C64,
    pub u_z: C64,
    pub u_zb: C64,
    pub u_zz: C64,
    pub u_zzb: C64,
    pub u_zbzb: C64,
}

impl SectionJet {
    fn conj(self) -> Self {
        // conj swaps ∂_z and ∂_z̄.
        Self {
            u: self.u.conj(),
            u_z: self.u_zb.conj(),
            u_zb: self.u_z.conj(),
            u_zz: self.u_zbzb.conj(),
            u_zzb: self.u_zzb.conj(),
            u_zbzb: self.u_zz.conj(),
        }
    }

    fn combine(coeffs: impl Iterator<Item = C64>, jets: &[SectionJet]) -> Self {
        let mut out = SectionJet {
            u: ZERO,
            u_z: ZERO,
            u_zb: ZERO,
            u_zz: ZERO,
            u_zzb: ZERO,
            u_zbzb: ZERO,
        };
        for (c, j) in coeffs.zip(jets) {
            out.u += c * j.u;
            out.u_z += c * j.u_z;
            out.u_zb += c * j.u_zb;
            out.u_zz += c * j.u_zz;
            out.u_zzb += c * j.u_zzb;
            out.u_zbzb += c * j.u_zbzb;
        }
        out
    }
}

/// Raw harmonic representatives on one factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSectionSet {
    factor: TorusFactor,
    k: u32,
    kind: SectionKind,
    members: Vec<ThetaSeries>,
    eps: f64,
}

impl FactorSectionSet {
    pub fn factor(&self) -> &TorusFactor {
        &self.factor
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn kind(&self) -> SectionKind {
        self.kind
    }

    pub fn members(&self) -> &[ThetaSeries] {
        &self.members
    }

    pub fn level(&self) -> u32 {
        self.k * self.factor.degree().unsigned_abs()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn theta_eps(&self) -> f64 {
        self.eps
    }

    pub fn with_theta_eps(mut self, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::NonPositiveEps(eps));
        }
        self.eps = eps;
        Ok(self)
    }

    /// Unit-weighted values `f_j(z) e^{-kφ₀(z)}` of every member.
    pub fn values(&self, z: C64) -> Vec<C64> {
        self.members
            .iter()
            .map(|t| {
                let v = t.eval_weighted(z, self.eps).expect("eps validated");
                match self.kind {
                    SectionKind::Holomorphic => v,
                    SectionKind::ConjugateForm => v.conj(),
                }
            })
            .collect()
    }

    /// Section coefficients `f_j(z)` in the global theta frame.
    pub fn raw_values(&self, z: C64) -> Vec<C64> {
        let scale = (f64::from(self.k) * self.factor.weight(z)).exp();
        self.values(z).into_iter().map(|v| v * scale).collect()
    }

    /// Jets of the unit-weighted values up to second order.
    pub fn jets(&self, z: C64) -> Vec<SectionJet> {
        let m = f64::from(self.level());
        let b = self.factor.tau().im;
        let i = C64::i();
        // Derivatives of ψ = π (Im z)² / b.
        let psi_z = -i * PI * z.im / b;
        let psi_zb = i * PI * z.im / b;
        let psi_zz = -PI / (2.0 * b);
        let psi_zzb = PI / (2.0 * b);
        let e_z = -m * psi_z;
        let e_zb = -m * psi_zb;
        self.members
            .iter()
            .map(|t| {
                let ThetaJet { value, d1, d2 } = t.jet_weighted(z, self.eps).expect("eps");
                let jet = SectionJet {
                    u: value,
                    u_z: d1 + e_z * value,
                    u_zb: e_zb * value,
                    u_zz: d2 + 2.0 * e_z * d1 + (e_z * e_z - m * psi_zz) * value,
                    u_zzb: e_zb * d1 + (e_z * e_zb - m * psi_zzb) * value,
                    u_zbzb: (e_zb * e_zb - m * psi_zz) * value,
                };
                match self.kind {
                    SectionKind::Holomorphic => jet,
                    SectionKind::ConjugateForm => jet.conj(),
                }
            })
            .collect()
    }
}

pub const DEFAULT_THETA_EPS: f64 = 1e-12;

/// The `k·|d|` raw harmonic representatives of one factor.
pub fn raw_factor_basis(factor: &TorusFactor, k: i64) -> Result<FactorSectionSet> {
    if k <= 0 {
        return Err(Error::InvalidPower(k));
    }
    let k = u32::try_from(k).map_err(|_| Error::InvalidPower(k))?;
    let m = i64::from(k) * i64::from(factor.degree().unsigned_abs());
    let kind = if factor.degree() > 0 {
        SectionKind::Holomorphic
    } else {
        SectionKind::ConjugateForm
    };
    Ok(FactorSectionSet {
        factor: *factor,
        k,
        kind,
        members: basis_of_level(m, factor.tau())?,
        eps: DEFAULT_THETA_EPS,
    })
}

/// Factor section sets whose tensor products span `H^{n₋}(M, L^k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KunnethBasis {
    model: ProductModel,
    k: u32,
    sets: Vec<FactorSectionSet>,
}

impl KunnethBasis {
    pub fn model(&self) -> &ProductModel {
        &self.model
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn sets(&self) -> &[FactorSectionSet] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.iter().map(FactorSectionSet::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multi-index of product section `idx` (lexicographic, first factor
    /// varies slowest).
    pub fn multi_index(&self, idx: usize) -> Vec<usize> {
        let sizes: Vec<usize> = self.sets.iter().map(FactorSectionSet::len).collect();
        decode_index(idx, &sizes)
    }

    /// Unit-weighted values of all product sections at `z`.
    pub fn values(&self, z: &[C64]) -> Vec<C64> {
        let parts: Vec<Vec<C64>> = self
            .sets
            .iter()
            .zip(z)
            .map(|(s, &zj)| s.values(zj))
            .collect();
        kron_vectors(&parts)
    }
}

pub fn kunneth_basis(model: &ProductModel, k: i64) -> Result<KunnethBasis> {
    let sets = model
        .factors()
        .iter()
        .map(|f| raw_factor_basis(f, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(KunnethBasis {
        model: model.clone(),
        k: sets[0].k,
        sets,
    })
}

pub(crate) fn decode_index(mut idx: usize, sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0; sizes.len()];
    for (slot, &s) in out.iter_mut().zip(sizes).rev() {
        *slot = idx % s;
        idx /= s;
    }
    out
}

/// Tensor product of vectors, lexicographic with the first factor slowest.
pub fn kron_vectors(parts: &[Vec<C64>]) -> Vec<C64> {
    let mut out = vec![C64::new(1.0, 0.0)];
    for p in parts {
        let mut next = Vec::with_capacity(out.len() * p.len());
        for &a in &out {
            next.extend(p.iter().map(|&b| a * b));
        }
        out = next;
    }
    out
}

pub fn kron_matrices(parts: &[DMatrix<C64>]) -> DMatrix<C64> {
    let mut out = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
    for p in parts {
        out = out.kronecker(p);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub entries: DMatrix<C64>,
    pub quadrature_resolution: usize,
    /// Largest entrywise change against the stride-2 subgrid.
    pub estimated_quadrature_error: f64,
}

impl GramMatrix {
    pub fn min_eigenvalue(&self) -> f64 {
        self.entries
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn hermitian_defect(&self) -> f64 {
        (&self.entries - self.entries.adjoint()).camax()
    }

    pub fn condition_number(&self) -> f64 {
        let ev = self.entries.clone().symmetric_eigenvalues();
        let max = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }
}

/// Resolution floor `4 · level` per real dimension.
pub fn resolution_floor(level: u32) -> usize {
    4 * level as usize
}

/// Gram matrix of one factor set by the periodic trapezoidal rule on the
/// half-offset `n × n` lattice grid.
pub fn factor_gram(set: &FactorSectionSet, n: usize) -> Result<GramMatrix> {
    let floor = resolution_floor(set.level());
    if n < floor {
        return Err(Error::ResolutionBelowFloor { got: n, floor });
    }
    let f = set.factor();
    let pts = f.grid(n);
    let len = set.len();
    // Per-row partial sums in parallel, then a fixed-order reduction.
    let rows: Vec<(DMatrix<C64>, DMatrix<C64>)> = pts
        .par_chunks(n)
        .enumerate()
        .map(|(row, chunk)| {
            let mut full = DMatrix::zeros(len, len);
            let mut sub = DMatrix::zeros(len, len);
            for (col, &z) in chunk.iter().enumerate() {
                let v = set.values(z);
                let on_sub = row % 2 == 0 && col % 2 == 0;
                for j in 0..len {
                    let vj = v[j].conj();
                    for i in 0..len {
                        let a = v[i] * vj;
                        full[(i, j)] += a;
                        if on_sub {
                            sub[(i, j)] += a;
                        }
                    }
                }
            }
            (full, sub)
        })
        .collect();
    let mut full = DMatrix::zeros(len, len);
    let mut sub = DMatrix::zeros(len, len);
    for (a, b) in rows {
        full += a;
        sub += b;
    }
    let vol = f.area() * crate::model::MetricFrame::STANDARD.volume_normalization;
    let cell = vol / (n * n) as f64;
    full *= C64::new(cell, 0.0);
    sub *= C64::new(4.0 * cell, 0.0);
    let entries = (&full + full.adjoint()) * C64::new(0.5, 0.0);
    let estimated_quadrature_error = (&entries - &sub).camax();
    Ok(GramMatrix {
        entries,
        quadrature_resolution: n,
        estimated_quadrature_error,
    })
}

/// Gram matrix of the Künneth product sections, assembled as the tensor
/// product of factor Gram matrices.
pub fn gram(basis: &KunnethBasis, n: usize) -> Result<(GramMatrix, Vec<GramMatrix>)> {
    let factor_grams = basis
        .sets()
        .iter()
        .map(|s| factor_gram(s, n))
        .collect::<Result<Vec<_>>>()?;
    let entries = kron_matrices(
        &factor_grams
            .iter()
            .map(|g| g.entries.clone())
            .collect::<Vec<_>>(),
    );
    let err = factor_grams
        .iter()
        .map(|g| g.estimated_quadrature_error)
        .fold(0.0, f64::max);
    Ok((
        GramMatrix {
            entries,
            quadrature_resolution: n,
            estimated_quadrature_error: err,
        },
        factor_grams,
    ))
}

/// Gram matrix by direct quadrature on the full product grid. Cost grows as
/// `n^{2·dim}`; intended for small cross-checks.
pub fn gram_direct(basis: &KunnethBasis, n: usize) -> Result<GramMatrix> {
    for s in basis.sets() {
        let floor = resolution_floor(s.level());
        if n < floor {
            return Err(Error::ResolutionBelowFloor { got: n, floor });
        }
    }
    let grids: Vec<Vec<C64>> = basis.sets().iter().map(|s| s.factor().grid(n)).collect();
    let sizes: Vec<usize> = grids.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().product();
    let len = basis.len();
    let mut g = DMatrix::zeros(len, len);
    for idx in 0..total {
        let mi = decode_index(idx, &sizes);
        let z: Vec<C64> = mi.iter().zip(&grids).map(|(&i, gr)| gr[i]).collect();
        let v = basis.values(&z);
        for i in 0..len {
            for j in 0..len {
                g[(i, j)] += v[i] * v[j].conj();
            }
        }
    }
    let vol = basis.model().volume();
    g *= C64::new(vol / total as f64, 0.0);
    Ok(GramMatrix {
        entries: g,
        quadrature_resolution: n,
        estimated_quadrature_error: f64::NAN,
    })
}

/// Orthonormalization data for one factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorBasis {
    pub set: FactorSectionSet,
    pub gram: GramMatrix,
    /// Lower Cholesky factor `L` of the Gram matrix.
    pub cholesky: DMatrix<C64>,
    /// `L^{-1}`: orthonormal values are `L^{-1} · raw values`.
    pub transform: DMatrix<C64>,
}

impl FactorBasis {
    pub fn values(&self, z: C64) -> Vec<C64> {
        mat_vec(&self.transform, &self.set.values(z))
    }

    pub fn jets(&self, z: C64) -> Vec<SectionJet> {
        let raw = self.set.jets(z);
        (0..self.transform.nrows())
            .map(|i| SectionJet::combine(self.transform.row(i).iter().cloned(), &raw))
            .collect()
    }

    pub fn cholesky_condition(&self) -> f64 {
        let sv = self.cholesky.clone().singular_values();
        let max = sv.iter().cloned().fold(0.0, f64::max);
        let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }

    fn orthonormal_gram(&self) -> DMatrix<C64> {
        &self.transform * &self.gram.entries * self.transform.adjoint()
    }
}

pub(crate) fn mat_vec(m: &DMatrix<C64>, v: &[C64]) -> Vec<C64> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Orthonormal basis `{S_j}` of `H^{n₋}(M, L^k)`, optionally remixed by a
/// matrix acting on the Künneth product basis.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicBasis {
    model: ProductModel,
    k: u32,
    factors: Vec<FactorBasis>,
    mix: Option<DMatrix<C64>>,
    resolution: usize,
}

/// Values and derivatives of all basis sections at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisJets {
    pub values: Vec<C64>,
    /// `dz[t][j] = ∂_{z_t} u_j`.
    pub dz: Vec<Vec<C64>>,
    /// `dzb[t][j] = ∂_{z̄_t} u_j`.
    pub dzb: Vec<Vec<C64>>,
    /// `dzdzb[a][b][j] = ∂_{z_a} ∂_{z̄_b} u_j`.
    pub dzdzb: Vec<Vec<Vec<C64>>>,
}

/// Factor-by-factor Cholesky orthonormalization.
pub fn orthonormalize(raw: &KunnethBasis, grams: Vec<GramMatrix>) -> Result<HarmonicBasis> {
    if grams.len() != raw.sets().len() {
        return Err(Error::DimensionMismatch {
            expected: raw.sets().len(),
            got: grams.len(),
        });
    }
    let resolution = grams[0].quadrature_resolution;
    let factors = raw
        .sets()
        .iter()
        .zip(grams)
        .map(|(set, gram)| {
            let min = gram.min_eigenvalue();
            if !(min > 0.0) {
                return Err(Error::NotPositiveDefinite {
                    min_eigenvalue: min,
                });
            }
            let chol = Cholesky::new(gram.entries.clone()).ok_or(Error::NotPositiveDefinite {
                min_eigenvalue: min,
            })?;
            let l = chol.l();
            let transform = l
                .clone()
                .solve_lower_triangular(&DMatrix::identity(l.nrows(), l.ncols()))
                .ok_or(Error::NotPositiveDefinite {
                    min_eigenvalue: min,
                })?;
            Ok(FactorBasis {
                set: set.clone(),
                gram,
                cholesky: l,
                transform,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HarmonicBasis {
        model: raw.model().clone(),
        k: raw.k(),
        factors,
        mix: None,
        resolution,
    })
}

impl HarmonicBasis {
    /// Raw Künneth sections, quadrature Gram at resolution `grid_n`, and
    /// Cholesky orthonormalization, with a Gram eigenvalue floor `gram_tol`.
    pub fn build(model: &ProductModel, k: u32, grid_n: usize, theta_eps: f64) -> Result<Self> {
        Self::build_with_tol(model, k, grid_n, theta_eps, 1e-12)
    }

    pub fn build_with_tol(
        model: &ProductModel,
        k: u32,
        grid_n: usize,
        theta_eps: f64,
        gram_tol: f64,
    ) -> Result<Self> {
        let mut raw = kunneth_basis(model, i64::from(k))?;
        for s in &mut raw.sets {
            *s = s.clone().with_theta_eps(theta_eps)?;
        }
        let (_, grams) = gram(&raw, grid_n)?;
        for g in &grams {
            let min = g.min_eigenvalue();
            if min <= gram_tol {
                return Err(Error::NotPositiveDefinite {
                    min_eigenvalue: min,
                });
            }
        }
        orthonormalize(&raw, grams)
    }

    /// Uses the smallest admissible even resolution.
    pub fn build_default(model: &ProductModel, k: u32) -> Result<Self> {
        let level = model
            .factors()
            .iter()
            .map(|f| k * f.degree().unsigned_abs())
            .max()
            .unwrap_or(1);
        Self::build(model, k, resolution_floor(level).max(8), DEFAULT_THETA_EPS)
    }

    pub fn model(&self) -> &ProductModel {
        &self.model
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn factor_bases(&self) -> &[FactorBasis] {
        &self.factors
    }

    pub fn mix(&self) -> Option<&DMatrix<C64>> {
        self.mix.as_ref()
    }

    /// Number of sections, `d_k + 1` for an unmodified basis.
    pub fn len(&self) -> usize {
        match &self.mix {
            Some(m) => m.nrows(),
            None => self.product_len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn product_len(&self) -> usize {
        self.factors.iter().map(|f| f.set.len()).product()
    }

    /// Replace sections by `mix · S` (rows index the new sections).
    pub fn with_mix(&self, mix: DMatrix<C64>) -> Result<Self> {
        if mix.ncols() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: mix.ncols(),
            });
        }
        let combined = match &self.mix {
            Some(m) => mix * m,
            None => mix,
        };
        Ok(Self {
            mix: Some(combined),
            ..self.clone()
        })
    }

    /// The one-factor basis of factor `i` (only meaningful without a mix).
    pub fn factor_basis(&self, i: usize) -> HarmonicBasis {
        HarmonicBasis {
            model: ProductModel::new(vec![*self.model.factor(i)]).expect("valid factor"),
            k: self.k,
            factors: vec![self.factors[i].clone()],
            mix: None,
            resolution: self.resolution,
        }
    }

    pub fn max_cholesky_condition(&self) -> f64 {
        self.factors
            .iter()
            .map(FactorBasis::cholesky_condition)
            .fold(1.0, f64::max)
    }

    /// Unit-weighted `J₀` components of all sections at complex point `z`.
    pub fn values(&self, z: &[C64]) -> Vec<C64> {
        let parts: Vec<Vec<C64>> = self
            .factors
            .iter()
            .zip(z)
            .map(|(f, &zj)| f.values(zj))
            .collect();
        self.apply_mix(kron_vectors(&parts))
    }

    fn apply_mix(&self, v: Vec<C64>) -> Vec<C64> {
        match &self.mix {
            Some(m) => mat_vec(m, &v),
            None => v,
        }
    }

    /// Values and derivatives up to `∂∂̄` of every section.
    pub fn jets(&self, z: &[C64]) -> BasisJets {
        let n = self.factors.len();
        let fj: Vec<Vec<SectionJet>> = self
            .factors
            .iter()
            .zip(z)
            .map(|(f, &zj)| f.jets(zj))
            .collect();
        let pick = |sel: &dyn Fn(usize, &SectionJet) -> C64| -> Vec<C64> {
            let parts: Vec<Vec<C64>> = fj
                .iter()
                .enumerate()
                .map(|(i, js)| js.iter().map(|j| sel(i, j)).collect())
                .collect();
            self.apply_mix(kron_vectors(&parts))
        };
        let values = pick(&|_, j| j.u);
        let dz = (0..n)
            .map(|t| pick(&|i, j| if i == t { j.u_z } else { j.u }))
            .collect();
        let dzb = (0..n)
            .map(|t| pick(&|i, j| if i == t { j.u_zb } else { j.u }))
            .collect();
        let dzdzb = (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| {
                        pick(&|i, j| match (i == a, i == b) {
                            (true, true) => j.u_zzb,
                            (true, false) => j.u_z,
                            (false, true) => j.u_zb,
                            (false, false) => j.u,
                        })
                    })
                    .collect()
            })
            .collect();
        BasisJets {
            values,
            dz,
            dzb,
            dzdzb,
        }
    }

    /// Gram matrix of the orthonormal sections recomputed from the stored
    /// quadrature Gram matrices. Dense; size `len()²`.
    pub fn recomputed_gram(&self) -> DMatrix<C64> {
        let parts: Vec<DMatrix<C64>> = self
            .factors
            .iter()
            .map(FactorBasis::orthonormal_gram)
            .collect();
        let g = kron_matrices(&parts);
        match &self.mix {
            Some(m) => m * g * m.adjoint(),
            None => g,
        }
    }

    /// Largest entrywise deviation of the recomputed Gram from the identity,
    /// evaluated factor by factor when there is no mix.
    pub fn orthonormality_defect(&self) -> f64 {
        match &self.mix {
            None => {
                // ‖A⊗B - I⊗I‖_max is controlled by the factor defects.
                let mut worst = 0.0f64;
                for f in &self.factors {
                    let g = f.orthonormal_gram();
                    let id = DMatrix::<C64>::identity(g.nrows(), g.ncols());
                    worst = worst.max((g - id).camax());
                }
                worst
            }
            Some(_) => {
                let g = self.recomputed_gram();
                let id = DMatrix::<C64>::identity(g.nrows(), g.ncols());
                (g - id).camax()
            }
        }
    }

    /// Relative discrete Kodaira-Laplacian residual of every section, see
    /// [`kodaira_ratio`]. Product sections are bounded by the sum of their
    /// factor ratios over `μ = k Σ_j |Ṙ_j|`.
    pub fn harmonicity_residuals(&self, grid_n: usize) -> Result<Vec<f64>> {
        let mu = self.spectral_scale();
        match (&self.mix, self.factors.len()) {
            (None, _) => {
                let per_factor: Vec<Vec<f64>> = self
                    .factors
                    .iter()
                    .map(|fb| {
                        let t = &fb.transform;
                        let set = &fb.set;
                        kodaira_ratios(set.factor(), set.k(), set.kind(), grid_n, &|z| {
                            mat_vec(t, &set.values(z))
                        })
                    })
                    .collect();
                let sizes: Vec<usize> = per_factor.iter().map(Vec::len).collect();
                Ok((0..self.len())
                    .map(|idx| {
                        decode_index(idx, &sizes)
                            .iter()
                            .zip(&per_factor)
                            .map(|(&j, r)| r[j])
                            .sum::<f64>()
                            / mu
                    })
                    .collect())
            }
            (Some(_), 1) => {
                let set = &self.factors[0].set;
                Ok(
                    kodaira_ratios(set.factor(), set.k(), set.kind(), grid_n, &|z| {
                        self.values(&[z])
                    })
                    .into_iter()
                    .map(|r| r / mu)
                    .collect(),
                )
            }
            (Some(_), _) => Err(Error::Unsupported(
                "harmonicity residual of remixed product bases",
            )),
        }
    }

    /// `k Σ_j |Ṙ_j|`, the spectral scale used to normalize residuals.
    pub fn spectral_scale(&self) -> f64 {
        f64::from(self.k)
            * self
                .model
                .factors()
                .iter()
                .map(|f| f.curvature_eigenvalue().abs())
                .sum::<f64>()
    }
}

/// `‖□ s‖ / ‖s‖` for each component of a vector of unit-weighted sections on
/// one factor, where `□` is the Kodaira Laplacian of `L^k` on functions
/// (`∂̄*∂̄`, holomorphic kind) or on `(0,1)`-forms (`∂̄∂̄*`, conjugate kind).
///
/// At every grid point `p` the section is moved to the normal chart at `p`,
/// where the weight is exactly `kλ|w|²`, and `∂̄`, `∂̄* = -e^{2kλ|w|²} ∂_w
/// e^{-2kλ|w|²}` are applied with nested fourth-order central differences of
/// step `min(1, Im τ)/grid_n`. Norms are trapezoidal over the grid.
pub fn kodaira_ratios(
    factor: &TorusFactor,
    k: u32,
    kind: SectionKind,
    grid_n: usize,
    field: &(dyn Fn(C64) -> Vec<C64> + Sync),
) -> Vec<f64> {
    let model = ProductModel::new(vec![*factor]).expect("valid factor");
    let h = factor.tau().im.min(1.0) / grid_n as f64;
    let kf = f64::from(k);
    let lam = factor.weight_scale();
    let pts = factor.grid(grid_n);
    let partial: Vec<(Vec<f64>, Vec<f64>)> = pts
        .par_iter()
        .map(|&p| {
            let chart = model.normal_chart(&model.from_complex(&[p]));
            let mut cache: Vec<Option<Vec<C64>>> = vec![None; 81];
            let mut at = |i: i32, j: i32| -> Vec<C64> {
                let slot = ((i + 4) * 9 + (j + 4)) as usize;
                if cache[slot].is_none() {
                    let w = C64::new(f64::from(i) * h, f64::from(j) * h);
                    let mult = chart.factor_chart_multiplier(0, k, w);
                    cache[slot] = Some(field(p + w).into_iter().map(|v| v * mult).collect());
                }
                cache[slot].clone().unwrap()
            };
            let center = at(0, 0);
            let len = center.len();
            let damp = |i: i32, j: i32, sign: f64| -> f64 {
                let w2 = (f64::from(i * i + j * j)) * h * h;
                (sign * 2.0 * kf * lam * w2).exp()
            };
            // Inner first-order operator at offset (i, j), returns a vector.
            let mut inner = |i: i32, j: i32| -> Vec<C64> {
                match kind {
                    SectionKind::ConjugateForm => {
                        // ∂̄* s = -e^{2kφ} ∂_w (e^{-2kφ} s)
                        let mut f = |a: i32, b: i32| -> Vec<C64> {
                            let d = damp(a, b, -1.0);
                            at(a, b).into_iter().map(|v| v * d).collect()
                        };
                        let dw = stencil(&mut f, i, j, h, false);
                        let g = -damp(i, j, 1.0);
                        dw.into_iter().map(|v| v * g).collect()
                    }
                    SectionKind::Holomorphic => {
                        // e^{-2kφ} ∂̄ s, ready for the outer ∂_w.
                        let mut f = |a: i32, b: i32| at(a, b);
                        let d = damp(i, j, -1.0);
                        stencil(&mut f, i, j, h, true)
                            .into_iter()
                            .map(|v| v * d)
                            .collect()
                    }
                }
            };
            let outer = match kind {
                SectionKind::ConjugateForm => stencil(&mut inner, 0, 0, h, true),
                SectionKind::Holomorphic => stencil(&mut inner, 0, 0, h, false)
                    .into_iter()
                    .map(|v| -v)
                    .collect(),
            };
            let num: Vec<f64> = outer.iter().map(C64::norm_sqr).collect();
            let den: Vec<f64> = center.iter().map(C64::norm_sqr).collect();
            debug_assert_eq!(num.len(), len);
            (num, den)
        })
        .collect();
    let len = partial.first().map(|p| p.0.len()).unwrap_or(0);
    let mut num = vec![0.0; len];
    let mut den = vec![0.0; len];
    for (a, b) in partial {
        for i in 0..len {
            num[i] += a[i];
            den[i] += b[i];
        }
    }
    num.iter().zip(&den).map(|(n, d)| (n / d).sqrt()).collect()
}

/// Fourth-order `∂_w` (or `∂_w̄` when `bar`) of a vector field sampled on the
/// integer offset lattice, evaluated at offset `(i, j)`.
fn stencil(f: &mut dyn FnMut(i32, i32) -> Vec<C64>, i: i32, j: i32, h: f64, bar: bool) -> Vec<C64> {
    let coef = [(-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)];
    let mut dx: Option<Vec<C64>> = None;
    let mut dy: Option<Vec<C64>> = None;
    for &(o, c) in &coef {
        let vx = f(i + o, j);
        let vy = f(i, j + o);
        let acc_x = dx.get_or_insert_with(|| vec![ZERO; vx.len()]);
        for (a, v) in acc_x.iter_mut().zip(vx) {
            *a += v * c;
        }
        let acc_y = dy.get_or_insert_with(|| vec![ZERO; vy.len()]);
        for (a, v) in acc_y.iter_mut().zip(vy) {
            *a += v * c;
        }
    }
    let s = 1.0 / (12.0 * h);
    let sign = if bar { 1.0 } else { -1.0 };
    dx.unwrap()
        .into_iter()
        .zip(dy.unwrap())
        .map(|(x, y)| (x * s + C64::i() * sign * y * s) * 0.5)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sq(d: i32) -> TorusFactor {
        TorusFactor::new(C64::i(), d).unwrap()
    }

    #[test]
    fn factor_set_sizes_and_kinds() {
        let s = raw_factor_basis(&sq(1), 1).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.kind(), SectionKind::Holomorphic);
        let s = raw_factor_basis(&sq(-1), 3).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.kind(), SectionKind::ConjugateForm);
        let s = raw_factor_basis(&sq(-2), 5).unwrap();
        assert_eq!(s.len(), 10);
        assert!(raw_factor_basis(&sq(1), 0).is_err());
    }

    #[test]
    fn conjugate_form_first_order_identity() {
        // (∂_z + 2m ∂_zψ) f = 0 for f = e^{-2mψ} conj θ, checked with
        // finite differences of the raw values.
        let f = TorusFactor::new(C64::new(0.2, 0.9), -1).unwrap();
        let s = raw_factor_basis(&f, 3).unwrap();
        let m = 3.0;
        let z = C64::new(0.3, 0.4);
        let h = 1e-5;
        let dz = |g: &dyn Fn(C64) -> C64| {
            let dx = (g(z + h) - g(z - h)) / (2.0 * h);
            let dy = (g(z + C64::i() * h) - g(z - C64::i() * h)) / (2.0 * h);
            (dx - C64::i() * dy) * 0.5
        };
        for j in 0..3 {
            let g = |w: C64| s.raw_values(w)[j];
            let psi_z = -C64::i() * PI * z.im / f.tau().im;
            let lhs = dz(&g) + 2.0 * m * psi_z * g(z);
            assert!(lhs.norm() < 1e-6 * g(z).norm().max(1e-3), "{lhs}");
        }
    }

    #[test]
    fn jets_match_finite_differences() {
        for d in [1, -1] {
            let f = TorusFactor::new(C64::new(-0.3, 1.2), d).unwrap();
            let s = raw_factor_basis(&f, 2).unwrap();
            let z = C64::new(0.37, 0.61);
            let h = 1e-5;
            let jets = s.jets(z);
            let ddx = |g: &dyn Fn(C64) -> C64, z: C64| (g(z + h) - g(z - h)) / (2.0 * h);
            let ddy = |g: &dyn Fn(C64) -> C64, z: C64| {
                (g(z + C64::i() * h) - g(z - C64::i() * h)) / (2.0 * h)
            };
            for (j, jet) in jets.iter().enumerate() {
                let g = |w: C64| s.values(w)[j];
                let dz = (ddx(&g, z) - C64::i() * ddy(&g, z)) * 0.5;
                let dzb = (ddx(&g, z) + C64::i() * ddy(&g, z)) * 0.5;
                assert!((dz - jet.u_z).norm() < 1e-7 * (1.0 + jet.u_z.norm()));
                assert!((dzb - jet.u_zb).norm() < 1e-7 * (1.0 + jet.u_zb.norm()));
                let gz = |w: C64| s.jets(w)[j].u_z;
                let gzb = |w: C64| s.jets(w)[j].u_zb;
                let zz = (ddx(&gz, z) - C64::i() * ddy(&gz, z)) * 0.5;
                let zzb = (ddx(&gz, z) + C64::i() * ddy(&gz, z)) * 0.5;
                let zbzb = (ddx(&gzb, z) + C64::i() * ddy(&gzb, z)) * 0.5;
                assert!((zz - jet.u_zz).norm() < 1e-6 * (1.0 + jet.u_zz.norm()));
                assert!((zzb - jet.u_zzb).norm() < 1e-6 * (1.0 + jet.u_zzb.norm()));
                assert!((zbzb - jet.u_zbzb).norm() < 1e-6 * (1.0 + jet.u_zbzb.norm()));
            }
        }
    }

    #[test]
    fn level_one_gram_matches_closed_form() {
        // ‖θ_{m,j}‖² = vol_norm · Im τ / sqrt(2 m Im τ) = sqrt(2 Im τ / m) · … with
        // vol_norm = 2; for τ = i, m = 1 this is sqrt(2).
        let s = raw_factor_basis(&sq(1), 1).unwrap();
        let g = factor_gram(&s, 8).unwrap();
        // Dense reference: y-integral of the periodized Gaussian by a radius-50
        // sum on a fine midpoint grid.
        let fine = 4000;
        let mut acc = 0.0;
        for b in 0..fine {
            let y = (b as f64 + 0.5) / fine as f64;
            let v: f64 = (-50i64..=50)
                .map(|n| (-2.0 * PI * (n as f64 + y).powi(2)).exp())
                .sum();
            acc += v;
        }
        let dense = 2.0 * acc / fine as f64;
        assert!((g.entries[(0, 0)].re - dense).abs() < 1e-10);
        assert!((g.entries[(0, 0)].re - 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn gram_self_convergence() {
        let s = raw_factor_basis(&TorusFactor::new(C64::new(0.3, 0.9), 3).unwrap(), 1).unwrap();
        let a = factor_gram(&s, 12).unwrap();
        let b = factor_gram(&s, 24).unwrap();
        assert!((&a.entries - &b.entries).camax() <= 1e-10);
        assert!(a.hermitian_defect() <= 1e-14);
        assert!(a.min_eigenvalue() > 0.0);
        assert!(a.condition_number() < 1e3);
        assert!(factor_gram(&s, 11).is_err());
    }

    #[test]
    fn conjugation_duality() {
        let tau = C64::new(0.25, 1.1);
        let pos = raw_factor_basis(&TorusFactor::new(tau, 1).unwrap(), 3).unwrap();
        let neg = raw_factor_basis(&TorusFactor::new(tau, -1).unwrap(), 3).unwrap();
        let gp = factor_gram(&pos, 16).unwrap();
        let gn = factor_gram(&neg, 16).unwrap();
        let conj = gp.entries.map(|c| c.conj());
        assert!((&gn.entries - conj).camax() < 1e-10);
    }

    #[test]
    fn riemann_roch_counts() {
        let m = ProductModel::square(&[-1, 1]).unwrap();
        assert_eq!(kunneth_basis(&m, 2).unwrap().len(), 4);
        let m = ProductModel::square(&[-1, 2]).unwrap();
        assert_eq!(kunneth_basis(&m, 3).unwrap().len(), 18);
        assert_eq!(m.section_count(3), 18);
    }

    #[test]
    fn kunneth_ordering_is_lexicographic() {
        let m = ProductModel::square(&[-1, 1]).unwrap();
        let b = kunneth_basis(&m, 2).unwrap();
        let idx: Vec<Vec<usize>> = (0..4).map(|i| b.multi_index(i)).collect();
        assert_eq!(idx, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        let z = [C64::new(0.1, 0.2), C64::new(0.3, 0.4)];
        assert_eq!(b.values(&z), b.values(&z));
        let a0 = b.sets()[0].values(z[0]);
        let a1 = b.sets()[1].values(z[1]);
        assert_eq!(b.values(&z)[2], a0[1] * a1[0]);
    }

    #[test]
    fn tensor_product_gram_identity() {
        let m = ProductModel::square(&[-1, 1]).unwrap();
        let b = kunneth_basis(&m, 2).unwrap();
        let (g, _) = gram(&b, 8).unwrap();
        let direct = gram_direct(&b, 8).unwrap();
        assert!((&g.entries - &direct.entries).camax() < 1e-12);
    }

    #[test]
    fn orthonormal_after_cholesky() {
        let m = ProductModel::from_specs(&[(C64::new(0.1, 0.8), -1), (C64::i(), 2)]).unwrap();
        let basis = HarmonicBasis::build(&m, 3, 24, 1e-13).unwrap();
        assert_eq!(basis.len(), 18);
        let g = basis.recomputed_gram();
        let id = DMatrix::<C64>::identity(18, 18);
        assert!((g - id).camax() < 1e-9);
        assert!(basis.orthonormality_defect() < 1e-9);
        assert!(basis.max_cholesky_condition() < 1e6);
    }

    #[test]
    fn orthonormal_input_is_unchanged() {
        let s = raw_factor_basis(&sq(1), 2).unwrap();
        let raw = KunnethBasis {
            model: ProductModel::square(&[1]).unwrap(),
            k: 2,
            sets: vec![s],
        };
        let id = GramMatrix {
            entries: DMatrix::identity(2, 2),
            quadrature_resolution: 8,
            estimated_quadrature_error: 0.0,
        };
        let b = orthonormalize(&raw, vec![id]).unwrap();
        let z = [C64::new(0.2, 0.3)];
        let a = raw.values(&z);
        let v = b.values(&z);
        for (x, y) in a.iter().zip(&v) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_singular_gram() {
        let s = raw_factor_basis(&sq(1), 2).unwrap();
        let raw = KunnethBasis {
            model: ProductModel::square(&[1]).unwrap(),
            k: 2,
            sets: vec![s],
        };
        let bad = GramMatrix {
            entries: DMatrix::from_element(2, 2, C64::new(1.0, 0.0)),
            quadrature_resolution: 8,
            estimated_quadrature_error: 0.0,
        };
        assert!(matches!(
            orthonormalize(&raw, vec![bad]),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn holomorphic_dbar_is_discretization_small() {
        let f = sq(1);
        let set = raw_factor_basis(&f, 3).unwrap();
        let model = ProductModel::new(vec![f]).unwrap();
        let n = 32;
        let h = 1.0 / n as f64;
        // ∂̄ in the chart frame at a handful of points.
        for &p in f.grid(n).iter().step_by(97) {
            let chart = model.normal_chart(&model.from_complex(&[p]));
            let mut at = |i: i32, j: i32| -> Vec<C64> {
                let w = C64::new(f64::from(i) * h, f64::from(j) * h);
                let mult = chart.factor_chart_multiplier(0, 3, w);
                set.values(p + w).into_iter().map(|v| v * mult).collect()
            };
            let dbar = stencil(&mut at, 0, 0, h, true);
            let scale = set.values(p).iter().map(|v| v.norm()).fold(0.0, f64::max);
            // Fourth-order truncation error only: O(h⁴ (kπ)^{5/2}).
            for d in dbar {
                assert!(d.norm() <= 1e-4 * scale.max(1.0), "{}", d.norm());
            }
        }
    }

    #[test]
    fn conjugate_sections_are_harmonic() {
        let m = ProductModel::square(&[-1]).unwrap();
        let basis = HarmonicBasis::build(&m, 3, 64, 1e-13).unwrap();
        let r = basis.harmonicity_residuals(64).unwrap();
        assert_eq!(r.len(), 3);
        for v in r {
            assert!(v <= 1e-6, "{v}");
        }
    }

    #[test]
    fn perturbed_section_is_detected() {
        let f = sq(-1);
        let set = raw_factor_basis(&f, 3).unwrap();
        let bump = |z: C64| {
            let [x, y] = f.lattice_coords(z);
            C64::new((2.0 * PI * x).cos() * (2.0 * PI * y).sin(), 0.0)
        };
        let clean = kodaira_ratios(&f, 3, SectionKind::ConjugateForm, 64, &|z| {
            vec![set.values(z)[0]]
        });
        let dirty = kodaira_ratios(&f, 3, SectionKind::ConjugateForm, 64, &|z| {
            vec![set.values(z)[0] + 0.01 * bump(z)]
        });
        let mu = 3.0 * PI;
        assert!(clean[0] / mu < 1e-6);
        assert!(dirty[0] / mu >= 1e-3, "{}", dirty[0] / mu);
    }

    #[test]
    fn unitary_remix_preserves_density() {
        let m = ProductModel::square(&[-1]).unwrap();
        let basis = HarmonicBasis::build(&m, 4, 16, 1e-13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let raw = DMatrix::from_fn(4, 4, |_, _| C64::new(rng.random(), rng.random()));
        let q = raw.qr().q();
        let mixed = basis.with_mix(q).unwrap();
        for _ in 0..10 {
            let z = [C64::new(rng.random(), rng.random())];
            let a: f64 = basis.values(&z).iter().map(C64::norm_sqr).sum();
            let b: f64 = mixed.values(&z).iter().map(C64::norm_sqr).sum();
            assert!((a - b).abs() < 1e-10 * a);
        }
    }
}
