//! Level-`m` theta series
//! `θ_{m,j}(z) = Σ_{r ∈ Z + j/m} exp(πi m r² τ + 2πi m r z)`
//! with a certified Gaussian tail bound.
//!
//! Writing `y = Im z / Im τ`, the term at `r` has modulus
//! `exp(-π m Im τ [(r + y)² - y²])`. Multiplying by the weight
//! `e^{-m ψ(z)}`, `ψ(z) = π (Im z)² / Im τ`, removes the `y²` growth, so the
//! weighted series is what the rest of the crate consumes: its terms are
//! centred Gaussians and never overflow.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest radius tried before giving up on a tolerance.
const MAX_RADIUS: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaSeries {
    level: u32,
    characteristic: u32,
    tau: Complex64,
}

/// Lattice-sum cutoff: all terms with `|r + y| ≤ radius` are summed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationBound {
    pub target_eps: f64,
    pub radius: u32,
}

/// Weighted value and first two derivatives:
/// `e^{-mψ(z)} · (θ, θ', θ'')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaJet {
    pub value: Complex64,
    pub d1: Complex64,
    pub d2: Complex64,
}

impl ThetaSeries {
    pub fn new(level: u32, characteristic: u32, tau: Complex64) -> Result<Self> {
        if level == 0 {
            return Err(Error::InvalidLevel(0));
        }
        if characteristic >= level {
            return Err(Error::InvalidCharacteristic {
                level,
                characteristic,
            });
        }
        if !(tau.im > 0.0) {
            return Err(Error::NonPositiveImTau(tau.im));
        }
        Ok(Self {
            level,
            characteristic,
            tau,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn characteristic(&self) -> u32 {
        self.characteristic
    }

    pub fn tau(&self) -> Complex64 {
        self.tau
    }

    /// `m ψ(z) = π m (Im z)² / Im τ`.
    pub fn log_weight(&self, z: Complex64) -> f64 {
        PI * f64::from(self.level) * z.im * z.im / self.tau.im
    }

    /// Gaussian tail bound on the weighted series for the derivative of
    /// order `p`, summed over both sides of the window `|r + y| ≤ radius`.
    pub fn tail_bound(&self, radius: u32, order: u32) -> f64 {
        let m = f64::from(self.level);
        let a = PI * m * self.tau.im;
        let r = f64::from(radius);
        let q = (-2.0 * a * r).exp();
        let fact = (1..=order).product::<u32>().max(1) as f64;
        let pre = (2.0 * PI * m * r).powi(order as i32);
        2.0 * pre * (-a * r * r).exp() * fact / (1.0 - q).powi(order as i32 + 1)
    }

    /// Smallest radius whose tail bound for derivatives up to `order` is
    /// below `eps`.
    pub fn truncation(&self, eps: f64, order: u32) -> Result<TruncationBound> {
        if !(eps > 0.0) {
            return Err(Error::NonPositiveEps(eps));
        }
        let m = f64::from(self.level);
        let a = PI * m * self.tau.im;
        // Monotone-decay region of |u|^p e^{-a u²}.
        let floor = (f64::from(order) / (2.0 * a)).sqrt().ceil().max(1.0) as u32;
        let mut radius = floor;
        while (0..=order).any(|p| self.tail_bound(radius, p) > eps) {
            radius += 1;
            if radius > MAX_RADIUS {
                break;
            }
        }
        Ok(TruncationBound {
            target_eps: eps,
            radius,
        })
    }

    fn sum_weighted(&self, z: Complex64, radius: u32, order: u32) -> ThetaJet {
        let m = f64::from(self.level);
        let b = self.tau.im;
        let y = z.im / b;
        let shift = f64::from(self.characteristic) / m;
        let r_rad = f64::from(radius);
        let lo = (-r_rad - y - shift).ceil() as i64;
        let hi = (r_rad - y - shift).floor() as i64;
        let mut jet = ThetaJet {
            value: Complex64::new(0.0, 0.0),
            d1: Complex64::new(0.0, 0.0),
            d2: Complex64::new(0.0, 0.0),
        };
        for n in lo..=hi {
            let r = n as f64 + shift;
            let u = r + y;
            let modulus = (-PI * m * b * u * u).exp();
            let phase = PI * m * r * r * self.tau.re + 2.0 * PI * m * r * z.re;
            let term = Complex64::from_polar(modulus, phase);
            jet.value += term;
            if order >= 1 {
                let c = Complex64::new(0.0, 2.0 * PI * m * r);
                jet.d1 += c * term;
                if order >= 2 {
                    jet.d2 += c * c * term;
                }
            }
        }
        jet
    }

    /// Weighted jet `e^{-mψ(z)}(θ, θ', θ'')`, each component within `eps`.
    pub fn jet_weighted(&self, z: Complex64, eps: f64) -> Result<ThetaJet> {
        let t = self.truncation(eps, 2)?;
        Ok(self.sum_weighted(z, t.radius, 2))
    }

    /// Weighted value `e^{-mψ(z)} θ(z)` within `eps`.
    pub fn eval_weighted(&self, z: Complex64, eps: f64) -> Result<Complex64> {
        let t = self.truncation(eps, 0)?;
        Ok(self.sum_weighted(z, t.radius, 0).value)
    }

    /// Raw value `θ(z)`, absolute error at most `eps`.
    pub fn eval(&self, z: Complex64, eps: f64) -> Result<Complex64> {
        let lw = self.log_weight(z);
        let t = self.truncation(eps * (-lw).exp(), 0)?;
        Ok(self.sum_weighted(z, t.radius, 0).value * lw.exp())
    }

    /// `dθ/dz`, absolute error at most `eps`.
    pub fn eval_grad(&self, z: Complex64, eps: f64) -> Result<Complex64> {
        let lw = self.log_weight(z);
        let t = self.truncation(eps * (-lw).exp(), 1)?;
        Ok(self.sum_weighted(z, t.radius, 1).d1 * lw.exp())
    }

    /// `d²θ/dz²`, absolute error at most `eps`.
    pub fn eval_hess(&self, z: Complex64, eps: f64) -> Result<Complex64> {
        let lw = self.log_weight(z);
        let t = self.truncation(eps * (-lw).exp(), 2)?;
        Ok(self.sum_weighted(z, t.radius, 2).d2 * lw.exp())
    }

    /// Fixed-radius raw sum; used as an oversized-truncation reference.
    pub fn eval_with_radius(&self, z: Complex64, radius: u32) -> Complex64 {
        self.sum_weighted(z, radius, 0).value * self.log_weight(z).exp()
    }

    /// Multiplier in `θ(z + τ) = e^{-πi m τ - 2πi m z} θ(z)`.
    pub fn tau_cocycle(&self, z: Complex64) -> Complex64 {
        let m = f64::from(self.level);
        (-Complex64::i() * PI * m * self.tau - 2.0 * Complex64::i() * PI * m * z).exp()
    }
}

/// The `m` series `θ_{m,0}, …, θ_{m,m-1}`.
pub fn basis_of_level(m: i64, tau: Complex64) -> Result<Vec<ThetaSeries>> {
    if m <= 0 {
        return Err(Error::InvalidLevel(m));
    }
    let m = u32::try_from(m).map_err(|_| Error::InvalidLevel(m))?;
    (0..m).map(|j| ThetaSeries::new(m, j, tau)).collect()
}
