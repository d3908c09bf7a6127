//! Van Genuchten retention and permeability laws.
//!
//! Heads are in meters, permeabilities in m/s. All four head functions are
//! constant for `psi >= 0` (saturation clamp).
//!
//! The saturation curve used here is
//!
//! ```text
//! theta_hat(psi) = [1 + (-alpha * min(0, psi))^m]^(-(m-1)/m)
//! ```
//!
//! with the permeability following the Mualem closure in terms of
//! `theta_hat`.
//!
//! For `m < 2` that closure has an infinite slope at saturation,
//! `K ~ K_S (1 - 2 sqrt(alpha |psi|))`. A material with `k_smoothing = d > 0`
//! replaces `K` on `(-d, 0)` by the chord from `K(-d)` to `K_S`; with
//! `d = 0` (the default) the law is used as is.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest saturation used when evaluating the permeability derivative.
/// The Mualem derivative blows up as `theta_hat -> 1` for `m < 2`.
pub const SATURATION_CLAMP: f64 = 1.0 - 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstitutiveError {
    #[error("non-finite pressure head {0}")]
    NonFiniteHead(f64),
    #[error("invalid material parameters: {0}")]
    InvalidParams(String),
    #[error("unknown soil preset `{0}` (expected clay, silt or sand)")]
    UnknownPreset(String),
}

/// Van Genuchten parameters of a single soil.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub theta_r: f64,
    pub theta_s: f64,
    /// Inverse air-entry length, 1/m.
    pub alpha: f64,
    /// Shape exponent, strictly greater than one.
    pub m: f64,
    /// Saturated permeability, m/s.
    pub k_s: f64,
    /// Width of the near-saturation permeability chord, m.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub k_smoothing: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl MaterialParams {
    pub fn new(
        theta_r: f64,
        theta_s: f64,
        alpha: f64,
        m: f64,
        k_s: f64,
    ) -> Result<Self, ConstitutiveError> {
        let p = Self {
            theta_r,
            theta_s,
            alpha,
            m,
            k_s,
            k_smoothing: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ConstitutiveError> {
        if !(self.k_smoothing >= 0.0 && self.k_smoothing.is_finite()) {
            return Err(ConstitutiveError::InvalidParams(format!(
                "k_smoothing must be finite and >= 0, got {}",
                self.k_smoothing
            )));
        }
        let all_finite = [self.theta_r, self.theta_s, self.alpha, self.m, self.k_s]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(ConstitutiveError::InvalidParams(
                "all parameters must be finite".into(),
            ));
        }
        if !(0.0 <= self.theta_r && self.theta_r < self.theta_s && self.theta_s <= 1.0) {
            return Err(ConstitutiveError::InvalidParams(format!(
                "need 0 <= theta_r < theta_s <= 1, got theta_r={} theta_s={}",
                self.theta_r, self.theta_s
            )));
        }
        if self.alpha <= 0.0 || self.m <= 1.0 || self.k_s <= 0.0 {
            return Err(ConstitutiveError::InvalidParams(format!(
                "need alpha > 0, m > 1, k_s > 0, got alpha={} m={} k_s={}",
                self.alpha, self.m, self.k_s
            )));
        }
        Ok(())
    }

    pub fn clay() -> Self {
        Self {
            theta_r: 0.04,
            theta_s: 0.4,
            alpha: 0.2,
            m: 1.5,
            k_s: 1e-6,
            k_smoothing: 0.0,
        }
    }

    pub fn silt() -> Self {
        Self {
            theta_r: 0.08,
            theta_s: 0.4,
            alpha: 0.1,
            m: 1.2,
            k_s: 1e-8,
            k_smoothing: 0.0,
        }
    }

    pub fn sand() -> Self {
        Self {
            theta_r: 0.0,
            theta_s: 0.4,
            alpha: 2.0,
            m: 3.0,
            k_s: 1e-4,
            k_smoothing: 0.0,
        }
    }

    /// Looks up one of the named soils `clay`, `silt`, `sand`.
    pub fn preset(name: &str) -> Result<Self, ConstitutiveError> {
        match name {
            "clay" => Ok(Self::clay()),
            "silt" => Ok(Self::silt()),
            "sand" => Ok(Self::sand()),
            other => Err(ConstitutiveError::UnknownPreset(other.to_string())),
        }
    }

    /// `(m - 1) / m`, the outer exponent of the saturation curve.
    #[inline]
    fn r(&self) -> f64 {
        (self.m - 1.0) / self.m
    }
}

#[inline]
fn check(psi: f64) -> Result<(), ConstitutiveError> {
    if psi.is_finite() {
        Ok(())
    } else {
        Err(ConstitutiveError::NonFiniteHead(psi))
    }
}

/// `s = -alpha * min(0, psi)`, non-negative.
#[inline]
fn suction(psi: f64, p: &MaterialParams) -> f64 {
    -p.alpha * psi.min(0.0)
}

#[inline]
fn saturation_from_suction(s: f64, p: &MaterialParams) -> f64 {
    if s == 0.0 {
        return 1.0;
    }
    (1.0 + s.powf(p.m)).powf(-p.r())
}

/// Dimensionless effective saturation in (0, 1].
pub fn theta_hat(psi: f64, p: &MaterialParams) -> Result<f64, ConstitutiveError> {
    check(psi)?;
    Ok(saturation_from_suction(suction(psi, p), p))
}

/// Volumetric water content.
pub fn water_content(psi: f64, p: &MaterialParams) -> Result<f64, ConstitutiveError> {
    let th = theta_hat(psi, p)?;
    Ok(p.theta_r + th * (p.theta_s - p.theta_r))
}

#[inline]
fn mualem(th: f64, p: &MaterialParams) -> f64 {
    if th >= 1.0 {
        return p.k_s;
    }
    let r = p.r();
    let w = th.powf(1.0 / r);
    // 1 - (1 - w)^r without cancellation for small w
    let g = -(r * (-w).ln_1p()).exp_m1();
    p.k_s * th.sqrt() * g * g
}

/// Scalar permeability `K(psi)`, m/s.
pub fn permeability(psi: f64, p: &MaterialParams) -> Result<f64, ConstitutiveError> {
    if let Some((kd, slope)) = chord(psi, p) {
        return Ok(kd + slope * (psi + p.k_smoothing));
    }
    let th = theta_hat(psi, p)?;
    Ok(mualem(th, p))
}

/// `(K(-d), slope)` when `psi` lies in the smoothing band `(-d, 0)`.
#[inline]
fn chord(psi: f64, p: &MaterialParams) -> Option<(f64, f64)> {
    let d = p.k_smoothing;
    if d > 0.0 && psi > -d && psi < 0.0 {
        let kd = mualem(saturation_from_suction(p.alpha * d, p), p);
        Some((kd, (p.k_s - kd) / d))
    } else {
        None
    }
}

/// `d theta_hat / d psi` as a function of the suction `s`.
#[inline]
fn dsat_dpsi(s: f64, p: &MaterialParams) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    // alpha (m-1) s^(m-1) (1 + s^m)^(-(m-1)/m - 1)
    p.alpha * (p.m - 1.0) * s.powf(p.m - 1.0) * (1.0 + s.powf(p.m)).powf(-p.r() - 1.0)
}

/// Specific moisture capacity `d theta / d psi`, 1/m.
pub fn d_water_content(psi: f64, p: &MaterialParams) -> Result<f64, ConstitutiveError> {
    check(psi)?;
    if psi >= 0.0 {
        return Ok(0.0);
    }
    Ok((p.theta_s - p.theta_r) * dsat_dpsi(suction(psi, p), p))
}

/// `d (1/K) / d psi`, s/m^2. Evaluated with the saturation clamped to
/// [`SATURATION_CLAMP`] so the result stays finite as `psi -> 0-`.
pub fn d_inv_permeability(psi: f64, p: &MaterialParams) -> Result<f64, ConstitutiveError> {
    check(psi)?;
    if psi >= 0.0 {
        return Ok(0.0);
    }
    if let Some((kd, slope)) = chord(psi, p) {
        let k = kd + slope * (psi + p.k_smoothing);
        return Ok(-slope / (k * k));
    }
    let r = p.r();
    let mut s = suction(psi, p);
    let mut th = saturation_from_suction(s, p);
    if th > SATURATION_CLAMP {
        th = SATURATION_CLAMP;
        // suction consistent with the clamped saturation
        s = (th.powf(-1.0 / r) - 1.0).powf(1.0 / p.m);
    }
    let w = th.powf(1.0 / r);
    let one_minus_w = 1.0 - w;
    let g = -(r * (-w).ln_1p()).exp_m1();
    let dg_dth = one_minus_w.powf(r - 1.0) * th.powf(1.0 / r - 1.0);
    let dk_dth = p.k_s * (0.5 * g * g / th.sqrt() + 2.0 * th.sqrt() * g * dg_dth);
    let k = p.k_s * th.sqrt() * g * g;
    let dk = dk_dth * dsat_dpsi(s, p);
    Ok(-dk / (k * k))
}

/// `sup_psi d theta / d psi` over `[-1e4, 0]` m.
///
/// Located by sampling on a log-spaced suction grid followed by a
/// golden-section refinement of the best bracket.
pub fn lscheme_bound(p: &MaterialParams) -> f64 {
    const PSI_MIN: f64 = -1e4;
    const SAMPLES: usize = 2000;
    let cap = |psi: f64| d_water_content(psi, p).unwrap_or(0.0);

    // psi_i = -10^e, e in [-10, 4]
    let lo_exp = -10.0_f64;
    let hi_exp = PSI_MIN.abs().log10();
    let grid: Vec<f64> = (0..=SAMPLES)
        .map(|i| {
            let e = lo_exp + (hi_exp - lo_exp) * i as f64 / SAMPLES as f64;
            -(10f64.powf(e))
        })
        .collect();
    let (best, _) = grid.iter().enumerate().map(|(i, &psi)| (i, cap(psi))).fold(
        (0, f64::NEG_INFINITY),
        |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
    );

    // grid is decreasing in psi; bracket [grid[best+1], grid[best-1]]
    let mut a = grid[(best + 1).min(SAMPLES)];
    let mut b = if best == 0 { 0.0 } else { grid[best - 1] };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = cap(c);
    let mut fd = cap(d);
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * a.abs().max(b.abs()).max(1e-300) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = cap(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = cap(d);
        }
    }
    let refined = cap(0.5 * (a + b));
    refined.max(fc).max(fd).max(cap(grid[best]))
}
