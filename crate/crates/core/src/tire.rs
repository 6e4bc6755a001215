//! Modified Dugoff combined-slip tire model.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::vehicle::{VehicleParams, GRAVITY};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TireParams {
    /// Longitudinal stiffness, N.
    pub c_x: f64,
    /// Cornering stiffness, N/rad.
    pub c_y: f64,
    pub s_clamp: f64,
    pub slip_eps: f64,
    /// Use signed `s` and `tan(α)` in the correction factors and `1 - s` in
    /// the denominators, exactly as the formula is usually printed. Kept
    /// only for comparison: braking and driving then stop mirroring each
    /// other. The default uses `|s|`, `|tan(α)|` and `1 - |s|`.
    pub literal_slip: bool,
}

impl Default for TireParams {
    fn default() -> Self {
        Self {
            c_x: 80_000.0,
            c_y: 50_000.0,
            s_clamp: 0.99,
            slip_eps: 1e-6,
            literal_slip: false,
        }
    }
}

impl TireParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_x > 0.0 && self.c_x.is_finite()) {
            return Err(CoreError::config("tire.c_x", "must be finite and > 0"));
        }
        if !(self.c_y > 0.0 && self.c_y.is_finite()) {
            return Err(CoreError::config("tire.c_y", "must be finite and > 0"));
        }
        if !(self.s_clamp > 0.0 && self.s_clamp < 1.0) {
            return Err(CoreError::config("tire.s_clamp", "must lie in (0, 1)"));
        }
        if !(self.slip_eps > 0.0) {
            return Err(CoreError::config("tire.slip_eps", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipState {
    pub s: f64,
    pub alpha: f64,
    pub f_z: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DugoffIntermediates {
    pub z: f64,
    pub f_of_z: f64,
    pub g_x: f64,
    pub g_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DugoffOutput {
    pub f_x: f64,
    pub f_y: f64,
    pub diag: DugoffIntermediates,
}

/// Saturation factor: parabolic below Z = 1, unity above.
pub fn saturation(z: f64) -> f64 {
    if z < 1.0 {
        z * (2.0 - z)
    } else {
        1.0
    }
}

pub fn dugoff_forces(slip: &SlipState, params: &TireParams) -> Result<DugoffOutput> {
    if !(slip.f_z >= 0.0) || !slip.f_z.is_finite() {
        return Err(CoreError::invalid(format!(
            "vertical load must be finite and >= 0, got {}",
            slip.f_z
        )));
    }
    if !(slip.s.is_finite() && slip.alpha.is_finite() && slip.mu.is_finite()) {
        return Err(CoreError::invalid("slip state contains a non-finite value"));
    }
    let s = slip.s.clamp(-params.s_clamp, params.s_clamp);
    let mu = slip.mu;
    let tan_a = slip.alpha.tan();

    let (s_term, tan_term, one_minus_s) = if params.literal_slip {
        (s, tan_a, 1.0 - s)
    } else {
        (s.abs(), tan_a.abs(), 1.0 - s.abs())
    };
    let g_x = (1.15 - 0.75 * mu) * s_term * s_term - (1.63 - 0.75 * mu) * s_term + 1.5;
    let g_y = (mu - 1.6) * tan_term + 1.5;

    let long = params.c_x * s;
    let lat = params.c_y * tan_a;
    let combined = long.hypot(lat);
    if combined < params.slip_eps * mu * slip.f_z || combined == 0.0 {
        return Ok(DugoffOutput {
            f_x: 0.0,
            f_y: 0.0,
            diag: DugoffIntermediates {
                z: f64::INFINITY,
                f_of_z: 1.0,
                g_x,
                g_y,
            },
        });
    }

    let z = mu * slip.f_z * one_minus_s / (2.0 * combined);
    let f_of_z = saturation(z);
    let f_x = long / one_minus_s * f_of_z * g_x;
    let f_y = lat / one_minus_s * f_of_z * g_y;
    Ok(DugoffOutput {
        f_x,
        f_y,
        diag: DugoffIntermediates { z, f_of_z, g_x, g_y },
    })
}

/// Static axle load split; no load transfer.
pub fn vertical_loads(params: &VehicleParams) -> (f64, f64) {
    let weight = params.m * GRAVITY;
    let wb = params.l_f + params.l_r;
    (weight * params.l_r / wb, weight * params.l_f / wb)
}
