//! Compton kinematics and scan-level physical constants.

use serde::{Deserialize, Serialize};

use crate::error::{CstError, Result};

/// Electron rest energy in MeV.
pub const ELECTRON_REST_MEV: f64 = 0.511;

/// Classical electron radius in femtometers (so cross sections are fm^2/sr).
pub const CLASSICAL_ELECTRON_RADIUS_FM: f64 = 2.8179403262;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LambdaMode {
    /// Fixed scan constant, independent of kinematics.
    Constant { value: f64 },
    /// Intensity times the Klein-Nishina differential cross section at
    /// (E, omega).
    KleinNishina,
}

/// Source energy, geometry angle, attenuation weights, and intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    /// Source energy E in MeV.
    pub energy_mev: f64,
    /// Electron rest energy in MeV.
    pub rest_energy_mev: f64,
    /// Opening half-angle psi; the scattering angle is omega = pi - 2 psi.
    pub psi: f64,
    /// Incoming-leg attenuation weight per unit length per unit density.
    pub atten_in: f64,
    /// Outgoing-leg attenuation weight.
    pub atten_out: f64,
    /// Source intensity, arbitrary units.
    pub intensity: f64,
    pub lambda_mode: LambdaMode,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        // Co-60 line at 1.17 MeV, perpendicular source/detector legs,
        // dimensionless unit attenuation weights.
        PhysicsParams {
            energy_mev: 1.17,
            rest_energy_mev: ELECTRON_REST_MEV,
            psi: std::f64::consts::FRAC_PI_4,
            atten_in: 1.0,
            atten_out: 1.0,
            intensity: 1.0,
            lambda_mode: LambdaMode::Constant { value: 1.0 },
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.energy_mev > 0.0) {
            return Err(CstError::InvalidParameter("energy must be positive".into()));
        }
        if !(self.rest_energy_mev > 0.0) {
            return Err(CstError::InvalidParameter("rest energy must be positive".into()));
        }
        // Forward scattering: omega = pi - 2 psi in (0, pi/2], so psi lies in
        // [pi/4, pi/2).
        let half_pi = std::f64::consts::FRAC_PI_2;
        let quarter_pi = std::f64::consts::FRAC_PI_4;
        if !(self.psi >= quarter_pi - 1e-12 && self.psi < half_pi) {
            return Err(CstError::InvalidParameter(format!(
                "psi = {} outside [pi/4, pi/2)",
                self.psi
            )));
        }
        if self.atten_in < 0.0 || self.atten_out < 0.0 {
            return Err(CstError::InvalidParameter(
                "attenuation weights must be non-negative".into(),
            ));
        }
        let lambda = lambda_weight(self);
        if !(lambda > 0.0) {
            return Err(CstError::InvalidParameter(format!("lambda = {lambda} not positive")));
        }
        Ok(())
    }

    /// Scattering angle omega = pi - 2 psi.
    pub fn omega(&self) -> f64 {
        std::f64::consts::PI - 2.0 * self.psi
    }

    /// Scattered energy at this scan's fixed angle.
    pub fn scattered_energy_mev(&self) -> Result<f64> {
        scattered_energy(self.energy_mev, self.omega(), self.rest_energy_mev)
    }
}

/// Compton relation: E_s = E / (1 + (E/E0)(1 - cos omega)).
pub fn scattered_energy(energy_mev: f64, omega: f64, rest_energy_mev: f64) -> Result<f64> {
    if !(energy_mev > 0.0) {
        return Err(CstError::InvalidParameter("energy must be positive".into()));
    }
    if !(0.0..=std::f64::consts::PI).contains(&omega) {
        return Err(CstError::InvalidParameter(format!("omega = {omega} outside [0, pi]")));
    }
    Ok(energy_mev / (1.0 + (energy_mev / rest_energy_mev) * (1.0 - omega.cos())))
}

/// Klein-Nishina differential cross section in fm^2/sr for an unpolarized
/// photon of energy `energy_mev` scattering through `omega`.
pub fn klein_nishina_dsdo(energy_mev: f64, omega: f64, rest_energy_mev: f64) -> f64 {
    let ratio = 1.0 / (1.0 + (energy_mev / rest_energy_mev) * (1.0 - omega.cos()));
    let re2 = CLASSICAL_ELECTRON_RADIUS_FM * CLASSICAL_ELECTRON_RADIUS_FM;
    let s = omega.sin();
    0.5 * re2 * ratio * ratio * (ratio + 1.0 / ratio - s * s)
}

/// The scan constant lambda: configured constant, or I0 times the
/// Klein-Nishina cross section at the scan's (E, omega). Identical for all
/// (s, theta) samples of one scan.
pub fn lambda_weight(params: &PhysicsParams) -> f64 {
    match params.lambda_mode {
        LambdaMode::Constant { value } => value,
        LambdaMode::KleinNishina => {
            params.intensity
                * klein_nishina_dsdo(params.energy_mev, params.omega(), params.rest_energy_mev)
        }
    }
}
