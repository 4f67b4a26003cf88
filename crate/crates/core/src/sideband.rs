//! Dynamical backaction of the detuned auxiliary beam: optical spring,
//! optical damping, the sideband-cooling occupancy and its limit.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::{OpticalDrive, SystemParams};

fn lorentz_denominators(aux: &OpticalDrive, omega_m: f64) -> (f64, f64, f64, f64) {
    let half_kappa_sq = (aux.kappa / 2.0).powi(2);
    let plus = aux.detuning + omega_m;
    let minus = aux.detuning - omega_m;
    (
        plus,
        minus,
        plus * plus + half_kappa_sq,
        minus * minus + half_kappa_sq,
    )
}

/// Optical spring shift per unit g² (s).
pub fn spring_shift_per_g2(aux: &OpticalDrive, omega_m: f64) -> f64 {
    let (plus, minus, d_plus, d_minus) = lorentz_denominators(aux, omega_m);
    plus / d_plus + minus / d_minus
}

/// Optical damping per unit g² (s).
pub fn gamma_opt_per_g2(aux: &OpticalDrive, omega_m: f64) -> f64 {
    let (_, _, d_plus, d_minus) = lorentz_denominators(aux, omega_m);
    aux.kappa / d_plus - aux.kappa / d_minus
}

/// Frequency shift `δΩ_m = Ω_eff - Ω_m` from the auxiliary beam.
pub fn spring_shift(aux: &OpticalDrive, omega_m: f64) -> f64 {
    let g = aux.coupling();
    g * g * spring_shift_per_g2(aux, omega_m)
}

/// Optical damping rate. Positive (cooling) for red detuning.
pub fn gamma_opt(aux: &OpticalDrive, omega_m: f64) -> f64 {
    let g = aux.coupling();
    g * g * gamma_opt_per_g2(aux, omega_m)
}

/// Quantum-backaction limit of sideband cooling,
/// `((Ω_m + Δ)² + (κ/2)²) / (-4ΔΩ_m)`. Only defined for red detuning.
pub fn nbar_min(aux: &OpticalDrive, omega_m: f64) -> Result<f64> {
    if aux.detuning >= 0.0 {
        return Err(Error::Domain(format!(
            "sideband-cooling limit needs red detuning, got {}",
            aux.detuning
        )));
    }
    let plus = omega_m + aux.detuning;
    Ok((plus * plus + (aux.kappa / 2.0).powi(2)) / (-4.0 * aux.detuning * omega_m))
}

/// Occupancy of a mode coupled to its thermal bath and to the optical bath:
/// `(Γ_opt n_min + Γ_m n_th) / (Γ_opt + Γ_m)`.
pub fn nbar_sideband(gamma_opt: f64, nbar_min: f64, gamma_m: f64, n_th: f64) -> Result<f64> {
    if gamma_opt < 0.0 || gamma_m < 0.0 {
        return Err(Error::Domain("rates must be non-negative".into()));
    }
    let total = gamma_opt + gamma_m;
    if total == 0.0 {
        return Err(Error::Domain(
            "optical and mechanical damping both zero".into(),
        ));
    }
    Ok((gamma_opt * nbar_min + gamma_m * n_th) / total)
}

/// Heating rates (quanta per second) per decoherence channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecoherenceBudget {
    pub thermal: f64,
    pub probe: f64,
    pub aux: f64,
    pub total: f64,
}

/// Total decoherence `γ_tot = γ + Γ_qba(probe) + Γ_opt n_min(aux)`.
///
/// The auxiliary channel is the optical-bath heating `Γ_opt·n_min`; it is
/// zero without an auxiliary beam or when it is not red-detuned.
pub fn decoherence_budget(params: &SystemParams) -> DecoherenceBudget {
    let rates = params.rates();
    let aux = params
        .aux
        .and_then(|aux| {
            let n_min = nbar_min(&aux, params.mode.omega_m).ok()?;
            Some(gamma_opt(&aux, params.mode.omega_m).max(0.0) * n_min)
        })
        .unwrap_or(0.0);
    let thermal = rates.gamma_th;
    let probe = rates.gamma_qba;
    DecoherenceBudget {
        thermal,
        probe,
        aux,
        total: thermal + probe + aux,
    }
}

/// One point of an auxiliary-power sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SidebandPoint {
    pub power_w: f64,
    pub gamma_opt: f64,
    pub spring_shift: f64,
    pub nbar: f64,
    pub gamma_tot: f64,
}

/// Sweep the transmitted auxiliary power. The auxiliary drive's photon number
/// is replaced at each power via `n_cav = P/(ħω_L κ η_c)`.
pub fn power_sweep(
    params: &SystemParams,
    omega_laser: f64,
    powers: &[f64],
) -> Result<Vec<SidebandPoint>> {
    let aux = params
        .aux
        .ok_or_else(|| Error::param("aux", "power sweep needs an auxiliary beam"))?;
    let omega_m = params.mode.omega_m;
    let n_min = nbar_min(&aux, omega_m)?;
    powers
        .iter()
        .map(|&power| {
            let mut drive = aux;
            drive.n_cav = OpticalDrive::photons_from_transmitted_power(
                power,
                omega_laser,
                aux.kappa,
                aux.eta_c,
            )?;
            let g_opt = gamma_opt(&drive, omega_m);
            let nbar = nbar_sideband(g_opt, n_min, params.mode.gamma_m, params.bath.n_th)?;
            Ok(SidebandPoint {
                power_w: power,
                gamma_opt: g_opt,
                spring_shift: spring_shift(&drive, omega_m),
                nbar,
                gamma_tot: nbar * (g_opt + params.mode.gamma_m),
            })
        })
        .collect()
}
