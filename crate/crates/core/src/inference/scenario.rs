//! Reference measurement designs: the forward model and sampling plan behind
//! each synthetic dataset, with the true parameters it was generated from.

use serde::Serialize;

use super::fit::{noise_quanta, ClosedLoopParams, G0Known, LorentzianParams};
use crate::error::{Error, Result};
use crate::params::{reference, SystemParams};
use crate::response::FeedbackController;
use crate::sideband::{nbar_min, power_sweep};
use crate::spectra::{LoopModel, Spectrum, SpectrumUnit};
use crate::units::{hz_to_rad, rad_to_hz, wavelength_to_omega, TAU};

/// Periodogram averages of the reference spectra.
pub const DEFAULT_AVERAGES: u32 = 50;
/// Open-loop spectra span `±400` linewidths so the imprecision floor is resolved.
pub const OPEN_LOOP_BINS: usize = 2001;
pub const OPEN_LOOP_HALF_WIDTHS: f64 = 400.0;
pub const CLOSED_LOOP_BINS: usize = 801;
pub const CLOSED_LOOP_HALF_WIDTHS: f64 = 30.0;

/// Uniform grid in Hz of `bins` points over `center ± half` (angular inputs).
pub fn uniform_grid_hz(center: f64, half: f64, bins: usize) -> Vec<f64> {
    let lo = rad_to_hz((center - half).max(0.0));
    let hi = rad_to_hz(center + half);
    let bins = bins.max(2);
    (0..bins)
        .map(|k| lo + (hi - lo) * k as f64 / (bins - 1) as f64)
        .collect()
}

/// Measured open-loop spectrum of `params` and its Lorentzian parameters.
#[derive(Debug, Clone, Serialize)]
pub struct OpenLoopScenario {
    pub expected: Spectrum,
    pub truth: LorentzianParams,
}

pub fn open_loop_scenario(
    params: &SystemParams,
    bins: usize,
    half_widths: f64,
) -> Result<OpenLoopScenario> {
    let model = LoopModel::open(params)?;
    let (n_imp, n_tot) = noise_quanta(params);
    let truth = LorentzianParams {
        omega_eff: model.mode.omega_m,
        gamma_eff: model.mode.gamma_m,
        n_tot,
        n_imp,
    };
    let grid = uniform_grid_hz(truth.omega_eff, half_widths * truth.gamma_eff, bins);
    let expected = Spectrum::from_fn(grid, SpectrumUnit::Displacement, |w| model.syy(w))?;
    Ok(OpenLoopScenario { expected, truth })
}

/// Measured in-loop spectrum for `controller` and the loop parameters.
#[derive(Debug, Clone, Serialize)]
pub struct ClosedLoopScenario {
    pub expected: Spectrum,
    pub truth: ClosedLoopParams,
}

pub fn closed_loop_scenario(
    params: &SystemParams,
    controller: &FeedbackController,
    bins: usize,
    half_widths: f64,
) -> Result<ClosedLoopScenario> {
    let model = LoopModel::closed(params, controller)?;
    let (n_imp, n_tot) = noise_quanta(params);
    let truth = ClosedLoopParams {
        gain: controller.gain,
        phase: controller.phase,
        n_imp,
        n_tot,
    };
    let width = model.gamma_eff().abs().max(model.mode.gamma_m);
    let grid = uniform_grid_hz(model.omega_eff(), half_widths * width, bins);
    let expected = Spectrum::from_fn(grid, SpectrumUnit::Displacement, |w| model.syy(w))?;
    Ok(ClosedLoopScenario { expected, truth })
}

/// g0 calibration design: auxiliary powers with their optical damping.
#[derive(Debug, Clone, Serialize)]
pub struct G0Scenario {
    pub known: G0Known,
    /// `(power, Γ_opt)` pairs.
    pub design: Vec<(f64, f64)>,
    pub g0: f64,
    pub n_th: f64,
}

/// Log-spaced transmitted auxiliary powers from `p_lo` to `p_hi` of a laser
/// at angular frequency `omega_laser`.
pub fn g0_scenario(
    params: &SystemParams,
    omega_laser: f64,
    p_lo: f64,
    p_hi: f64,
    count: usize,
    transduction: f64,
) -> Result<G0Scenario> {
    let aux = params
        .aux
        .ok_or_else(|| Error::param("aux", "g0 calibration needs an auxiliary beam"))?;
    if !(p_lo > 0.0 && p_hi > p_lo) {
        return Err(Error::param("power", "need 0 < p_lo < p_hi"));
    }
    let count = count.max(2);
    let powers: Vec<f64> = (0..count)
        .map(|k| p_lo * (p_hi / p_lo).powf(k as f64 / (count - 1) as f64))
        .collect();
    let sweep = power_sweep(params, omega_laser, &powers)?;
    Ok(G0Scenario {
        known: G0Known {
            transduction,
            omega_m: params.mode.omega_m,
            gamma_m: params.mode.gamma_m,
            n_min: nbar_min(&aux, params.mode.omega_m)?,
        },
        design: sweep.iter().map(|p| (p.power_w, p.gamma_opt)).collect(),
        g0: aux.g0,
        n_th: params.bath.n_th,
    })
}

/// Reference device with its auxiliary beam, 10 nW to 100 µW.
pub fn reference_g0_scenario() -> Result<G0Scenario> {
    let mut params = reference::system();
    params.aux = Some(reference::aux());
    g0_scenario(
        &params,
        wavelength_to_omega(reference::WAVELENGTH_AUX_M),
        10e-9,
        100e-6,
        16,
        1.0,
    )
}

/// Heating-transient sampling plan and parameters.
#[derive(Debug, Clone, Serialize)]
pub struct HeatingScenario {
    pub times: Vec<f64>,
    pub n_i: f64,
    pub n_f: f64,
    pub gamma_eff: f64,
}

/// Samples every `dt` from `-pre` to `post` seconds around the switch.
pub fn heating_scenario(
    n_i: f64,
    n_f: f64,
    gamma_eff: f64,
    pre: f64,
    post: f64,
    dt: f64,
) -> HeatingScenario {
    let start = (-pre / dt).round() as i64;
    let end = (post / dt).round() as i64;
    HeatingScenario {
        times: (start..=end).map(|k| k as f64 * dt).collect(),
        n_i,
        n_f,
        gamma_eff,
    }
}

/// Switching from the cooled state `n̄ = 2` to `n̄ = 60` with `Γ_eff = 22.8 s⁻¹`.
pub fn reference_heating_scenario() -> HeatingScenario {
    heating_scenario(2.0, 60.0, 22.8, 0.02, 0.2, 5e-4)
}

/// Ringdown sampling plan and parameters.
#[derive(Debug, Clone, Serialize)]
pub struct RingdownScenario {
    pub times: Vec<f64>,
    pub omega_m: f64,
    pub q: f64,
    pub x0: f64,
    /// Additive amplitude noise (standard deviation).
    pub noise: f64,
}

impl RingdownScenario {
    pub fn rate(&self) -> f64 {
        self.omega_m / (2.0 * self.q)
    }
}

/// Continuous ringdown over `time_constants` amplitude decay times, or
/// stroboscopic with `duty` of every `period` seconds.
pub fn ringdown_scenario(
    omega_m: f64,
    q: f64,
    time_constants: f64,
    dt: f64,
    strobe: Option<(f64, f64)>,
    noise: f64,
) -> RingdownScenario {
    let duration = time_constants * 2.0 * q / omega_m;
    let times = match strobe {
        Some((period, duty)) => super::synth::stroboscopic_times(duration, period, duty, dt),
        None => (0..=(duration / dt).floor() as usize)
            .map(|k| k as f64 * dt)
            .collect(),
    };
    RingdownScenario {
        times,
        omega_m,
        q,
        x0: 1.0,
        noise,
    }
}

pub fn reference_ringdown_scenario(stroboscopic: bool) -> RingdownScenario {
    let strobe = stroboscopic.then_some((30.0, 0.04));
    let dt = if stroboscopic { 0.05 } else { 1.0 };
    ringdown_scenario(hz_to_rad(reference::F_M_HZ), 1.03e9, 3.0, dt, strobe, 0.01)
}

/// Amplitude-noise power series.
#[derive(Debug, Clone, Serialize)]
pub struct AmplitudeNoiseScenario {
    pub powers: Vec<f64>,
    pub shot: f64,
    pub classical: f64,
    pub p_ref: f64,
}

/// Classical amplitude noise at `ratio` of shot noise at `p_ref`, powers
/// log-spaced over two decades around it.
pub fn amplitude_noise_scenario(ratio: f64, p_ref: f64, count: usize) -> AmplitudeNoiseScenario {
    let count = count.max(3);
    let powers = (0..count)
        .map(|k| p_ref * 10f64.powf(-1.0 + 2.0 * k as f64 / (count - 1) as f64))
        .collect();
    AmplitudeNoiseScenario {
        powers,
        shot: 1.0,
        classical: ratio / p_ref,
        p_ref,
    }
}

/// Detuning sweep for the phase-noise fit.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseNoiseScenario {
    pub detunings: Vec<f64>,
    pub omega: f64,
    pub eta_c: f64,
    pub kappa: f64,
    pub c_xx: f64,
    pub c_yy: f64,
}

/// Detunings across `±2κ` of a cavity with linewidth `kappa`.
pub fn phase_noise_scenario(
    kappa: f64,
    omega: f64,
    eta_c: f64,
    c_xx: f64,
    c_yy: f64,
    count: usize,
) -> PhaseNoiseScenario {
    let count = count.max(3);
    let detunings = (0..count)
        .map(|k| -2.0 * kappa + 4.0 * kappa * k as f64 / (count - 1) as f64)
        .collect();
    PhaseNoiseScenario {
        detunings,
        omega,
        eta_c,
        kappa,
        c_xx,
        c_yy,
    }
}

pub fn reference_phase_noise_scenario() -> PhaseNoiseScenario {
    phase_noise_scenario(
        TAU * 2.44e6,
        hz_to_rad(reference::F_M_HZ),
        0.5,
        0.02,
        20.0,
        41,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g0_design_spans_both_regimes() {
        let s = reference_g0_scenario().unwrap();
        let crossover = s.known.gamma_m * s.n_th / s.known.n_min;
        assert!(s.design.first().unwrap().1 < 0.1 * crossover);
        assert!(s.design.last().unwrap().1 > 10.0 * crossover);
        assert!((rad_to_hz(s.g0) - 127.0).abs() < 1e-9);
    }

    #[test]
    fn open_loop_truth_matches_model() {
        let params = reference::feedback_system(2.4).unwrap();
        let s = open_loop_scenario(&params, 101, 20.0).unwrap();
        let mid = s.expected.values[50];
        let mode = params.mode;
        let direct =
            super::super::fit::lorentzian_psd(&mode, &s.truth, hz_to_rad(s.expected.grid_hz[50]));
        assert!((mid / direct - 1.0).abs() < 1e-9, "{mid} {direct}");
    }

    #[test]
    fn ringdown_lengths() {
        let c = reference_ringdown_scenario(false);
        let duration = *c.times.last().unwrap();
        assert!((duration * c.rate() - 3.0).abs() < 0.01);
        let s = reference_ringdown_scenario(true);
        assert!(s.times.len() < c.times.len());
    }
}
