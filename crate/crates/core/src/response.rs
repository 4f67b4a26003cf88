//! Complex transfer functions: mechanical susceptibility, the feedback
//! controller, the loop gain and the closed-loop (effective) susceptibility.
//!
//! Fourier kernel is `e^{+iΩt}`, so a causal response is analytic in the upper
//! half plane and `χ_m(Ω) = 1 / m(Ω_m² − Ω² − iΓ_mΩ)`. Every transfer function
//! is the transform of a real kernel: `f(−Ω) = conj f(Ω)`.
//!
//! Sign convention for cooling: with this kernel `Γ_eff = Γ_m + Im h(Ω_m)/mΩ_m`,
//! so cold damping needs `arg h(Ω_m) = +π/2`. The controller phase that
//! achieves it is found by [`cooling_phase`] rather than assumed.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::MechanicalMode;
use crate::units::rad_to_hz;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// `χ_m(Ω)` in m/N.
pub fn chi_m(mode: &MechanicalMode, omega: f64) -> Complex64 {
    let w = omega.abs();
    let value =
        1.0 / (mode.mass * Complex64::new(mode.omega_m * mode.omega_m - w * w, -mode.gamma_m * w));
    if omega < 0.0 {
        value.conj()
    } else {
        value
    }
}

/// Several mechanical modes driven by the same force; responses add.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub modes: Vec<MechanicalMode>,
}

impl Plant {
    pub fn single(mode: MechanicalMode) -> Self {
        Plant { modes: vec![mode] }
    }

    pub fn with_mode(mut self, mode: MechanicalMode) -> Self {
        self.modes.push(mode);
        self
    }

    pub fn chi(&self, omega: f64) -> Complex64 {
        self.modes.iter().map(|m| chi_m(m, omega)).sum()
    }
}

/// Resonant band-pass section `[Γ Ω / (Ω_c² − Ω² − iΓΩ)]^order`, equal to
/// `i^order` at the center frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandpassStage {
    pub omega_c: f64,
    pub gamma_bw: f64,
    pub order: u32,
}

impl BandpassStage {
    pub fn new(omega_c: f64, gamma_bw: f64, order: u32) -> Result<Self> {
        let stage = BandpassStage {
            omega_c,
            gamma_bw,
            order,
        };
        stage.validate()?;
        Ok(stage)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_c > 0.0 && self.omega_c.is_finite()) {
            return Err(Error::param("omega_c", "must be finite and > 0"));
        }
        if !(self.gamma_bw > 0.0 && self.gamma_bw.is_finite()) {
            return Err(Error::param("gamma_bw", "must be finite and > 0"));
        }
        if self.order == 0 {
            return Err(Error::param("order", "must be a positive integer"));
        }
        Ok(())
    }

    /// Bracket evaluated for `Ω ≥ 0`.
    pub fn bracket(&self, omega: f64) -> Complex64 {
        let w = omega.abs();
        let section = Complex64::new(self.gamma_bw * w, 0.0)
            / Complex64::new(self.omega_c * self.omega_c - w * w, -self.gamma_bw * w);
        let value = section.powu(self.order);
        if omega < 0.0 {
            value.conj()
        } else {
            value
        }
    }
}

/// An auxiliary controller channel with its own gain and phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxStage {
    pub gain: f64,
    pub phase: f64,
    pub stage: BandpassStage,
}

/// Total controller `h_fb = h_main + h_aux`.
///
/// `h_main(Ω) = g_fb e^{iΩτ − iφ} [Γ_fb Ω / (Ω_fb² − Ω² − iΓ_fbΩ)]^order`.
/// Auxiliary channels see the same loop delay `τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackController {
    /// Gain in kg·(rad/s)² (N/m).
    pub gain: f64,
    pub phase: f64,
    pub delay: f64,
    pub main: BandpassStage,
    #[serde(default)]
    pub aux_stages: Vec<AuxStage>,
}

impl FeedbackController {
    pub fn new(gain: f64, phase: f64, delay: f64, main: BandpassStage) -> Result<Self> {
        let c = FeedbackController {
            gain,
            phase,
            delay,
            main,
            aux_stages: Vec::new(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gain.is_finite() {
            return Err(Error::param("gain", "must be finite"));
        }
        if !self.phase.is_finite() {
            return Err(Error::param("phase", "must be finite"));
        }
        if !(self.delay >= 0.0 && self.delay.is_finite()) {
            return Err(Error::param("delay", "must be finite and >= 0"));
        }
        self.main.validate()?;
        for aux in &self.aux_stages {
            aux.stage.validate()?;
        }
        Ok(())
    }

    pub fn with_gain(&self, gain: f64) -> Self {
        FeedbackController {
            gain,
            ..self.clone()
        }
    }

    pub fn with_phase(&self, phase: f64) -> Self {
        FeedbackController {
            phase,
            ..self.clone()
        }
    }

    pub fn with_aux(mut self, stage: AuxStage) -> Self {
        self.aux_stages.push(stage);
        self
    }

    fn delay_factor(&self, w: f64) -> Complex64 {
        (I * (w * self.delay)).exp()
    }

    pub fn h_main(&self, omega: f64) -> Complex64 {
        let w = omega.abs();
        let value =
            self.gain * self.delay_factor(w) * (-I * self.phase).exp() * self.main.bracket(w);
        if omega < 0.0 {
            value.conj()
        } else {
            value
        }
    }

    pub fn h_aux(&self, omega: f64) -> Complex64 {
        let w = omega.abs();
        let delay = self.delay_factor(w);
        let value: Complex64 = self
            .aux_stages
            .iter()
            .map(|a| a.gain * delay * (-I * a.phase).exp() * a.stage.bracket(w))
            .sum();
        if omega < 0.0 {
            value.conj()
        } else {
            value
        }
    }

    pub fn h_total(&self, omega: f64) -> Complex64 {
        self.h_main(omega) + self.h_aux(omega)
    }
}

/// `h_main` as a free function.
pub fn h_main(controller: &FeedbackController, omega: f64) -> Complex64 {
    controller.h_main(omega)
}

/// `h_main + h_aux` as a free function.
pub fn h_total(controller: &FeedbackController, omega: f64) -> Complex64 {
    controller.h_total(omega)
}

/// Loop gain `L(Ω) = χ(Ω) h_fb(Ω)`.
pub fn loop_gain(plant: &Plant, controller: &FeedbackController, omega: f64) -> Complex64 {
    plant.chi(omega) * controller.h_total(omega)
}

/// Closed-loop susceptibility at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveSusceptibility {
    pub value: Complex64,
    /// `1 − χ h` vanished: the frequency sits on the stability boundary.
    pub on_boundary: bool,
}

/// `χ_eff = χ_m / (1 − χ_m h_fb)`.
pub fn chi_eff(
    mode: &MechanicalMode,
    controller: &FeedbackController,
    omega: f64,
) -> EffectiveSusceptibility {
    chi_eff_from(chi_m(mode, omega), controller.h_total(omega))
}

pub(crate) fn chi_eff_from(chi: Complex64, h: Complex64) -> EffectiveSusceptibility {
    let denom = Complex64::new(1.0, 0.0) - chi * h;
    if denom.norm() == 0.0 || !denom.is_finite() {
        EffectiveSusceptibility {
            value: Complex64::new(f64::INFINITY, f64::INFINITY),
            on_boundary: true,
        }
    } else {
        EffectiveSusceptibility {
            value: chi / denom,
            on_boundary: false,
        }
    }
}

/// Effective damping `Γ_m + Im h_fb(Ω_m)/mΩ_m + Γ_opt`.
pub fn gamma_eff(mode: &MechanicalMode, controller: &FeedbackController, gamma_opt: f64) -> f64 {
    mode.gamma_m + controller.h_total(mode.omega_m).im / (mode.mass * mode.omega_m) + gamma_opt
}

/// Closed-loop resonance from the real part of the controller at `Ω_m`:
/// `Ω_eff² = Ω_m² − Re h_fb(Ω_m)/m`.
pub fn omega_eff(mode: &MechanicalMode, controller: &FeedbackController) -> f64 {
    let sq = mode.omega_m * mode.omega_m - controller.h_total(mode.omega_m).re / mode.mass;
    sq.max(0.0).sqrt()
}

/// The main-stage phase `φ ∈ [0, 2π)` that maximises `Γ_eff` at `Ω_m`
/// (`arg h_main(Ω_m) = +π/2`). Independent of gain for positive gain.
pub fn cooling_phase(mode: &MechanicalMode, controller: &FeedbackController) -> f64 {
    let w = mode.omega_m;
    let carrier = (I * (w * controller.delay)).exp() * controller.main.bracket(w);
    (carrier.arg() - std::f64::consts::FRAC_PI_2).rem_euclid(std::f64::consts::TAU)
}

/// One row of an exported transfer function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferRow {
    pub frequency_hz: f64,
    pub re: f64,
    pub im: f64,
    pub magnitude: f64,
    pub phase_rad: f64,
}

/// Tabulate `f` on a grid of angular frequencies.
pub fn tabulate(omegas: &[f64], f: impl Fn(f64) -> Complex64) -> Vec<TransferRow> {
    omegas
        .iter()
        .map(|&w| {
            let z = f(w);
            TransferRow {
                frequency_hz: rad_to_hz(w),
                re: z.re,
                im: z.im,
                magnitude: z.norm(),
                phase_rad: z.arg(),
            }
        })
        .collect()
}
