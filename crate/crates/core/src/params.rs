//! Physical parameters of the resonator, its bath and the optical drives, and
//! every rate derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sideband;
use crate::units::{hz_to_rad, HBAR, K_B};

/// A single mechanical mode. Frequencies are angular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanicalMode {
    pub omega_m: f64,
    pub gamma_m: f64,
    pub mass: f64,
}

impl MechanicalMode {
    pub fn new(omega_m: f64, gamma_m: f64, mass: f64) -> Result<Self> {
        let mode = MechanicalMode {
            omega_m,
            gamma_m,
            mass,
        };
        mode.validate()?;
        Ok(mode)
    }

    /// Build from ordinary frequencies in Hz.
    pub fn from_hz(f_m: f64, linewidth_hz: f64, mass: f64) -> Result<Self> {
        Self::new(hz_to_rad(f_m), hz_to_rad(linewidth_hz), mass)
    }

    pub fn validate(&self) -> Result<()> {
        positive_finite("omega_m", self.omega_m)?;
        positive_finite("gamma_m", self.gamma_m)?;
        positive_finite("mass", self.mass)?;
        if !self.quality_factor().is_finite() {
            return Err(Error::param("gamma_m", "quality factor is not finite"));
        }
        Ok(())
    }

    pub fn quality_factor(&self) -> f64 {
        self.omega_m / self.gamma_m
    }

    /// The same mode with resonance and damping replaced, e.g. by dynamical backaction.
    pub fn with_resonance(&self, omega: f64, gamma: f64) -> Self {
        MechanicalMode {
            omega_m: omega,
            gamma_m: gamma,
            mass: self.mass,
        }
    }
}

/// Zero-point amplitudes of position and momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroPoint {
    pub x_zpf: f64,
    pub p_zpf: f64,
}

/// `x_zpf = sqrt(ħ / 2mΩ_m)`, `p_zpf = ħ / 2x_zpf`.
pub fn derive_zero_point(mode: &MechanicalMode) -> Result<ZeroPoint> {
    positive_finite("mass", mode.mass)?;
    positive_finite("omega_m", mode.omega_m)?;
    let x_zpf = (HBAR / (2.0 * mode.mass * mode.omega_m)).sqrt();
    Ok(ZeroPoint {
        x_zpf,
        p_zpf: HBAR / (2.0 * x_zpf),
    })
}

/// Phonon bath. `n_th` is always populated; `temperature` only when the bath
/// was specified by temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalBath {
    pub temperature: Option<f64>,
    pub n_th: f64,
}

impl ThermalBath {
    pub fn at_temperature(temperature: f64, omega: f64) -> Result<Self> {
        Ok(ThermalBath {
            temperature: Some(temperature),
            n_th: bose_occupation(temperature, omega)?,
        })
    }

    pub fn with_occupation(n_th: f64) -> Result<Self> {
        if !(n_th >= 0.0 && n_th.is_finite()) {
            return Err(Error::param(
                "n_th",
                format!("must be finite and >= 0, got {n_th}"),
            ));
        }
        Ok(ThermalBath {
            temperature: None,
            n_th,
        })
    }
}

/// Bose-Einstein occupation `1/(exp(ħω/k_BT) - 1)`.
pub fn bose_occupation(temperature: f64, omega: f64) -> Result<f64> {
    positive_finite("temperature", temperature)?;
    positive_finite("omega", omega)?;
    let x = HBAR * omega / (K_B * temperature);
    Ok(1.0 / x.exp_m1())
}

/// Temperature whose Bose occupation at `omega` equals `n_th`.
pub fn temperature_for_occupation(n_th: f64, omega: f64) -> Result<f64> {
    positive_finite("n_th", n_th)?;
    positive_finite("omega", omega)?;
    Ok(HBAR * omega / (K_B * (1.0 / n_th).ln_1p()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveRole {
    Probe,
    Auxiliary,
}

/// A coherent drive of one cavity mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalDrive {
    pub kappa: f64,
    pub detuning: f64,
    pub g0: f64,
    pub n_cav: f64,
    pub eta_c: f64,
    pub role: DriveRole,
}

impl OpticalDrive {
    pub fn new(
        kappa: f64,
        detuning: f64,
        g0: f64,
        n_cav: f64,
        eta_c: f64,
        role: DriveRole,
    ) -> Result<Self> {
        let drive = OpticalDrive {
            kappa,
            detuning,
            g0,
            n_cav,
            eta_c,
            role,
        };
        drive.validate()?;
        Ok(drive)
    }

    pub fn validate(&self) -> Result<()> {
        positive_finite("kappa", self.kappa)?;
        if !self.detuning.is_finite() {
            return Err(Error::param("detuning", "must be finite"));
        }
        if !(self.g0 >= 0.0 && self.g0.is_finite()) {
            return Err(Error::param("g0", "must be finite and >= 0"));
        }
        if !(self.n_cav >= 0.0 && self.n_cav.is_finite()) {
            return Err(Error::param("n_cav", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.eta_c) {
            return Err(Error::param(
                "eta_c",
                format!("must lie in [0, 1], got {}", self.eta_c),
            ));
        }
        Ok(())
    }

    /// Field-enhanced coupling `g = g0·sqrt(n_cav)`.
    pub fn coupling(&self) -> f64 {
        self.g0 * self.n_cav.sqrt()
    }

    /// Intracavity photon number implied by the power transmitted through the
    /// cavity: `n_cav = P / (ħ ω_L κ η_c)`.
    pub fn photons_from_transmitted_power(
        power: f64,
        omega_laser: f64,
        kappa: f64,
        eta_c: f64,
    ) -> Result<f64> {
        if !(power >= 0.0) {
            return Err(Error::param("power", "must be >= 0"));
        }
        positive_finite("omega_laser", omega_laser)?;
        positive_finite("kappa", kappa)?;
        positive_finite("eta_c", eta_c)?;
        Ok(power / (HBAR * omega_laser * kappa * eta_c))
    }

    /// Same drive with `n_cav` chosen so the enhanced coupling equals `g`.
    pub fn with_coupling(mut self, g: f64) -> Self {
        self.n_cav = if self.g0 > 0.0 {
            (g / self.g0).powi(2)
        } else {
            0.0
        };
        self
    }
}

/// Measurement and decoherence rates of the probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRates {
    pub gamma_meas: f64,
    pub gamma_qba: f64,
    pub gamma_th: f64,
    pub c_q: f64,
    pub eta: f64,
    pub eta_det: f64,
}

/// Resonant-probe measurement rates: `Γ_qba = 4g²/κ`, `Γ_meas = η_det Γ_qba`,
/// `γ = n_th Γ_m`, `C_q = Γ_qba/γ`, `η = Γ_meas/(Γ_qba + γ)`.
pub fn derive_rates(
    probe: &OpticalDrive,
    eta_det: f64,
    mode: &MechanicalMode,
    bath: &ThermalBath,
) -> Result<MeasurementRates> {
    if probe.role != DriveRole::Probe {
        return Err(Error::param(
            "probe.role",
            "measurement rates need the probe drive",
        ));
    }
    positive_finite("kappa", probe.kappa)?;
    if !(0.0..=1.0).contains(&eta_det) {
        return Err(Error::param(
            "eta_det",
            format!("must lie in [0, 1], got {eta_det}"),
        ));
    }
    let g = probe.coupling();
    let gamma_qba = 4.0 * g * g / probe.kappa;
    let gamma_meas = eta_det * gamma_qba;
    let gamma_th = bath.n_th * mode.gamma_m;
    let c_q = gamma_qba / gamma_th;
    let denom = gamma_qba + gamma_th;
    let eta = if denom > 0.0 { gamma_meas / denom } else { 0.0 };
    Ok(MeasurementRates {
        gamma_meas,
        gamma_qba,
        gamma_th,
        c_q,
        eta,
        eta_det,
    })
}

/// Everything the forward model needs, in internal (angular, SI) units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub mode: MechanicalMode,
    pub bath: ThermalBath,
    pub probe: OpticalDrive,
    pub eta_det: f64,
    /// Auxiliary (sideband-cooling / actuation) beam, if present.
    pub aux: Option<OpticalDrive>,
    /// Auxiliary-beam force noise as a fraction of the thermal force noise.
    pub aux_force_ratio: f64,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        self.probe.validate()?;
        if self.probe.role != DriveRole::Probe {
            return Err(Error::param("probe.role", "must be `probe`"));
        }
        if let Some(aux) = &self.aux {
            aux.validate()?;
            if aux.role != DriveRole::Auxiliary {
                return Err(Error::param("aux.role", "must be `auxiliary`"));
            }
        }
        if !(0.0..=1.0).contains(&self.eta_det) {
            return Err(Error::param("eta_det", "must lie in [0, 1]"));
        }
        if !(self.aux_force_ratio >= 0.0 && self.aux_force_ratio.is_finite()) {
            return Err(Error::param("aux_force_ratio", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn zero_point(&self) -> ZeroPoint {
        derive_zero_point(&self.mode).expect("validated mode")
    }

    pub fn rates(&self) -> MeasurementRates {
        derive_rates(&self.probe, self.eta_det, &self.mode, &self.bath).expect("validated params")
    }

    /// Optical damping from the auxiliary beam (zero without one).
    pub fn gamma_opt(&self) -> f64 {
        self.aux
            .map(|aux| sideband::gamma_opt(&aux, self.mode.omega_m))
            .unwrap_or(0.0)
    }

    /// Optical spring shift from the auxiliary beam (zero without one).
    pub fn spring_shift(&self) -> f64 {
        self.aux
            .map(|aux| sideband::spring_shift(&aux, self.mode.omega_m))
            .unwrap_or(0.0)
    }

    /// The mode as modified by the auxiliary beam's dynamical backaction.
    pub fn effective_mode(&self) -> MechanicalMode {
        self.mode.with_resonance(
            self.mode.omega_m + self.spring_shift(),
            self.mode.gamma_m + self.gamma_opt(),
        )
    }

    /// Replace the probe photon number so the quantum cooperativity equals `c_q`.
    pub fn with_cooperativity(mut self, c_q: f64) -> Result<Self> {
        if !(c_q >= 0.0 && c_q.is_finite()) {
            return Err(Error::param("cooperativity", "must be finite and >= 0"));
        }
        positive_finite("probe.g0", self.probe.g0)?;
        let gamma_th = self.bath.n_th * self.mode.gamma_m;
        let g_squared = c_q * gamma_th * self.probe.kappa / 4.0;
        self.probe.n_cav = g_squared / (self.probe.g0 * self.probe.g0);
        Ok(self)
    }

    /// Replace the auxiliary coupling so that its optical damping equals `gamma_opt`.
    pub fn with_gamma_opt(mut self, gamma_opt: f64) -> Result<Self> {
        let aux = self
            .aux
            .ok_or_else(|| Error::param("aux", "no auxiliary beam configured"))?;
        let per_g2 = sideband::gamma_opt_per_g2(&aux, self.mode.omega_m);
        if per_g2 == 0.0 || (gamma_opt / per_g2) < 0.0 {
            return Err(Error::Domain(format!(
                "optical damping {gamma_opt} not reachable at detuning {}",
                aux.detuning
            )));
        }
        self.aux = Some(aux.with_coupling((gamma_opt / per_g2).sqrt()));
        Ok(self)
    }
}

/// Reference device: the soft-clamped membrane mode and cavity of the
/// ground-state feedback-cooling experiment.
pub mod reference {
    use super::*;

    pub const F_M_HZ: f64 = 1.139e6;
    pub const LINEWIDTH_HZ: f64 = 1.09e-3;
    pub const MASS_KG: f64 = 2.3e-12;
    pub const TEMPERATURE_K: f64 = 11.0;
    pub const G0_HZ: f64 = 127.0;
    pub const KAPPA_HZ: f64 = 15.9e6;
    pub const ETA_C: f64 = 0.95;
    pub const KAPPA_AUX_HZ: f64 = 12.9e6;
    pub const DETUNING_AUX_HZ: f64 = -4.2e6;
    pub const ETA_C_AUX: f64 = 0.88;
    pub const ETA_DET: f64 = 0.77;
    pub const AUX_FORCE_RATIO: f64 = 0.18;
    pub const WAVELENGTH_AUX_M: f64 = 796e-9;
    pub const FILTER_CENTER_HZ: f64 = 1.1925e6;
    pub const FILTER_BANDWIDTH_HZ: f64 = 77.79e3;
    pub const LOOP_DELAY_S: f64 = 300e-9;
    /// Enhanced auxiliary coupling at 1 µW transmitted power.
    pub const G_AUX_AT_1UW_HZ: f64 = 24e3;

    pub fn mode() -> MechanicalMode {
        MechanicalMode::from_hz(F_M_HZ, LINEWIDTH_HZ, MASS_KG).expect("reference mode")
    }

    /// Probe at zero photon number; set strength with [`SystemParams::with_cooperativity`].
    pub fn probe() -> OpticalDrive {
        OpticalDrive::new(
            hz_to_rad(KAPPA_HZ),
            0.0,
            hz_to_rad(G0_HZ),
            0.0,
            ETA_C,
            DriveRole::Probe,
        )
        .expect("reference probe")
    }

    /// Auxiliary beam at zero photons; the vacuum coupling is taken equal to the probe's.
    pub fn aux() -> OpticalDrive {
        OpticalDrive::new(
            hz_to_rad(KAPPA_AUX_HZ),
            hz_to_rad(DETUNING_AUX_HZ),
            hz_to_rad(G0_HZ),
            0.0,
            ETA_C_AUX,
            DriveRole::Auxiliary,
        )
        .expect("reference aux")
    }

    /// Device at the reference temperature, no probe photons, no auxiliary beam.
    pub fn system() -> SystemParams {
        let mode = mode();
        SystemParams {
            mode,
            bath: ThermalBath::at_temperature(TEMPERATURE_K, mode.omega_m).expect("bath"),
            probe: probe(),
            eta_det: ETA_DET,
            aux: None,
            aux_force_ratio: AUX_FORCE_RATIO,
        }
    }

    /// Optical damping of the auxiliary precooling beam during feedback.
    pub const PRECOOL_DAMPING_HZ: f64 = 10.0;

    /// Feedback configuration: probe set to cooperativity `c_q`, auxiliary
    /// beam providing the precooling damping.
    pub fn feedback_system(c_q: f64) -> Result<SystemParams> {
        let mut sys = system().with_cooperativity(c_q)?;
        sys.aux = Some(aux());
        sys.with_gamma_opt(hz_to_rad(PRECOOL_DAMPING_HZ))
    }

    /// Second-order bandpass controller at zero gain and phase.
    pub fn controller() -> crate::response::FeedbackController {
        let main = crate::response::BandpassStage::new(
            hz_to_rad(FILTER_CENTER_HZ),
            hz_to_rad(FILTER_BANDWIDTH_HZ),
            2,
        )
        .expect("reference filter");
        crate::response::FeedbackController::new(0.0, 0.0, LOOP_DELAY_S, main)
            .expect("reference controller")
    }
}

pub(crate) fn positive_finite(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::param(
            name,
            format!("must be finite and > 0, got {value}"),
        ))
    }
}
