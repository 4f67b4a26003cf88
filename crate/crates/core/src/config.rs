//! Sectioned TOML configuration. Frequencies are ordinary (Hz) here and
//! converted to angular units when the model is built.

use std::path::Path;

use serde::Serialize;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::inference::Likelihood;
use crate::params::{
    reference, DriveRole, MechanicalMode, OpticalDrive, SystemParams, ThermalBath,
};
use crate::response::{AuxStage, BandpassStage, FeedbackController, Plant};
use crate::units::hz_to_rad;

/// The bundled reference configuration.
pub const REFERENCE_TOML: &str = include_str!("../paper.toml");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSpec {
    pub frequency_hz: f64,
    pub linewidth_hz: f64,
    pub mass_kg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mechanics {
    pub mode: ModeSpec,
    /// Further modes seen by the feedback loop (stability only).
    pub extra_modes: Vec<ModeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum BathSpec {
    Temperature(f64),
    Occupation(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ProbeStrength {
    Cooperativity(f64),
    Photons(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub kappa_hz: f64,
    pub g0_hz: f64,
    pub eta_c: f64,
    pub eta_det: f64,
    pub strength: ProbeStrength,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum AuxStrength {
    Damping(f64),
    Power(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aux {
    pub kappa_hz: f64,
    pub detuning_hz: f64,
    pub g0_hz: f64,
    pub eta_c: f64,
    pub wavelength_m: f64,
    pub strength: AuxStrength,
    pub force_noise_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PhaseSpec {
    Cool,
    Radians(f64),
}

impl std::str::FromStr for PhaseSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("cool") {
            return Ok(PhaseSpec::Cool);
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(PhaseSpec::Radians)
            .ok_or_else(|| format!("expected `cool` or a phase in radians, got `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Feedback {
    pub filter_center_hz: f64,
    pub filter_bandwidth_hz: f64,
    pub order: u32,
    pub delay_s: f64,
    /// Fixed gain; the optimum is searched when absent.
    pub gain: Option<f64>,
    pub phase: PhaseSpec,
    pub aux_stages: Vec<AuxStageSpec>,
}

/// An additional bandpass channel with its own gain and phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuxStageSpec {
    pub gain: f64,
    pub phase_rad: f64,
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    pub order: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub gain_points: usize,
    pub gain_min: Option<f64>,
    pub gain_max: Option<f64>,
    pub cooperativities: Vec<f64>,
    pub power_min_w: f64,
    pub power_max_w: f64,
    pub power_points: usize,
    pub heating_n_i: f64,
    pub heating_n_f: f64,
    pub heating_gamma_eff: f64,
    pub heating_duration_s: f64,
    pub heating_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitConfig {
    pub seed: u64,
    pub averages: u32,
    pub likelihood: Likelihood,
    /// Relative noise of synthetic calibration and heating traces.
    pub noise: f64,
    /// Additive noise of a synthetic ringdown, relative to its initial amplitude.
    pub ringdown_noise: f64,
    pub amplitude_noise: f64,
    pub phase_noise: f64,
    pub amplitude_ratio: f64,
    pub p_ref_w: f64,
    pub c_xx: f64,
    pub c_yy: f64,
    pub phase_kappa_hz: f64,
    pub phase_eta_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub mechanics: Mechanics,
    pub bath: BathSpec,
    pub probe: Probe,
    pub aux: Option<Aux>,
    pub feedback: Feedback,
    pub sweep: Sweep,
    pub fit: FitConfig,
}

const SECTIONS: [&str; 7] = [
    "mechanics",
    "bath",
    "probe",
    "aux",
    "feedback",
    "sweep",
    "fit",
];

/// Reads keys from one section, recording every violation and, at the end,
/// every key that was never read.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
    used: Vec<String>,
    errors: &'a mut Vec<String>,
}

impl<'a> Section<'a> {
    fn new(root: &'a Table, name: &'static str, errors: &'a mut Vec<String>) -> Self {
        let table = match root.get(name) {
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                errors.push(format!("[{name}] must be a table"));
                None
            }
            None => None,
        };
        Section {
            name,
            table,
            used: Vec::new(),
            errors,
        }
    }

    fn present(&self) -> bool {
        self.table.is_some()
    }

    fn raw(&mut self, key: &str) -> Option<&'a Value> {
        self.used.push(key.to_string());
        self.table.and_then(|t| t.get(key))
    }

    fn has(&self, key: &str) -> bool {
        self.table.is_some_and(|t| t.contains_key(key))
    }

    fn error(&mut self, key: &str, msg: impl std::fmt::Display) {
        self.errors.push(format!("{}.{key}: {msg}", self.name));
    }

    fn opt_f64(&mut self, key: &str) -> Option<f64> {
        match self.raw(key) {
            None => None,
            Some(Value::Float(v)) => Some(*v),
            Some(Value::Integer(v)) => Some(*v as f64),
            Some(other) => {
                self.error(key, format!("expected a number, got {}", other.type_str()));
                None
            }
        }
    }

    fn f64_or(&mut self, key: &str, default: f64) -> f64 {
        self.opt_f64(key).unwrap_or(default)
    }

    fn positive(&mut self, key: &str, default: f64) -> f64 {
        let v = self.f64_or(key, default);
        if !(v > 0.0 && v.is_finite()) {
            self.error(key, format!("must be positive and finite, got {v}"));
        }
        v
    }

    fn fraction(&mut self, key: &str, default: f64) -> f64 {
        let v = self.f64_or(key, default);
        if !(0.0..=1.0).contains(&v) {
            self.error(key, format!("must lie in [0, 1], got {v}"));
        }
        v
    }

    fn non_negative(&mut self, key: &str, default: f64) -> f64 {
        let v = self.f64_or(key, default);
        if !(v >= 0.0 && v.is_finite()) {
            self.error(key, format!("must be finite and >= 0, got {v}"));
        }
        v
    }

    fn finite(&mut self, key: &str, default: f64) -> f64 {
        let v = self.f64_or(key, default);
        if !v.is_finite() {
            self.error(key, "must be finite");
        }
        v
    }

    fn count(&mut self, key: &str, default: usize, min: usize) -> usize {
        match self.raw(key) {
            None => default,
            Some(Value::Integer(v)) if *v >= min as i64 => *v as usize,
            Some(v) => {
                self.error(key, format!("must be an integer >= {min}, got {v}"));
                default
            }
        }
    }

    fn seed(&mut self, key: &str, default: u64) -> u64 {
        match self.raw(key) {
            None => default,
            Some(Value::Integer(v)) if *v >= 0 => *v as u64,
            Some(v) => {
                self.error(key, format!("must be a non-negative integer, got {v}"));
                default
            }
        }
    }

    fn list(&mut self, key: &str, default: &[f64]) -> Vec<f64> {
        match self.raw(key) {
            None => default.to_vec(),
            Some(Value::Array(items)) => {
                let mut out = Vec::new();
                for item in items {
                    match item {
                        Value::Float(v) => out.push(*v),
                        Value::Integer(v) => out.push(*v as f64),
                        other => self.error(
                            key,
                            format!("list entries must be numbers, got {}", other.type_str()),
                        ),
                    }
                }
                out
            }
            Some(other) => {
                self.error(key, format!("expected a list, got {}", other.type_str()));
                default.to_vec()
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<&'a str> {
        match self.raw(key) {
            None => None,
            Some(Value::String(s)) => Some(s.as_str()),
            Some(other) => {
                self.error(key, format!("expected a string, got {}", other.type_str()));
                None
            }
        }
    }

    fn exclusive(&mut self, a: &str, b: &str) {
        if self.has(a) && self.has(b) {
            let msg = format!("give either `{a}` or `{b}`, not both");
            self.error(a, msg);
        }
    }

    fn finish(self) {
        if let Some(t) = self.table {
            for key in t.keys() {
                if !self.used.iter().any(|u| u == key) {
                    self.errors
                        .push(format!("unknown key `{}.{key}`", self.name));
                }
            }
        }
    }
}

fn numeric_table<'a>(
    value: &'a Value,
    keys: &[&str],
    errors: &mut Vec<String>,
    at: &str,
) -> Option<&'a Table> {
    let Value::Table(t) = value else {
        errors.push(format!("{at}: expected a table"));
        return None;
    };
    for k in t.keys() {
        if !keys.contains(&k.as_str()) {
            errors.push(format!("unknown key `{at}.{k}`"));
        }
    }
    Some(t)
}

fn number(t: &Table, key: &str) -> Option<f64> {
    match t.get(key) {
        Some(Value::Float(v)) => Some(*v),
        Some(Value::Integer(v)) => Some(*v as f64),
        _ => None,
    }
}

fn aux_stage_spec(value: &Value, errors: &mut Vec<String>, at: &str) -> Option<AuxStageSpec> {
    let keys = ["gain", "phase_rad", "center_hz", "bandwidth_hz", "order"];
    let t = numeric_table(value, &keys, errors, at)?;
    let before = errors.len();
    let mut req = |k: &str, positive: bool| {
        let v = number(t, k);
        match v {
            Some(v) if v.is_finite() && (!positive || v > 0.0) => v,
            _ => {
                errors.push(format!(
                    "{at}.{k}: required {}number",
                    if positive { "positive " } else { "" }
                ));
                f64::NAN
            }
        }
    };
    let spec = AuxStageSpec {
        gain: req("gain", false),
        phase_rad: number(t, "phase_rad").unwrap_or(0.0),
        center_hz: req("center_hz", true),
        bandwidth_hz: req("bandwidth_hz", true),
        order: match t.get("order") {
            None => 2,
            Some(Value::Integer(v)) if *v >= 1 => *v as u32,
            Some(_) => {
                errors.push(format!("{at}.order: must be an integer >= 1"));
                2
            }
        },
    };
    (errors.len() == before).then_some(spec)
}

fn mode_spec(value: &Value, errors: &mut Vec<String>, at: &str) -> Option<ModeSpec> {
    let keys = ["frequency_hz", "linewidth_hz", "mass_kg"];
    let t = numeric_table(value, &keys, errors, at)?;
    let mut get = |k: &str| match number(t, k) {
        Some(v) if v > 0.0 && v.is_finite() => Some(v),
        _ => {
            errors.push(format!("{at}.{k}: required positive number"));
            None
        }
    };
    let (f, l, m) = (get("frequency_hz"), get("linewidth_hz"), get("mass_kg"));
    Some(ModeSpec {
        frequency_hz: f?,
        linewidth_hz: l?,
        mass_kg: m?,
    })
}

impl Config {
    pub fn reference() -> Config {
        Config::from_toml_str(REFERENCE_TOML).expect("bundled configuration is valid")
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::from_toml_str(&text)
    }

    /// Parse and validate, reporting every problem at once.
    pub fn from_toml_str(text: &str) -> Result<Config> {
        let root: Table = text.parse().map_err(|e: toml::de::Error| {
            Error::Config(vec![format!("TOML syntax: {}", e.message())])
        })?;
        let mut errors = Vec::new();
        for key in root.keys() {
            if !SECTIONS.contains(&key.as_str()) {
                errors.push(format!("unknown section or key `{key}`"));
            }
        }

        let mut s = Section::new(&root, "mechanics", &mut errors);
        let mode = ModeSpec {
            frequency_hz: s.positive("frequency_hz", reference::F_M_HZ),
            linewidth_hz: s.positive("linewidth_hz", reference::LINEWIDTH_HZ),
            mass_kg: s.positive("mass_kg", reference::MASS_KG),
        };
        let extra_raw: Vec<Value> = match s.raw("extra_modes") {
            None => Vec::new(),
            Some(Value::Array(a)) => a.clone(),
            Some(_) => {
                s.error("extra_modes", "expected a list of tables");
                Vec::new()
            }
        };
        s.finish();
        let extra_modes = extra_raw
            .iter()
            .enumerate()
            .filter_map(|(i, v)| mode_spec(v, &mut errors, &format!("mechanics.extra_modes[{i}]")))
            .collect();

        let mut s = Section::new(&root, "bath", &mut errors);
        s.exclusive("temperature_k", "n_th");
        let bath = match s.opt_f64("n_th") {
            Some(n) => {
                if !(n >= 0.0 && n.is_finite()) {
                    s.error("n_th", "must be finite and >= 0");
                }
                BathSpec::Occupation(n)
            }
            None => {
                BathSpec::Temperature(s.non_negative("temperature_k", reference::TEMPERATURE_K))
            }
        };
        s.finish();

        let mut s = Section::new(&root, "probe", &mut errors);
        s.exclusive("cooperativity", "n_cav");
        let strength = match s.opt_f64("n_cav") {
            Some(n) => {
                if !(n >= 0.0 && n.is_finite()) {
                    s.error("n_cav", "must be finite and >= 0");
                }
                ProbeStrength::Photons(n)
            }
            None => ProbeStrength::Cooperativity(s.non_negative("cooperativity", 2.4)),
        };
        let probe = Probe {
            kappa_hz: s.positive("kappa_hz", reference::KAPPA_HZ),
            g0_hz: s.positive("g0_hz", reference::G0_HZ),
            eta_c: s.fraction("eta_c", reference::ETA_C),
            eta_det: s.fraction("eta_det", reference::ETA_DET),
            strength,
        };
        s.finish();

        let mut s = Section::new(&root, "aux", &mut errors);
        let aux = if s.present() {
            let enabled = match s.raw("enabled") {
                None => true,
                Some(Value::Boolean(b)) => *b,
                Some(_) => {
                    s.error("enabled", "expected true or false");
                    true
                }
            };
            s.exclusive("gamma_opt_hz", "power_w");
            let strength = match s.opt_f64("power_w") {
                Some(p) => {
                    if !(p >= 0.0 && p.is_finite()) {
                        s.error("power_w", "must be finite and >= 0");
                    }
                    AuxStrength::Power(p)
                }
                None => AuxStrength::Damping(
                    s.non_negative("gamma_opt_hz", reference::PRECOOL_DAMPING_HZ),
                ),
            };
            let aux = Aux {
                kappa_hz: s.positive("kappa_hz", reference::KAPPA_AUX_HZ),
                detuning_hz: s.finite("detuning_hz", reference::DETUNING_AUX_HZ),
                g0_hz: s.positive("g0_hz", reference::G0_HZ),
                eta_c: s.fraction("eta_c", reference::ETA_C_AUX),
                wavelength_m: s.positive("wavelength_m", reference::WAVELENGTH_AUX_M),
                strength,
                force_noise_ratio: s.non_negative("force_noise_ratio", reference::AUX_FORCE_RATIO),
            };
            enabled.then_some(aux)
        } else {
            None
        };
        s.finish();

        let mut s = Section::new(&root, "feedback", &mut errors);
        let phase = match s.raw("phase") {
            None => PhaseSpec::Cool,
            Some(Value::String(p)) => p.parse().unwrap_or_else(|e: String| {
                s.error("phase", e);
                PhaseSpec::Cool
            }),
            Some(Value::Float(v)) => PhaseSpec::Radians(*v),
            Some(Value::Integer(v)) => PhaseSpec::Radians(*v as f64),
            Some(_) => {
                s.error("phase", "expected `cool` or a number");
                PhaseSpec::Cool
            }
        };
        let stages_raw: Vec<Value> = match s.raw("aux_stages") {
            None => Vec::new(),
            Some(Value::Array(a)) => a.clone(),
            Some(_) => {
                s.error("aux_stages", "expected a list of tables");
                Vec::new()
            }
        };
        let aux_stages = stages_raw
            .iter()
            .enumerate()
            .filter_map(|(i, v)| aux_stage_spec(v, s.errors, &format!("feedback.aux_stages[{i}]")))
            .collect();
        let feedback = Feedback {
            aux_stages,
            filter_center_hz: s.positive("filter_center_hz", reference::FILTER_CENTER_HZ),
            filter_bandwidth_hz: s.positive("filter_bandwidth_hz", reference::FILTER_BANDWIDTH_HZ),
            order: s.count("order", 2, 1) as u32,
            delay_s: s.non_negative("delay_s", reference::LOOP_DELAY_S),
            gain: s.opt_f64("gain"),
            phase,
        };
        if let Some(g) = feedback.gain {
            if !(g >= 0.0 && g.is_finite()) {
                s.error("gain", "must be finite and >= 0");
            }
        }
        s.finish();

        let mut s = Section::new(&root, "sweep", &mut errors);
        let sweep = Sweep {
            gain_points: s.count("gain_points", 30, 2),
            gain_min: s.opt_f64("gain_min"),
            gain_max: s.opt_f64("gain_max"),
            cooperativities: s.list("cooperativities", &[0.5, 1.0, 2.4, 5.0, 10.0]),
            power_min_w: s.positive("power_min_w", 10e-9),
            power_max_w: s.positive("power_max_w", 100e-6),
            power_points: s.count("power_points", 16, 2),
            heating_n_i: s.non_negative("heating_n_i", 2.0),
            heating_n_f: s.non_negative("heating_n_f", 60.0),
            heating_gamma_eff: s.positive("heating_gamma_eff", 22.8),
            heating_duration_s: s.positive("heating_duration_s", 0.2),
            heating_points: s.count("heating_points", 401, 2),
        };
        if let (Some(lo), Some(hi)) = (sweep.gain_min, sweep.gain_max) {
            if !(lo > 0.0 && hi > lo) {
                s.error("gain_min", "need 0 < gain_min < gain_max");
            }
        } else if sweep.gain_min.is_some() != sweep.gain_max.is_some() {
            s.error("gain_min", "give both gain_min and gain_max");
        }
        if sweep
            .cooperativities
            .iter()
            .any(|c| !(*c > 0.0 && c.is_finite()))
        {
            s.error("cooperativities", "entries must be positive and finite");
        }
        if sweep.power_max_w <= sweep.power_min_w {
            s.error("power_max_w", "must exceed power_min_w");
        }
        s.finish();

        let mut s = Section::new(&root, "fit", &mut errors);
        let likelihood = match s.string("likelihood") {
            None | Some("whittle") => Likelihood::Whittle,
            Some("weighted-least-squares") | Some("wls") => Likelihood::WeightedLeastSquares,
            Some(other) => {
                s.error(
                    "likelihood",
                    format!("expected `whittle` or `wls`, got `{other}`"),
                );
                Likelihood::Whittle
            }
        };
        let fit = FitConfig {
            seed: s.seed("seed", 1),
            averages: s.count("averages", 50, 1) as u32,
            likelihood,
            noise: s.non_negative("noise", 0.05),
            ringdown_noise: s.non_negative("ringdown_noise", 0.01),
            amplitude_noise: s.non_negative("amplitude_noise", 0.002),
            phase_noise: s.non_negative("phase_noise", 0.01),
            amplitude_ratio: s.non_negative("amplitude_ratio", 0.0008),
            p_ref_w: s.positive("p_ref_w", 1e-6),
            c_xx: s.non_negative("c_xx", 0.02),
            c_yy: s.non_negative("c_yy", 20.0),
            phase_kappa_hz: s.positive("phase_kappa_hz", 2.44e6),
            phase_eta_c: s.fraction("phase_eta_c", 0.5),
        };
        s.finish();

        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let config = Config {
            mechanics: Mechanics { mode, extra_modes },
            bath,
            probe,
            aux,
            feedback,
            sweep,
            fit,
        };
        config
            .system_params()
            .map_err(|e| Error::Config(vec![e.to_string()]))?;
        Ok(config)
    }

    pub fn mode(&self) -> Result<MechanicalMode> {
        let m = &self.mechanics.mode;
        MechanicalMode::from_hz(m.frequency_hz, m.linewidth_hz, m.mass_kg)
    }

    /// Model parameters in internal units.
    pub fn system_params(&self) -> Result<SystemParams> {
        let mode = self.mode()?;
        let bath = match self.bath {
            BathSpec::Temperature(t) => ThermalBath::at_temperature(t, mode.omega_m)?,
            BathSpec::Occupation(n) => ThermalBath::with_occupation(n)?,
        };
        let p = &self.probe;
        let probe = OpticalDrive::new(
            hz_to_rad(p.kappa_hz),
            0.0,
            hz_to_rad(p.g0_hz),
            match p.strength {
                ProbeStrength::Photons(n) => n,
                ProbeStrength::Cooperativity(_) => 0.0,
            },
            p.eta_c,
            DriveRole::Probe,
        )?;
        let mut params = SystemParams {
            mode,
            bath,
            probe,
            eta_det: p.eta_det,
            aux: None,
            aux_force_ratio: 0.0,
        };
        if let ProbeStrength::Cooperativity(c) = p.strength {
            params = params.with_cooperativity(c)?;
        }
        if let Some(a) = &self.aux {
            let mut drive = OpticalDrive::new(
                hz_to_rad(a.kappa_hz),
                hz_to_rad(a.detuning_hz),
                hz_to_rad(a.g0_hz),
                0.0,
                a.eta_c,
                DriveRole::Auxiliary,
            )?;
            params.aux_force_ratio = a.force_noise_ratio;
            match a.strength {
                AuxStrength::Power(power) => {
                    drive.n_cav = OpticalDrive::photons_from_transmitted_power(
                        power,
                        crate::units::wavelength_to_omega(a.wavelength_m),
                        drive.kappa,
                        drive.eta_c,
                    )?;
                    params.aux = Some(drive);
                }
                AuxStrength::Damping(g) => {
                    params.aux = Some(drive);
                    params = params.with_gamma_opt(hz_to_rad(g))?;
                }
            }
        }
        params.validate()?;
        Ok(params)
    }

    /// Controller template: the configured gain (zero when absent) and the
    /// configured phase, or the cooling phase of `params`.
    pub fn controller(&self, params: &SystemParams) -> Result<FeedbackController> {
        let f = &self.feedback;
        let main = BandpassStage::new(
            hz_to_rad(f.filter_center_hz),
            hz_to_rad(f.filter_bandwidth_hz),
            f.order,
        )?;
        let mut c = FeedbackController::new(f.gain.unwrap_or(0.0), 0.0, f.delay_s, main)?;
        for a in &f.aux_stages {
            c = c.with_aux(AuxStage {
                gain: a.gain,
                phase: a.phase_rad,
                stage: BandpassStage::new(
                    hz_to_rad(a.center_hz),
                    hz_to_rad(a.bandwidth_hz),
                    a.order,
                )?,
            });
        }
        Ok(match f.phase {
            PhaseSpec::Cool => crate::feedback::at_cooling_phase(params, &c),
            PhaseSpec::Radians(p) => c.with_phase(p),
        })
    }

    /// Plant for stability analysis, including any extra modes.
    pub fn plant(&self, params: &SystemParams) -> Result<Plant> {
        let mut plant = crate::feedback::plant_of(params);
        for m in &self.mechanics.extra_modes {
            plant = plant.with_mode(MechanicalMode::from_hz(
                m.frequency_hz,
                m.linewidth_hz,
                m.mass_kg,
            )?);
        }
        Ok(plant)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_matches_reference() {
        let c = Config::reference();
        let p = c.system_params().unwrap();
        let r = reference::feedback_system(2.4).unwrap();
        assert!((p.mode.omega_m / r.mode.omega_m - 1.0).abs() < 1e-12);
        assert!((p.rates().c_q - 2.4).abs() < 1e-9);
        assert!((p.gamma_opt() / r.gamma_opt() - 1.0).abs() < 1e-9);
        assert_eq!(p.aux_force_ratio, 0.18);
        assert_eq!(c.feedback.phase, PhaseSpec::Cool);
    }

    #[test]
    fn empty_config_uses_defaults() {
        let c = Config::from_toml_str("").unwrap();
        assert!(c.aux.is_none());
        assert_eq!(c.fit.averages, 50);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = Config::from_toml_str("[probe]\nkapa_hz = 1.0\n[extra]\nx = 1\n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("probe.kapa_hz"), "{text}");
        assert!(text.contains("`extra`"), "{text}");
        assert!(err.is_config());
    }

    #[test]
    fn all_violations_reported() {
        let err =
            Config::from_toml_str("[probe]\neta_det = 1.5\nkappa_hz = -1\n[fit]\naverages = 0\n")
                .unwrap_err();
        match err {
            Error::Config(v) => assert_eq!(v.len(), 3, "{v:?}"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn exclusive_keys() {
        assert!(Config::from_toml_str("[bath]\ntemperature_k = 1\nn_th = 3\n").is_err());
        let c = Config::from_toml_str("[bath]\nn_th = 3\n").unwrap();
        assert_eq!(c.system_params().unwrap().bath.n_th, 3.0);
    }

    #[test]
    fn phase_parsing() {
        assert_eq!("cool".parse::<PhaseSpec>().unwrap(), PhaseSpec::Cool);
        assert_eq!("1.5".parse::<PhaseSpec>().unwrap(), PhaseSpec::Radians(1.5));
        assert!("hot".parse::<PhaseSpec>().is_err());
        let c = Config::from_toml_str("[feedback]\nphase = 0.25\n").unwrap();
        assert_eq!(c.feedback.phase, PhaseSpec::Radians(0.25));
    }

    #[test]
    fn syntax_error_is_config_error() {
        assert!(Config::from_toml_str("[probe\n").unwrap_err().is_config());
    }

    #[test]
    fn aux_stages_parsed() {
        let c = Config::from_toml_str(
            "[[feedback.aux_stages]]\ngain = 0.1\ncenter_hz = 1.2e6\nbandwidth_hz = 1e4\n",
        )
        .unwrap();
        let p = c.system_params().unwrap();
        assert_eq!(c.controller(&p).unwrap().aux_stages.len(), 1);
        let err = Config::from_toml_str("[[feedback.aux_stages]]\ngain = 0.1\ncentre_hz = 1\n")
            .unwrap_err();
        let text = err.to_string();
        assert!(
            text.contains("centre_hz") && text.contains("center_hz"),
            "{text}"
        );
    }

    #[test]
    fn extra_modes_enter_the_plant() {
        let c = Config::from_toml_str(
            "[[mechanics.extra_modes]]\nfrequency_hz = 1.25e6\nlinewidth_hz = 1.0\nmass_kg = 1e-11\n",
        )
        .unwrap();
        let p = c.system_params().unwrap();
        assert_eq!(c.plant(&p).unwrap().modes.len(), 2);
    }
}
