//! Synthetic measurements and the fitting and calibration procedures.

pub mod fit;
pub mod optim;
pub mod scenario;
pub mod synth;

use std::collections::BTreeMap;

use serde::Serialize;

pub use fit::*;
pub use synth::{
    ks_gamma, ks_test, rng, stroboscopic_times, synth_amplitude_noise, synth_g0_dataset,
    synth_heating, synth_periodogram, synth_periodogram_stream, synth_phase_noise, synth_ringdown,
    KsResult, PsdData, SyntheticPeriodogram,
};

/// Outcome of one fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub model: String,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Objective at the optimum (negative log-likelihood or half sum of squares).
    pub objective: f64,
    /// Deviance or residual sum of squares per degree of freedom; near 1 for a good fit.
    pub reduced_objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub seed: Option<u64>,
    pub condition_number: Option<f64>,
    pub derived: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl FitResult {
    /// Estimate and standard error of a named parameter.
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| (self.estimates[i], self.std_errors[i]))
    }

    pub fn estimate(&self, name: &str) -> f64 {
        self.get(name).map(|v| v.0).unwrap_or(f64::NAN)
    }

    pub fn std_error(&self, name: &str) -> f64 {
        self.get(name).map(|v| v.1).unwrap_or(f64::NAN)
    }

    pub fn derived(&self, name: &str) -> f64 {
        self.derived.get(name).copied().unwrap_or(f64::NAN)
    }

    /// Whether `truth` lies within `k` standard errors of the estimate.
    pub fn covers(&self, name: &str, truth: f64, k: f64) -> bool {
        match self.get(name) {
            Some((est, se)) => se.is_finite() && (est - truth).abs() <= k * se,
            None => false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}
