//! Fitters for every measurement model: thermomechanical and in-loop
//! spectra, g0 calibration, heating transients, ringdowns and classical laser
//! noise.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::optim::{self, LeastSquares, Objective, Options, Whittle};
use super::synth::PsdData;
use super::FitResult;
use crate::error::{Error, Result};
use crate::feedback::heating_value;
use crate::params::{derive_zero_point, temperature_for_occupation, MechanicalMode, SystemParams};
use crate::response::FeedbackController;
use crate::spectra::{force_budget, LoopModel};
use crate::units::{hz_to_rad, rad_to_hz};

/// Likelihood used for periodogram fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Likelihood {
    /// Gamma-distributed bins.
    #[default]
    Whittle,
    /// Gaussian bins with variance `S²/N`.
    WeightedLeastSquares,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    pub likelihood: Likelihood,
    pub optim: Options,
}

fn numeric_jacobian(f: &impl Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = 1e-6 * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let up = f(&xp);
        xp[j] = x[j] - h;
        let dn = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (up[i] - dn[i]) / (2.0 * h);
        }
    }
    jac
}

/// Assemble a result from an internal-coordinate solution. Public estimates
/// are `to_public(x)`, with errors propagated through its Jacobian.
#[allow(clippy::too_many_arguments)]
fn assemble(
    model: &str,
    names: &[&str],
    obj: &impl Objective,
    sol: &optim::Solution,
    scale: f64,
    reduced: f64,
    to_public: impl Fn(&[f64]) -> Vec<f64>,
) -> FitResult {
    let cov = optim::covariance(obj, &sol.x, scale);
    let jac = numeric_jacobian(&to_public, &sol.x);
    let public_cov = &jac * &cov.matrix * jac.transpose();
    let estimates = to_public(&sol.x);
    let std_errors = (0..estimates.len())
        .map(|i| {
            let v = public_cov[(i, i)];
            if v.is_finite() && v >= 0.0 {
                v.sqrt()
            } else {
                f64::INFINITY
            }
        })
        .collect::<Vec<_>>();
    let mut warnings = Vec::new();
    if !sol.converged {
        warnings.push(format!("not converged ({}): {}", sol.method, sol.message));
    }
    if !cov.from_observed {
        warnings
            .push("observed information not positive definite; expected information used".into());
    }
    if std_errors.iter().any(|s| !s.is_finite()) {
        warnings.push("some standard errors are not finite".into());
    }
    FitResult {
        model: model.into(),
        names: names.iter().map(|s| s.to_string()).collect(),
        estimates,
        std_errors,
        objective: sol.value,
        reduced_objective: reduced,
        converged: sol.converged,
        iterations: sol.iterations,
        seed: None,
        condition_number: Some(cov.condition_number),
        derived: BTreeMap::new(),
        warnings,
    }
}

fn dof(n: usize, p: usize) -> f64 {
    (n.saturating_sub(p)).max(1) as f64
}

/// Whittle deviance `2N Σ (P/S − ln(P/S) − 1)`.
fn whittle_deviance(expected: &[f64], data: &[f64], averages: f64) -> f64 {
    2.0 * averages
        * expected
            .iter()
            .zip(data)
            .map(|(s, p)| {
                let r = p / s;
                r - r.ln() - 1.0
            })
            .sum::<f64>()
}

fn check_psd(data: &PsdData) -> Result<()> {
    if data.grid_hz.len() != data.values.len() {
        return Err(Error::Data("grid and values differ in length".into()));
    }
    if data.values.len() < 8 {
        return Err(Error::Data("need at least 8 spectral bins".into()));
    }
    if data.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Data("PSD values must be positive and finite".into()));
    }
    if !(data.averages >= 1.0) {
        return Err(Error::Data("averages must be >= 1".into()));
    }
    Ok(())
}

/// Fit a PSD model in internal coordinates with the chosen likelihood.
fn fit_psd(
    model_id: &str,
    names: &[&str],
    data: &PsdData,
    dim: usize,
    model: impl Fn(&[f64]) -> Vec<f64>,
    to_public: impl Fn(&[f64]) -> Vec<f64>,
    opts: &FitOptions,
) -> FitResult {
    let n = data.values.len();
    let x0 = vec![0.0; dim];
    match opts.likelihood {
        Likelihood::Whittle => {
            let obj = Whittle::new(&model, data.values.clone(), data.averages, dim);
            let sol = optim::minimize(&obj, &x0, &opts.optim);
            let expected = model(&sol.x);
            let reduced = whittle_deviance(&expected, &data.values, data.averages) / dof(n, dim);
            assemble(model_id, names, &obj, &sol, 1.0, reduced, to_public)
        }
        Likelihood::WeightedLeastSquares => {
            let sq = data.averages.sqrt();
            let residuals = |x: &[f64]| {
                model(x)
                    .iter()
                    .zip(&data.values)
                    .map(|(s, p)| if *s > 0.0 { sq * (p - s) / s } else { 1e10 })
                    .collect::<Vec<_>>()
            };
            let obj = LeastSquares::new(residuals, dim, n);
            let sol = optim::minimize(&obj, &x0, &opts.optim);
            let reduced = 2.0 * sol.value / dof(n, dim);
            let mut r = assemble(model_id, names, &obj, &sol, 1.0, reduced, to_public);
            r.warnings
                .push("weighted least squares used instead of the Whittle likelihood".into());
            r
        }
    }
}

/// Parameters of the thermomechanical (open-loop) spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianParams {
    pub omega_eff: f64,
    pub gamma_eff: f64,
    pub n_tot: f64,
    pub n_imp: f64,
}

/// Measured open-loop spectrum `|χ(Ω_eff, Γ_eff)|² S_FF + S_imp` with
/// `S_FF = 8p_zpf² Γ_m n_tot` and `S_imp = 8x_zpf² n_imp/Γ_m`. `mode` is the
/// intrinsic mode, which fixes mass, Γ_m and the zero-point scales.
pub fn lorentzian_psd(mode: &MechanicalMode, p: &LorentzianParams, omega: f64) -> f64 {
    let zp = derive_zero_point(mode).expect("validated mode");
    let s_ff = 8.0 * zp.p_zpf * zp.p_zpf * mode.gamma_m * p.n_tot;
    let s_imp = 8.0 * zp.x_zpf * zp.x_zpf * p.n_imp / mode.gamma_m;
    let d = p.omega_eff * p.omega_eff - omega * omega;
    s_ff / (mode.mass * mode.mass * (d * d + p.gamma_eff * p.gamma_eff * omega * omega)) + s_imp
}

/// Starting point from the data: floor from the low decile, centre from the
/// smoothed peak, width from area over height.
pub fn guess_lorentzian(data: &PsdData, mode: &MechanicalMode) -> Result<LorentzianParams> {
    check_psd(data)?;
    let zp = derive_zero_point(mode)?;
    let n = data.values.len();
    let mut sorted = data.values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let floor = sorted[n / 10];
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            data.values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let (ipk, &peak) = smooth
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let omega0 = hz_to_rad(data.grid_hz[ipk]);
    let height = (peak - floor).max(peak * 1e-3);
    let omegas: Vec<f64> = data.grid_hz.iter().map(|&f| hz_to_rad(f)).collect();
    let area: f64 = omegas
        .windows(2)
        .zip(data.values.windows(2))
        .map(|(w, v)| 0.5 * (w[1] - w[0]) * ((v[0] - floor).max(0.0) + (v[1] - floor).max(0.0)))
        .sum();
    let min_width = omegas
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let gamma = (2.0 * area / (std::f64::consts::PI * height)).max(min_width);
    let s_ff = height * mode.mass * mode.mass * gamma * gamma * omega0 * omega0;
    Ok(LorentzianParams {
        omega_eff: omega0,
        gamma_eff: gamma,
        n_tot: s_ff / (8.0 * zp.p_zpf * zp.p_zpf * mode.gamma_m),
        n_imp: floor * mode.gamma_m / (8.0 * zp.x_zpf * zp.x_zpf),
    })
}

/// Fit the open-loop spectrum for `Ω_eff, Γ_eff, n_tot, n_imp`.
///
/// Estimates are reported as `f_eff_hz`, `linewidth_eff_hz`, `n_tot`,
/// `n_imp`; `nbar` (the mode occupancy `n_tot Γ_m/Γ_eff − ½`) is derived.
pub fn fit_lorentzian(
    data: &PsdData,
    mode: &MechanicalMode,
    initial: Option<LorentzianParams>,
    opts: &FitOptions,
) -> Result<FitResult> {
    check_psd(data)?;
    mode.validate()?;
    let g = match initial {
        Some(g) => g,
        None => guess_lorentzian(data, mode)?,
    };
    let omegas: Vec<f64> = data.grid_hz.iter().map(|&f| hz_to_rad(f)).collect();
    let unpack = move |x: &[f64]| LorentzianParams {
        omega_eff: g.omega_eff + x[0] * g.gamma_eff,
        gamma_eff: g.gamma_eff * x[1].exp(),
        n_tot: g.n_tot * x[2].exp(),
        n_imp: g.n_imp * x[3].exp(),
    };
    let model = |x: &[f64]| {
        let p = unpack(x);
        omegas
            .iter()
            .map(|&w| lorentzian_psd(mode, &p, w))
            .collect::<Vec<_>>()
    };
    let to_public = |x: &[f64]| {
        let p = unpack(x);
        vec![
            rad_to_hz(p.omega_eff),
            rad_to_hz(p.gamma_eff),
            p.n_tot,
            p.n_imp,
        ]
    };
    let mut result = fit_psd(
        "lorentzian",
        &["f_eff_hz", "linewidth_eff_hz", "n_tot", "n_imp"],
        data,
        4,
        model,
        to_public,
        opts,
    );
    let gamma_eff = hz_to_rad(result.estimate("linewidth_eff_hz"));
    result.derived.insert(
        "nbar".into(),
        result.estimate("n_tot") * mode.gamma_m / gamma_eff - 0.5,
    );
    Ok(result)
}

/// Free parameters of the in-loop spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopParams {
    pub gain: f64,
    pub phase: f64,
    pub n_imp: f64,
    pub n_tot: f64,
}

/// Loop model with the controller's gain and phase and the noise levels
/// replaced. Filter shape and delay come from `template`.
pub fn in_loop_model(
    params: &SystemParams,
    template: &FeedbackController,
    p: &ClosedLoopParams,
) -> Result<LoopModel> {
    let zp = params.zero_point();
    let gamma_m = params.mode.gamma_m;
    let mut model = LoopModel::open(params)?;
    model.s_ff_tot = 8.0 * zp.p_zpf * zp.p_zpf * gamma_m * p.n_tot;
    model.s_xx_imp = 8.0 * zp.x_zpf * zp.x_zpf * p.n_imp / gamma_m;
    model.controller = Some(template.with_gain(p.gain).with_phase(p.phase));
    Ok(model)
}

/// The noise parameters of `params` expressed as `(n_imp, n_tot)`.
pub fn noise_quanta(params: &SystemParams) -> (f64, f64) {
    let n_imp = crate::spectra::imprecision(params).n_imp;
    (n_imp, force_budget(params).n_tot)
}

/// Fit the measured in-loop spectrum for gain, phase, `n_imp` and `n_tot`,
/// then infer the occupancy from the reconstructed in-loop position spectrum.
pub fn fit_closed_loop(
    data: &PsdData,
    params: &SystemParams,
    template: &FeedbackController,
    initial: ClosedLoopParams,
    opts: &FitOptions,
) -> Result<FitResult> {
    check_psd(data)?;
    params.validate()?;
    template.validate()?;
    if !(initial.gain > 0.0 && initial.n_imp > 0.0 && initial.n_tot > 0.0) {
        return Err(Error::param(
            "initial",
            "gain, n_imp and n_tot must be positive",
        ));
    }
    let omegas: Vec<f64> = data.grid_hz.iter().map(|&f| hz_to_rad(f)).collect();
    let base = in_loop_model(params, template, &initial)?;
    let g = initial;
    let unpack = move |x: &[f64]| ClosedLoopParams {
        gain: g.gain * x[0].exp(),
        phase: g.phase + x[1],
        n_imp: g.n_imp * x[2].exp(),
        n_tot: g.n_tot * x[3].exp(),
    };
    let zp = params.zero_point();
    let gamma_m = params.mode.gamma_m;
    let model = |x: &[f64]| {
        let p = unpack(x);
        let mut m = base.clone();
        m.s_ff_tot = 8.0 * zp.p_zpf * zp.p_zpf * gamma_m * p.n_tot;
        m.s_xx_imp = 8.0 * zp.x_zpf * zp.x_zpf * p.n_imp / gamma_m;
        m.controller = Some(template.with_gain(p.gain).with_phase(p.phase));
        omegas.iter().map(|&w| m.syy(w)).collect::<Vec<_>>()
    };
    let to_public = |x: &[f64]| {
        let p = unpack(x);
        vec![p.gain, p.phase, p.n_imp, p.n_tot]
    };
    let mut result = fit_psd(
        "closed-loop",
        &["gain", "phase_rad", "n_imp", "n_tot"],
        data,
        4,
        model,
        to_public,
        opts,
    );
    let fitted = ClosedLoopParams {
        gain: result.estimate("gain"),
        phase: result.estimate("phase_rad"),
        n_imp: result.estimate("n_imp"),
        n_tot: result.estimate("n_tot"),
    };
    let m = in_loop_model(params, template, &fitted)?;
    let occ = m.occupancy();
    result.derived.insert("nbar".into(), occ.nbar);
    result
        .derived
        .insert("nbar_error_bound".into(), occ.error_bound);
    result
        .derived
        .insert("gamma_eff_hz".into(), rad_to_hz(m.gamma_eff()));
    if let Some(w) = occ.warning {
        result.warnings.push(w);
    }
    Ok(result)
}

/// Known quantities of the g0 calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G0Known {
    /// Transduction `K(Ω_m)` from frequency noise to voltage variance.
    pub transduction: f64,
    pub omega_m: f64,
    pub gamma_m: f64,
    /// Sideband-cooling floor of the auxiliary beam.
    pub n_min: f64,
}

/// One calibration point: auxiliary power, its optical damping and the
/// measured voltage variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G0Point {
    pub power_w: f64,
    pub gamma_opt: f64,
    pub sigma_v2: f64,
}

/// `σ_v² = 2K/Ω_m² · g0² · ((Γ_m n_th + Γ_opt n_min)/(Γ_m + Γ_opt) + ½)`.
pub fn g0_variance(known: &G0Known, g0: f64, n_th: f64, gamma_opt: f64) -> f64 {
    let n = (known.gamma_m * n_th + gamma_opt * known.n_min) / (known.gamma_m + gamma_opt);
    2.0 * known.transduction / (known.omega_m * known.omega_m) * g0 * g0 * (n + 0.5)
}

/// Fit g0 and the bath occupancy to variances measured across auxiliary
/// powers. Residuals are logarithmic; errors are scaled by the residual
/// variance.
pub fn fit_g0_calibration(
    points: &[G0Point],
    known: &G0Known,
    opts: &Options,
) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(Error::Data("g0 calibration needs at least 3 points".into()));
    }
    if points
        .iter()
        .any(|p| !(p.sigma_v2 > 0.0 && p.sigma_v2.is_finite() && p.gamma_opt >= 0.0))
    {
        return Err(Error::Data(
            "variances must be positive and damping non-negative".into(),
        ));
    }
    let scale = 2.0 * known.transduction / (known.omega_m * known.omega_m);
    let strongest = points
        .iter()
        .max_by(|a, b| a.gamma_opt.partial_cmp(&b.gamma_opt).unwrap())
        .unwrap();
    let weakest = points
        .iter()
        .min_by(|a, b| a.gamma_opt.partial_cmp(&b.gamma_opt).unwrap())
        .unwrap();
    let g0_init = (strongest.sigma_v2 / (scale * (known.n_min + 0.5))).sqrt();
    let n_weak = weakest.sigma_v2 / (scale * g0_init * g0_init) - 0.5;
    let n_th_init = ((n_weak * (known.gamma_m + weakest.gamma_opt)
        - weakest.gamma_opt * known.n_min)
        / known.gamma_m)
        .max(1.0);
    let x0 = [g0_init.ln(), n_th_init.ln()];
    let residuals = |x: &[f64]| {
        points
            .iter()
            .map(|p| (p.sigma_v2 / g0_variance(known, x[0].exp(), x[1].exp(), p.gamma_opt)).ln())
            .collect::<Vec<_>>()
    };
    let n = points.len();
    let obj = LeastSquares::new(residuals, 2, n);
    let sol = optim::minimize(&obj, &x0, opts);
    let s2 = 2.0 * sol.value / dof(n, 2);
    let omega_m = known.omega_m;
    let to_public = |x: &[f64]| {
        let n_th = x[1].exp();
        vec![
            rad_to_hz(x[0].exp()),
            n_th,
            temperature_for_occupation(n_th, omega_m).unwrap_or(f64::NAN),
        ]
    };
    let mut result = assemble(
        "g0-calibration",
        &["g0_hz", "n_th", "temperature_k"],
        &obj,
        &sol,
        s2.max(f64::MIN_POSITIVE),
        s2,
        to_public,
    );
    let n_th = result.estimate("n_th");
    let classical: Vec<f64> = points
        .iter()
        .map(|p| {
            let c = known.gamma_m * n_th;
            c / (c + p.gamma_opt * known.n_min)
        })
        .collect();
    if classical.iter().all(|&c| c > 0.9) || classical.iter().all(|&c| c < 0.1) {
        result.warnings.push(
            "ill-conditioned: all points lie in a single regime (thermal or backaction dominated)"
                .into(),
        );
    }
    if let Some(c) = result.condition_number {
        result.derived.insert("condition_number".into(), c);
        if c > 1e10 {
            result.warnings.push(format!(
                "ill-conditioned information matrix (condition number {c:.2e})"
            ));
        }
    }
    Ok(result)
}

/// Heating-model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatingParams {
    pub n_i: f64,
    pub n_f: f64,
    pub gamma_eff: f64,
}

fn guess_heating(times: &[f64], nbar: &[f64]) -> HeatingParams {
    let pre: Vec<f64> = times
        .iter()
        .zip(nbar)
        .filter(|(t, _)| **t <= 0.0)
        .map(|(_, n)| *n)
        .collect();
    let post: Vec<(f64, f64)> = times
        .iter()
        .zip(nbar)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, n)| (*t, *n))
        .collect();
    let n_i = if pre.is_empty() {
        post[0].1
    } else {
        pre.iter().sum::<f64>() / pre.len() as f64
    };
    let tail = (post.len() / 10).max(1);
    let n_f = post[post.len() - tail..].iter().map(|p| p.1).sum::<f64>() / tail as f64;
    let target = n_i + (1.0 - (-1.0f64).exp()) * (n_f - n_i);
    let rising = n_f >= n_i;
    let t63 = post
        .iter()
        .find(|(_, n)| if rising { *n >= target } else { *n <= target })
        .map(|p| p.0)
        .unwrap_or(post[post.len() / 2].0);
    HeatingParams {
        n_i: n_i.max(1e-3),
        n_f: n_f.max(1e-3),
        gamma_eff: 1.0 / t63.max(1e-12),
    }
}

/// Fit `n̄(t) = n̄_i + θ(t)(n̄_f − n̄_i)(1 − e^{−Γ_eff t})` with logarithmic
/// residuals. Reports `gamma_tot = (n̄_f − n̄_i)Γ_eff`, its inverse in µs, and
/// derives the initial slope and `Γ_eff n̄_f`.
pub fn fit_heating(
    times: &[f64],
    nbar: &[f64],
    initial: Option<HeatingParams>,
    opts: &Options,
) -> Result<FitResult> {
    if times.len() != nbar.len() {
        return Err(Error::Data("times and occupancies differ in length".into()));
    }
    if !times.iter().any(|&t| t > 0.0) {
        return Err(Error::Domain(
            "trace has no samples after the switch (t > 0)".into(),
        ));
    }
    if nbar.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
        return Err(Error::Data(
            "occupancies must be positive and finite".into(),
        ));
    }
    let g = initial.unwrap_or_else(|| guess_heating(times, nbar));
    let unpack = move |x: &[f64]| HeatingParams {
        n_i: g.n_i * x[0].exp(),
        n_f: g.n_f * x[1].exp(),
        gamma_eff: g.gamma_eff * x[2].exp(),
    };
    let residuals = |x: &[f64]| {
        let p = unpack(x);
        times
            .iter()
            .zip(nbar)
            .map(|(&t, &n)| (n / heating_value(p.n_i, p.n_f, p.gamma_eff, t)).ln())
            .collect::<Vec<_>>()
    };
    let n = times.len();
    let obj = LeastSquares::new(residuals, 3, n);
    let sol = optim::minimize(&obj, &[0.0; 3], opts);
    let s2 = 2.0 * sol.value / dof(n, 3);
    let to_public = |x: &[f64]| {
        let p = unpack(x);
        let gamma_tot = (p.n_f - p.n_i) * p.gamma_eff;
        vec![p.n_i, p.n_f, p.gamma_eff, gamma_tot, 1e6 / gamma_tot]
    };
    let mut result = assemble(
        "heating",
        &["n_i", "n_f", "gamma_eff", "gamma_tot", "inv_gamma_tot_us"],
        &obj,
        &sol,
        s2.max(f64::MIN_POSITIVE),
        s2,
        to_public,
    );
    let p = unpack(&sol.x);
    let slope = numeric_slope_at_switch(&p);
    result.derived.insert("initial_slope".into(), slope);
    result
        .derived
        .insert("gamma_n_f".into(), p.gamma_eff * p.n_f);
    result
        .derived
        .insert("inv_gamma_n_f_us".into(), 1e6 / (p.gamma_eff * p.n_f));
    result.derived.insert("phonons_per_ms".into(), slope * 1e-3);
    if !times.iter().any(|&t| t <= 0.0) {
        result
            .warnings
            .push("no samples before the switch; n_i is extrapolated".into());
    }
    Ok(result)
}

/// Tangent of the fitted curve just after the switch.
fn numeric_slope_at_switch(p: &HeatingParams) -> f64 {
    let h = 1e-6 / p.gamma_eff;
    (heating_value(p.n_i, p.n_f, p.gamma_eff, 2.0 * h)
        - heating_value(p.n_i, p.n_f, p.gamma_eff, h))
        / h
}

/// Weighted linear least squares `y ≈ X β` with weights `w`. Returns the
/// estimate, the unscaled covariance `(XᵀWX)⁻¹` and the weighted residual
/// sum of squares.
fn weighted_linear(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let n = y.len();
    let p = x.ncols();
    let mut xtwx = DMatrix::zeros(p, p);
    let mut xtwy = DVector::zeros(p);
    for i in 0..n {
        for a in 0..p {
            xtwy[a] += w[i] * x[(i, a)] * y[i];
            for b in 0..p {
                xtwx[(a, b)] += w[i] * x[(i, a)] * x[(i, b)];
            }
        }
    }
    let inv = xtwx
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular design matrix".into()))?;
    let beta: DVector<f64> = &inv * xtwy;
    let rss: f64 = (0..n)
        .map(|i| {
            let fit: f64 = (0..p).map(|a| x[(i, a)] * beta[a]).sum();
            w[i] * (y[i] - fit).powi(2)
        })
        .sum();
    Ok((beta, inv, rss))
}

fn linear_result(
    model: &str,
    names: &[&str],
    estimates: Vec<f64>,
    std_errors: Vec<f64>,
    rss: f64,
    n: usize,
) -> FitResult {
    let p = names.len();
    FitResult {
        model: model.into(),
        names: names.iter().map(|s| s.to_string()).collect(),
        converged: std_errors.iter().all(|s| s.is_finite()),
        estimates,
        std_errors,
        objective: 0.5 * rss,
        reduced_objective: rss / dof(n, p),
        iterations: 1,
        seed: None,
        condition_number: None,
        derived: BTreeMap::new(),
        warnings: Vec::new(),
    }
}

/// Fit `x(t) = x(0) e^{−Ω_m t/2Q}` by log-linear regression with weights
/// `x²`, appropriate for additive amplitude noise. The weights start from the
/// data and are then taken from the fitted curve, which removes the
/// correlation between weight and noise.
pub fn fit_ringdown(times: &[f64], amplitudes: &[f64], omega_m: f64) -> Result<FitResult> {
    if times.len() != amplitudes.len() || times.len() < 3 {
        return Err(Error::Data(
            "ringdown needs at least 3 paired samples".into(),
        ));
    }
    if amplitudes.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::Data("ringdown amplitudes must be positive".into()));
    }
    let n = times.len();
    let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { -times[i] });
    let y: Vec<f64> = amplitudes.iter().map(|a| a.ln()).collect();
    let mut w: Vec<f64> = amplitudes.iter().map(|a| a * a).collect();
    let mut fit = weighted_linear(&design, &y, &w)?;
    for _ in 0..5 {
        w = times
            .iter()
            .map(|t| (2.0 * (fit.0[0] - fit.0[1] * t)).exp())
            .collect();
        fit = weighted_linear(&design, &y, &w)?;
    }
    let (beta, inv, rss) = fit;
    let s2 = rss / dof(n, 2);
    let rate = beta[1];
    let se_rate = (inv[(1, 1)] * s2).sqrt();
    let q = omega_m / (2.0 * rate);
    let se_q = q * se_rate / rate.abs();
    let mut result = linear_result(
        "ringdown",
        &["ln_x0", "decay_rate", "q"],
        vec![beta[0], rate, q],
        vec![(inv[(0, 0)] * s2).sqrt(), se_rate, se_q],
        rss,
        n,
    );
    result
        .derived
        .insert("amplitude_decay_time_s".into(), 1.0 / rate);
    if rate <= 0.0 {
        result.warnings.push("amplitude does not decay".into());
    }
    let sigma = s2.sqrt();
    let k = (2.0 * (n as f64).ln()).sqrt().max(2.0) + 1.0;
    let jumps = amplitudes
        .windows(2)
        .filter(|a| a[1] - a[0] > k * std::f64::consts::SQRT_2 * sigma)
        .count();
    if jumps > 0 {
        result.warnings.push(format!(
            "trace is non-monotone beyond noise at {jumps} step(s)"
        ));
    }
    Ok(result)
}

/// Fit `var(P) = aP + bP²` with relative weighting (iteratively reweighted on
/// the model). Reports the shot (`a`) and classical (`b`) coefficients and
/// the classical/shot ratio `bP_ref/a`.
pub fn fit_amplitude_noise(powers: &[f64], variances: &[f64], p_ref: f64) -> Result<FitResult> {
    if powers.len() != variances.len() || powers.len() < 3 {
        return Err(Error::Data(
            "amplitude-noise fit needs at least 3 power points".into(),
        ));
    }
    if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) || powers.iter().any(|p| !(*p > 0.0))
    {
        return Err(Error::Data("powers and variances must be positive".into()));
    }
    let n = powers.len();
    let design = DMatrix::from_fn(n, 2, |i, j| {
        if j == 0 {
            powers[i]
        } else {
            powers[i] * powers[i]
        }
    });
    let mut w: Vec<f64> = variances.iter().map(|v| 1.0 / (v * v)).collect();
    let mut fit = weighted_linear(&design, variances, &w)?;
    for _ in 0..5 {
        w = (0..n)
            .map(|i| {
                let m = fit.0[0] * powers[i] + fit.0[1] * powers[i] * powers[i];
                let m = if m > 0.0 { m } else { variances[i] };
                1.0 / (m * m)
            })
            .collect();
        fit = weighted_linear(&design, variances, &w)?;
    }
    let (beta, inv, rss) = fit;
    let s2 = rss / dof(n, 2);
    let cov = inv * s2;
    let (a, b) = (beta[0], beta[1]);
    let ratio = b * p_ref / a;
    let grad = [-ratio / a, p_ref / a];
    let var_ratio = grad[0] * grad[0] * cov[(0, 0)]
        + 2.0 * grad[0] * grad[1] * cov[(0, 1)]
        + grad[1] * grad[1] * cov[(1, 1)];
    let mut result = linear_result(
        "amplitude-noise",
        &["shot", "classical", "ratio_at_ref"],
        vec![a, b, ratio],
        vec![
            cov[(0, 0)].sqrt(),
            cov[(1, 1)].sqrt(),
            var_ratio.max(0.0).sqrt(),
        ],
        rss,
        n,
    );
    result.derived.insert("p_ref_w".into(), p_ref);
    if a < 0.0 {
        result
            .warnings
            .push("fitted shot-noise term is negative".into());
    }
    Ok(result)
}

/// Output amplitude-quadrature noise relative to shot noise for a laser with
/// classical amplitude (`c_xx`) and phase (`c_yy`) noise reflected from a
/// cavity at detuning `Δ`, evaluated at sideband frequency `Ω`.
pub fn classical_phase_noise_spectrum(
    detuning: f64,
    omega: f64,
    eta_c: f64,
    kappa: f64,
    c_xx: f64,
    c_yy: f64,
) -> f64 {
    let (a, b) = phase_noise_terms(detuning, omega, eta_c, kappa, c_xx);
    a + b * c_yy
}

/// `S = a + b·C_YY`: the model is linear in the phase noise.
fn phase_noise_terms(detuning: f64, omega: f64, eta_c: f64, kappa: f64, c_xx: f64) -> (f64, f64) {
    let d2 = detuning * detuning;
    let k2 = (kappa / 2.0).powi(2);
    let w2 = omega * omega;
    let pre = 4.0 * (1.0 - eta_c) * eta_c * kappa * kappa / (d2 + k2);
    let denom = d2 * d2 + 2.0 * d2 * (k2 - w2) + (k2 + w2).powi(2);
    let a = 1.0 + pre * ((d2 + k2).powi(2) + k2 * w2) * c_xx / denom;
    let b = pre * d2 * w2 / denom;
    (a, b)
}

/// Fit the phase-noise coefficient `C_YY` to noise measured across
/// detunings, holding `C_XX` fixed. Relative weighting, reweighted on the
/// model.
pub fn fit_phase_noise(
    detunings: &[f64],
    values: &[f64],
    omega: f64,
    eta_c: f64,
    kappa: f64,
    c_xx: f64,
) -> Result<FitResult> {
    if detunings.len() != values.len() || detunings.is_empty() {
        return Err(Error::Data(
            "phase-noise fit needs paired detunings and values".into(),
        ));
    }
    if !(0.0..=1.0).contains(&eta_c) {
        return Err(Error::param("eta_c", "must lie in [0, 1]"));
    }
    let terms: Vec<(f64, f64)> = detunings
        .iter()
        .map(|&d| phase_noise_terms(d, omega, eta_c, kappa, c_xx))
        .collect();
    let n = values.len();
    let design = DMatrix::from_fn(n, 1, |i, _| terms[i].1);
    let y: Vec<f64> = values.iter().zip(&terms).map(|(v, t)| v - t.0).collect();
    let mut w: Vec<f64> = values.iter().map(|v| 1.0 / (v * v)).collect();
    let mut result = if terms.iter().all(|t| t.1 == 0.0) {
        let mut r = linear_result(
            "phase-noise",
            &["c_yy"],
            vec![f64::NAN],
            vec![f64::INFINITY],
            0.0,
            n,
        );
        r.converged = false;
        r.warnings
            .push("phase noise unidentifiable: no detuned points".into());
        r
    } else {
        let mut fit = weighted_linear(&design, &y, &w)?;
        for _ in 0..5 {
            w = terms
                .iter()
                .map(|t| 1.0 / (t.0 + t.1 * fit.0[0]).powi(2))
                .collect();
            fit = weighted_linear(&design, &y, &w)?;
        }
        let (beta, inv, rss) = fit;
        let s2 = rss / dof(n, 1);
        linear_result(
            "phase-noise",
            &["c_yy"],
            vec![beta[0]],
            vec![(inv[(0, 0)] * s2).sqrt()],
            rss,
            n,
        )
    };
    result.derived.insert("c_xx".into(), c_xx);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::reference;
    use crate::units::TAU;

    fn open_loop_data(noise_free: bool) -> (PsdData, MechanicalMode, LorentzianParams) {
        let mode = reference::mode();
        let truth = LorentzianParams {
            omega_eff: mode.omega_m + TAU * 0.2,
            gamma_eff: TAU * 1.0,
            n_tot: 2.0e5,
            n_imp: 1.0e-3,
        };
        let grid_hz: Vec<f64> = (0..401)
            .map(|k| reference::F_M_HZ + (k as f64 - 200.0) * 0.05)
            .collect();
        let values: Vec<f64> = grid_hz
            .iter()
            .map(|&f| lorentzian_psd(&mode, &truth, hz_to_rad(f)))
            .collect();
        let data = PsdData {
            grid_hz,
            values,
            averages: if noise_free { 1e6 } else { 50.0 },
        };
        (data, mode, truth)
    }

    #[test]
    fn lorentzian_noiseless_exact() {
        let (data, mode, truth) = open_loop_data(true);
        let r = fit_lorentzian(&data, &mode, None, &FitOptions::default()).unwrap();
        assert!(r.converged, "{r:?}");
        assert!(
            (r.estimate("n_tot") / truth.n_tot - 1.0).abs() < 1e-6,
            "{r:?}"
        );
        assert!((r.estimate("n_imp") / truth.n_imp - 1.0).abs() < 1e-6);
        assert!((hz_to_rad(r.estimate("linewidth_eff_hz")) / truth.gamma_eff - 1.0).abs() < 1e-6);
        assert!(
            (hz_to_rad(r.estimate("f_eff_hz")) - truth.omega_eff).abs() < 1e-6 * truth.gamma_eff
        );
    }

    #[test]
    fn lorentzian_least_squares_flag() {
        let (data, mode, truth) = open_loop_data(true);
        let opts = FitOptions {
            likelihood: Likelihood::WeightedLeastSquares,
            ..Default::default()
        };
        let r = fit_lorentzian(&data, &mode, None, &opts).unwrap();
        assert!((r.estimate("n_tot") / truth.n_tot - 1.0).abs() < 1e-6);
        assert!(r.warnings.iter().any(|w| w.contains("least squares")));
    }

    #[test]
    fn guess_is_close() {
        let (data, mode, truth) = open_loop_data(true);
        let g = guess_lorentzian(&data, &mode).unwrap();
        assert!((g.gamma_eff / truth.gamma_eff - 1.0).abs() < 0.3, "{g:?}");
        assert!((g.omega_eff - truth.omega_eff).abs() < truth.gamma_eff);
    }

    #[test]
    fn heating_noiseless_exact() {
        let times: Vec<f64> = (-50..400).map(|k| k as f64 * 1e-3).collect();
        let nbar: Vec<f64> = times
            .iter()
            .map(|&t| heating_value(2.0, 60.0, 22.8, t))
            .collect();
        let r = fit_heating(&times, &nbar, None, &Options::default()).unwrap();
        assert!((r.estimate("n_i") - 2.0).abs() < 1e-6, "{r:?}");
        assert!((r.estimate("n_f") - 60.0).abs() < 1e-6);
        assert!((r.estimate("gamma_eff") - 22.8).abs() < 1e-6);
        assert!((r.estimate("inv_gamma_tot_us") - 1e6 / (58.0 * 22.8)).abs() < 1e-3);
        let slope = r.derived("initial_slope");
        assert!((slope / (58.0 * 22.8) - 1.0).abs() < 1e-4);
        assert!((slope / r.derived("gamma_n_f") - 1.0).abs() < 0.05);
    }

    #[test]
    fn heating_needs_post_switch_samples() {
        let times = [-2.0, -1.0, 0.0];
        let err = fit_heating(&times, &[2.0, 2.0, 2.0], None, &Options::default()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn ringdown_exact() {
        let omega_m = hz_to_rad(reference::F_M_HZ);
        let q = 1.03e9;
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 9.0).collect();
        let amps: Vec<f64> = times
            .iter()
            .map(|t| (-omega_m * t / (2.0 * q)).exp())
            .collect();
        let r = fit_ringdown(&times, &amps, omega_m).unwrap();
        assert!((r.estimate("q") / q - 1.0).abs() < 1e-9);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn ringdown_rejects_nonpositive() {
        assert!(fit_ringdown(&[0.0, 1.0, 2.0], &[1.0, 0.0, 0.5], 1.0).is_err());
    }

    #[test]
    fn ringdown_warns_on_jump() {
        let times: Vec<f64> = (0..50).map(|k| k as f64).collect();
        let mut amps: Vec<f64> = times
            .iter()
            .map(|t| (-0.02 * t).exp() * (1.0 + 1e-4 * (t * 7.3).sin()))
            .collect();
        amps[30] *= 1.5;
        let r = fit_ringdown(&times, &amps, 1.0).unwrap();
        assert!(
            r.warnings.iter().any(|w| w.contains("non-monotone")),
            "{:?}",
            r.warnings
        );
    }

    #[test]
    fn amplitude_noise_scale_equivariance() {
        let powers: [f64; 5] = [0.2e-6, 0.5e-6, 1e-6, 2e-6, 5e-6];
        let v: Vec<f64> = powers
            .iter()
            .map(|p| 3.0 * p + 1.2e3 * p * p * (1.0 + 0.01 * (p * 1e7).sin()))
            .collect();
        let a = fit_amplitude_noise(&powers, &v, 1e-6).unwrap();
        let doubled: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let b = fit_amplitude_noise(&powers, &doubled, 1e-6).unwrap();
        assert!((b.estimate("shot") / a.estimate("shot") - 2.0).abs() < 1e-9);
        assert!((b.estimate("classical") / a.estimate("classical") - 2.0).abs() < 1e-9);
        assert!((b.estimate("ratio_at_ref") - a.estimate("ratio_at_ref")).abs() < 1e-12);
    }

    #[test]
    fn amplitude_noise_exact_and_negative_warning() {
        let powers = [1e-6, 2e-6, 3e-6, 4e-6];
        let v: Vec<f64> = powers.iter().map(|p| 5.0 * p + 4e3 * p * p).collect();
        let r = fit_amplitude_noise(&powers, &v, 1e-6).unwrap();
        assert!((r.estimate("ratio_at_ref") - 4e3 * 1e-6 / 5.0).abs() < 1e-10);
        let v: Vec<f64> = powers.iter().map(|p| -1.0 * p + 4e6 * p * p).collect();
        let r = fit_amplitude_noise(&powers, &v, 1e-6).unwrap();
        assert!(r.warnings.iter().any(|w| w.contains("negative")));
        assert!(fit_amplitude_noise(&powers[..2], &v[..2], 1e-6).is_err());
    }

    #[test]
    fn phase_noise_limits() {
        let kappa = TAU * 2.44e6;
        let omega = TAU * 1.139e6;
        let a = classical_phase_noise_spectrum(0.0, omega, 0.5, kappa, 0.01, 0.0);
        let b = classical_phase_noise_spectrum(0.0, omega, 0.5, kappa, 0.01, 100.0);
        assert_eq!(a, b);
        let far = classical_phase_noise_spectrum(kappa, 1e6 * kappa, 0.5, kappa, 0.01, 10.0);
        assert!((far - 1.0).abs() < 1e-9);
        assert_eq!(
            classical_phase_noise_spectrum(kappa, omega, 1.0, kappa, 5.0, 5.0),
            1.0
        );
    }

    #[test]
    fn phase_noise_exact_recovery() {
        let kappa = TAU * 2.44e6;
        let omega = TAU * 1.139e6;
        let det: Vec<f64> = (-10..=10).map(|k| k as f64 * 0.2 * kappa).collect();
        let v: Vec<f64> = det
            .iter()
            .map(|&d| classical_phase_noise_spectrum(d, omega, 0.3, kappa, 0.02, 0.7))
            .collect();
        let r = fit_phase_noise(&det, &v, omega, 0.3, kappa, 0.02).unwrap();
        assert!((r.estimate("c_yy") - 0.7).abs() < 1e-9);
        let r = fit_phase_noise(&[0.0, 0.0], &[1.1, 1.2], omega, 0.3, kappa, 0.02).unwrap();
        assert!(!r.converged);
    }

    #[test]
    fn g0_noiseless_and_invariant() {
        let known = G0Known {
            transduction: 1e-3,
            omega_m: hz_to_rad(reference::F_M_HZ),
            gamma_m: hz_to_rad(reference::LINEWIDTH_HZ),
            n_min: 2.64,
        };
        let g0 = hz_to_rad(127.0);
        let n_th = 2.0e5;
        let points: Vec<G0Point> = (0..15)
            .map(|k| {
                let gamma_opt = TAU * 10f64.powf(-0.5 + 0.35 * k as f64);
                G0Point {
                    power_w: 0.0,
                    gamma_opt,
                    sigma_v2: g0_variance(&known, g0, n_th, gamma_opt),
                }
            })
            .collect();
        let r = fit_g0_calibration(&points, &known, &Options::default()).unwrap();
        assert!((r.estimate("g0_hz") - 127.0).abs() < 1e-6, "{r:?}");
        assert!((r.estimate("n_th") / n_th - 1.0).abs() < 1e-6);
        assert!(r.condition_number.unwrap().is_finite());
        let k2 = G0Known {
            transduction: 7.0 * known.transduction,
            ..known
        };
        let scaled: Vec<G0Point> = points
            .iter()
            .map(|p| G0Point {
                sigma_v2: 7.0 * p.sigma_v2,
                ..*p
            })
            .collect();
        let r2 = fit_g0_calibration(&scaled, &k2, &Options::default()).unwrap();
        assert!((r2.estimate("g0_hz") - r.estimate("g0_hz")).abs() < 1e-6);
    }

    #[test]
    fn g0_plateau_fixes_product() {
        let known = G0Known {
            transduction: 1.0,
            omega_m: 1e6,
            gamma_m: 1e-2,
            n_min: 2.64,
        };
        let big = g0_variance(&known, 500.0, 1e5, 1e12);
        let plateau = 2.0 / 1e12 * 500.0f64.powi(2) * (2.64 + 0.5);
        assert!((big / plateau - 1.0).abs() < 1e-6);
    }

    #[test]
    fn g0_single_regime_warns() {
        let known = G0Known {
            transduction: 1.0,
            omega_m: 1e6,
            gamma_m: 1e-2,
            n_min: 2.64,
        };
        let points: Vec<G0Point> = (0..5)
            .map(|k| {
                let gamma_opt = 1e6 * (1.0 + k as f64);
                G0Point {
                    power_w: 0.0,
                    gamma_opt,
                    sigma_v2: g0_variance(&known, 500.0, 1e5, gamma_opt) * (1.0 + 0.01 * k as f64),
                }
            })
            .collect();
        let r = fit_g0_calibration(&points, &known, &Options::default()).unwrap();
        assert!(
            r.warnings.iter().any(|w| w.contains("ill-conditioned")),
            "{:?}",
            r.warnings
        );
    }
}
