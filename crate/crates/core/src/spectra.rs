//! Single-sided symmetrized PSDs, the noise budget, occupancies and
//! measurement-quality metrics.
//!
//! PSDs are per unit ordinary frequency (`dΩ/2π`). With this normalization the
//! thermal force PSD is `8 p_zpf² Γ_m (n_th + ½)` and the open-loop occupancy
//! integral returns `n_tot − ½`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::MechanicalMode;
use crate::params::SystemParams;
use crate::response::{chi_eff_from, chi_m, gamma_eff, omega_eff, FeedbackController};
use crate::units::{hz_to_rad, rad_to_hz, HBAR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumUnit {
    /// m²/Hz
    Displacement,
    /// N²/Hz
    Force,
    /// Quanta-normalized.
    Quanta,
    /// Relative to the optical shot-noise level.
    ShotNoise,
    /// Dimensionless ratio of two PSDs.
    Ratio,
}

impl SpectrumUnit {
    pub fn label(&self) -> &'static str {
        match self {
            SpectrumUnit::Displacement => "m^2/Hz",
            SpectrumUnit::Force => "N^2/Hz",
            SpectrumUnit::Quanta => "quanta",
            SpectrumUnit::ShotNoise => "shot-noise-relative",
            SpectrumUnit::Ratio => "ratio",
        }
    }
}

/// PSD samples on a strictly ascending grid in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub grid_hz: Vec<f64>,
    pub values: Vec<f64>,
    pub unit: SpectrumUnit,
}

impl Spectrum {
    pub fn new(grid_hz: Vec<f64>, values: Vec<f64>, unit: SpectrumUnit) -> Result<Self> {
        if grid_hz.len() != values.len() {
            return Err(Error::Data(format!(
                "grid has {} points but {} values",
                grid_hz.len(),
                values.len()
            )));
        }
        if grid_hz.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Data("grid must be strictly ascending".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Data(format!("PSD values must be >= 0, found {v}")));
        }
        Ok(Spectrum {
            grid_hz,
            values,
            unit,
        })
    }

    /// Sample `f(Ω)` (angular argument) on a grid given in Hz.
    pub fn from_fn(grid_hz: Vec<f64>, unit: SpectrumUnit, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid_hz.iter().map(|&fh| f(hz_to_rad(fh))).collect();
        Spectrum::new(grid_hz, values, unit)
    }

    pub fn len(&self) -> usize {
        self.grid_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid_hz.is_empty()
    }
}

/// Force-noise part of the budget, N²/Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForceBudget {
    pub s_ff_th: f64,
    pub s_ff_aux: f64,
    pub s_ff_qba: f64,
    pub s_ff_tot: f64,
    pub n_tot: f64,
}

pub fn force_budget(params: &SystemParams) -> ForceBudget {
    let zp = params.zero_point();
    let unit = 8.0 * zp.p_zpf * zp.p_zpf;
    let rates = params.rates();
    let s_ff_th = unit * params.mode.gamma_m * (params.bath.n_th + 0.5);
    let s_ff_aux = params.aux_force_ratio * s_ff_th;
    let s_ff_qba = unit * rates.gamma_qba;
    let s_ff_tot = s_ff_th + s_ff_aux + s_ff_qba;
    ForceBudget {
        s_ff_th,
        s_ff_aux,
        s_ff_qba,
        s_ff_tot,
        n_tot: s_ff_tot / (unit * params.mode.gamma_m),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Imprecision {
    pub s_xx_imp: f64,
    pub n_imp: f64,
    /// False when there is no measurement (`Γ_meas = 0`): both fields are infinite.
    pub finite: bool,
}

/// `n_imp = Γ_m/16Γ_meas`, `S_xx^imp = x_zpf²/2Γ_meas`.
pub fn imprecision(params: &SystemParams) -> Imprecision {
    let gamma_meas = params.rates().gamma_meas;
    if gamma_meas <= 0.0 {
        return Imprecision {
            s_xx_imp: f64::INFINITY,
            n_imp: f64::INFINITY,
            finite: false,
        };
    }
    let x = params.zero_point().x_zpf;
    Imprecision {
        s_xx_imp: x * x / (2.0 * gamma_meas),
        n_imp: params.mode.gamma_m / (16.0 * gamma_meas),
        finite: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseBudget {
    pub s_ff_th: f64,
    pub s_ff_aux: f64,
    pub s_ff_qba: f64,
    pub s_ff_tot: f64,
    pub s_xx_imp: f64,
    pub n_imp: f64,
    pub n_tot: f64,
    pub eta: f64,
    /// `√(S_xx^imp S_FF^tot)` in units of ħ.
    pub heisenberg_product: f64,
    pub imprecision_finite: bool,
}

pub fn noise_budget(params: &SystemParams) -> NoiseBudget {
    let f = force_budget(params);
    let imp = imprecision(params);
    NoiseBudget {
        s_ff_th: f.s_ff_th,
        s_ff_aux: f.s_ff_aux,
        s_ff_qba: f.s_ff_qba,
        s_ff_tot: f.s_ff_tot,
        s_xx_imp: imp.s_xx_imp,
        n_imp: imp.n_imp,
        n_tot: f.n_tot,
        eta: 1.0 / (16.0 * imp.n_imp * f.n_tot),
        heisenberg_product: (imp.s_xx_imp * f.s_ff_tot).sqrt() / HBAR,
        imprecision_finite: imp.finite,
    }
}

/// Efficiency from rates, `Γ_meas / (Γ_qba + Γ_aux + γ)`, where the thermal
/// decoherence includes the zero-point half quantum, `γ = Γ_m(n_th + ½)`, and
/// `Γ_aux` is the same fraction of it as the auxiliary force noise.
pub fn efficiency_from_rates(params: &SystemParams) -> f64 {
    let rates = params.rates();
    let thermal = params.mode.gamma_m * (params.bath.n_th + 0.5);
    let aux = params.aux_force_ratio * thermal;
    rates.gamma_meas / (rates.gamma_qba + aux + thermal)
}

/// Forward model of the (possibly closed) loop: mode as modified by the
/// auxiliary beam, total force noise, imprecision and optional controller.
#[derive(Debug, Clone)]
pub struct LoopModel {
    pub mode: MechanicalMode,
    pub controller: Option<FeedbackController>,
    pub s_ff_tot: f64,
    pub s_xx_imp: f64,
    pub x_zpf: f64,
}

impl LoopModel {
    pub fn open(params: &SystemParams) -> Result<Self> {
        params.validate()?;
        Ok(LoopModel {
            mode: params.effective_mode(),
            controller: None,
            s_ff_tot: force_budget(params).s_ff_tot,
            s_xx_imp: imprecision(params).s_xx_imp,
            x_zpf: params.zero_point().x_zpf,
        })
    }

    pub fn closed(params: &SystemParams, controller: &FeedbackController) -> Result<Self> {
        controller.validate()?;
        let mut model = LoopModel::open(params)?;
        if !model.s_xx_imp.is_finite() && controller.gain != 0.0 {
            return Err(Error::Domain(
                "feedback needs a measurement: imprecision is infinite".into(),
            ));
        }
        model.controller = Some(controller.clone());
        Ok(model)
    }

    pub fn with_controller(&self, controller: FeedbackController) -> Self {
        LoopModel {
            controller: Some(controller),
            ..self.clone()
        }
    }

    pub fn h(&self, omega: f64) -> num_complex::Complex64 {
        self.controller
            .as_ref()
            .map(|c| c.h_total(omega))
            .unwrap_or_default()
    }

    pub fn gamma_eff(&self) -> f64 {
        match &self.controller {
            Some(c) => gamma_eff(&self.mode, c, 0.0),
            None => self.mode.gamma_m,
        }
    }

    pub fn omega_eff(&self) -> f64 {
        match &self.controller {
            Some(c) => omega_eff(&self.mode, c),
            None => self.mode.omega_m,
        }
    }

    /// In-loop position PSD `|χ_eff|²(S_FF + |h|² S_imp)`.
    pub fn sxx(&self, omega: f64) -> f64 {
        let chi = chi_m(&self.mode, omega);
        let h = self.h(omega);
        let eff = chi_eff_from(chi, h).value.norm_sqr();
        let fed_back = if h.norm_sqr() == 0.0 {
            0.0
        } else {
            h.norm_sqr() * self.s_xx_imp
        };
        eff * (self.s_ff_tot + fed_back)
    }

    /// Measured PSD `|χ_eff|²(S_FF + S_imp/|χ|²)`.
    pub fn syy(&self, omega: f64) -> f64 {
        let chi = chi_m(&self.mode, omega);
        let h = self.h(omega);
        let eff = chi_eff_from(chi, h).value.norm_sqr();
        eff * (self.s_ff_tot + self.s_xx_imp / chi.norm_sqr())
    }

    /// Default integration span: `Ω_m ± 50·max(Γ_eff, Γ_fb)`, clipped to `[0, 2Ω_fb]`.
    pub fn default_span(&self) -> (f64, f64) {
        let gamma = self.gamma_eff().abs().max(self.mode.gamma_m);
        match &self.controller {
            Some(c) => {
                let half = 50.0 * gamma.max(c.main.gamma_bw);
                (
                    (self.mode.omega_m - half).max(0.0),
                    (self.mode.omega_m + half).min(2.0 * c.main.omega_c),
                )
            }
            None => {
                let half = 50.0 * gamma;
                (
                    (self.mode.omega_m - half).max(0.0),
                    self.mode.omega_m + half,
                )
            }
        }
    }

    /// Adaptive grid (angular) for the position spectrum over the default span.
    pub fn grid(&self) -> Vec<f64> {
        let (lo, hi) = self.default_span();
        self.grid_over(lo, hi)
    }

    pub fn grid_over(&self, lo: f64, hi: f64) -> Vec<f64> {
        let center = self.omega_eff().clamp(lo, hi);
        let width = self.gamma_eff().abs().max(self.mode.gamma_m);
        let base = resonance_grid(center, width, lo, hi);
        refine(&base, |w| self.sxx(w), 1e-6).0
    }

    pub fn sxx_spectrum(&self, grid: &[f64]) -> Spectrum {
        spectrum_on(grid, SpectrumUnit::Displacement, |w| self.sxx(w))
    }

    pub fn syy_spectrum(&self, grid: &[f64]) -> Spectrum {
        spectrum_on(grid, SpectrumUnit::Displacement, |w| self.syy(w))
    }

    /// Occupancy from the in-loop position spectrum on the adaptive grid.
    pub fn occupancy(&self) -> Occupancy {
        let spectrum = self.sxx_spectrum(&self.grid());
        occupancy(&spectrum, self.x_zpf, &OccupancyOptions::default())
    }

    /// In-loop spectrum below the imprecision floor at the effective resonance.
    pub fn squashing(&self) -> bool {
        self.syy(self.omega_eff()) < self.s_xx_imp
    }
}

fn spectrum_on(grid: &[f64], unit: SpectrumUnit, f: impl Fn(f64) -> f64) -> Spectrum {
    Spectrum {
        grid_hz: grid.iter().map(|&w| rad_to_hz(w)).collect(),
        values: grid.iter().map(|&w| f(w).max(0.0)).collect(),
        unit,
    }
}

/// Uniform core of 50 points per linewidth over `center ± 50·width`, then
/// geometric wings out to `[lo, hi]`.
pub fn resonance_grid(center: f64, width: f64, lo: f64, hi: f64) -> Vec<f64> {
    let core_half = 50.0 * width;
    let step = width / 50.0;
    let mut pts = Vec::new();
    let n_core = (core_half / step).round() as i64;
    for k in -n_core..=n_core {
        let w = center + k as f64 * step;
        if w >= lo && w <= hi {
            pts.push(w);
        }
    }
    let ratio = 1.02;
    let mut d = core_half * ratio;
    while center - d > lo || center + d < hi {
        if center - d > lo {
            pts.push(center - d);
        }
        if center + d < hi {
            pts.push(center + d);
        }
        d *= ratio;
    }
    pts.push(lo);
    pts.push(hi);
    pts.retain(|w| w.is_finite());
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    pts
}

/// Bisect intervals whose trapezoid disagrees with the two-panel trapezoid
/// until the summed disagreement is below `rel_tol` of the integral.
/// Returns the refined grid and the integrand on it.
pub fn refine(grid: &[f64], f: impl Fn(f64) -> f64, rel_tol: f64) -> (Vec<f64>, Vec<f64>) {
    let mut xs = grid.to_vec();
    let mut ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    for _ in 0..20 {
        let total = trapezoid(&xs, &ys).abs();
        let budget = rel_tol * total / (xs.len() as f64);
        let mut nx = Vec::with_capacity(xs.len() * 2);
        let mut ny = Vec::with_capacity(xs.len() * 2);
        let mut changed = false;
        for i in 0..xs.len() - 1 {
            nx.push(xs[i]);
            ny.push(ys[i]);
            let (a, b) = (xs[i], xs[i + 1]);
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                continue;
            }
            let coarse = 0.5 * (b - a) * (ys[i] + ys[i + 1]);
            let fm = f(m);
            let fine = 0.25 * (b - a) * (ys[i] + 2.0 * fm + ys[i + 1]);
            if (coarse - fine).abs() > budget {
                nx.push(m);
                ny.push(fm);
                changed = true;
            }
        }
        nx.push(*xs.last().unwrap());
        ny.push(*ys.last().unwrap());
        xs = nx;
        ys = ny;
        if !changed {
            break;
        }
    }
    (xs, ys)
}

pub(crate) fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupancyOptions {
    pub tail_correction: bool,
    /// Warn when the estimated missing tail exceeds this many quanta.
    pub tail_tolerance: f64,
}

impl Default for OccupancyOptions {
    fn default() -> Self {
        OccupancyOptions {
            tail_correction: true,
            tail_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Occupancy {
    pub nbar: f64,
    /// Lorentzian-wing estimate of the area outside the grid, in quanta.
    pub tail: f64,
    /// Quadrature error estimate in quanta (full vs half-resolution trapezoid).
    pub error_bound: f64,
    pub warning: Option<String>,
}

/// `n̄ = ∫ S_xx/(2x_zpf²) df − ½`, trapezoid plus Lorentzian tails beyond the grid.
pub fn occupancy(sxx: &Spectrum, x_zpf: f64, opts: &OccupancyOptions) -> Occupancy {
    let scale = 1.0 / (2.0 * x_zpf * x_zpf);
    let f = &sxx.grid_hz;
    let s = &sxx.values;
    if f.len() < 2 {
        return Occupancy {
            nbar: -0.5,
            tail: 0.0,
            error_bound: f64::INFINITY,
            warning: Some("spectrum has fewer than two points".into()),
        };
    }
    let area = trapezoid(f, s);
    let coarse_x: Vec<f64> = f.iter().copied().step_by(2).collect();
    let coarse_y: Vec<f64> = s.iter().copied().step_by(2).collect();
    let mut error_bound = if coarse_x.len() >= 2 && (f.len() - 1) % 2 == 0 {
        (area - trapezoid(&coarse_x, &coarse_y)).abs() / 3.0 * scale
    } else {
        0.0
    };
    let peak = s
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| f[i])
        .unwrap();
    let (a, b) = (f[0], f[f.len() - 1]);
    let upper = if b > peak {
        s[s.len() - 1] * (b - peak)
    } else {
        0.0
    };
    let lower = if a > 0.0 && a < peak {
        s[0] * (peak - a) * a / peak
    } else {
        0.0
    };
    let tail = (upper + lower) * scale;
    let mut warning = None;
    if tail > opts.tail_tolerance {
        warning = Some(format!(
            "grid truncation: estimated {tail:.3e} quanta outside the grid"
        ));
    }
    let nbar = if opts.tail_correction {
        error_bound += 0.1 * tail;
        (area * scale + tail) - 0.5
    } else {
        area * scale - 0.5
    };
    if area == 0.0 {
        warning = Some("spectrum is identically zero; occupancy is sub-physical".into());
    }
    Occupancy {
        nbar,
        tail,
        error_bound,
        warning,
    }
}

/// Relative difference between position and momentum variances, each in
/// units of its zero-point value. The momentum PSD follows from
/// `S_pp/p_zpf² = (Ω/Ω_m)² S_xx/x_zpf²`.
pub fn equipartition_check(sxx: &Spectrum, omega_m: f64) -> f64 {
    let f_m = rad_to_hz(omega_m);
    let weighted: Vec<f64> = sxx
        .grid_hz
        .iter()
        .zip(&sxx.values)
        .map(|(f, s)| (f / f_m).powi(2) * s)
        .collect();
    let vx = trapezoid(&sxx.grid_hz, &sxx.values);
    let vp = trapezoid(&sxx.grid_hz, &weighted);
    ((vp - vx) / vx).abs()
}

/// Equipartition check of the closed loop on its adaptive grid.
pub fn equipartition_of(model: &LoopModel) -> f64 {
    let spectrum = model.sxx_spectrum(&model.grid());
    equipartition_check(&spectrum, model.mode.omega_m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SqlMetrics {
    /// `S_yy / S_yy^SQL` on the requested grid.
    pub ratio: Spectrum,
    pub min_ratio: f64,
    /// Angular frequency of the minimum.
    pub omega_min: f64,
    /// Signed offset of the minimum from the effective resonance (rad/s).
    pub offset: f64,
    /// Analytic minimum `√(S_imp S_FF)/ħ`.
    pub analytic_min: f64,
}

/// Open-loop measured spectrum relative to `S_SQL = 2ħ|χ|`. The minimum is
/// located by golden-section search in log offset on each side of resonance.
pub fn sql_metrics(params: &SystemParams, grid_hz: &[f64]) -> Result<SqlMetrics> {
    let model = LoopModel::open(params)?;
    if !model.s_xx_imp.is_finite() {
        return Err(Error::Domain("SQL comparison needs a measurement".into()));
    }
    let ratio_at = |w: f64| model.syy(w) / (2.0 * HBAR * chi_m(&model.mode, w).norm());
    let ratio = Spectrum::new(
        grid_hz.to_vec(),
        grid_hz.iter().map(|&f| ratio_at(hz_to_rad(f))).collect(),
        SpectrumUnit::Ratio,
    )?;
    let center = model.mode.omega_m;
    let lo = (0.01 * model.mode.gamma_m).ln();
    let hi = (0.5 * center).ln();
    let mut best = (f64::INFINITY, center);
    for side in [-1.0, 1.0] {
        let g = |u: f64| ratio_at(center + side * u.exp());
        let (mut u0, mut v0) = (lo, g(lo));
        for k in 1..=400 {
            let uk = lo + (hi - lo) * k as f64 / 400.0;
            let vk = g(uk);
            if vk < v0 {
                v0 = vk;
                u0 = uk;
            }
        }
        let step = (hi - lo) / 400.0;
        let u = golden_min(&g, (u0 - step).max(lo), (u0 + step).min(hi), 1e-12, 400);
        let v = g(u);
        if v < best.0 {
            best = (v, center + side * u.exp());
        }
    }
    Ok(SqlMetrics {
        ratio,
        min_ratio: best.0,
        omega_min: best.1,
        offset: best.1 - center,
        analytic_min: (model.s_xx_imp * model.s_ff_tot).sqrt() / HBAR,
    })
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden_min(
    f: &impl Fn(f64) -> f64,
    mut a: f64,
    mut b: f64,
    tol: f64,
    max_iter: usize,
) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..max_iter {
        if (b - a).abs() <= tol * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
