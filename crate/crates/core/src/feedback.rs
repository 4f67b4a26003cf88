//! Closed-loop analysis: gain sweeps, optimal gain, Nyquist stability,
//! cooling limits and the heating transient after the loop is opened.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::SystemParams;
use crate::response::{cooling_phase, FeedbackController, Plant};
use crate::sideband;
use crate::spectra::{golden_min, occupancy, refine, resonance_grid, LoopModel, OccupancyOptions};

/// One point of a gain sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainPoint {
    pub gain: f64,
    pub gamma_eff: f64,
    pub stable: bool,
    /// Omitted for unstable points.
    pub nbar: Option<f64>,
    pub nbar_error: Option<f64>,
    pub squashing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainSweep {
    pub points: Vec<GainPoint>,
}

impl GainSweep {
    /// Lowest-occupancy stable point.
    pub fn minimum(&self) -> Option<&GainPoint> {
        self.points
            .iter()
            .filter(|p| p.nbar.is_some())
            .min_by(|a, b| a.nbar.partial_cmp(&b.nbar).unwrap())
    }
}

/// Plant seen by the loop: the mode as modified by the auxiliary beam.
pub fn plant_of(params: &SystemParams) -> Plant {
    Plant::single(params.effective_mode())
}

/// The controller with its main phase set to the cooling phase of `params`.
pub fn at_cooling_phase(
    params: &SystemParams,
    template: &FeedbackController,
) -> FeedbackController {
    template.with_phase(cooling_phase(&params.effective_mode(), template))
}

/// Log-spaced gains whose added damping spans from 1% of the total
/// decoherence rate up to the filter bandwidth.
pub fn default_gains(
    params: &SystemParams,
    template: &FeedbackController,
    count: usize,
) -> Vec<f64> {
    let mode = params.effective_mode();
    let unit = template.with_gain(1.0).h_main(mode.omega_m).norm() / (mode.mass * mode.omega_m);
    let budget = crate::spectra::force_budget(params);
    let gamma_tot = budget.n_tot * params.mode.gamma_m;
    let lo = (0.01 * gamma_tot / unit).ln();
    let hi = (template.main.gamma_bw / unit).ln();
    let count = count.max(2);
    (0..count)
        .map(|k| (lo + (hi - lo) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Evaluate stability, damping, squashing and occupancy for each gain. The
/// controller phase is taken from `template` unchanged. Points are returned
/// in the order of `gains`.
pub fn sweep_gain(
    params: &SystemParams,
    template: &FeedbackController,
    gains: &[f64],
) -> Result<GainSweep> {
    let base = LoopModel::closed(params, &template.with_gain(0.0))?;
    let plant = plant_of(params);
    let grid = NyquistGrid::new(&plant, template, params.probe.kappa);
    let points = gains
        .par_iter()
        .map(|&gain| {
            let controller = template.with_gain(gain);
            let model = base.with_controller(controller.clone());
            let stability = stability_check(&plant, &controller, &grid)?;
            let (nbar, nbar_error) = if stability.stable {
                let occ = model.occupancy();
                (Some(occ.nbar), Some(occ.error_bound))
            } else {
                (None, None)
            };
            Ok(GainPoint {
                gain,
                gamma_eff: model.gamma_eff(),
                stable: stability.stable,
                nbar,
                nbar_error,
                squashing: model.squashing(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GainSweep { points })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalGain {
    pub gain: f64,
    pub nbar: f64,
    /// Quadrature error bound plus the residual of the gain search.
    pub error_bound: f64,
    pub gamma_eff: f64,
}

/// Golden-section refinement (in log gain) of the minimum of a sweep.
pub fn optimal_gain(
    params: &SystemParams,
    template: &FeedbackController,
    gains: &[f64],
) -> Result<OptimalGain> {
    let sweep = sweep_gain(params, template, gains)?;
    let idx = sweep
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.nbar.is_some())
        .min_by(|a, b| a.1.nbar.partial_cmp(&b.1.nbar).unwrap())
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Unstable("no stable gain in the sweep".into()))?;
    let lo = sweep.points[idx.saturating_sub(1)].gain.ln();
    let hi = sweep.points[(idx + 1).min(sweep.points.len() - 1)]
        .gain
        .ln();
    let base = LoopModel::closed(params, template)?;
    let nbar_at = |u: f64| {
        base.with_controller(template.with_gain(u.exp()))
            .occupancy()
    };
    let u = golden_min(&|u| nbar_at(u).nbar, lo, hi, 1e-6, 200);
    let occ = nbar_at(u);
    let best_sweep = sweep.points[idx].nbar.unwrap();
    let (gain, nbar, err) = if occ.nbar <= best_sweep {
        (u.exp(), occ.nbar, occ.error_bound)
    } else {
        (
            sweep.points[idx].gain,
            best_sweep,
            sweep.points[idx].nbar_error.unwrap_or(0.0),
        )
    };
    let controller = template.with_gain(gain);
    let plant = plant_of(params);
    let grid = NyquistGrid::new(&plant, template, params.probe.kappa);
    if !stability_check(&plant, &controller, &grid)?.stable {
        return Err(Error::Unstable(format!(
            "refined optimum at gain {gain} is unstable"
        )));
    }
    Ok(OptimalGain {
        gain,
        nbar,
        error_bound: err,
        gamma_eff: base.with_controller(controller).gamma_eff(),
    })
}

/// Sampling of the positive frequency axis for the Nyquist contour:
/// log points from `Ω_min/10³` to `10κ`, linear points across twice the filter
/// band, and geometric clusters around every mode and filter center.
#[derive(Debug, Clone)]
pub struct NyquistGrid {
    pub omegas: Vec<f64>,
}

impl NyquistGrid {
    pub fn new(plant: &Plant, controller: &FeedbackController, kappa: f64) -> Self {
        Self::with_points(plant, controller, kappa, 100_000, 100_000)
    }

    pub fn with_points(
        plant: &Plant,
        controller: &FeedbackController,
        kappa: f64,
        n_log: usize,
        n_lin: usize,
    ) -> Self {
        let w_min = plant
            .modes
            .iter()
            .map(|m| m.omega_m)
            .fold(f64::INFINITY, f64::min)
            / 1e3;
        let mut top = controller.main.omega_c;
        for aux in &controller.aux_stages {
            top = top.max(aux.stage.omega_c);
        }
        for m in &plant.modes {
            top = top.max(m.omega_m);
        }
        let w_max = (10.0 * kappa).max(10.0 * top);
        let mut w = Vec::with_capacity(n_log + n_lin + 4000);
        let (a, b) = (w_min.ln(), w_max.ln());
        for k in 0..n_log {
            w.push((a + (b - a) * k as f64 / (n_log - 1) as f64).exp());
        }
        let lin_top = 2.0 * top;
        for k in 1..=n_lin {
            w.push(lin_top * k as f64 / n_lin as f64);
        }
        let mut centers: Vec<(f64, f64)> =
            plant.modes.iter().map(|m| (m.omega_m, m.gamma_m)).collect();
        centers.push((controller.main.omega_c, controller.main.gamma_bw));
        for aux in &controller.aux_stages {
            centers.push((aux.stage.omega_c, aux.stage.gamma_bw));
        }
        for (c, width) in centers {
            let mut d = 0.1 * width;
            while d < 0.5 * c {
                w.push(c - d);
                w.push(c + d);
                d *= 1.1;
            }
            w.push(c);
        }
        w.retain(|x| *x >= w_min && *x <= w_max);
        w.sort_by(|x, y| x.partial_cmp(y).unwrap());
        w.dedup();
        NyquistGrid { omegas: w }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stability {
    pub stable: bool,
    /// Closed-loop poles in the upper half plane (winding of `1 − L` over the real axis).
    pub unstable_poles: i64,
    pub min_distance: f64,
    pub omega_at_min: f64,
    pub samples: usize,
}

const MAX_PHASE_STEP: f64 = std::f64::consts::FRAC_PI_4;
const MARGINAL: f64 = 1e-9;

/// Nyquist test on `1 − L(Ω)`, `L = χ h`. Intervals whose phase step exceeds
/// π/4 are bisected; the local minima of `|1 − L|` are polished by golden
/// section.
pub fn stability_check(
    plant: &Plant,
    controller: &FeedbackController,
    grid: &NyquistGrid,
) -> Result<Stability> {
    let d = |w: f64| Complex64::new(1.0, 0.0) - plant.chi(w) * controller.h_total(w);
    let ws = &grid.omegas;
    let mut total = 0.0;
    let mut samples = ws.len();
    let mut touched = false;
    let mut best = (f64::INFINITY, ws[0]);
    let mut prev = d(ws[0]);
    let mut dist = Vec::with_capacity(ws.len());
    dist.push(prev.norm());
    for i in 1..ws.len() {
        let cur = d(ws[i]);
        let (phase, n, touch) = phase_step(&d, ws[i - 1], prev, ws[i], cur, 0)?;
        touched |= touch;
        total += phase;
        samples += n;
        dist.push(cur.norm());
        prev = cur;
    }
    for i in 0..dist.len() {
        let left = if i > 0 { dist[i - 1] } else { f64::INFINITY };
        let right = if i + 1 < dist.len() {
            dist[i + 1]
        } else {
            f64::INFINITY
        };
        if dist[i] <= left && dist[i] <= right {
            let (a, b) = (ws[i.saturating_sub(1)], ws[(i + 1).min(ws.len() - 1)]);
            let w = golden_min(&|w| d(w).norm(), a, b, 1e-15, 200);
            let v = d(w).norm().min(dist[i]);
            if v < best.0 {
                best = (v, if d(w).norm() <= dist[i] { w } else { ws[i] });
            }
        }
    }
    let poles = (total / std::f64::consts::PI).round() as i64;
    let stable = poles == 0 && best.0 >= MARGINAL && !touched;
    Ok(Stability {
        stable,
        unstable_poles: poles,
        min_distance: best.0,
        omega_at_min: best.1,
        samples,
    })
}

fn wrapped(a: Complex64, b: Complex64) -> f64 {
    (b / a).arg()
}

fn phase_step(
    d: &impl Fn(f64) -> Complex64,
    a: f64,
    da: Complex64,
    b: f64,
    db: Complex64,
    depth: u32,
) -> Result<(f64, usize, bool)> {
    let step = wrapped(da, db);
    if step.abs() <= MAX_PHASE_STEP {
        return Ok((step, 0, false));
    }
    let m = 0.5 * (a + b);
    if m <= a || m >= b {
        // interval at floating-point resolution: the contour touches the
        // critical point here
        return Ok((step, 0, true));
    }
    if depth >= 200 {
        return Err(Error::Numerical(format!(
            "Nyquist contour unresolved near {m:.6e} rad/s (phase step {step:.3})"
        )));
    }
    let dm = d(m);
    let (p1, n1, t1) = phase_step(d, a, da, m, dm, depth + 1)?;
    let (p2, n2, t2) = phase_step(d, m, dm, b, db, depth + 1)?;
    Ok((p1 + p2, n1 + n2 + 1, t1 || t2))
}

/// Convenience: stability of `controller` acting on the mode of `params`.
pub fn check_stability(
    params: &SystemParams,
    controller: &FeedbackController,
) -> Result<Stability> {
    let plant = plant_of(params);
    stability_check(
        &plant,
        controller,
        &NyquistGrid::new(&plant, controller, params.probe.kappa),
    )
}

/// In-loop position spectrum and occupancy, refused when the loop is unstable.
pub fn closed_loop_model(
    params: &SystemParams,
    controller: &FeedbackController,
) -> Result<LoopModel> {
    let s = check_stability(params, controller)?;
    if !s.stable {
        return Err(Error::Unstable(format!(
            "{} closed-loop pole(s) in the upper half plane, min |1 - L| = {:.3e} at {:.6e} Hz",
            s.unstable_poles,
            s.min_distance,
            crate::units::rad_to_hz(s.omega_at_min)
        )));
    }
    LoopModel::closed(params, controller)
}

/// Onset of instability located by bisection in gain, with the occupancy
/// evaluated along the unstable side of the bracket as it closes in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstabilityOnset {
    pub gain: f64,
    /// `(gain, n̄, min |1 − L|)` for each unstable bracket end, approaching the onset.
    pub approach: Vec<(f64, f64, f64)>,
}

pub fn instability_onset(
    params: &SystemParams,
    template: &FeedbackController,
    stable_gain: f64,
    unstable_gain: f64,
    iterations: usize,
) -> Result<InstabilityOnset> {
    let plant = plant_of(params);
    let grid = NyquistGrid::new(&plant, template, params.probe.kappa);
    let is_stable = |g: f64| stability_check(&plant, &template.with_gain(g), &grid);
    if !is_stable(stable_gain)?.stable {
        return Err(Error::Domain(format!("gain {stable_gain} is not stable")));
    }
    if is_stable(unstable_gain)?.stable {
        return Err(Error::Domain(format!(
            "gain {unstable_gain} is not unstable"
        )));
    }
    let base = LoopModel::closed(params, template)?;
    let (mut lo, mut hi) = (stable_gain, unstable_gain);
    let mut approach = Vec::new();
    for _ in 0..iterations {
        let mid = (lo * hi).sqrt();
        let s = is_stable(mid)?;
        if s.stable {
            lo = mid;
        } else {
            hi = mid;
            let model = base.with_controller(template.with_gain(mid));
            approach.push((mid, occupancy_near(&model, &s), s.min_distance));
        }
    }
    Ok(InstabilityOnset { gain: hi, approach })
}

/// Occupancy with the grid additionally resolved around the frequency where
/// `|1 − L|` is smallest.
fn occupancy_near(model: &LoopModel, s: &Stability) -> f64 {
    let c = model.controller.as_ref().expect("closed loop");
    let d =
        |w: f64| Complex64::new(1.0, 0.0) - crate::response::chi_m(&model.mode, w) * c.h_total(w);
    let w0 = s.omega_at_min;
    let dw = 1e-6 * w0;
    let slope = ((d(w0 + dw) - d(w0 - dw)) / (2.0 * dw)).norm();
    let width = (s.min_distance / slope).max(1e-12 * w0);
    let (lo, hi) = model.default_span();
    let mut grid = model.grid();
    grid.extend(resonance_grid(w0, width, lo, hi));
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    let (grid, _) = refine(&grid, |w| model.sxx(w), 1e-6);
    occupancy(
        &model.sxx_spectrum(&grid),
        model.x_zpf,
        &OccupancyOptions::default(),
    )
    .nbar
}

/// Optimal-estimation occupancy `½(√((C_q+1)/(η_det C_q)) − 1)`.
/// `c_q = ∞` gives the asymptote `½(1/√η_det − 1)`.
pub fn nbar_est(eta_det: f64, c_q: f64) -> Result<f64> {
    if !(eta_det > 0.0 && eta_det <= 1.0) {
        return Err(Error::Domain(format!(
            "eta_det must lie in (0, 1], got {eta_det}"
        )));
    }
    if !(c_q > 0.0) {
        return Err(Error::Domain(format!(
            "cooperativity must be > 0, got {c_q}"
        )));
    }
    let inv_eta = if c_q.is_infinite() {
        1.0 / eta_det
    } else {
        (c_q + 1.0) / (eta_det * c_q)
    };
    Ok(0.5 * (inv_eta.sqrt() - 1.0))
}

/// Feedback-cooling limit at one cooperativity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitPoint {
    pub c_q: f64,
    pub nbar_filter_min: f64,
    pub gain: f64,
    pub nbar_est: f64,
}

pub fn limits(
    params: &SystemParams,
    template: &FeedbackController,
    cooperativities: &[f64],
    gains_per_sweep: usize,
) -> Result<Vec<LimitPoint>> {
    cooperativities
        .iter()
        .map(|&c_q| {
            let p = params.clone().with_cooperativity(c_q)?;
            let controller = at_cooling_phase(&p, template);
            let gains = default_gains(&p, &controller, gains_per_sweep);
            let opt = optimal_gain(&p, &controller, &gains)?;
            Ok(LimitPoint {
                c_q,
                nbar_filter_min: opt.nbar,
                gain: opt.gain,
                nbar_est: nbar_est(p.eta_det, c_q)?,
            })
        })
        .collect()
}

/// Ratio of the sideband-cooling limit of the auxiliary beam to a feedback
/// occupancy, in dB.
pub fn advantage_over_sideband_db(params: &SystemParams, nbar: f64) -> Result<f64> {
    let aux = params
        .aux
        .ok_or_else(|| Error::param("aux", "no auxiliary beam configured"))?;
    let n_min = sideband::nbar_min(&aux, params.mode.omega_m)?;
    Ok(crate::units::to_db(n_min / nbar))
}

/// Occupancy after the loop is opened at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatingTrace {
    pub times: Vec<f64>,
    pub nbar: Vec<f64>,
    pub n_i: f64,
    pub n_f: f64,
    pub gamma_eff: f64,
    /// `(n̄_f − n̄_i)Γ_eff`, the tangent at `t = 0⁺`.
    pub initial_slope: f64,
}

/// `n̄(t) = n̄_i + θ(t)(n̄_f − n̄_i)(1 − e^{−Γ_eff t})`.
pub fn heating_value(n_i: f64, n_f: f64, gamma_eff: f64, t: f64) -> f64 {
    if t <= 0.0 {
        n_i
    } else {
        n_i + (n_f - n_i) * (-(gamma_eff * t)).exp_m1().abs()
    }
}

pub fn heating_transient(
    n_i: f64,
    n_f: f64,
    gamma_eff: f64,
    times: &[f64],
) -> Result<HeatingTrace> {
    if !(gamma_eff > 0.0 && gamma_eff.is_finite()) {
        return Err(Error::param("gamma_eff", "must be finite and > 0"));
    }
    Ok(HeatingTrace {
        times: times.to_vec(),
        nbar: times
            .iter()
            .map(|&t| heating_value(n_i, n_f, gamma_eff, t))
            .collect(),
        n_i,
        n_f,
        gamma_eff,
        initial_slope: (n_f - n_i) * gamma_eff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{reference, MechanicalMode};
    use crate::response::BandpassStage;
    use crate::units::{hz_to_rad, TAU};

    fn template() -> FeedbackController {
        let main = BandpassStage::new(
            hz_to_rad(reference::FILTER_CENTER_HZ),
            hz_to_rad(reference::FILTER_BANDWIDTH_HZ),
            2,
        )
        .unwrap();
        FeedbackController::new(0.0, 0.0, reference::LOOP_DELAY_S, main).unwrap()
    }

    fn system(c_q: f64) -> SystemParams {
        let mut sys = reference::system().with_cooperativity(c_q).unwrap();
        sys.aux = Some(reference::aux());
        sys.with_gamma_opt(TAU * 10.0).unwrap()
    }

    #[test]
    fn estimation_limit() {
        assert!((nbar_est(0.77, f64::INFINITY).unwrap() - 0.07).abs() < 0.005);
        assert_eq!(nbar_est(1.0, f64::INFINITY).unwrap(), 0.0);
        // η = 0.56 written as η_det = 0.56, C_q → ∞
        assert!((nbar_est(0.56, f64::INFINITY).unwrap() - 0.168).abs() < 5e-4);
        assert!(nbar_est(0.0, 1.0).is_err());
        let direct = 0.5 * ((3.4f64 / (0.77 * 2.4)).sqrt() - 1.0);
        assert!((nbar_est(0.77, 2.4).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn zero_gain_is_stable() {
        let sys = system(2.4);
        let s = check_stability(&sys, &template()).unwrap();
        assert!(s.stable);
        assert_eq!(s.unstable_poles, 0);
    }

    #[test]
    fn antidamping_phase_is_unstable() {
        let sys = system(2.4);
        let cool = at_cooling_phase(&sys, &template());
        let heat = cool
            .with_phase(cool.phase + std::f64::consts::PI)
            .with_gain(0.05);
        let s = check_stability(&sys, &heat).unwrap();
        assert!(!s.stable);
        assert_eq!(s.unstable_poles, 2);
        assert!(check_stability(&sys, &cool.with_gain(0.05)).unwrap().stable);
    }

    #[test]
    fn sweep_is_u_shaped() {
        let sys = system(2.4);
        let c = at_cooling_phase(&sys, &template());
        let gains = default_gains(&sys, &c, 24);
        let sweep = sweep_gain(&sys, &c, &gains).unwrap();
        assert_eq!(sweep.points.len(), gains.len());
        for (p, g) in sweep.points.iter().zip(&gains) {
            assert_eq!(p.gain, *g);
        }
        let stable: Vec<_> = sweep.points.iter().filter(|p| p.stable).collect();
        let best = sweep.minimum().unwrap();
        let first = stable.first().unwrap().nbar.unwrap();
        let last = stable.last().unwrap().nbar.unwrap();
        assert!(best.nbar.unwrap() < first && best.nbar.unwrap() < last);
        let bound = nbar_est(sys.eta_det, sys.rates().c_q).unwrap();
        for p in &stable {
            assert!(p.nbar.unwrap() >= bound);
        }
    }

    #[test]
    fn optimum_and_precision() {
        let sys = system(2.4);
        let c = at_cooling_phase(&sys, &template());
        let opt = optimal_gain(&sys, &c, &default_gains(&sys, &c, 30)).unwrap();
        assert!(opt.nbar > 0.2 && opt.nbar < 0.26, "{}", opt.nbar);
        assert!(opt.error_bound < 1e-3);
        assert!(advantage_over_sideband_db(&sys, opt.nbar).unwrap() > 5.0);
    }

    #[test]
    fn small_gain_recovers_open_loop() {
        let sys = system(2.4);
        let c = at_cooling_phase(&sys, &template()).with_gain(1e-9);
        let closed = LoopModel::closed(&sys, &c).unwrap().occupancy().nbar;
        let open = LoopModel::open(&sys).unwrap().occupancy().nbar;
        assert!(((closed - open) / open).abs() < 1e-3);
        let expect = crate::spectra::force_budget(&sys).n_tot * sys.mode.gamma_m
            / (sys.mode.gamma_m + sys.gamma_opt())
            - 0.5;
        assert!(((open - expect) / expect).abs() < 1e-3, "{open} {expect}");
    }

    #[test]
    fn gain_without_measurement_is_useless() {
        let sys = system(1e-4);
        let c = at_cooling_phase(&sys, &template());
        let opt = optimal_gain(&sys, &c, &default_gains(&sys, &c, 20)).unwrap();
        let open = LoopModel::open(&sys).unwrap().occupancy().nbar;
        assert!(opt.nbar > 0.1 * open);
    }

    #[test]
    fn instability_at_high_gain() {
        let sys = system(10.0);
        let c = at_cooling_phase(&sys, &template());
        assert!(check_stability(&sys, &c.with_gain(1.0)).unwrap().stable);
        let s = check_stability(&sys, &c.with_gain(30.0)).unwrap();
        assert!(!s.stable, "{s:?}");
        assert!(closed_loop_model(&sys, &c.with_gain(30.0)).is_err());
    }

    #[test]
    fn second_mode_in_passband_lowers_threshold() {
        let sys = system(10.0);
        let c = at_cooling_phase(&sys, &template());
        let single = plant_of(&sys);
        let extra = MechanicalMode::from_hz(1.25e6, 0.05, 2.3e-12).unwrap();
        let multi = single.clone().with_mode(extra);
        let threshold = |plant: &Plant| {
            let grid = NyquistGrid::new(plant, &c, sys.probe.kappa);
            let mut lo = 1e-6f64;
            let mut hi = 100.0f64;
            for _ in 0..40 {
                let mid = (lo * hi).sqrt();
                if stability_check(plant, &c.with_gain(mid), &grid)
                    .unwrap()
                    .stable
                {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        };
        let t1 = threshold(&single);
        let t2 = threshold(&multi);
        assert!(t2 < t1, "{t2} vs {t1}");
    }

    #[test]
    fn heating_closed_form() {
        let times: Vec<f64> = (0..200).map(|k| -0.01 + 1e-3 * k as f64).collect();
        let trace = heating_transient(2.0, 60.0, 22.8, &times).unwrap();
        assert!(trace.nbar.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(trace.nbar[0], 2.0);
        assert!((heating_value(2.0, 60.0, 22.8, 1e3) - 60.0).abs() < 1e-9);
        let coherence = 1.0 / trace.initial_slope;
        assert!((coherence / 756e-6 - 1.0).abs() < 0.01, "{coherence}");
        assert!((coherence / 730e-6 - 1.0).abs() < 0.05);
        let h = 1e-9;
        let numeric = (heating_value(2.0, 60.0, 22.8, h) - 2.0) / h;
        assert!((numeric / trace.initial_slope - 1.0).abs() < 1e-6);
        let fine: Vec<f64> = times.iter().flat_map(|&t| [t, t + 0.5e-3]).collect();
        let refined = heating_transient(2.0, 60.0, 22.8, &fine).unwrap();
        for (k, v) in trace.nbar.iter().enumerate() {
            assert_eq!(*v, refined.nbar[2 * k]);
        }
        assert!(heating_transient(2.0, 60.0, 0.0, &times).is_err());
    }
}
