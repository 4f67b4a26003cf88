//! Command-line front end. Every command reads one configuration, writes its
//! tables and summaries into the output directory, and finishes with a
//! manifest.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{Config, PhaseSpec, REFERENCE_TOML};
use crate::error::{Error, Result};
use crate::feedback::{
    closed_loop_model, default_gains, heating_transient, limits, nbar_est, optimal_gain,
    stability_check, sweep_gain, NyquistGrid, OptimalGain,
};
use crate::inference::scenario::{
    amplitude_noise_scenario, closed_loop_scenario, g0_scenario, heating_scenario,
    open_loop_scenario, phase_noise_scenario, ringdown_scenario, G0Scenario, CLOSED_LOOP_BINS,
    CLOSED_LOOP_HALF_WIDTHS, OPEN_LOOP_BINS, OPEN_LOOP_HALF_WIDTHS,
};
use crate::inference::{
    classical_phase_noise_spectrum, fit_amplitude_noise, fit_closed_loop, fit_g0_calibration,
    fit_heating, fit_lorentzian, fit_phase_noise, fit_ringdown, noise_quanta,
    synth_amplitude_noise, synth_g0_dataset, synth_heating, synth_periodogram, synth_phase_noise,
    synth_ringdown, ClosedLoopParams, FitOptions, FitResult, G0Known, G0Point, PsdData,
};
use crate::io::{read_columns, Meta, OutputDir, Table};
use crate::params::SystemParams;
use crate::response::{chi_eff, tabulate, FeedbackController};
use crate::sideband::{decoherence_budget, nbar_min, power_sweep};
use crate::spectra::{noise_budget, sql_metrics, LoopModel, Occupancy, Spectrum};
use crate::units::{hz_to_rad, rad_to_hz, wavelength_to_omega};

#[derive(Debug, Parser)]
#[command(
    name = "optocool",
    version,
    about = "Feedback-cooling simulator and inference toolkit"
)]
pub struct Cli {
    /// Configuration file; the bundled reference configuration when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed for synthetic data, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel sweeps.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Controller phase: `cool` or radians.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub phase: Option<PhaseSpec>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the configuration and write the resolved parameters.
    Validate,
    /// Noise budget and measurement-quality metrics.
    Budget,
    /// Open- and closed-loop spectra and transfer functions.
    Spectrum,
    /// Auxiliary-power sweep of sideband cooling.
    Sideband,
    /// Damping, occupancy and stability against feedback gain.
    SweepGain,
    /// Minimum occupancy against cooperativity.
    Limits,
    /// Occupancy after the loop is opened.
    Heating,
    /// Fit a model to a dataset, or to synthetic data when none is given.
    Fit {
        model: FitModel,
        /// Input CSV.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Vacuum coupling and bath temperature from an auxiliary-power series.
    CalibrateG0 {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Classical laser-noise models.
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModel {
    Lorentzian,
    ClosedLoop,
    G0,
    Heating,
    Ringdown,
    AmplitudeNoise,
    PhaseNoise,
}

impl FitModel {
    /// Required input columns.
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            FitModel::Lorentzian | FitModel::ClosedLoop => &["frequency_hz", "psd"],
            FitModel::G0 => &["power_w", "gamma_opt_hz", "variance"],
            FitModel::Heating => &["time_s", "nbar"],
            FitModel::Ringdown => &["time_s", "amplitude"],
            FitModel::AmplitudeNoise => &["power_w", "variance"],
            FitModel::PhaseNoise => &["detuning_hz", "psd"],
        }
    }

    fn name(self) -> &'static str {
        match self {
            FitModel::Lorentzian => "lorentzian",
            FitModel::ClosedLoop => "closed-loop",
            FitModel::G0 => "g0",
            FitModel::Heating => "heating",
            FitModel::Ringdown => "ringdown",
            FitModel::AmplitudeNoise => "amplitude-noise",
            FitModel::PhaseNoise => "phase-noise",
        }
    }
}

impl Command {
    fn name(&self) -> String {
        match self {
            Command::Validate => "validate".into(),
            Command::Budget => "budget".into(),
            Command::Spectrum => "spectrum".into(),
            Command::Sideband => "sideband".into(),
            Command::SweepGain => "sweep-gain".into(),
            Command::Limits => "limits".into(),
            Command::Heating => "heating".into(),
            Command::Fit { model, .. } => format!("fit-{}", model.name()),
            Command::CalibrateG0 { .. } => "calibrate-g0".into(),
            Command::Noise => "noise".into(),
        }
    }
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    if err.is_config() {
        2
    } else if err.is_numerical() {
        3
    } else {
        1
    }
}

/// Parse arguments, run, and report. Returns the process exit code.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Everything a command needs.
struct Context {
    config: Config,
    params: SystemParams,
    template: FeedbackController,
    seed: u64,
}

impl Context {
    fn new(cli: &Cli, text: &str) -> Result<Self> {
        let mut config = Config::from_toml_str(text)?;
        if let Some(phase) = cli.phase {
            config.feedback.phase = phase;
        }
        if let Some(seed) = cli.seed {
            config.fit.seed = seed;
        }
        let params = config.system_params()?;
        let template = config.controller(&params)?;
        let seed = config.fit.seed;
        Ok(Context {
            config,
            params,
            template,
            seed,
        })
    }

    fn gains(&self) -> Vec<f64> {
        let s = &self.config.sweep;
        match (s.gain_min, s.gain_max) {
            (Some(lo), Some(hi)) => log_space(lo, hi, s.gain_points),
            _ => default_gains(&self.params, &self.template, s.gain_points),
        }
    }

    /// Controller at the configured gain, or at the optimum when none is set.
    fn operating_point(&self) -> Result<(FeedbackController, Option<OptimalGain>)> {
        match self.config.feedback.gain {
            Some(g) => Ok((self.template.with_gain(g), None)),
            None => {
                let opt = optimal_gain(&self.params, &self.template, &self.gains())?;
                Ok((self.template.with_gain(opt.gain), Some(opt)))
            }
        }
    }

    /// Stability including any extra mechanical modes.
    fn ensure_stable(&self, controller: &FeedbackController) -> Result<()> {
        let plant = self.config.plant(&self.params)?;
        let grid = NyquistGrid::new(&plant, controller, self.params.probe.kappa);
        let s = stability_check(&plant, controller, &grid)?;
        if !s.stable {
            return Err(Error::Unstable(format!(
                "gain {} gives {} unstable pole(s); closest approach of |1 - L| is {:.3e} at {:.6e} Hz",
                controller.gain,
                s.unstable_poles,
                s.min_distance,
                rad_to_hz(s.omega_at_min)
            )));
        }
        Ok(())
    }
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64))
        .collect()
}

fn lin_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

fn read_config(cli: &Cli) -> Result<String> {
    match &cli.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())])),
        None => Ok(REFERENCE_TOML.to_string()),
    }
}

/// Run one command; returns the manifest path.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    let text = read_config(cli)?;
    let ctx = Context::new(cli, &text)?;
    let seeded = matches!(
        cli.command,
        Command::Fit { data: None, .. } | Command::CalibrateG0 { data: None }
    );
    let meta = Meta::new(&cli.command.name(), &text, seeded.then_some(ctx.seed));
    let mut out = OutputDir::create(&cli.out, meta)?;
    let mut work = || -> Result<()> {
        match &cli.command {
            Command::Validate => validate(&ctx, &mut out),
            Command::Budget => budget(&ctx, &mut out),
            Command::Spectrum => spectrum(&ctx, &mut out),
            Command::Sideband => sideband(&ctx, &mut out),
            Command::SweepGain => sweep(&ctx, &mut out),
            Command::Limits => limit_curve(&ctx, &mut out),
            Command::Heating => heating(&ctx, &mut out),
            Command::Fit { model, data } => fit(&ctx, &mut out, *model, data.as_deref()),
            Command::CalibrateG0 { data } => calibrate_g0(&ctx, &mut out, data.as_deref()),
            Command::Noise => noise(&ctx, &mut out),
        }
    };
    let status = match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(vec![format!("threads: {e}")]))?
            .install(work),
        None => work(),
    };
    let manifest = out.finish()?;
    status.map(|_| manifest)
}

#[derive(Serialize)]
struct Resolved<'a> {
    config: &'a Config,
    params: &'a SystemParams,
    controller: &'a FeedbackController,
}

fn validate(ctx: &Context, out: &mut OutputDir) -> Result<()> {
    out.json(
        "config.json",
        &Resolved {
            config: &ctx.config,
            params: &ctx.params,
            controller: &ctx.template,
        },
    )
}

#[derive(Serialize)]
struct OperatingPoint {
    gain: f64,
    phase_rad: f64,
    nbar: f64,
    nbar_error_bound: f64,
    gamma_eff_hz: f64,
    squashing: bool,
}

fn operating_summary(
    model: &LoopModel,
    controller: &FeedbackController,
    occ: &Occupancy,
) -> OperatingPoint {
    OperatingPoint {
        gain: controller.gain,
        phase_rad: controller.phase,
        nbar: occ.nbar,
        nbar_error_bound: occ.error_bound,
        gamma_eff_hz: rad_to_hz(model.gamma_eff()),
        squashing: model.squashing(),
    }
}

#[derive(Serialize)]
struct BudgetReport {
    s_ff_th: f64,
    s_ff_aux: f64,
    s_ff_qba: f64,
    s_ff_tot: f64,
    s_xx_imp: f64,
    n_imp: f64,
    n_tot: f64,
    eta: f64,
    eta_det: f64,
    heisenberg_product: f64,
    c_q: f64,
    gamma_meas_per_s: f64,
    gamma_qba_per_s: f64,
    gamma_th_per_s: f64,
    decoherence_total_per_s: f64,
    sql_min_ratio: Option<f64>,
    sql_min_ratio_analytic: Option<f64>,
    sql_offset_hz: Option<f64>,
    sql_min_ratio_db: Option<f64>,
    nbar_est: Option<f64>,
    sideband_nbar_min: Option<f64>,
    operating_point: Option<OperatingPoint>,
}

fn budget(ctx: &Context, out: &mut OutputDir) -> Result<()> {
    let p = &ctx.params;
    let b = noise_budget(p);
    let rates = p.rates();
    let sql = if b.imprecision_finite {
        let f_m = rad_to_hz(p.mode.omega_m);
        Some(sql_metrics(p, &lin_space(0.999 * f_m, 1.001 * f_m, 201))?)
    } else {
        None
    };
    let operating_point = match ctx.config.feedback.gain {
        Some(g) => {
            let c = ctx.template.with_gain(g);
            ctx.ensure_stable(&c)?;
            let model = closed_loop_model(p, &c)?;
            Some(operating_summary(&model, &c, &model.occupancy()))
        }
        None => None,
    };
    let report = BudgetReport {
        s_ff_th: b.s_ff_th,
        s_ff_aux: b.s_ff_aux,
        s_ff_qba: b.s_ff_qba,
        s_ff_tot: b.s_ff_tot,
        s_xx_imp: b.s_xx_imp,
        n_imp: b.n_imp,
        n_tot: b.n_tot,
        eta: b.eta,
        eta_det: p.eta_det,
        heisenberg_product: b.heisenberg_product,
        c_q: rates.c_q,
        gamma_meas_per_s: rates.gamma_meas,
        gamma_qba_per_s: rates.gamma_qba,
        gamma_th_per_s: rates.gamma_th,
        decoherence_total_per_s: decoherence_budget(p).total,
        sql_min_ratio: sql.as_ref().map(|s| s.min_ratio),
        sql_min_ratio_analytic: sql.as_ref().map(|s| s.analytic_min),
        sql_offset_hz: sql.as_ref().map(|s| rad_to_hz(s.offset)),
        sql_min_ratio_db: sql.as_ref().map(|s| crate::units::to_db(s.min_ratio)),
        nbar_est: (rates.c_q > 0.0 && p.eta_det > 0.0)
            .then(|| nbar_est(p.eta_det, rates.c_q))
            .transpose()?,
        sideband_nbar_min: p
            .aux
            .map(|a| nbar_min(&a, p.mode.omega_m))
            .transpose()
            .ok()
            .flatten(),
        operating_point,
    };
    out.json("budget.json", &report)
}

fn spectrum_table(s: &Spectrum, curve: &str) -> Table {
    let mut t = Table::new(&["frequency_hz", "psd"])
        .note("curve", curve)
        .note("unit", s.unit.label());
    for (f, v) in s.grid_hz.iter().zip(&s.values) {
        t.push(vec![(*f).into(), (*v).into()]);
    }
    t
}

fn transfer_table(rows: &[crate::response::TransferRow], name: &str) -> Table {
    let mut t =
        Table::new(&["frequency_hz", "re", "im", "magnitude", "phase_rad"]).note("transfer", name);
    for r in rows {
        t.push(vec![
            r.frequency_hz.into(),
            r.re.into(),
            r.im.into(),
            r.magnitude.into(),
            r.phase_rad.into(),
        ]);
    }
    t
}

#[derive(Serialize)]
struct SpectrumReport {
    n_imp: f64,
    n_tot: f64,
    eta: f64,
    heisenberg_product: f64,
    open_loop_nbar: f64,
    closed_loop: OperatingPoint,
    optimum_searched: bool,
}

fn spectrum(ctx: &Context, out: &mut OutputDir) -> Result<()> {
    let p = &ctx.params;
    let (controller, opt) = ctx.operating_point()?;
    ctx.ensure_stable(&controller)?;
    let open = LoopModel::open(p)?;
    let closed = closed_loop_model(p, &controller)?;
    let grid = closed.grid();
    out.csv(
        "sxx_open.csv",
        &spectrum_table(&open.sxx_spectrum(&open.grid()), "sxx_open"),
    )?;
    out.csv(
        "sxx_closed.csv",
        &spectrum_table(&closed.sxx_spectrum(&grid), "sxx_closed"),
    )?;
    out.csv(
        "syy_closed.csv",
        &spectrum_table(&closed.syy_spectrum(&grid), "syy_closed"),
    )?;

    let c = &controller.main;
    let band = lin_space(
        (c.omega_c - 5.0 * c.gamma_bw).max(0.0),
        c.omega_c + 5.0 * c.gamma_bw,
        2001,
    );
    out.csv(
        "transfer_controller.csv",
        &transfer_table(&tabulate(&band, |w| controller.h_total(w)), "h_fb"),
    )?;
    out.csv(
        "transfer_susceptibility.csv",
        &transfer_table(
            &tabulate(&grid, |w| chi_eff(&closed.mode, &controller, w).value),
            "chi_eff",
        ),
    )?;

    let b = noise_budget(p);
    let occ = closed.occupancy();
    out.json(
        "spectrum.json",
        &SpectrumReport {
            n_imp: b.n_imp,
            n_tot: b.n_tot,
            eta: b.eta,
            heisenberg_product: b.heisenberg_product,
            open_loop_nbar: open.occupancy().nbar,
            closed_loop: operating_summary(&closed, &controller, &occ),
            optimum_searched: opt.is_some(),
        },
    )
}

fn aux_laser(ctx: &Context) -> Result<f64> {
    match &ctx.config.aux {
        Some(a) => Ok(wavelength_to_omega(a.wavelength_m)),
        None => Err(Error::Config(vec![
            "this command needs an [aux] section".into()
        ])),
    }
}

fn sideband(ctx: &Context, out: &mut OutputDir) -> Result<()> {
    let s = &ctx.config.sweep;
    let powers = log_space(s.power_min_w, s.power_max_w, s.power_points);
    let points = power_sweep(&ctx.params, aux_laser(ctx)?, &powers)?;
    let mut t = Table::new(&[
        "power_w",
        "gamma_opt_hz",
        "spring_shift_hz",
        "nbar",
        "gamma_tot_per_s",
    ]);
    for p in &points {
        t.push(vec![
            p.power_w.into(),
            rad_to_hz(p.gamma_opt).into(),
            rad_to_hz(p.spring_shift).into(),
            p.nbar.into(),
            p.gamma_tot.into(),
        ]);
    }
    out.csv("sideband.csv", &t)
}

#[derive(Serialize)]
struct OptimumReport {
    gain: f64,
    phase_rad: f64,
    nbar: f64,
    nbar_error_bound: f64,
    gamma_eff_hz: f64,
    nbar_est: f64,
}

fn sweep(ctx: &Context, out: &mut OutputDir) -> Result<()> {
    let gains = ctx.gains();
    let mut result = sweep_gain(&ctx.params, &ctx.template, &gains)?;
    if !ctx.config.mechanics.extra_modes.is_empty() {
        for point in &mut result.points {
            if point.stable
                && ctx
                    .ensure_stable(&ctx.template.with_gain(point.gain))
                    .is_err()
            {
                point.stable = false;
                point.nbar = None;
            }
        }
    }
    let mut t = Table::new(&["g_fb", "gamma_eff_hz", "nbar", "stable"])
        .note("phase_rad", ctx.template.phase);
    for p in &result.points {
        t.push(vec![
            p.gain.into(),
            rad_to_hz(p.gamma_eff).into(),
            p.nbar.into(),
            p.stable.into(),
        ]);
    }
    out.csv("sweep_gain.csv", &t)?;
    let opt = optimal_gain(&ctx.params, &ctx.template, &gains)?;
    ctx.ensure_stable(&ctx.template.with_gain(opt.gain))?;
    out.json(
        "optimum.json",
        &OptimumReport {
            gain: opt.gain,
            phase_rad: ctx.template.phase,
            nbar: opt.nbar,
            nbar_error_bound: opt.error_bound,
            gamma_eff_hz: rad_to_hz(opt.gamma_eff),
            nbar_est: nbar_est(ctx.params.eta_det, ctx.params.rates().c_q)?,
        },
    )
}

fn limit_curve(ctx: &Context, out: &mut OutputDir) -> Result<()> {
    let s = &ctx.config.sweep;
    let points = limits(
        &ctx.params,
        &ctx.template,
        &s.cooperativities,
        s.gain_points,
    )?;
    let asymptote = nbar_est(ctx.params.eta_det, f64::INFINITY)?;
    let mut t =
        Table::new(&["c_q", "nbar_filter_min", "nbar_est"]).note("nbar_est_asymptote", asymptote);
    for p in &points {
        t.push(vec![
            p.c_q.into(),
            p.nbar_filter_min.into(),
            p.nbar_est.into(),
        ]);
    }
    out.csv("limits.csv", &t)
}

#[derive(Serialize)]
struct HeatingReport {
    n_i: f64,
    n_f: f64,
    gamma_eff_per_s: f64,
    initial_slope_per_s: f64,
    inv_gamma_tot_us: f64,
    inv_gamma_n_f_us: f64,
}

fn heating(ctx: &Context, out: &mut OutputDir) -> Result<()> {
    let s = &ctx.config.sweep;
    let d = s.heating_duration_s;
    let times = lin_space(-0.1 * d, d, s.heating_points);
    let trace = heating_transient(s.heating_n_i, s.heating_n_f, s.heating_gamma_eff, &times)?;
    let mut t = Table::new(&["time_s", "nbar"]);
    for (time, n) in trace.times.iter().zip(&trace.nbar) {
        t.push(vec![(*time).into(), (*n).into()]);
    }
    out.csv("heating.csv", &t)?;
    out.json(
        "heating.json",
        &HeatingReport {
            n_i: trace.n_i,
            n_f: trace.n_f,
            gamma_eff_per_s: trace.gamma_eff,
            initial_slope_per_s: trace.initial_slope,
            inv_gamma_tot_us: 1e6 / trace.initial_slope,
            inv_gamma_n_f_us: 1e6 / (trace.gamma_eff * trace.n_f),
        },
    )
}

fn fit_options(ctx: &Context) -> FitOptions {
    FitOptions {
        likelihood: ctx.config.fit.likelihood,
        ..FitOptions::default()
    }
}

fn psd_input(path: &Path, averages: f64) -> Result<PsdData> {
    let mut cols = read_columns(path, FitModel::Lorentzian.columns())?;
    Ok(PsdData {
        grid_hz: cols.remove("frequency_hz").unwrap(),
        values: cols.remove("psd").unwrap(),
        averages,
    })
}

fn xy_table(names: [&str; 2], x: &[f64], y: &[f64]) -> Table {
    let mut t = Table::new(&names);
    for (a, b) in x.iter().zip(y) {
        t.push(vec![(*a).into(), (*b).into()]);
    }
    t
}

fn columns2(path: &Path, model: FitModel) -> Result<(Vec<f64>, Vec<f64>)> {
    let cols = model.columns();
    let mut data = read_columns(path, cols)?;
    Ok((data.remove(cols[0]).unwrap(), data.remove(cols[1]).unwrap()))
}

/// Write the fit report; non-convergence is reported after the files exist.
fn finish_fit(out: &mut OutputDir, result: FitResult, seed: Option<u64>) -> Result<()> {
    let result = match seed {
        Some(s) => result.with_seed(s),
        None => result,
    };
    out.json("fit.json", &result)?;
    if !result.converged {
        return Err(Error::NonConvergence {
            iterations: result.iterations,
            reason: if result.warnings.is_empty() {
                "no convergence".into()
            } else {
                result.warnings.join("; ")
            },
        });
    }
    Ok(())
}

fn g0_design(ctx: &Context) -> Result<G0Scenario> {
    let s = &ctx.config.sweep;
    g0_scenario(
        &ctx.params,
        aux_laser(ctx)?,
        s.power_min_w,
        s.power_max_w,
        s.power_points,
        1.0,
    )
}

fn g0_points(ctx: &Context, data: Option<&Path>) -> Result<(G0Known, Vec<G0Point>)> {
    let G0Scenario {
        known,
        design,
        g0,
        n_th,
    } = g0_design(ctx)?;
    let points = match data {
        Some(path) => {
            let mut cols = read_columns(path, FitModel::G0.columns())?;
            let powers = cols.remove("power_w").unwrap();
            let gammas = cols.remove("gamma_opt_hz").unwrap();
            let vars = cols.remove("variance").unwrap();
            powers
                .iter()
                .zip(&gammas)
                .zip(&vars)
                .map(|((p, g), v)| G0Point {
                    power_w: *p,
                    gamma_opt: hz_to_rad(*g),
                    sigma_v2: *v,
                })
                .collect()
        }
        None => synth_g0_dataset(&known, g0, n_th, &design, ctx.config.fit.noise, ctx.seed),
    };
    Ok((known, points))
}

fn g0_table(points: &[G0Point]) -> Table {
    let mut t = Table::new(FitModel::G0.columns());
    for p in points {
        t.push(vec![
            p.power_w.into(),
            rad_to_hz(p.gamma_opt).into(),
            p.sigma_v2.into(),
        ]);
    }
    t
}

fn fit(ctx: &Context, out: &mut OutputDir, model: FitModel, data: Option<&Path>) -> Result<()> {
    let f = &ctx.config.fit;
    let seed = data.is_none().then_some(ctx.seed);
    let averages = f.averages as f64;
    let result = match model {
        FitModel::Lorentzian => {
            let psd = match data {
                Some(path) => psd_input(path, averages)?,
                None => {
                    let s = open_loop_scenario(&ctx.params, OPEN_LOOP_BINS, OPEN_LOOP_HALF_WIDTHS)?;
                    synth_periodogram(&s.expected, f.averages, ctx.seed)?.data()
                }
            };
            out.csv(
                "data.csv",
                &xy_table(["frequency_hz", "psd"], &psd.grid_hz, &psd.values),
            )?;
            fit_lorentzian(&psd, &ctx.params.mode, None, &fit_options(ctx))?
        }
        FitModel::ClosedLoop => {
            let (controller, _) = ctx.operating_point()?;
            let (n_imp, n_tot) = noise_quanta(&ctx.params);
            let initial = ClosedLoopParams {
                gain: controller.gain,
                phase: controller.phase,
                n_imp,
                n_tot,
            };
            let psd = match data {
                Some(path) => psd_input(path, averages)?,
                None => {
                    ctx.ensure_stable(&controller)?;
                    let s = closed_loop_scenario(
                        &ctx.params,
                        &controller,
                        CLOSED_LOOP_BINS,
                        CLOSED_LOOP_HALF_WIDTHS,
                    )?;
                    synth_periodogram(&s.expected, f.averages, ctx.seed)?.data()
                }
            };
            out.csv(
                "data.csv",
                &xy_table(["frequency_hz", "psd"], &psd.grid_hz, &psd.values),
            )?;
            fit_closed_loop(&psd, &ctx.params, &ctx.template, initial, &fit_options(ctx))?
        }
        FitModel::G0 => {
            let (known, points) = g0_points(ctx, data)?;
            out.csv("data.csv", &g0_table(&points))?;
            fit_g0_calibration(&points, &known, &f_optim())?
        }
        FitModel::Heating => {
            let s = &ctx.config.sweep;
            let (times, nbar) = match data {
                Some(path) => columns2(path, model)?,
                None => {
                    let sc = heating_scenario(
                        s.heating_n_i,
                        s.heating_n_f,
                        s.heating_gamma_eff,
                        0.1 * s.heating_duration_s,
                        s.heating_duration_s,
                        s.heating_duration_s / (s.heating_points.max(2) - 1) as f64,
                    );
                    let y =
                        synth_heating(&sc.times, sc.n_i, sc.n_f, sc.gamma_eff, f.noise, ctx.seed);
                    (sc.times, y)
                }
            };
            out.csv("data.csv", &xy_table(["time_s", "nbar"], &times, &nbar))?;
            fit_heating(&times, &nbar, None, &f_optim())?
        }
        FitModel::Ringdown => {
            let mode = ctx.params.mode;
            let (times, amps) = match data {
                Some(path) => columns2(path, model)?,
                None => {
                    let q = mode.quality_factor();
                    let dt = 2.0 * q / mode.omega_m / 1000.0;
                    let sc = ringdown_scenario(mode.omega_m, q, 3.0, dt, None, f.ringdown_noise);
                    let y = synth_ringdown(&sc.times, sc.x0, sc.rate(), sc.noise, ctx.seed);
                    (sc.times, y)
                }
            };
            out.csv(
                "data.csv",
                &xy_table(["time_s", "amplitude"], &times, &amps),
            )?;
            fit_ringdown(&times, &amps, mode.omega_m)?
        }
        FitModel::AmplitudeNoise => {
            let (powers, vars) = match data {
                Some(path) => columns2(path, model)?,
                None => {
                    let s = amplitude_noise_scenario(f.amplitude_ratio, f.p_ref_w, 12);
                    let y = synth_amplitude_noise(
                        &s.powers,
                        s.shot,
                        s.classical,
                        f.amplitude_noise,
                        ctx.seed,
                    );
                    (s.powers, y)
                }
            };
            out.csv(
                "data.csv",
                &xy_table(["power_w", "variance"], &powers, &vars),
            )?;
            fit_amplitude_noise(&powers, &vars, f.p_ref_w)?
        }
        FitModel::PhaseNoise => {
            let kappa = hz_to_rad(f.phase_kappa_hz);
            let omega = ctx.params.mode.omega_m;
            let (detunings, values) = match data {
                Some(path) => {
                    let (d, v) = columns2(path, model)?;
                    (d.into_iter().map(hz_to_rad).collect::<Vec<_>>(), v)
                }
                None => {
                    let s = phase_noise_scenario(kappa, omega, f.phase_eta_c, f.c_xx, f.c_yy, 41);
                    let y = synth_phase_noise(
                        &s.detunings,
                        omega,
                        s.eta_c,
                        kappa,
                        f.c_xx,
                        f.c_yy,
                        f.phase_noise,
                        ctx.seed,
                    );
                    (s.detunings, y)
                }
            };
            let hz: Vec<f64> = detunings.iter().map(|d| rad_to_hz(*d)).collect();
            out.csv("data.csv", &xy_table(["detuning_hz", "psd"], &hz, &values))?;
            fit_phase_noise(&detunings, &values, omega, f.phase_eta_c, kappa, f.c_xx)?
        }
    };
    finish_fit(out, result, seed)
}

fn f_optim() -> crate::inference::optim::Options {
    crate::inference::optim::Options::default()
}

#[derive(Serialize)]
struct Calibration {
    g0_hz: f64,
    g0_hz_std_error: f64,
    n_th: f64,
    temperature_k: f64,
    temperature_k_std_error: f64,
    condition_number: Option<f64>,
    sideband_nbar_min: f64,
    warnings: Vec<String>,
}

fn calibrate_g0(ctx: &Context, out: &mut OutputDir, data: Option<&Path>) -> Result<()> {
    let (known, points) = g0_points(ctx, data)?;
    out.csv("data.csv", &g0_table(&points))?;
    let result = fit_g0_calibration(&points, &known, &f_optim())?;
    let mut curve = Table::new(&["gamma_opt_hz", "variance_model"]);
    let g0 = hz_to_rad(result.estimate("g0_hz"));
    let n_th = result.estimate("n_th");
    let lo = points
        .iter()
        .map(|p| p.gamma_opt)
        .fold(f64::INFINITY, f64::min)
        .max(1e-3 * known.gamma_m);
    let hi = points
        .iter()
        .map(|p| p.gamma_opt)
        .fold(0.0, f64::max)
        .max(2.0 * lo);
    for g in log_space(lo, hi, 200) {
        curve.push(vec![
            rad_to_hz(g).into(),
            crate::inference::g0_variance(&known, g0, n_th, g).into(),
        ]);
    }
    out.csv("model.csv", &curve)?;
    out.json(
        "calibration.json",
        &Calibration {
            g0_hz: result.estimate("g0_hz"),
            g0_hz_std_error: result.std_error("g0_hz"),
            n_th,
            temperature_k: result.estimate("temperature_k"),
            temperature_k_std_error: result.std_error("temperature_k"),
            condition_number: result.condition_number,
            sideband_nbar_min: known.n_min,
            warnings: result.warnings.clone(),
        },
    )?;
    let seed = data.is_none().then_some(ctx.seed);
    finish_fit(out, result, seed)
}

#[derive(Serialize)]
struct NoiseReport {
    amplitude_ratio_at_ref: f64,
    p_ref_w: f64,
    c_xx: f64,
    c_yy: f64,
    phase_noise_at_zero_detuning: f64,
}

fn noise(ctx: &Context, out: &mut OutputDir) -> Result<()> {
    let f = &ctx.config.fit;
    let amp = amplitude_noise_scenario(f.amplitude_ratio, f.p_ref_w, 101);
    let mut t = Table::new(&["power_w", "shot", "classical", "total", "classical_to_shot"]);
    for &p in &amp.powers {
        let shot = amp.shot * p;
        let classical = amp.classical * p * p;
        t.push(vec![
            p.into(),
            shot.into(),
            classical.into(),
            (shot + classical).into(),
            (classical / shot).into(),
        ]);
    }
    out.csv("noise_amplitude.csv", &t)?;

    let kappa = hz_to_rad(f.phase_kappa_hz);
    let omega = ctx.params.mode.omega_m;
    let ph = phase_noise_scenario(kappa, omega, f.phase_eta_c, f.c_xx, f.c_yy, 401);
    let mut t = Table::new(&["detuning_hz", "psd", "psd_amplitude_only"])
        .note("unit", "shot-noise-relative");
    for &d in &ph.detunings {
        let full = classical_phase_noise_spectrum(d, omega, f.phase_eta_c, kappa, f.c_xx, f.c_yy);
        let amp_only = classical_phase_noise_spectrum(d, omega, f.phase_eta_c, kappa, f.c_xx, 0.0);
        t.push(vec![rad_to_hz(d).into(), full.into(), amp_only.into()]);
    }
    out.csv("noise_phase.csv", &t)?;
    out.json(
        "noise.json",
        &NoiseReport {
            amplitude_ratio_at_ref: amp.classical * amp.p_ref / amp.shot,
            p_ref_w: amp.p_ref,
            c_xx: f.c_xx,
            c_yy: f.c_yy,
            phase_noise_at_zero_detuning: classical_phase_noise_spectrum(
                0.0,
                omega,
                f.phase_eta_c,
                kappa,
                f.c_xx,
                f.c_yy,
            ),
        },
    )
}
