use optocool::feedback::{at_cooling_phase, default_gains, optimal_gain};
use optocool::inference::optim::{whittle_objective, wls_objective, Options};
use optocool::inference::scenario::*;
use optocool::inference::*;
use optocool::params::{reference, temperature_for_occupation};
use rayon::prelude::*;

const SEEDS: u64 = 100;

fn fraction(hits: impl Iterator<Item = bool>) -> f64 {
    let v: Vec<bool> = hits.collect();
    v.iter().filter(|b| **b).count() as f64 / v.len() as f64
}

fn open_loop() -> (optocool::params::SystemParams, OpenLoopScenario) {
    let params = reference::feedback_system(2.4).unwrap();
    let s = open_loop_scenario(&params, OPEN_LOOP_BINS, OPEN_LOOP_HALF_WIDTHS).unwrap();
    (params, s)
}

#[test]
fn lorentzian_monte_carlo() {
    let (params, s) = open_loop();
    let fits: Vec<FitResult> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let data = synth_periodogram(&s.expected, DEFAULT_AVERAGES, seed)
                .unwrap()
                .data();
            fit_lorentzian(&data, &params.mode, None, &FitOptions::default()).unwrap()
        })
        .collect();
    assert!(fits
        .iter()
        .all(|f| f.converged && f.std_errors.iter().all(|e| e.is_finite())));
    let within_2 = fraction(fits.iter().map(|f| f.covers("n_tot", s.truth.n_tot, 2.0)));
    assert!(within_2 >= 0.9, "{within_2}");
    let mean =
        |k: &str, t: f64| fits.iter().map(|f| f.estimate(k) / t).sum::<f64>() / fits.len() as f64;
    // fitted/predicted ratios on self-consistent data sit inside the widths of the quoted bands
    assert!((mean("n_tot", s.truth.n_tot) - 1.0).abs() < 0.02);
    assert!((mean("n_imp", s.truth.n_imp) - 1.0).abs() < 0.06);
    let reduced = fits.iter().map(|f| f.reduced_objective).sum::<f64>() / fits.len() as f64;
    assert!((reduced - 1.0).abs() < 0.1, "{reduced}");
}

#[test]
fn whittle_approaches_weighted_least_squares() {
    let (_, s) = open_loop();
    let mut gaps = Vec::new();
    for n in [100u32, 10_000] {
        let p = synth_periodogram(&s.expected, n, 4).unwrap();
        let floor: f64 = p.realized.iter().map(|x| x.ln() + 1.0).sum::<f64>() * n as f64;
        let whittle = whittle_objective(&p.expected, &p.realized, n as f64) - floor;
        let wls = wls_objective(&p.expected, &p.realized, n as f64);
        gaps.push(((whittle - wls) / wls).abs());
    }
    assert!(gaps[1] < gaps[0] / 5.0, "{gaps:?}");
    assert!(gaps[1] < 0.02);
}

#[test]
fn likelihoods_agree_at_high_averages() {
    let (params, s) = open_loop();
    let data = synth_periodogram(&s.expected, 100_000, 9).unwrap().data();
    let w = fit_lorentzian(&data, &params.mode, None, &FitOptions::default()).unwrap();
    let opts = FitOptions {
        likelihood: Likelihood::WeightedLeastSquares,
        ..Default::default()
    };
    let l = fit_lorentzian(&data, &params.mode, None, &opts).unwrap();
    for k in ["n_tot", "n_imp", "linewidth_eff_hz"] {
        assert!(
            (w.estimate(k) - l.estimate(k)).abs() < 0.1 * w.std_error(k),
            "{k}"
        );
    }
}

#[test]
fn periodogram_ks_for_several_averages() {
    let (_, s) = open_loop();
    for n in [1u32, 10, 100] {
        let p = synth_periodogram(&s.expected, n, 21).unwrap();
        let ks = ks_gamma(&p.ratios(), n).unwrap();
        assert!(ks.p_value > 0.01, "N={n}: {ks:?}");
    }
}

#[test]
fn closed_loop_round_trip_and_gain_series() {
    let params = reference::feedback_system(2.4).unwrap();
    let template = at_cooling_phase(&params, &reference::controller());
    let opt = optimal_gain(&params, &template, &default_gains(&params, &template, 30)).unwrap();
    let digital = [0.1, 0.25, 0.5, 1.0];
    let fits: Vec<(f64, FitResult)> = digital
        .par_iter()
        .map(|&d| {
            let ctrl = template.with_gain(d * opt.gain);
            let s = closed_loop_scenario(&params, &ctrl, CLOSED_LOOP_BINS, CLOSED_LOOP_HALF_WIDTHS)
                .unwrap();
            let t = s.truth;
            let data = synth_periodogram(&s.expected, DEFAULT_AVERAGES, 77)
                .unwrap()
                .data();
            let init = ClosedLoopParams {
                gain: t.gain * 1.3,
                phase: t.phase - 0.1,
                n_imp: t.n_imp * 2.0,
                n_tot: t.n_tot * 0.6,
            };
            let f =
                fit_closed_loop(&data, &params, &template, init, &FitOptions::default()).unwrap();
            for (k, v) in [
                ("gain", t.gain),
                ("phase_rad", t.phase),
                ("n_imp", t.n_imp),
                ("n_tot", t.n_tot),
            ] {
                assert!(f.covers(k, v, 3.0), "{k} at digital gain {d}: {f:?}");
            }
            (d, f)
        })
        .collect();
    // g proportional to the digital gain, phase constant
    let slope = fits
        .iter()
        .map(|(d, f)| f.estimate("gain") / d)
        .collect::<Vec<_>>();
    let mean = slope.iter().sum::<f64>() / slope.len() as f64;
    for ((d, f), s) in fits.iter().zip(&slope) {
        assert!(
            (s - mean).abs() < 3.0 * f.std_error("gain") / d + 0.02 * mean,
            "{slope:?}"
        );
    }
    let phases: Vec<f64> = fits.iter().map(|(_, f)| f.estimate("phase_rad")).collect();
    for (p, (_, f)) in phases.iter().zip(&fits) {
        assert!((p - template.phase).abs() < 3.0 * f.std_error("phase_rad"));
    }
    let best = fits.iter().find(|(d, _)| *d == 1.0).unwrap();
    assert!(
        (best.1.derived("nbar") - opt.nbar).abs() < 0.1,
        "{}",
        best.1.derived("nbar")
    );
}

#[test]
fn closed_loop_monte_carlo() {
    let params = reference::feedback_system(2.4).unwrap();
    let template = at_cooling_phase(&params, &reference::controller());
    let ctrl = template.with_gain(0.3);
    let s =
        closed_loop_scenario(&params, &ctrl, CLOSED_LOOP_BINS, CLOSED_LOOP_HALF_WIDTHS).unwrap();
    let t = s.truth;
    let hits = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let data = synth_periodogram(&s.expected, DEFAULT_AVERAGES, seed)
                .unwrap()
                .data();
            let f = fit_closed_loop(&data, &params, &template, t, &FitOptions::default()).unwrap();
            [
                ("gain", t.gain),
                ("phase_rad", t.phase),
                ("n_imp", t.n_imp),
                ("n_tot", t.n_tot),
            ]
            .iter()
            .all(|(k, v)| f.covers(k, *v, 3.0))
        })
        .collect::<Vec<_>>();
    assert!(fraction(hits.into_iter()) >= 0.95);
}

#[test]
fn g0_calibration_monte_carlo() {
    let s = reference_g0_scenario().unwrap();
    let t_true = temperature_for_occupation(s.n_th, s.known.omega_m).unwrap();
    let fits: Vec<FitResult> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let pts = synth_g0_dataset(&s.known, s.g0, s.n_th, &s.design, 0.05, seed);
            fit_g0_calibration(&pts, &s.known, &Options::default()).unwrap()
        })
        .collect();
    let band = fraction(fits.iter().map(|f| {
        (f.estimate("g0_hz") - 127.0).abs() <= 3.0
            && (f.estimate("temperature_k") - t_true).abs() <= 2.5
    }));
    assert!(band >= 0.9, "{band}");
    let cover = fraction(
        fits.iter()
            .map(|f| f.covers("g0_hz", 127.0, 3.0) && f.covers("n_th", s.n_th, 3.0)),
    );
    assert!(cover >= 0.95, "{cover}");
    let cond = fits[0].condition_number.unwrap();
    assert!(cond.is_finite() && cond < 1e6, "{cond}");
    assert!(fits.iter().all(|f| f.warnings.is_empty()));
}

#[test]
fn heating_monte_carlo() {
    let s = reference_heating_scenario();
    let truth = 1e6 / ((s.n_f - s.n_i) * s.gamma_eff);
    assert!((truth - 756.0).abs() < 1.0);
    let fits: Vec<FitResult> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let y = synth_heating(&s.times, s.n_i, s.n_f, s.gamma_eff, 0.05, seed);
            fit_heating(&s.times, &y, None, &Options::default()).unwrap()
        })
        .collect();
    assert!(fits
        .iter()
        .all(|f| (f.estimate("inv_gamma_tot_us") / truth - 1.0).abs() < 0.1));
    let cover = fraction(fits.iter().map(|f| {
        f.covers("n_i", s.n_i, 3.0)
            && f.covers("n_f", s.n_f, 3.0)
            && f.covers("gamma_eff", s.gamma_eff, 3.0)
    }));
    assert!(cover >= 0.95, "{cover}");
    for f in &fits {
        assert!((f.derived("initial_slope") / f.derived("gamma_n_f") - 1.0).abs() < 0.05);
    }
}

#[test]
fn ringdown_continuous_and_stroboscopic() {
    let c = reference_ringdown_scenario(false);
    let s = reference_ringdown_scenario(true);
    for seed in 0..SEEDS {
        let yc = synth_ringdown(&c.times, c.x0, c.rate(), c.noise, seed);
        let ys = synth_ringdown(&s.times, s.x0, s.rate(), s.noise, seed);
        let fc = fit_ringdown(&c.times, &yc, c.omega_m).unwrap();
        let fs = fit_ringdown(&s.times, &ys, s.omega_m).unwrap();
        assert!((fc.estimate("q") / c.q - 1.0).abs() < 0.03);
        let (qc, ec) = fc.get("q").unwrap();
        let (qs, es) = fs.get("q").unwrap();
        assert!(
            (qc - qs).abs() < 4.0 * (ec * ec + es * es).sqrt(),
            "seed {seed}"
        );
    }
    let cover = fraction((0..SEEDS).map(|seed| {
        let y = synth_ringdown(&c.times, c.x0, c.rate(), c.noise, seed);
        fit_ringdown(&c.times, &y, c.omega_m)
            .unwrap()
            .covers("q", c.q, 3.0)
    }));
    assert!(cover >= 0.95, "{cover}");
}

#[test]
fn amplitude_noise_monte_carlo() {
    let s = amplitude_noise_scenario(0.0008, 1e-6, 12);
    let cover = fraction((0..SEEDS).map(|seed| {
        let y = synth_amplitude_noise(&s.powers, s.shot, s.classical, 0.002, seed);
        let f = fit_amplitude_noise(&s.powers, &y, s.p_ref).unwrap();
        f.covers("ratio_at_ref", 0.0008, 3.0) && f.covers("shot", s.shot, 3.0)
    }));
    assert!(cover >= 0.95, "{cover}");
    let y = synth_amplitude_noise(&s.powers, s.shot, s.classical, 0.002, 5);
    assert!(fit_amplitude_noise(&s.powers, &y, s.p_ref).unwrap().covers(
        "ratio_at_ref",
        0.0008,
        2.0
    ));
    let quiet = amplitude_noise_scenario(0.0, 1e-6, 12);
    let y = synth_amplitude_noise(&quiet.powers, quiet.shot, 0.0, 0.002, 5);
    assert!(fit_amplitude_noise(&quiet.powers, &y, quiet.p_ref)
        .unwrap()
        .covers("classical", 0.0, 3.0));
}

#[test]
fn phase_noise_monte_carlo() {
    let amp = amplitude_noise_scenario(0.0008, 1e-6, 12);
    let y = synth_amplitude_noise(&amp.powers, amp.shot, amp.classical, 0.002, 3);
    let c_xx_fit = fit_amplitude_noise(&amp.powers, &y, amp.p_ref)
        .unwrap()
        .estimate("ratio_at_ref");
    let s = reference_phase_noise_scenario();
    let cover = fraction((0..SEEDS).map(|seed| {
        let y = synth_phase_noise(
            &s.detunings,
            s.omega,
            s.eta_c,
            s.kappa,
            c_xx_fit,
            s.c_yy,
            0.01,
            seed,
        );
        fit_phase_noise(&s.detunings, &y, s.omega, s.eta_c, s.kappa, c_xx_fit)
            .unwrap()
            .covers("c_yy", s.c_yy, 2.0)
    }));
    assert!(cover >= 0.9, "{cover}");
}
