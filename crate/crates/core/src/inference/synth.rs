//! Synthetic measurements: averaged periodograms, noisy traces for every
//! fitter, and the Kolmogorov-Smirnov test used to check them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

use crate::error::{Error, Result};
use crate::feedback::heating_value;
use crate::spectra::Spectrum;

use super::fit::{classical_phase_noise_spectrum, g0_variance, G0Known, G0Point};

/// Seeded generator for stream `stream`; streams of one seed are independent.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// An averaged periodogram: each bin is the expected PSD times a
/// `Gamma(N, 1/N)` variate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticPeriodogram {
    pub grid_hz: Vec<f64>,
    pub expected: Vec<f64>,
    pub realized: Vec<f64>,
    pub averages: u32,
    pub seed: u64,
}

impl SyntheticPeriodogram {
    pub fn data(&self) -> PsdData {
        PsdData {
            grid_hz: self.grid_hz.clone(),
            values: self.realized.clone(),
            averages: self.averages as f64,
        }
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.realized
            .iter()
            .zip(&self.expected)
            .map(|(r, e)| r / e)
            .collect()
    }
}

/// Measured PSD bins with the number of averaged segments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsdData {
    pub grid_hz: Vec<f64>,
    pub values: Vec<f64>,
    pub averages: f64,
}

pub fn synth_periodogram(
    expected: &Spectrum,
    averages: u32,
    seed: u64,
) -> Result<SyntheticPeriodogram> {
    synth_periodogram_stream(expected, averages, seed, 0)
}

pub fn synth_periodogram_stream(
    expected: &Spectrum,
    averages: u32,
    seed: u64,
    stream: u64,
) -> Result<SyntheticPeriodogram> {
    if averages == 0 {
        return Err(Error::param("averages", "must be >= 1"));
    }
    let n = averages as f64;
    let gamma = Gamma::new(n, 1.0 / n).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut r = rng(seed, stream);
    let realized = expected
        .values
        .iter()
        .map(|s| s * gamma.sample(&mut r))
        .collect();
    Ok(SyntheticPeriodogram {
        grid_hz: expected.grid_hz.clone(),
        expected: expected.values.clone(),
        realized,
        averages,
        seed,
    })
}

/// Multiply each value by `1 + rel·ε`, `ε ~ N(0, 1)`, resampling the rare
/// non-positive draw.
fn multiplicative(values: impl Iterator<Item = f64>, rel: f64, seed: u64, stream: u64) -> Vec<f64> {
    let mut r = rng(seed, stream);
    values
        .map(|v| loop {
            let e: f64 = StandardNormal.sample(&mut r);
            let factor = 1.0 + rel * e;
            if factor > 0.0 {
                break v * factor;
            }
        })
        .collect()
}

/// Calibration variances at the given `(power, Γ_opt)` points with relative noise.
pub fn synth_g0_dataset(
    known: &G0Known,
    g0: f64,
    n_th: f64,
    points: &[(f64, f64)],
    rel_noise: f64,
    seed: u64,
) -> Vec<G0Point> {
    let clean = points.iter().map(|&(_, g)| g0_variance(known, g0, n_th, g));
    multiplicative(clean, rel_noise, seed, 1)
        .into_iter()
        .zip(points)
        .map(|(sigma_v2, &(power_w, gamma_opt))| G0Point {
            power_w,
            gamma_opt,
            sigma_v2,
        })
        .collect()
}

/// Heating transient with relative noise on each occupancy sample.
pub fn synth_heating(
    times: &[f64],
    n_i: f64,
    n_f: f64,
    gamma_eff: f64,
    rel_noise: f64,
    seed: u64,
) -> Vec<f64> {
    multiplicative(
        times.iter().map(|&t| heating_value(n_i, n_f, gamma_eff, t)),
        rel_noise,
        seed,
        2,
    )
}

/// Ringdown `x0 e^{−rate·t}` with additive Gaussian noise of standard
/// deviation `noise`.
pub fn synth_ringdown(times: &[f64], x0: f64, rate: f64, noise: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed, 3);
    times
        .iter()
        .map(|&t| {
            let e: f64 = StandardNormal.sample(&mut r);
            x0 * (-rate * t).exp() + noise * e
        })
        .collect()
}

/// Sample times of a stroboscopic measurement: windows of `duty·period`
/// every `period`, sampled every `dt`, up to `duration`.
pub fn stroboscopic_times(duration: f64, period: f64, duty: f64, dt: f64) -> Vec<f64> {
    let per_window = ((duty * period) / dt - 1e-9).ceil().max(1.0) as usize;
    let windows = (duration / period + 1e-9).floor() as usize + 1;
    (0..windows)
        .flat_map(|w| (0..per_window).map(move |k| w as f64 * period + k as f64 * dt))
        .filter(|&t| t <= duration)
        .collect()
}

/// Amplitude-noise variances `aP + bP²` with relative noise.
pub fn synth_amplitude_noise(
    powers: &[f64],
    shot: f64,
    classical: f64,
    rel_noise: f64,
    seed: u64,
) -> Vec<f64> {
    multiplicative(
        powers.iter().map(|p| shot * p + classical * p * p),
        rel_noise,
        seed,
        4,
    )
}

/// Detuning sweep of the classical-noise model with relative noise.
#[allow(clippy::too_many_arguments)]
pub fn synth_phase_noise(
    detunings: &[f64],
    omega: f64,
    eta_c: f64,
    kappa: f64,
    c_xx: f64,
    c_yy: f64,
    rel_noise: f64,
    seed: u64,
) -> Vec<f64> {
    let clean = detunings
        .iter()
        .map(|&d| classical_phase_noise_spectrum(d, omega, eta_c, kappa, c_xx, c_yy));
    multiplicative(clean, rel_noise, seed, 5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut x = samples.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max);
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf(d, n),
    }
}

/// Asymptotic Kolmogorov survival function with Stephens' small-sample
/// correction.
fn kolmogorov_sf(d: f64, n: f64) -> f64 {
    let sq = n.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// KS test of periodogram ratios against `Gamma(N, 1/N)`.
pub fn ks_gamma(ratios: &[f64], averages: u32) -> Result<KsResult> {
    let n = averages as f64;
    let dist = GammaDist::new(n, n).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(ks_test(ratios, |x| dist.cdf(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::SpectrumUnit;

    fn flat(n: usize) -> Spectrum {
        Spectrum::new(
            (0..n).map(|k| 1.0 + k as f64).collect(),
            (0..n).map(|k| 1.0 + (k % 7) as f64).collect(),
            SpectrumUnit::Displacement,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_per_seed() {
        let s = flat(100);
        let a = synth_periodogram(&s, 10, 7).unwrap();
        let b = synth_periodogram(&s, 10, 7).unwrap();
        let c = synth_periodogram(&s, 10, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.realized, c.realized);
        let d = synth_periodogram_stream(&s, 10, 7, 1).unwrap();
        assert_ne!(a.realized, d.realized);
    }

    #[test]
    fn variance_is_one_over_n() {
        let s = flat(20_000);
        for n in [1u32, 10, 100, 1000] {
            let r = synth_periodogram(&s, n, 3).unwrap().ratios();
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r.len() - 1) as f64;
            assert!((mean - 1.0).abs() < 5.0 / (n as f64 * r.len() as f64).sqrt());
            assert!((var * n as f64 - 1.0).abs() < 0.06, "{n} {var}");
        }
    }

    #[test]
    fn exponential_for_single_average() {
        let r = synth_periodogram(&flat(2000), 1, 11).unwrap().ratios();
        let ks = ks_test(&r, |x| 1.0 - (-x).exp());
        assert!(ks.p_value > 0.01, "{ks:?}");
    }

    #[test]
    fn ks_rejects_wrong_distribution() {
        let r = synth_periodogram(&flat(2000), 10, 11).unwrap().ratios();
        assert!(ks_gamma(&r, 10).unwrap().p_value > 0.01);
        assert!(ks_gamma(&r, 100).unwrap().p_value < 1e-6);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // λ = 1.36 is the classic 5% point, 1.63 the 1% point
        let p = kolmogorov_sf(1.36 / 1e4f64.sqrt(), 1e4);
        assert!((p - 0.05).abs() < 0.003, "{p}");
        let p = kolmogorov_sf(1.628 / 1e4f64.sqrt(), 1e4);
        assert!((p - 0.01).abs() < 0.001, "{p}");
    }

    #[test]
    fn stroboscopic_duty() {
        let t = stroboscopic_times(300.0, 30.0, 0.04, 0.1);
        assert_eq!(t.len(), 10 * 12 + 1);
        assert!(t.iter().all(|&x| x % 30.0 < 1.2 + 1e-9));
    }

    #[test]
    fn generators_are_seeded() {
        let times: Vec<f64> = (0..10).map(|k| k as f64).collect();
        assert_eq!(
            synth_heating(&times, 2.0, 60.0, 1.0, 0.05, 1),
            synth_heating(&times, 2.0, 60.0, 1.0, 0.05, 1)
        );
        assert_ne!(
            synth_heating(&times, 2.0, 60.0, 1.0, 0.05, 1),
            synth_heating(&times, 2.0, 60.0, 1.0, 0.05, 2)
        );
        assert!(synth_amplitude_noise(&[1.0; 100], 1.0, 0.0, 0.9, 3)
            .iter()
            .all(|v| *v > 0.0));
    }

    #[test]
    fn rejects_zero_averages() {
        assert!(synth_periodogram(&flat(3), 0, 1).is_err());
    }
}
