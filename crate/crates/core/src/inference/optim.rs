//! Damped Fisher scoring (Levenberg-Marquardt for least squares) with
//! numeric derivatives, a Nelder-Mead fallback and observed-information
//! standard errors.

use nalgebra::{DMatrix, DVector};

/// A negative log-likelihood (or half sum of squares) with its Fisher
/// information approximation.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// Gradient and expected information at `x`.
    fn score(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>);
    /// Number of data points, for residual-normalized reporting.
    fn n_data(&self) -> usize;
}

fn jacobian(f: &impl Fn(&[f64]) -> Vec<f64>, x: &[f64], m: usize) -> DMatrix<f64> {
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

/// `½ Σ r_i(x)²`.
pub struct LeastSquares<F: Fn(&[f64]) -> Vec<f64>> {
    pub residuals: F,
    pub dim: usize,
    pub n: usize,
}

impl<F: Fn(&[f64]) -> Vec<f64>> LeastSquares<F> {
    pub fn new(residuals: F, dim: usize, n: usize) -> Self {
        LeastSquares { residuals, dim, n }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> Objective for LeastSquares<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * (self.residuals)(x).iter().map(|r| r * r).sum::<f64>()
    }

    fn score(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let r = DVector::from_vec((self.residuals)(x));
        let j = jacobian(&self.residuals, x, self.n);
        (j.transpose() * &r, j.transpose() * &j)
    }

    fn n_data(&self) -> usize {
        self.n
    }
}

/// Whittle negative log-likelihood `N Σ (ln S_i + P_i/S_i)` for periodogram
/// bins `P_i` averaged over `N` segments.
pub struct Whittle<F: Fn(&[f64]) -> Vec<f64>> {
    pub model: F,
    pub data: Vec<f64>,
    pub averages: f64,
    pub dim: usize,
}

impl<F: Fn(&[f64]) -> Vec<f64>> Whittle<F> {
    pub fn new(model: F, data: Vec<f64>, averages: f64, dim: usize) -> Self {
        Whittle {
            model,
            data,
            averages,
            dim,
        }
    }
}

/// Whittle objective for given expected PSD values.
pub fn whittle_objective(expected: &[f64], data: &[f64], averages: f64) -> f64 {
    averages
        * expected
            .iter()
            .zip(data)
            .map(|(s, p)| {
                if *s > 0.0 {
                    s.ln() + p / s
                } else {
                    f64::INFINITY
                }
            })
            .sum::<f64>()
}

/// Weighted least squares with variance `S²/N` per bin.
pub fn wls_objective(expected: &[f64], data: &[f64], averages: f64) -> f64 {
    0.5 * averages
        * expected
            .iter()
            .zip(data)
            .map(|(s, p)| ((p - s) / s).powi(2))
            .sum::<f64>()
}

impl<F: Fn(&[f64]) -> Vec<f64>> Objective for Whittle<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let s = (self.model)(x);
        if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return f64::INFINITY;
        }
        whittle_objective(&s, &self.data, self.averages)
    }

    fn score(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let s = (self.model)(x);
        let n = s.len();
        let j = jacobian(&self.model, x, n);
        let mut grad = DVector::zeros(self.dim);
        let mut weighted = j.clone();
        for i in 0..n {
            let w = self.averages * (s[i] - self.data[i]) / (s[i] * s[i]);
            for k in 0..self.dim {
                grad[k] += w * j[(i, k)];
                weighted[(i, k)] /= s[i];
            }
        }
        let info = self.averages * weighted.transpose() * &weighted;
        (grad, info)
    }

    fn n_data(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub max_iter: usize,
    pub ftol: f64,
    pub xtol: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            max_iter: 500,
            ftol: 1e-12,
            xtol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: &'static str,
    pub message: String,
}

/// Damped Fisher scoring. Falls back to Nelder-Mead when scoring fails to
/// converge.
pub fn minimize(obj: &impl Objective, x0: &[f64], opts: &Options) -> Solution {
    let first = scoring(obj, x0, opts);
    if first.converged {
        return first;
    }
    let start = if first.value.is_finite() {
        first.x.clone()
    } else {
        x0.to_vec()
    };
    let nm = nelder_mead(&|x| obj.value(x), &start, opts);
    let polished = scoring(obj, &nm.x, opts);
    let mut best = if polished.value <= nm.value {
        polished
    } else {
        nm
    };
    best.iterations += first.iterations;
    best
}

pub fn scoring(obj: &impl Objective, x0: &[f64], opts: &Options) -> Solution {
    let p = obj.dim();
    let mut x = DVector::from_column_slice(x0);
    let mut f = obj.value(x.as_slice());
    if !f.is_finite() {
        return Solution {
            x: x0.to_vec(),
            value: f,
            iterations: 0,
            converged: false,
            method: "scoring",
            message: "objective not finite at the starting point".into(),
        };
    }
    let mut lambda = 1e-3;
    for iter in 1..=opts.max_iter {
        let (g, info) = obj.score(x.as_slice());
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = info.clone();
            for k in 0..p {
                a[(k, k)] += lambda * info[(k, k)].max(1e-12);
            }
            let Some(chol) = a.clone().cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = -chol.solve(&g);
            let trial = &x + &step;
            let ft = obj.value(trial.as_slice());
            if ft.is_finite() && ft <= f {
                let df = f - ft;
                let step_below = |tol: f64| {
                    step.iter()
                        .zip(x.iter())
                        .all(|(s, xi)| s.abs() <= tol * (1.0 + xi.abs()))
                };
                let stalled = (df <= opts.ftol * (1.0 + f.abs()) && step_below(1e-6))
                    || step_below(opts.xtol);
                x = trial;
                f = ft;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if stalled {
                    return done(x, f, iter, true, "converged");
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // no descent direction left: accept as optimum if the Newton
            // decrement is negligible
            let decrement = info
                .clone()
                .pseudo_inverse(1e-14)
                .map(|inv| g.dot(&(inv * &g)))
                .unwrap_or(f64::INFINITY);
            let ok = decrement <= 1e-9 * (1.0 + f.abs()) || decrement < 1e-8;
            return done(
                x,
                f,
                iter,
                ok,
                if ok {
                    "converged (stationary)"
                } else {
                    "damping limit reached"
                },
            );
        }
    }
    done(x, f, opts.max_iter, false, "iteration limit reached")
}

fn done(x: DVector<f64>, value: f64, iterations: usize, converged: bool, msg: &str) -> Solution {
    Solution {
        x: x.as_slice().to_vec(),
        value,
        iterations,
        converged,
        method: "scoring",
        message: msg.into(),
    }
}

/// Nelder-Mead simplex minimization.
pub fn nelder_mead(f: &impl Fn(&[f64]) -> f64, x0: &[f64], opts: &Options) -> Solution {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if v[i].abs() > 1e-8 {
            0.05 * v[i].abs()
        } else {
            0.05
        };
        simplex.push(v);
    }
    let eval = |v: &[f64]| {
        let y = f(v);
        if y.is_finite() {
            y
        } else {
            f64::INFINITY
        }
    };
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let max_iter = opts.max_iter * 20;
    for iter in 1..=max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| {
            values[a]
                .partial_cmp(&values[b])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let spread = (values[n] - values[0]).abs();
        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= opts.ftol * (1.0 + values[0].abs()) && size <= 1e-8 {
            return Solution {
                x: simplex[0].clone(),
                value: values[0],
                iterations: iter,
                converged: true,
                method: "nelder-mead",
                message: "converged".into(),
            };
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let reflected = along(-1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let contracted = if fr < values[n] {
                along(-0.5)
            } else {
                along(0.5)
            };
            let fc = eval(&contracted);
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = best
                        .iter()
                        .zip(&simplex[i])
                        .map(|(b, v)| b + 0.5 * (v - b))
                        .collect();
                    values[i] = eval(&simplex[i]);
                }
            }
        }
    }
    let (i, v) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap();
    Solution {
        x: simplex[i].clone(),
        value: *v,
        iterations: max_iter,
        converged: false,
        method: "nelder-mead",
        message: "iteration limit reached".into(),
    }
}

/// Central-difference Hessian of `f`.
pub fn hessian(f: &impl Fn(&[f64]) -> f64, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let mut out = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let f0 = f(x);
    for i in 0..n {
        xp[i] = x[i] + h[i];
        let fp = f(&xp);
        xp[i] = x[i] - h[i];
        let fm = f(&xp);
        xp[i] = x[i];
        out[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut val = 0.0;
            for (si, sj, sign) in [
                (1.0, 1.0, 1.0),
                (1.0, -1.0, -1.0),
                (-1.0, 1.0, -1.0),
                (-1.0, -1.0, 1.0),
            ] {
                xp[i] = x[i] + si * h[i];
                xp[j] = x[j] + sj * h[j];
                val += sign * f(&xp);
            }
            xp[i] = x[i];
            xp[j] = x[j];
            let v = val / (4.0 * h[i] * h[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Covariance at the optimum.
#[derive(Debug, Clone)]
pub struct Covariance {
    pub matrix: DMatrix<f64>,
    /// Ratio of extreme eigenvalues of the information matrix.
    pub condition_number: f64,
    pub from_observed: bool,
}

/// Inverse observed information (numeric Hessian), with the expected
/// information as fallback when the Hessian is not positive definite.
/// `scale` multiplies the result, e.g. the residual variance of an
/// unweighted fit.
pub fn covariance(obj: &impl Objective, x: &[f64], scale: f64) -> Covariance {
    let hess = hessian(&|v| obj.value(v), x);
    let (_, info) = obj.score(x);
    let cond = condition_number(&info);
    if let Some(chol) = hess.clone().cholesky() {
        return Covariance {
            matrix: chol.inverse() * scale,
            condition_number: cond,
            from_observed: true,
        };
    }
    let inv = info
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| DMatrix::from_element(x.len(), x.len(), f64::INFINITY));
    Covariance {
        matrix: inv * scale,
        condition_number: cond,
        from_observed: false,
    }
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
