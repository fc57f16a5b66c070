//! Least-squares fits: damped sinusoid and exponential decay.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Result of a Levenberg–Marquardt minimization.
#[derive(Debug, Clone)]
pub struct LmSolution {
    pub params: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    /// Parameter standard errors from (JᵀJ)⁻¹ scaled by the residual variance.
    pub std_errors: Vec<f64>,
}

pub const LM_MAX_ITER: usize = 500;

/// Minimize ½‖r(p)‖² with a residual/Jacobian callback.
pub fn levenberg_marquardt<F>(p0: &[f64], mut model: F, max_iter: usize) -> Result<LmSolution>
where
    F: FnMut(&[f64]) -> (DVector<f64>, DMatrix<f64>),
{
    let np = p0.len();
    let mut p = p0.to_vec();
    let (mut r, mut j) = model(&p);
    let m = r.len();
    if m <= np {
        return Err(Error::FitFailure(format!("{m} samples for {np} parameters")));
    }
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::FitFailure("non-finite residual at the initial guess".into()));
    }
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let jtj = j.transpose() * &j;
        let grad = j.transpose() * &r;
        if grad.amax() <= 1e-15 * (1.0 + cost) {
            converged = true;
            break;
        }
        let mut a = jtj.clone();
        for k in 0..np {
            a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
        }
        let step = match a.cholesky() {
            Some(ch) => -ch.solve(&grad),
            None => {
                lambda *= 10.0;
                if lambda > 1e16 {
                    break;
                }
                continue;
            }
        };
        let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
        let (rt, jt) = model(&trial);
        let ct = rt.norm_squared();
        if ct.is_finite() && ct <= cost {
            let rel = (cost - ct) / cost.max(f64::MIN_POSITIVE);
            let small_step = step.norm() <= 1e-12 * (1.0 + p.iter().map(|x| x * x).sum::<f64>().sqrt());
            p = trial;
            r = rt;
            j = jt;
            cost = ct;
            lambda = (lambda / 3.0).max(1e-12);
            if rel < 1e-15 || small_step || cost == 0.0 {
                converged = true;
                break;
            }
        } else {
            lambda *= 4.0;
            if lambda > 1e16 {
                // no descent direction left: stationary to working precision
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::FitFailure(format!(
            "no convergence after {iterations} iterations (cost {cost:e}, params {p:?})"
        )));
    }
    let jtj = j.transpose() * &j;
    let dof = (m - np) as f64;
    let s2 = cost / dof;
    let std_errors = match jtj.clone().try_inverse() {
        Some(inv) => (0..np).map(|k| (inv[(k, k)] * s2).max(0.0).sqrt()).collect(),
        None => vec![f64::NAN; np],
    };
    Ok(LmSolution { params: p, cost, iterations, std_errors })
}

/// offset + amplitude·e^{−decay_rate·τ}·cos(frequency·τ + phase).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampedSinusoidFit {
    /// Angular frequency (rad/µs).
    pub frequency: f64,
    pub decay_rate: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub phase: f64,
    pub residual_rms: f64,
    pub frequency_err: f64,
    pub decay_rate_err: f64,
    pub iterations: usize,
}

impl DampedSinusoidFit {
    /// Ordinary frequency in MHz.
    pub fn frequency_mhz(&self) -> f64 {
        self.frequency / TAU
    }

    pub fn eval(&self, tau: f64) -> f64 {
        self.offset + self.amplitude * (-self.decay_rate * tau).exp() * (self.frequency * tau + self.phase).cos()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Frequency of the largest peak of a direct (possibly nonuniform) Fourier sum.
fn dft_peak(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len();
    let span = t[n - 1] - t[0];
    let w: Vec<f64> = (0..n)
        .map(|i| {
            let left = if i > 0 { t[i] - t[i - 1] } else { 0.0 };
            let right = if i + 1 < n { t[i + 1] - t[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect();
    let power = |omega: f64| {
        let (mut re, mut im) = (0.0, 0.0);
        for i in 0..n {
            let ph = omega * t[i];
            re += w[i] * y[i] * ph.cos();
            im -= w[i] * y[i] * ph.sin();
        }
        re * re + im * im
    };
    // zero padding by 8 and a Nyquist estimate from the median spacing
    let mut dts: Vec<f64> = t.windows(2).map(|p| p[1] - p[0]).collect();
    dts.sort_by(f64::total_cmp);
    let nyquist = std::f64::consts::PI / dts[dts.len() / 2];
    let d_omega = TAU / span / 8.0;
    let kmax = (nyquist / d_omega).floor() as usize;
    let mut best = (d_omega, f64::NEG_INFINITY);
    let mut vals = Vec::with_capacity(kmax);
    for k in 1..=kmax {
        let om = k as f64 * d_omega;
        let pw = power(om);
        vals.push(pw);
        if pw > best.1 {
            best = (om, pw);
        }
    }
    // parabolic refinement on the log power
    let k = (best.0 / d_omega).round() as usize;
    if k >= 2 && k < vals.len() {
        let (a, b, c) = (vals[k - 2].ln(), vals[k - 1].ln(), vals[k].ln());
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            let shift = 0.5 * (a - c) / denom;
            if shift.abs() < 1.0 {
                return best.0 + shift * d_omega;
            }
        }
    }
    best.0
}

/// Decay rate from a straight-line fit to the log of the local extrema of |y|.
fn envelope_decay(t: &[f64], y: &[f64]) -> Option<f64> {
    let mut pts = Vec::new();
    for i in 1..y.len() - 1 {
        let a = y[i].abs();
        if a > y[i - 1].abs() && a >= y[i + 1].abs() && a > 0.0 {
            pts.push((t[i], a.ln()));
        }
    }
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| (-sxy / sxx).max(0.0))
}

fn sinusoid_model(t: &[f64], y: &[f64], p: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let (c, a, g, w, ph) = (p[0], p[1], p[2], p[3], p[4]);
    let n = t.len();
    let mut r = DVector::zeros(n);
    let mut j = DMatrix::zeros(n, 5);
    for i in 0..n {
        let e = (-g * t[i]).exp();
        let (s, co) = (w * t[i] + ph).sin_cos();
        r[i] = c + a * e * co - y[i];
        j[(i, 0)] = 1.0;
        j[(i, 1)] = e * co;
        j[(i, 2)] = -t[i] * a * e * co;
        j[(i, 3)] = -t[i] * a * e * s;
        j[(i, 4)] = -a * e * s;
    }
    (r, j)
}

/// Fit offset + A·e^{−γτ}·cos(ωτ + φ).
///
/// Initial frequency from the Fourier peak of the series minus its tail mean,
/// decay from the log envelope, and amplitude/phase from a linear solve.
pub fn fit_damped_sinusoid(tau: &[f64], values: &[f64]) -> Result<DampedSinusoidFit> {
    let n = tau.len();
    if n != values.len() {
        return Err(Error::FitFailure("tau and value lengths differ".into()));
    }
    if n < 20 {
        return Err(Error::FitFailure(format!("need at least 20 samples, got {n}")));
    }
    if tau.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::FitFailure("tau grid must be strictly increasing".into()));
    }
    let span = tau[n - 1] - tau[0];
    let c0 = mean(&values[3 * n / 4..]);
    let centered: Vec<f64> = values.iter().map(|v| v - c0).collect();
    let w0 = dft_peak(tau, &centered);
    let g0 = envelope_decay(tau, &centered).unwrap_or(1.0 / span);

    // amplitude and phase from linear least squares at fixed (ω, γ, c)
    let mut basis = DMatrix::zeros(n, 2);
    for i in 0..n {
        let e = (-g0 * tau[i]).exp();
        basis[(i, 0)] = e * (w0 * tau[i]).cos();
        basis[(i, 1)] = e * (w0 * tau[i]).sin();
    }
    let rhs = DVector::from_column_slice(&centered);
    let coef = basis
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::FitFailure(format!("initial amplitude solve: {e}")))?;
    let (alpha, beta) = (coef[0], coef[1]);
    let a0 = alpha.hypot(beta);
    let ph0 = (-beta).atan2(alpha);

    let sol = levenberg_marquardt(&[c0, a0, g0, w0, ph0], |p| sinusoid_model(tau, values, p), LM_MAX_ITER)?;
    let mut p = sol.params.clone();
    if p[3] < 0.0 {
        p[3] = -p[3];
        p[4] = -p[4];
    }
    if p[1] < 0.0 {
        p[1] = -p[1];
        p[4] += std::f64::consts::PI;
    }
    p[4] = p[4].rem_euclid(TAU);
    if p[2] < 0.0 {
        return Err(Error::FitFailure(format!("fitted oscillation grows (decay rate {})", p[2])));
    }
    if p[3] * span < 2.0 * TAU {
        return Err(Error::FitFailure(format!(
            "series spans {:.2} periods of the fitted frequency, need 2",
            p[3] * span / TAU
        )));
    }
    Ok(DampedSinusoidFit {
        offset: p[0],
        amplitude: p[1],
        decay_rate: p[2],
        frequency: p[3],
        phase: p[4],
        residual_rms: (sol.cost / n as f64).sqrt(),
        frequency_err: sol.std_errors[3],
        decay_rate_err: sol.std_errors[2],
        iterations: sol.iterations,
    })
}

/// rate(t) = initial_rate·e^{−decay_constant·t}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpDecayFit {
    pub initial_rate: f64,
    /// Inverse decay time.
    pub decay_constant: f64,
    /// initial_rate / decay_constant, or +∞ when the series does not decay.
    pub extrapolated_total: f64,
    /// RMS residual over the mean rate.
    pub normalized_rms: f64,
    pub non_decaying: bool,
    pub initial_rate_err: f64,
    pub decay_constant_err: f64,
}

impl ExpDecayFit {
    pub fn decay_time(&self) -> f64 {
        1.0 / self.decay_constant
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.initial_rate * (-self.decay_constant * t).exp()
    }
}

/// Relative decay over the fitted span below which the series counts as constant.
pub const NON_DECAYING_TOL: f64 = 1e-9;

pub fn fit_exponential_decay(times: &[f64], rates: &[f64]) -> Result<ExpDecayFit> {
    let n = times.len();
    if n != rates.len() {
        return Err(Error::DegenerateFit("times and rates lengths differ".into()));
    }
    if n < 10 {
        return Err(Error::DegenerateFit(format!("need at least 10 samples, got {n}")));
    }
    if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(Error::DegenerateFit("rates must be finite and nonnegative".into()));
    }
    if rates.iter().all(|r| *r == 0.0) {
        return Err(Error::DegenerateFit("all rates are zero".into()));
    }
    // log-linear start on the positive samples
    let pts: Vec<(f64, f64)> = times.iter().zip(rates).filter(|(_, r)| **r > 0.0).map(|(t, r)| (*t, r.ln())).collect();
    let (mut r0, mut k0) = (mean(rates), 0.0);
    if pts.len() >= 2 {
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx > 0.0 {
            let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
            k0 = -slope;
            r0 = (my - slope * mx).exp();
        }
    }
    let model = |p: &[f64]| {
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 2);
        for i in 0..n {
            let e = (-p[1] * times[i]).exp();
            r[i] = p[0] * e - rates[i];
            j[(i, 0)] = e;
            j[(i, 1)] = -times[i] * p[0] * e;
        }
        (r, j)
    };
    let sol = levenberg_marquardt(&[r0, k0], model, LM_MAX_ITER)?;
    let (r0, k) = (sol.params[0], sol.params[1]);
    let span = times[n - 1] - times[0];
    let non_decaying = k * span.abs().max(f64::MIN_POSITIVE) <= NON_DECAYING_TOL;
    let extrapolated_total = if non_decaying { f64::INFINITY } else { r0 / k };
    let mean_rate = mean(rates);
    Ok(ExpDecayFit {
        initial_rate: r0,
        decay_constant: k,
        extrapolated_total,
        normalized_rms: (sol.cost / n as f64).sqrt() / mean_rate,
        non_decaying,
        initial_rate_err: sol.std_errors[0],
        decay_constant_err: sol.std_errors[1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize, t_max: f64) -> Vec<f64> {
        (0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn recovers_generating_sinusoid() {
        let t = grid(401, 20.0);
        let y: Vec<f64> = t.iter().map(|&x| 1.0 + (-x / 5.0).exp() * (TAU * 0.4 * x).cos()).collect();
        let f = fit_damped_sinusoid(&t, &y).unwrap();
        assert!((f.frequency_mhz() - 0.4).abs() < 1e-6, "{}", f.frequency_mhz());
        assert!((f.decay_rate - 0.2).abs() < 1e-6);
        assert!((f.offset - 1.0).abs() < 1e-6 && (f.amplitude - 1.0).abs() < 1e-6);
        assert!(f.residual_rms < 1e-9);
    }

    #[test]
    fn sinusoid_with_phase_and_noise_like_ripple() {
        let t = grid(300, 30.0);
        let y: Vec<f64> = t
            .iter()
            .enumerate()
            .map(|(i, &x)| 0.8 - 0.5 * (-0.1 * x).exp() * (1.9 * x + 0.7).cos() + 1e-4 * ((i * 7919 % 13) as f64 - 6.0))
            .collect();
        let f = fit_damped_sinusoid(&t, &y).unwrap();
        assert!((f.frequency - 1.9).abs() < 1e-3);
        assert!((f.decay_rate - 0.1).abs() < 1e-3);
        assert!(f.frequency_err > 0.0 && f.frequency_err < 1e-3);
    }

    #[test]
    fn sinusoid_preconditions() {
        let t = grid(10, 20.0);
        assert!(fit_damped_sinusoid(&t, &vec![1.0; 10]).is_err());
        // under one period in the window
        let t = grid(100, 1.0);
        let y: Vec<f64> = t.iter().map(|&x| 1.0 + (-x).exp() * (0.5 * x).cos()).collect();
        assert!(matches!(fit_damped_sinusoid(&t, &y), Err(Error::FitFailure(_))));
    }

    #[test]
    fn exponential_total() {
        let t = grid(200, 300.0);
        let (r0, tt) = (0.2, 34.5);
        let y: Vec<f64> = t.iter().map(|&x| r0 * (-x / tt).exp()).collect();
        let f = fit_exponential_decay(&t, &y).unwrap();
        assert!((f.extrapolated_total - 6.9).abs() < 1e-9);
        assert!((f.decay_time() - tt).abs() < 1e-8);
        assert!(f.normalized_rms < 1e-10);
    }

    #[test]
    fn truncated_window_still_extrapolates() {
        let t: Vec<f64> = (0..60).map(|i| i as f64 + 0.5).collect();
        let y: Vec<f64> = t.iter().map(|&x| 0.2 * (-x / 34.5).exp()).collect();
        let f = fit_exponential_decay(&t, &y).unwrap();
        assert!((f.extrapolated_total / 6.9 - 1.0).abs() < 0.05);
    }

    #[test]
    fn constant_rate_is_flagged() {
        let t = grid(30, 10.0);
        let f = fit_exponential_decay(&t, &vec![0.3; 30]).unwrap();
        assert!(f.non_decaying);
        assert_eq!(f.extrapolated_total, f64::INFINITY);
        assert!(f.decay_constant.abs() < 1e-9);
    }

    #[test]
    fn zero_rates_are_degenerate() {
        let t = grid(30, 10.0);
        assert!(matches!(fit_exponential_decay(&t, &vec![0.0; 30]), Err(Error::DegenerateFit(_))));
        assert!(matches!(fit_exponential_decay(&t[..5], &[1.0; 5]), Err(Error::DegenerateFit(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn exponential_fit_recovers_generator(r0 in 0.01f64..10.0, tt in 2.0f64..200.0) {
            let t = grid(50, 3.0 * tt);
            let y: Vec<f64> = t.iter().map(|&x| r0 * (-x / tt).exp()).collect();
            let f = fit_exponential_decay(&t, &y).unwrap();
            prop_assert!((f.extrapolated_total / (r0 * tt) - 1.0).abs() < 1e-8);
        }

        #[test]
        fn sinusoid_fit_recovers_frequency(f0 in 0.2f64..2.0, decay in 0.02f64..0.3) {
            let t = grid(400, 20.0);
            let y: Vec<f64> = t.iter().map(|&x| 1.0 - (-decay * x).exp() * (TAU * f0 * x).cos()).collect();
            let f = fit_damped_sinusoid(&t, &y).unwrap();
            prop_assert!((f.frequency_mhz() - f0).abs() < 1e-6);
            prop_assert!((f.decay_rate - decay).abs() < 1e-6);
        }
    }
}
