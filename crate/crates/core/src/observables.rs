//! Steady-state observables, regression-theorem correlators and spectra.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::Operator;
use crate::liouvillian::{
    expectation, propagate_vec, steady_state, trace_product, uniform_step, unvectorize, vectorize, DensityMatrix,
    Liouvillian, Propagation,
};
use crate::model::{build_model, OperatorSet, SystemParams};
use crate::C64;

/// Below this mean photon number correlations are not normalizable.
pub const ZERO_PHOTON_FLOOR: f64 = 1e-14;
/// Below this excited-state population the figure of merit is undefined.
pub const DARK_FLOOR: f64 = 1e-14;
/// Default net detection efficiency.
pub const DEFAULT_EFFICIENCY: f64 = 0.26;

/// g²(τ) samples; `tau[0] == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSeries {
    pub tau: Vec<f64>,
    pub values: Vec<f64>,
}

fn check_tau_grid(tau: &[f64]) -> Result<()> {
    if tau.is_empty() || tau[0] != 0.0 {
        return Err(Error::InvalidParameter { name: "tau_grid".into(), reason: "must start at 0".into() });
    }
    if tau.windows(2).any(|w| !(w[1] > w[0])) || tau.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "tau_grid".into(),
            reason: "must be finite and strictly increasing".into(),
        });
    }
    Ok(())
}

fn mean_photons(rho: &DensityMatrix, a: &Operator) -> Result<f64> {
    let n = expectation(rho, &(&a.dag() * a))?.re;
    if n <= ZERO_PHOTON_FLOOR {
        return Err(Error::ZeroPhoton(n));
    }
    Ok(n)
}

/// Backend used when none is requested: expm for uniform grids, RK otherwise.
pub fn default_propagation(tau: &[f64]) -> Propagation {
    if uniform_step(tau).is_some() {
        Propagation::Expm
    } else {
        Propagation::default()
    }
}

/// g²(τ) = Tr(a†a·e^{Lτ}(aρa†)) / ⟨a†a⟩².
pub fn g2_correlation(l: &Liouvillian, rho_ss: &DensityMatrix, a: &Operator, tau: &[f64]) -> Result<CorrelationSeries> {
    g2_correlation_with(l, rho_ss, a, tau, default_propagation(tau))
}

pub fn g2_correlation_with(
    l: &Liouvillian,
    rho_ss: &DensityMatrix,
    a: &Operator,
    tau: &[f64],
    method: Propagation,
) -> Result<CorrelationSeries> {
    check_tau_grid(tau)?;
    let n = mean_photons(rho_ss, a)?;
    let am = a.matrix();
    // the seed stays unnormalized
    let seed = am * rho_ss.matrix() * am.adjoint();
    let number = am.adjoint() * am;
    let probe = vectorize(&number.transpose());
    let states = propagate_vec(l, &vectorize(&seed), tau, method)?;
    let values = states
        .iter()
        .map(|v| {
            let num = probe.iter().zip(v.iter()).map(|(p, x)| p * x).sum::<C64>().re;
            (num / (n * n)).max(0.0)
        })
        .collect();
    Ok(CorrelationSeries { tau: tau.to_vec(), values })
}

/// ⟨a†a†aa⟩/⟨a†a⟩² evaluated directly on the state.
pub fn g2_zero(rho_ss: &DensityMatrix, a: &Operator) -> Result<f64> {
    let n = mean_photons(rho_ss, a)?;
    let ad = a.dag();
    let op = &(&ad * &ad) * &(a * a);
    Ok(expectation(rho_ss, &op)?.re / (n * n))
}

/// Detected photon flux 2κ⟨a†a⟩·efficiency.
pub fn emission_rate(rho_ss: &DensityMatrix, a: &Operator, kappa: f64, efficiency: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&efficiency) {
        return Err(Error::InvalidParameter {
            name: "efficiency".into(),
            reason: format!("must lie in [0, 1], got {efficiency}"),
        });
    }
    let n = expectation(rho_ss, &(&a.dag() * a))?.re;
    Ok(2.0 * kappa * n * efficiency)
}

fn three_level_ops(rho: &DensityMatrix) -> Result<OperatorSet> {
    let dims = rho.space().subsystem_dims();
    if dims.len() != 2 || dims[1] < 2 {
        return Err(Error::Dimension(format!("expected an (atom, cavity) state, got dims {dims:?}")));
    }
    OperatorSet::new(dims[0], dims[1] - 1)
}

/// ⟨a†a⟩/⟨σ₃₃⟩.
pub fn figure_of_merit(rho_ss: &DensityMatrix) -> Result<f64> {
    let ops = three_level_ops(rho_ss)?;
    let s33 = expectation(rho_ss, &ops.sigma(3, 3)?)?.re;
    if s33 <= DARK_FLOOR {
        return Err(Error::DivideByZero(s33));
    }
    Ok(expectation(rho_ss, &ops.number())?.re / s33)
}

/// Incoherent emission spectrum plus the separate coherent weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub omega: Vec<f64>,
    /// S(ω) = 2 Re ∫₀^τmax e^{−iωτ}[⟨a†(τ)a⟩ − |⟨a⟩|²] dτ.
    pub incoherent: Vec<f64>,
    /// |⟨a⟩|², the weight of the δ-function line.
    pub coherent: f64,
    pub mean_photons: f64,
    pub tau_max: f64,
    pub tau_step: f64,
}

impl Spectrum {
    /// ∫S dω/2π over the grid (trapezoid).
    pub fn incoherent_weight(&self) -> f64 {
        let mut s = 0.0;
        for k in 1..self.omega.len() {
            s += 0.5 * (self.incoherent[k] + self.incoherent[k - 1]) * (self.omega[k] - self.omega[k - 1]);
        }
        s / std::f64::consts::TAU
    }

    /// Full width at half maximum of the tallest incoherent peak, if both
    /// half-maximum crossings lie on the grid.
    pub fn incoherent_fwhm(&self) -> Option<f64> {
        let (k, &peak) = self.incoherent.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
        let half = 0.5 * peak;
        let cross = |range: &mut dyn Iterator<Item = usize>| {
            for j in range {
                let (i0, i1) = if j < k { (j, j + 1) } else { (j, j - 1) };
                if self.incoherent[i0] < half {
                    let (y0, y1) = (self.incoherent[i0], self.incoherent[i1]);
                    let f = (half - y0) / (y1 - y0);
                    return Some(self.omega[i0] + f * (self.omega[i1] - self.omega[i0]));
                }
            }
            None
        };
        let left = cross(&mut (0..k).rev())?;
        let right = cross(&mut (k + 1..self.omega.len()))?;
        Some(right - left)
    }
}

/// Number of relaxation times the correlator is integrated over.
pub const SPECTRUM_RELAXATION_TIMES: f64 = 30.0;

pub fn g1_spectrum(l: &Liouvillian, rho_ss: &DensityMatrix, a: &Operator, omega: &[f64]) -> Result<Spectrum> {
    let n = mean_photons(rho_ss, a)?;
    let alpha = expectation(rho_ss, a)?;
    let coherent = alpha.norm_sqr();
    let ev = l.eigenvalues()?;
    let scale = ev.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1e-300);
    let gap = ev.iter().filter(|z| z.norm() > 1e-9 * scale).map(|z| -z.re).fold(f64::INFINITY, f64::min);
    if !(gap > 0.0 && gap.is_finite()) {
        return Err(Error::NonConvergence("no spectral gap for the correlator cutoff".into()));
    }
    let tau_max = SPECTRUM_RELAXATION_TIMES / gap;
    let w_max = ev.iter().map(|z| z.im.abs()).fold(0.0, f64::max) + omega.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    // about 16 samples per fastest period, capped for very wide grids
    let steps = ((tau_max * w_max / (std::f64::consts::TAU / 16.0)).ceil() as usize).clamp(256, 400_000);
    let dt = tau_max / steps as f64;

    let am = a.matrix();
    let seed = vectorize(&(am * rho_ss.matrix()));
    let probe = vectorize(&am.adjoint().transpose());
    let prop = l.propagator(dt);
    let mut v = seed;
    let mut corr = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        if k > 0 {
            v = &prop * &v;
        }
        let c = probe.iter().zip(v.iter()).map(|(p, x)| p * x).sum::<C64>() - C64::new(coherent, 0.0);
        corr.push(c);
    }
    let incoherent = omega
        .iter()
        .map(|&w| {
            let mut acc = C64::new(0.0, 0.0);
            for (k, c) in corr.iter().enumerate() {
                let wt = if k == 0 || k == steps { 0.5 } else { 1.0 };
                let ph = C64::from_polar(1.0, -w * k as f64 * dt);
                acc += ph * c * wt;
            }
            2.0 * acc.re * dt
        })
        .collect();
    Ok(Spectrum { omega: omega.to_vec(), incoherent, coherent, mean_photons: n, tau_max, tau_step: dt })
}

/// Steady-state quantities of the three-level model in one solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyObservables {
    pub photon_number: f64,
    pub sigma33: f64,
    /// ⟨a†a†aa⟩/⟨a†a⟩², NaN when there are no photons.
    pub g2_zero: f64,
    /// 2κ⟨a†a⟩η.
    pub emission_rate: f64,
    /// ⟨a†a⟩/⟨σ₃₃⟩, +∞ when σ₃₃ vanishes.
    pub figure_of_merit: f64,
    pub residual: f64,
}

pub fn steady_observables(params: &SystemParams, efficiency: f64) -> Result<SteadyObservables> {
    let model = build_model(params)?;
    let l = crate::liouvillian::build_liouvillian(&model)?;
    let rho = steady_state(&l)?;
    let ops = model.operators();
    let n = expectation(&rho, &ops.number())?.re;
    let s33 = expectation(&rho, &ops.sigma(3, 3)?)?.re;
    let g2 = match g2_zero(&rho, ops.a()) {
        Ok(v) => v,
        Err(Error::ZeroPhoton(_)) => f64::NAN,
        Err(e) => return Err(e),
    };
    let fom = match figure_of_merit(&rho) {
        Ok(v) => v,
        Err(Error::DivideByZero(_)) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    let residual = l.matrix().matvec(&rho.to_vec()).norm() / l.norm();
    Ok(SteadyObservables {
        photon_number: n,
        sigma33: s33,
        g2_zero: g2,
        emission_rate: emission_rate(&rho, ops.a(), params.kappa, efficiency)?,
        figure_of_merit: fom,
        residual,
    })
}

/// ⟨a†(τ)a⟩ by the regression theorem, used by tests and the CLI.
pub fn first_order_correlation(
    l: &Liouvillian,
    rho_ss: &DensityMatrix,
    a: &Operator,
    tau: &[f64],
) -> Result<Vec<C64>> {
    check_tau_grid(tau)?;
    let seed = a.matrix() * rho_ss.matrix();
    let states = propagate_vec(l, &vectorize(&seed), tau, default_propagation(tau))?;
    let ad = a.matrix().adjoint();
    Ok(states.iter().map(|v| trace_product(&ad, &unvectorize(v, l.dim()))).collect())
}

/// Coherently driven empty cavity, H = Δa†a + εa† + ε*a with loss √κ a.
/// Returns the Liouvillian and the annihilation operator.
pub fn driven_empty_cavity(eps: C64, detuning: f64, kappa: f64, fock_cutoff: usize) -> Result<(Liouvillian, Operator)> {
    let a = crate::hilbert::annihilation_op(fock_cutoff)?;
    let ad = a.dag();
    let h = &(&(&ad * &a).scale_re(detuning) + &ad.scale(eps)) + &a.scale(eps.conj());
    let l = Liouvillian::from_parts(&h, &[a.scale_re(kappa.sqrt())])?;
    Ok((l, a))
}

/// Steady coherent amplitude of [`driven_empty_cavity`], α = −iε/(κ + iΔ).
pub fn coherent_amplitude(eps: C64, detuning: f64, kappa: f64) -> C64 {
    -C64::i() * eps / C64::new(kappa, detuning)
}
