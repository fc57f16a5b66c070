//! Closed forms of the dark-state ladder.
//!
//! For the resonant Hamiltonian with Ω₁₂ = 0 each n-excitation block
//! {|1,n⟩, |2,n−1⟩, |3,n−1⟩} holds one dark state
//! Ψₙ⁰ ∝ (Ω₂₃/2)|1,n⟩ − g√n|2,n−1⟩ at zero energy and two bright states
//! Ψₙ± ∝ g√n|1,n⟩ + (Ω₂₃/2)|2,n−1⟩ ± Eₙ|3,n−1⟩ at ±Eₙ,
//! Eₙ = √(ng² + Ω₂₃²/4). Dark states carry real amplitudes with a positive
//! |1,n⟩ coefficient.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{HilbertSpace, Operator, StateVector};
use crate::model::{build_hamiltonian, excitation_block, OperatorSet, SystemParams};
use crate::C64;

fn check_pair(g: f64, omega23: f64) -> Result<()> {
    if g == 0.0 && omega23 == 0.0 {
        return Err(Error::InvalidParameter {
            name: "g, omega23".into(),
            reason: "both zero: the dark state is undefined".into(),
        });
    }
    Ok(())
}

fn block_state(n: usize, fock_cutoff: usize, amps: [f64; 3]) -> Result<StateVector> {
    let space = HilbertSpace::atom_cavity(3, fock_cutoff)?;
    let idx = excitation_block(n, fock_cutoff)?;
    let mut v = DVector::zeros(space.total_dim());
    for (k, a) in idx.iter().zip(amps) {
        v[*k] = C64::new(a, 0.0);
    }
    Ok(StateVector::new(space, v)?.normalized())
}

/// Ψₙ⁰. `n = 0` gives the ground state |1,0⟩.
pub fn dark_state(n: usize, g: f64, omega23: f64, fock_cutoff: usize) -> Result<StateVector> {
    check_pair(g, omega23)?;
    if n == 0 {
        let space = HilbertSpace::atom_cavity(3, fock_cutoff)?;
        return StateVector::basis(&space, &[0, 0]);
    }
    let mut amps = [omega23 / 2.0, -g * (n as f64).sqrt(), 0.0];
    if amps[0] < 0.0 || (amps[0] == 0.0 && amps[1] > 0.0) {
        amps = [-amps[0], -amps[1], 0.0];
    }
    block_state(n, fock_cutoff, amps)
}

/// Eₙ = √(ng² + Ω₂₃²/4).
pub fn bright_energy(n: usize, g: f64, omega23: f64) -> f64 {
    (n as f64 * g * g + omega23 * omega23 / 4.0).sqrt()
}

/// (Ψₙ⁺, +Eₙ) and (Ψₙ⁻, −Eₙ).
pub fn bright_states(n: usize, g: f64, omega23: f64, fock_cutoff: usize) -> Result<[(StateVector, f64); 2]> {
    check_pair(g, omega23)?;
    let e = bright_energy(n, g, omega23);
    let base = [g * (n as f64).sqrt(), omega23 / 2.0];
    let plus = block_state(n, fock_cutoff, [base[0], base[1], e])?;
    let minus = block_state(n, fock_cutoff, [base[0], base[1], -e])?;
    Ok([(plus, e), (minus, -e)])
}

/// Γₙ→ₙ₋₁ = κn[4g²(n−1) + Ω₂₃²]/(4g²n + Ω₂₃²).
pub fn zeno_decay_rate(n: usize, g: f64, omega23: f64, kappa: f64) -> f64 {
    let nf = n as f64;
    let (g2, o2) = (g * g, omega23 * omega23);
    let den = 4.0 * g2 * nf + o2;
    if den == 0.0 {
        return 0.0;
    }
    kappa * nf * (4.0 * g2 * (nf - 1.0) + o2) / den
}

/// Exact effective drive Ωₙ between Ψₙ₋₁⁰ and Ψₙ⁰:
/// 2Ω₁₂Ω₂₃g√n / (√(4g²n+Ω₂₃²)·√(4g²(n−1)+Ω₂₃²)).
///
/// At n = 1 the factor Ω₂₃/√(Ω₂₃²) is replaced by its limit 1, which is the
/// coupling ⟨Ψ₁⁰|H|Ψ₀⁰⟩ = −Ω₁₂/2 also when Ω₂₃ = 0.
pub fn effective_drive(n: usize, g: f64, omega12: f64, omega23: f64) -> Result<f64> {
    if g == 0.0 && omega23 == 0.0 {
        return Err(Error::InvalidParameter {
            name: "g, omega23".into(),
            reason: "effective drive undefined when both vanish".into(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidParameter { name: "n".into(), reason: "rung must be >= 1".into() });
    }
    let nf = n as f64;
    let (g2, o2) = (g * g, omega23 * omega23);
    if n == 1 {
        return Ok(2.0 * omega12 * g / (4.0 * g2 + o2).sqrt());
    }
    Ok(2.0 * omega12 * omega23 * g * nf.sqrt() / ((4.0 * g2 * nf + o2).sqrt() * (4.0 * g2 * (nf - 1.0) + o2).sqrt()))
}

/// Approximate ladder coupling magnitude for Ψₙ⁰ → Ψₙ₊₁⁰ valid for Ω₂₃ ≪ g:
/// Ω₁₂/2 for n = 0 and Ω₁₂Ω₂₃/(4g√n) otherwise.
pub fn ladder_coefficient(n: usize, g: f64, omega12: f64, omega23: f64) -> f64 {
    if n == 0 {
        omega12 / 2.0
    } else {
        omega12 * omega23 / (4.0 * g * (n as f64).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderPoint {
    pub n: usize,
    pub gamma_n: f64,
    pub omega_n: f64,
    /// Ωₙ/Γₙ; +∞ when the rung is perfectly dark.
    pub zeno: f64,
    /// Zₙ/Z₁; 1 at n = 1.
    pub zeno_rel: f64,
    /// Γₙ = 0: the rung does not decay.
    pub dark: bool,
}

fn zeno_value(n: usize, p: &SystemParams) -> Result<(f64, f64, f64)> {
    let gamma = zeno_decay_rate(n, p.g, p.omega23, p.kappa);
    let omega = effective_drive(n, p.g, p.omega12, p.omega23)?;
    let z = if gamma > 0.0 { omega / gamma } else { f64::INFINITY };
    Ok((gamma, omega, z))
}

pub fn zeno_factor(n: usize, params: &SystemParams) -> Result<LadderPoint> {
    let (gamma_n, omega_n, zeno) = zeno_value(n, params)?;
    let zeno_rel = if n == 1 {
        1.0
    } else {
        let (_, _, z1) = zeno_value(1, params)?;
        if z1.is_infinite() {
            if zeno.is_infinite() {
                f64::NAN
            } else {
                0.0
            }
        } else {
            zeno / z1
        }
    };
    Ok(LadderPoint { n, gamma_n, omega_n, zeno, zeno_rel, dark: gamma_n == 0.0 })
}

/// Tridiagonal ladder Hamiltonian on {Ψ₀⁰ … Ψ_{n_max}⁰} using the approximate
/// coefficients −Ω₁₂/2 and −Ω₁₂Ω₂₃/(4g√n).
pub fn effective_hamiltonian(params: &SystemParams, n_max: usize) -> Result<Operator> {
    let d = n_max + 1;
    if params.g == 0.0 && n_max > 0 {
        return Err(Error::InvalidParameter { name: "g".into(), reason: "ladder requires g > 0".into() });
    }
    let mut m = DMatrix::zeros(d, d);
    for n in 0..n_max {
        let c = -ladder_coefficient(n, params.g, params.omega12, params.omega23);
        m[(n + 1, n)] = C64::new(c, 0.0);
        m[(n, n + 1)] = C64::new(c, 0.0);
    }
    Operator::new(HilbertSpace::single(d)?, m)
}

/// Whether Ω₂₃ ≪ g holds well enough for the ladder approximation (Ω₂₃ ≤ g/2).
pub fn ladder_regime_valid(params: &SystemParams) -> bool {
    params.omega23 <= 0.5 * params.g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungCheck {
    pub n: usize,
    /// ‖H Ψₙ⁰‖ / max(g, Ω₂₃).
    pub h_residual: f64,
    /// Largest |⟨3,m|Ψₙ⁰⟩|.
    pub excited_amplitude: f64,
    /// κ|⟨Ψₙ₋₁⁰|a|Ψₙ⁰⟩|²/Γₙ − 1 (absolute overlap when Γₙ = 0); None at the cutoff edge.
    pub overlap_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarknessReport {
    pub rungs: Vec<RungCheck>,
    pub tolerance: f64,
    pub pass: bool,
}

pub const DARKNESS_TOL: f64 = 1e-10;

/// Check the analytic dark states against the full Hamiltonian built from
/// `params`, which should be resonant with Ω₁₂ = 0.
pub fn verify_darkness(params: &SystemParams) -> Result<DarknessReport> {
    let h = build_hamiltonian(params)?;
    let ops = OperatorSet::new(3, params.fock_cutoff)?;
    let a = ops.a();
    let scale = params.g.max(params.omega23).max(f64::MIN_POSITIVE);
    let nf = params.fock_cutoff + 1;
    let mut rungs = Vec::new();
    let mut prev = dark_state(0, params.g, params.omega23, params.fock_cutoff)?;
    for n in 1..=params.fock_cutoff {
        let psi = dark_state(n, params.g, params.omega23, params.fock_cutoff)?;
        let h_residual = h.apply(&psi).norm() / scale;
        let excited_amplitude = (0..nf).map(|m| psi.amplitudes()[2 * nf + m].norm()).fold(0.0, f64::max);
        let overlap_error = (n < params.fock_cutoff).then(|| {
            let ov = prev.inner(&a.apply(&psi)).norm_sqr();
            let expected = zeno_decay_rate(n, params.g, params.omega23, 1.0);
            if expected > 0.0 {
                ov / expected - 1.0
            } else {
                ov
            }
        });
        rungs.push(RungCheck { n, h_residual, excited_amplitude, overlap_error });
        prev = psi;
    }
    let pass = rungs.iter().all(|r| {
        r.h_residual <= DARKNESS_TOL
            && r.excited_amplitude <= DARKNESS_TOL
            && r.overlap_error.map_or(true, |e| e.abs() <= DARKNESS_TOL)
    });
    Ok(DarknessReport { rungs, tolerance: DARKNESS_TOL, pass })
}

/// Sorted eigenvalues of the n-excitation block of the full Hamiltonian with
/// Ω₁₂ switched off, found by direct diagonalization.
pub fn block_spectrum(params: &SystemParams, n: usize) -> Result<Vec<f64>> {
    let p = SystemParams { omega12: 0.0, ..*params };
    let keep = excitation_block(n, p.fock_cutoff)?;
    let block = build_hamiltonian(&p)?.submatrix(&keep);
    let mut ev: Vec<f64> = block.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Γₙ by Fermi's golden rule, κ|⟨Ψₙ₋₁⁰|a|Ψₙ⁰⟩|², on a space with room for rung n.
pub fn overlap_decay_rate(n: usize, g: f64, omega23: f64, kappa: f64) -> Result<f64> {
    let cutoff = n.max(1);
    let a = OperatorSet::new(3, cutoff)?.a().clone();
    let lo = dark_state(n - 1, g, omega23, cutoff)?;
    let hi = dark_state(n, g, omega23, cutoff)?;
    Ok(kappa * lo.inner(&a.apply(&hi)).norm_sqr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{mhz, to_mhz};
    use proptest::prelude::*;

    fn resonant(g: f64, omega23: f64, cutoff: usize) -> SystemParams {
        SystemParams { g, omega23, omega12: 0.0, delta12: 0.0, delta23: 0.0, fock_cutoff: cutoff, ..SystemParams::fom_preset() }
    }

    #[test]
    fn dark_state_limits() {
        let psi = dark_state(3, 2.0, 0.0, 4).unwrap();
        let idx = excitation_block(3, 4).unwrap();
        assert!((psi.amplitudes()[idx[1]] - C64::new(-1.0, 0.0)).norm() < 1e-15);

        let g = 1.3;
        let psi = dark_state(1, g, 2.0 * g, 2).unwrap();
        let idx = excitation_block(1, 2).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((psi.amplitudes()[idx[0]].re - r).abs() < 1e-15);
        assert!((psi.amplitudes()[idx[1]].re + r).abs() < 1e-15);
        assert!(matches!(dark_state(5, g, 1.0, 4), Err(Error::RungExceedsCutoff { .. })));
        assert!(dark_state(1, 0.0, 0.0, 2).is_err());
    }

    #[test]
    fn block_spectrum_is_dark_plus_bright_pair() {
        let p = resonant(mhz(10.0), mhz(4.0), 4);
        for n in 1..=4 {
            let ev = block_spectrum(&p, n).unwrap();
            let e = bright_energy(n, p.g, p.omega23);
            assert!((ev[0] + e).abs() < 1e-10 && ev[1].abs() < 1e-10 && (ev[2] - e).abs() < 1e-10, "{ev:?}");
        }
    }

    #[test]
    fn bright_energy_value() {
        let e1 = bright_energy(1, mhz(10.2), mhz(4.0));
        assert!((to_mhz(e1) - 10.394229168).abs() < 1e-8);
        assert!((bright_energy(4, 2.0, 0.0) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn triplet_is_orthonormal_and_complete() {
        let (g, om) = (mhz(10.2), mhz(4.0));
        let h = build_hamiltonian(&resonant(g, om, 4)).unwrap();
        for n in 1..=4 {
            let d = dark_state(n, g, om, 4).unwrap();
            let [(p, ep), (m, em)] = bright_states(n, g, om, 4).unwrap();
            assert!(p.inner(&m).norm() < 1e-12 && d.inner(&p).norm() < 1e-12 && d.inner(&m).norm() < 1e-12);
            for (s, e) in [(&p, ep), (&m, em)] {
                let hs = h.apply(s);
                let r: f64 = hs.amplitudes().iter().zip(s.amplitudes()).map(|(x, y)| (x - y * e).norm_sqr()).sum();
                assert!(r.sqrt() < 1e-10 * e.abs());
            }
            let proj = &(&d.projector() + &p.projector()) + &m.projector();
            let idx = excitation_block(n, 4).unwrap();
            let mut block = DMatrix::<C64>::zeros(15, 15);
            for k in idx {
                block[(k, k)] = C64::new(1.0, 0.0);
            }
            assert!((proj.matrix() - block).camax() < 1e-10);
        }
    }

    #[test]
    fn decay_rate_limits_and_overlap() {
        assert_eq!(zeno_decay_rate(1, 3.0, 0.0, 2.0), 0.0);
        let big = zeno_decay_rate(3, 1.0, 1e9, 2.0);
        assert!((big / 6.0 - 1.0).abs() < 1e-12);
        let (g, om, k) = (mhz(9.2), mhz(1.0), mhz(1.5));
        let g1 = zeno_decay_rate(1, g, om, k);
        assert!((g1 - k * om * om / (4.0 * g * g + om * om)).abs() < 1e-15);
        let ov = overlap_decay_rate(1, g, om, k).unwrap();
        assert!((ov / g1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn drive_limits() {
        let (g, o12) = (mhz(10.2), mhz(0.4));
        let w1 = effective_drive(1, g, o12, mhz(0.1)).unwrap();
        assert!((w1 / o12 - 1.0).abs() < 1e-4);
        assert_eq!(effective_drive(3, g, 0.0, 1.0).unwrap(), 0.0);
        assert!(effective_drive(2, 0.0, 1.0, 0.0).is_err());
        // Ω₂₃ = 0 at n = 1 keeps the limiting value Ω₁₂
        assert!((effective_drive(1, g, o12, 0.0).unwrap() - o12).abs() < 1e-15);
    }

    #[test]
    fn ladder_coefficients_match_exact_drive() {
        let g = mhz(9.2);
        let om = g / 100.0;
        let o12 = mhz(0.3);
        for n in 0..5 {
            let exact = effective_drive(n + 1, g, o12, om).unwrap();
            let approx = 2.0 * ladder_coefficient(n, g, o12, om);
            assert!((exact / approx - 1.0).abs() < 1e-3, "n={n}: {exact} vs {approx}");
        }
    }

    #[test]
    fn effective_hamiltonian_structure() {
        let p = SystemParams::fom_preset();
        let h1 = effective_hamiltonian(&p, 1).unwrap();
        assert_eq!(h1.dim(), 2);
        assert_eq!(h1.matrix()[(0, 1)], C64::new(-p.omega12 / 2.0, 0.0));
        let h = effective_hamiltonian(&p, 6).unwrap();
        assert!(h.is_hermitian(0.0));
        for i in 0..7 {
            for j in 0..7 {
                let v = h.matrix()[(i, j)];
                assert_eq!(v.im, 0.0);
                if i.abs_diff(j) != 1 {
                    assert_eq!(v.re, 0.0);
                }
            }
        }
    }

    #[test]
    fn zeno_points() {
        let p = SystemParams { omega23: mhz(1.0), ..SystemParams::fom_preset() };
        let z1 = zeno_factor(1, &p).unwrap();
        assert_eq!(z1.zeno_rel, 1.0);
        assert!(!z1.dark);
        let dark = zeno_factor(1, &SystemParams { omega23: 0.0, ..p }).unwrap();
        assert!(dark.dark && dark.zeno.is_infinite());
        let z2_weak = zeno_factor(2, &SystemParams { omega23: p.g / 9.0, ..p }).unwrap().zeno_rel;
        let z2_strong = zeno_factor(2, &SystemParams { omega23: p.g, ..p }).unwrap().zeno_rel;
        assert!(z2_strong >= 10.0 * z2_weak);
    }

    #[test]
    fn darkness_report_passes() {
        let r = verify_darkness(&resonant(mhz(10.2), mhz(4.0), 5)).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.rungs.len(), 5);
        assert!(r.rungs[4].overlap_error.is_none());
        let r0 = verify_darkness(&resonant(mhz(10.2), 0.0, 4)).unwrap();
        assert!(r0.pass);
        let driven = SystemParams { omega12: mhz(0.3), ..resonant(mhz(10.2), mhz(4.0), 3) };
        assert!(!verify_darkness(&driven).unwrap().pass);
    }

    proptest! {
        #[test]
        fn golden_rule_consistency(g in 0.5f64..80.0, om in 0.01f64..80.0, n in 1usize..6) {
            let kappa = 9.4;
            let ov = overlap_decay_rate(n, g, om, kappa).unwrap();
            let cf = zeno_decay_rate(n, g, om, kappa);
            prop_assert!((ov / cf - 1.0).abs() < 1e-12);
        }

        #[test]
        fn blockade_is_monotone(g in 1.0f64..80.0, frac in 0.01f64..0.5) {
            let p = SystemParams { g, omega23: frac * g, ..SystemParams::fom_preset() };
            let mut last = f64::INFINITY;
            for n in 1..8 {
                let z = zeno_factor(n, &p).unwrap().zeno_rel;
                prop_assert!(z < last);
                last = z;
            }
        }

        #[test]
        fn dark_states_are_dark(g in 0.1f64..80.0, om in 0.0f64..80.0) {
            let r = verify_darkness(&resonant(g, om, 4)).unwrap();
            prop_assert!(r.pass, "{:?}", r);
        }
    }
}
