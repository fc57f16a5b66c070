//! Rotating-frame Hamiltonian and collapse operators of the three-level
//! atom plus cavity.
//!
//! Atom levels are labelled 1, 2, 3 (zero-based 0, 1, 2 in matrices). The
//! cavity couples 1↔3, the drives couple 1↔2 (Ω₁₂, effective Raman) and
//! 2↔3 (Ω₂₃). The cavity frame rotates at ω₁₂ + ω₂₃ so that
//! Δ₁₂ = Δ₂₃ = 0 is the four-wave-mixing resonance:
//!
//! H = −Δ₁₂σ₂₂ − (Δ₁₂+Δ₂₃)(σ₃₃ + a†a) + g(a†σ₁₃ + σ₃₁a)
//!     + (Ω₁₂/2)(σ₁₂+σ₂₁) + (Ω₂₃/2)(σ₂₃+σ₃₂)

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{annihilation_op, atomic_projector, embed, HilbertSpace, Operator, ATOM, CAVITY};
use crate::units::mhz;
use crate::C64;

/// Physical parameters, all angular frequencies in rad/µs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub g: f64,
    /// Cavity field decay rate; the intensity decays at 2κ.
    pub kappa: f64,
    pub gamma13: f64,
    pub gamma23: f64,
    pub gamma_d: f64,
    pub omega12: f64,
    pub omega23: f64,
    pub delta12: f64,
    pub delta23: f64,
    pub fock_cutoff: usize,
}

impl SystemParams {
    /// (κ, γ, g)/2π = (1.5, 3.0, 10.2) MHz with Ω₁₂/2π = 0.4, Ω₂₃/2π = 4.0 MHz,
    /// γ_d/2π = 0.13 MHz and γ split equally between the two ground states.
    pub fn baseline() -> Self {
        Self {
            g: mhz(10.2),
            kappa: mhz(1.5),
            gamma13: mhz(1.5),
            gamma23: mhz(1.5),
            gamma_d: mhz(0.13),
            omega12: mhz(0.4),
            omega23: mhz(4.0),
            delta12: 0.0,
            delta23: 0.0,
            fock_cutoff: 5,
        }
    }

    /// Fixed parameters of the figure-of-merit sweeps: g/2π = 9.2,
    /// Ω₁₂/2π = 0.3, Ω₂₃/2π = 4.0, γ_d/2π = 0.13 MHz.
    pub fn fom_preset() -> Self {
        Self { g: mhz(9.2), omega12: mhz(0.3), ..Self::baseline() }
    }

    /// γ₁₃ + γ₂₃.
    pub fn gamma33(&self) -> f64 {
        self.gamma13 + self.gamma23
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("g", self.g),
            ("kappa", self.kappa),
            ("gamma13", self.gamma13),
            ("gamma23", self.gamma23),
            ("gamma_d", self.gamma_d),
            ("omega12", self.omega12),
            ("omega23", self.omega23),
        ];
        for (name, v) in rates {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter {
                    name: name.into(),
                    reason: format!("must be finite and >= 0, got {v}"),
                });
            }
        }
        for (name, v) in [("delta12", self.delta12), ("delta23", self.delta23)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter { name: name.into(), reason: "not finite".into() });
            }
        }
        if self.fock_cutoff == 0 {
            return Err(Error::InvalidParameter {
                name: "fock_cutoff".into(),
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }

    pub fn space(&self) -> HilbertSpace {
        HilbertSpace::atom_cavity(3, self.fock_cutoff).expect("validated cutoff")
    }
}

/// Embedded σᵢⱼ and a on an (atom, cavity) space.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    space: HilbertSpace,
    n_levels: usize,
    a: Operator,
}

impl OperatorSet {
    pub fn new(n_levels: usize, fock_cutoff: usize) -> Result<Self> {
        let space = HilbertSpace::atom_cavity(n_levels, fock_cutoff)?;
        let a = embed(&annihilation_op(fock_cutoff)?, CAVITY, &space)?;
        Ok(Self { space, n_levels, a })
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    /// Cavity annihilation operator on the full space.
    pub fn a(&self) -> &Operator {
        &self.a
    }

    pub fn number(&self) -> Operator {
        &self.a.dag() * &self.a
    }

    /// σᵢⱼ on the full space, one-based labels.
    pub fn sigma(&self, i: usize, j: usize) -> Result<Operator> {
        embed(&atomic_projector(i, j, self.n_levels)?, ATOM, &self.space)
    }
}

/// Hamiltonian, collapse operators (C₁…C₄) and the parameters they came from.
#[derive(Debug, Clone)]
pub struct ModelRealization {
    pub hamiltonian: Operator,
    pub collapse_ops: Vec<Operator>,
    pub params: SystemParams,
}

impl ModelRealization {
    pub fn space(&self) -> &HilbertSpace {
        self.hamiltonian.space()
    }

    pub fn operators(&self) -> OperatorSet {
        OperatorSet::new(3, self.params.fock_cutoff).expect("validated cutoff")
    }
}

pub fn build_hamiltonian(params: &SystemParams) -> Result<Operator> {
    params.validate()?;
    let ops = OperatorSet::new(3, params.fock_cutoff)?;
    let s = |i, j| ops.sigma(i, j).expect("levels 1..=3 exist");
    let a = ops.a();
    let ad = a.dag();
    let re = |x: f64| C64::new(x, 0.0);

    let mut h = s(2, 2).scale(re(-params.delta12));
    let detuning3 = -(params.delta12 + params.delta23);
    h = &h + &(&s(3, 3) + &ops.number()).scale(re(detuning3));
    h = &h + &(&(&ad * &s(1, 3)) + &(&s(3, 1) * a)).scale(re(params.g));
    h = &h + &(&s(1, 2) + &s(2, 1)).scale(re(params.omega12 / 2.0));
    h = &h + &(&s(2, 3) + &s(3, 2)).scale(re(params.omega23 / 2.0));
    Ok(h)
}

/// [√γ₁₃σ₁₃, √γ₂₃σ₂₃, √κ a, √γ_d σ₂₂] in this order.
pub fn build_collapse_ops(params: &SystemParams) -> Result<Vec<Operator>> {
    params.validate()?;
    let ops = OperatorSet::new(3, params.fock_cutoff)?;
    let s = |i, j| ops.sigma(i, j).expect("levels 1..=3 exist");
    Ok(vec![
        s(1, 3).scale_re(params.gamma13.sqrt()),
        s(2, 3).scale_re(params.gamma23.sqrt()),
        ops.a().scale_re(params.kappa.sqrt()),
        s(2, 2).scale_re(params.gamma_d.sqrt()),
    ])
}

pub fn build_model(params: &SystemParams) -> Result<ModelRealization> {
    Ok(ModelRealization {
        hamiltonian: build_hamiltonian(params)?,
        collapse_ops: build_collapse_ops(params)?,
        params: *params,
    })
}

/// Four-wave-mixing output frequency ω₁ᵣ + ω₂₃ − ω₂ᵣ.
pub fn fwm_frequency(omega_1r: f64, omega_23: f64, omega_2r: f64) -> f64 {
    omega_1r + omega_23 - omega_2r
}

/// Zero-based basis indices of the n-excitation block {|1,n⟩, |2,n−1⟩, |3,n−1⟩}.
pub fn excitation_block(n: usize, fock_cutoff: usize) -> Result<[usize; 3]> {
    if n == 0 || n > fock_cutoff {
        return Err(Error::RungExceedsCutoff { n, cutoff: fock_cutoff });
    }
    let nf = fock_cutoff + 1;
    Ok([n, nf + n - 1, 2 * nf + n - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::to_mhz;
    use proptest::prelude::*;

    fn resonant(g: f64, omega23: f64, cutoff: usize) -> SystemParams {
        SystemParams {
            g,
            omega23,
            omega12: 0.0,
            delta12: 0.0,
            delta23: 0.0,
            fock_cutoff: cutoff,
            ..SystemParams::baseline()
        }
    }

    fn block_eigenvalues(h: &Operator, idx: &[usize]) -> Vec<f64> {
        let m = h.submatrix(idx);
        let mut v: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn bare_jaynes_cummings() {
        let p = SystemParams { omega12: 0.0, omega23: 0.0, ..resonant(mhz(10.2), 0.0, 3) };
        let h = build_hamiltonian(&p).unwrap();
        let ops = OperatorSet::new(3, 3).unwrap();
        let jc = (&(&ops.a().dag() * &ops.sigma(1, 3).unwrap()) + &(&ops.sigma(3, 1).unwrap() * ops.a()))
            .scale_re(p.g);
        assert!((h.matrix() - jc.matrix()).camax() < 1e-14);
    }

    #[test]
    fn one_excitation_splitting() {
        let p = resonant(mhz(10.2), mhz(4.0), 3);
        let h = build_hamiltonian(&p).unwrap();
        assert!(h.is_hermitian(1e-12));
        let ev = block_eigenvalues(&h, &excitation_block(1, 3).unwrap());
        // independent value: sqrt(10.2^2 + 2^2)
        let e1 = 10.394229168;
        assert!((to_mhz(ev[2]) - e1).abs() < 1e-8);
        assert!((to_mhz(ev[0]) + e1).abs() < 1e-8);
        assert!(ev[1].abs() < 1e-12);
    }

    #[test]
    fn excitation_blocks_are_closed() {
        // at Ω₁₂ = 0 the Hamiltonian does not couple different excitation numbers
        let p = SystemParams { delta12: 0.3, delta23: -0.7, ..resonant(2.0, 1.5, 3) };
        let h = build_hamiltonian(&p).unwrap();
        let mut rung = vec![0usize; 12];
        for lvl in 0..3 {
            for n in 0..4 {
                rung[lvl * 4 + n] = n + usize::from(lvl != 0);
            }
        }
        for i in 0..12 {
            for j in 0..12 {
                if rung[i] != rung[j] {
                    assert_eq!(h.matrix()[(i, j)], C64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn dark_vector_has_zero_energy() {
        let (g, om) = (mhz(10.2), mhz(4.0));
        let p = resonant(g, om, 5);
        let h = build_hamiltonian(&p).unwrap();
        for n in 1..=5 {
            let idx = excitation_block(n, 5).unwrap();
            let mut v = nalgebra::DVector::<C64>::zeros(18);
            v[idx[0]] = C64::new(om / 2.0, 0.0);
            v[idx[1]] = C64::new(-g * (n as f64).sqrt(), 0.0);
            let v = v.normalize();
            assert!((h.matrix() * v).norm() < 1e-10);
        }
    }

    #[test]
    fn collapse_operator_structure() {
        let p = SystemParams { gamma13: 0.0, gamma23: 0.0, gamma_d: 0.0, ..SystemParams::fom_preset() };
        let c = build_collapse_ops(&p).unwrap();
        assert_eq!(c.len(), 4);
        let nonzero: Vec<bool> = c.iter().map(|o| o.max_abs() > 0.0).collect();
        assert_eq!(nonzero, vec![false, false, true, false]);

        let p = SystemParams::fom_preset();
        let c = build_collapse_ops(&p).unwrap();
        assert!(c[3].is_hermitian(1e-15));
        assert!(!c[0].is_hermitian(1e-12) && !c[1].is_hermitian(1e-12) && !c[2].is_hermitian(1e-12));

        let norm2 = |o: &Operator| o.matrix().norm_squared();
        let doubled = build_collapse_ops(&SystemParams { gamma_d: 2.0 * p.gamma_d, ..p }).unwrap();
        assert!((norm2(&doubled[3]) / norm2(&c[3]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fwm_shifts() {
        assert_eq!(fwm_frequency(0.0, 0.0, 0.0), 0.0);
        let base = fwm_frequency(1.0, 2.0, 0.5);
        let d = crate::units::khz(100.0);
        assert!((fwm_frequency(1.0 + d, 2.0, 0.5) - base - d).abs() < 1e-12);
        assert!((fwm_frequency(1.0, 2.0, 0.5 + d) - base + d).abs() < 1e-12);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = SystemParams { kappa: -1.0, ..SystemParams::baseline() };
        assert!(matches!(build_hamiltonian(&p), Err(Error::InvalidParameter { .. })));
        let p = SystemParams { fock_cutoff: 0, ..SystemParams::baseline() };
        assert!(build_collapse_ops(&p).is_err());
    }

    proptest! {
        #[test]
        fn hamiltonian_is_hermitian(
            g in 0.0f64..80.0, o12 in 0.0f64..30.0, o23 in 0.0f64..60.0,
            d12 in -100.0f64..100.0, d23 in -100.0f64..100.0, cutoff in 1usize..5,
        ) {
            let p = SystemParams { g, omega12: o12, omega23: o23, delta12: d12, delta23: d23, fock_cutoff: cutoff,
                ..SystemParams::baseline() };
            let h = build_hamiltonian(&p).unwrap();
            prop_assert!(h.is_hermitian(1e-12));
        }

        #[test]
        fn one_excitation_triplet(g in 0.5f64..80.0, o23 in 0.0f64..80.0) {
            let h = build_hamiltonian(&resonant(g, o23, 2)).unwrap();
            let ev = block_eigenvalues(&h, &excitation_block(1, 2).unwrap());
            let e1 = (g * g + o23 * o23 / 4.0).sqrt();
            prop_assert!((ev[2] - e1).abs() <= 1e-10 * e1);
            prop_assert!((ev[0] + e1).abs() <= 1e-10 * e1);
            prop_assert!(ev[1].abs() <= 1e-10 * e1);
        }
    }
}
