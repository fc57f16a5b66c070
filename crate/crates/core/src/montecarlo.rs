//! Monte-Carlo wavefunction trajectories for the 7-level ⁸⁷Rb implementation.
//!
//! Levels (zero-based order): |1⟩ = F1 m+1, |2⟩ = F2 m+2, |3⟩ = F'2 m'+2,
//! |g'⟩ = F2 m+1, |e'⟩ = F'2 m'+1, |d₁⟩ = F2 m0, |d₂⟩ = F1 m0.
//!
//! Trajectories evolve under H_eff = H − iΣC†C, with jump rates 2‖Cψ‖² to
//! match the dissipator Σ(2CρC† − ρC†C − C†Cρ). Time runs on an integer tick
//! clock of width τ = dt/128; propagators exp(−iH_eff 2ᵏτ) for k = 0..=7 are
//! precomputed and jump times are located by binary descent on the norm²
//! threshold, giving a resolution of τ.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_exponential_decay, ExpDecayFit};
use crate::hilbert::{annihilation_op, atomic_projector, embed, HilbertSpace, Operator, ATOM, CAVITY};
use crate::model::{ModelRealization, SystemParams};
use crate::units::mhz;
use crate::C64;

pub const L1: usize = 0;
pub const L2: usize = 1;
pub const L3: usize = 2;
pub const LG: usize = 3;
pub const LE: usize = 4;
pub const LD1: usize = 5;
pub const LD2: usize = 6;
pub const RB87_LEVELS: [&str; 7] = ["1", "2", "3", "g'", "e'", "d1", "d2"];

const BRANCH_TOL: f64 = 1e-12;
/// Number of binary-descent levels; one coarse step is 2^DESCENT ticks.
const DESCENT: usize = 7;
const TICKS_PER_STEP: u64 = 1 << DESCENT;
const THINNING_SALT: u64 = 0x5eed_7417_0000_0001;
const INITIAL_SALT: u64 = 0x5eed_7417_0000_0002;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drive {
    pub lower: usize,
    pub upper: usize,
    /// Rabi frequency; enters H as (rabi/2)(σ_lu + σ_ul).
    pub rabi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityCoupling {
    pub lower: usize,
    pub upper: usize,
    pub g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayChannel {
    pub upper: usize,
    pub lower: usize,
    /// Branching weight; the channel rate is γ·weight.
    pub weight: f64,
}

/// Which jumps count as photons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PhotonCounting {
    /// Cavity output through κ.
    Cavity,
    /// Spontaneous decays ending on the listed levels.
    Spontaneous(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLevelModel {
    pub levels: Vec<String>,
    /// Rotating-frame energies from the drive detunings, per level.
    pub detunings: Vec<f64>,
    /// Zeeman offsets, per level.
    pub zeeman: Vec<f64>,
    pub fock_cutoff: usize,
    pub drives: Vec<Drive>,
    pub cavity: CavityCoupling,
    /// Coefficient of a†a.
    pub cavity_detuning: f64,
    pub kappa: f64,
    /// Total polarization decay rate of each excited level.
    pub gamma: f64,
    pub decays: Vec<DecayChannel>,
    pub dephasing: Vec<(usize, f64)>,
    pub counting: PhotonCounting,
    /// Uncoupled levels where population accumulates.
    pub terminal: Vec<usize>,
    /// Initial level populations (cavity in vacuum); sampled per trajectory.
    pub initial: Vec<(usize, f64)>,
}

/// Clebsch-Gordan branching weights out of |3⟩ and |e'⟩ as (lower level, weight).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branching {
    pub from_3: Vec<(usize, f64)>,
    pub from_e: Vec<(usize, f64)>,
}

impl Branching {
    /// ⁸⁷Rb D₂ line, F'=2 → F=1,2, from Wigner 3j/6j symbols with I = 3/2.
    pub fn rb87_d2() -> Self {
        Self {
            from_3: vec![(L1, 1.0 / 2.0), (L2, 1.0 / 3.0), (LG, 1.0 / 6.0)],
            from_e: vec![(LD2, 1.0 / 4.0), (L1, 1.0 / 4.0), (LD1, 1.0 / 4.0), (LG, 1.0 / 12.0), (L2, 1.0 / 6.0)],
        }
    }

    /// Same table with e' → |1⟩ removed and the remainder renormalized.
    pub fn without_e_to_1(&self) -> Self {
        let kept: Vec<(usize, f64)> = self.from_e.iter().copied().filter(|(l, _)| *l != L1).collect();
        let total: f64 = kept.iter().map(|(_, w)| w).sum();
        Self { from_3: self.from_3.clone(), from_e: kept.into_iter().map(|(l, w)| (l, w / total)).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rb87Config {
    /// Uses g, κ, γ_d, Ω₁₂, Ω₂₃, Δ₁₂, Δ₂₃ and the Fock cutoff; γ₁₃ and γ₂₃ are
    /// replaced by `gamma` times the branching table.
    pub params: SystemParams,
    pub gamma: f64,
    pub zeeman_shift: f64,
    pub branching: Branching,
    /// Rabi frequency of the g'↔e' drive relative to Ω₂₃.
    pub repump_ratio: f64,
    /// Probability of starting in |1⟩; the remainder starts in the uncoupled |d₂⟩.
    pub preparation: f64,
}

impl Rb87Config {
    pub fn new(params: SystemParams) -> Self {
        Self {
            params,
            gamma: mhz(3.0),
            zeeman_shift: mhz(1.0),
            branching: Branching::rb87_d2(),
            repump_ratio: 0.5,
            preparation: 1.0,
        }
    }
}

/// g_F·m_F of each level.
fn rb87_gf_mf() -> [f64; 7] {
    [-0.5, 1.0, 4.0 / 3.0, 0.5, 2.0 / 3.0, 0.0, 0.0]
}

pub fn build_rb87_model(config: &Rb87Config) -> Result<MultiLevelModel> {
    let p = &config.params;
    p.validate()?;
    let gm = rb87_gf_mf();
    // Zeeman shift of each level relative to the cycle level of its manifold
    let reference = [gm[L1], gm[L2], gm[L3], gm[L2], gm[L3], gm[L2], gm[L1]];
    let zeeman: Vec<f64> = (0..7).map(|i| config.zeeman_shift * (gm[i] - reference[i])).collect();
    let d2 = -p.delta12;
    let d3 = -(p.delta12 + p.delta23);
    let detunings = vec![0.0, d2, d3, d2, d3, d2, 0.0];
    let mut decays = Vec::new();
    for (lower, w) in &config.branching.from_3 {
        decays.push(DecayChannel { upper: L3, lower: *lower, weight: *w });
    }
    for (lower, w) in &config.branching.from_e {
        decays.push(DecayChannel { upper: LE, lower: *lower, weight: *w });
    }
    if !(0.0..=1.0).contains(&config.preparation) {
        return Err(Error::InvalidParameter { name: "preparation".into(), reason: "must lie in [0, 1]".into() });
    }
    let mut initial = vec![(L1, config.preparation)];
    if config.preparation < 1.0 {
        initial.push((LD2, 1.0 - config.preparation));
    }
    let model = MultiLevelModel {
        levels: RB87_LEVELS.iter().map(|s| s.to_string()).collect(),
        detunings,
        zeeman,
        fock_cutoff: p.fock_cutoff,
        drives: vec![
            Drive { lower: L1, upper: L2, rabi: p.omega12 },
            Drive { lower: L2, upper: L3, rabi: p.omega23 },
            Drive { lower: LG, upper: LE, rabi: p.omega23 * config.repump_ratio },
        ],
        cavity: CavityCoupling { lower: L1, upper: L3, g: p.g },
        cavity_detuning: d3,
        kappa: p.kappa,
        gamma: config.gamma,
        decays,
        dephasing: vec![(L2, p.gamma_d)],
        counting: PhotonCounting::Cavity,
        terminal: vec![LD1, LD2],
        initial,
    };
    model.validate()?;
    Ok(model)
}

/// g = 0 copy that counts spontaneous photons ending on the F=1 levels
/// (|1⟩ and |d₂⟩). With no cavity coupling the cavity stays in vacuum, so
/// the Fock cutoff is lowered to 1 without changing the dynamics.
pub fn free_space_variant(model: &MultiLevelModel) -> MultiLevelModel {
    let mut m = model.clone();
    m.cavity.g = 0.0;
    m.fock_cutoff = 1;
    m.counting = PhotonCounting::Spontaneous(vec![L1, LD2]);
    m
}

impl MultiLevelModel {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_levels();
        let bad = |name: &str, reason: String| Err(Error::InvalidParameter { name: name.into(), reason });
        if self.detunings.len() != n || self.zeeman.len() != n {
            return bad("levels", "per-level vectors must match the level count".into());
        }
        let in_range = |l: usize| l < n;
        let mut uppers: BTreeMap<usize, f64> = BTreeMap::new();
        for d in &self.decays {
            if !in_range(d.upper) || !in_range(d.lower) || d.upper == d.lower {
                return bad("decays", format!("invalid channel {}→{}", d.upper, d.lower));
            }
            if !(d.weight >= 0.0) {
                return bad("decays", "weights must be nonnegative".into());
            }
            *uppers.entry(d.upper).or_default() += d.weight;
        }
        for (u, w) in uppers {
            if (w - 1.0).abs() > BRANCH_TOL {
                return bad("decays", format!("weights out of level {} sum to {w}", self.levels[u]));
            }
        }
        for t in &self.terminal {
            let touched = self.drives.iter().any(|d| d.lower == *t || d.upper == *t)
                || (self.cavity.g != 0.0 && (self.cavity.lower == *t || self.cavity.upper == *t))
                || self.decays.iter().any(|d| d.upper == *t);
            if touched {
                return bad("terminal", format!("level {} has outgoing coupling", self.levels[*t]));
            }
        }
        let p: f64 = self.initial.iter().map(|(_, p)| p).sum();
        if (p - 1.0).abs() > 1e-12 || self.initial.iter().any(|(l, p)| !in_range(*l) || *p < 0.0) {
            return bad("initial", "populations must be nonnegative and sum to 1".into());
        }
        if self.kappa < 0.0 || self.gamma < 0.0 || self.dephasing.iter().any(|(_, r)| *r < 0.0) {
            return bad("rates", "decay rates must be nonnegative".into());
        }
        Ok(())
    }

    pub fn space(&self) -> Result<HilbertSpace> {
        HilbertSpace::atom_cavity(self.n_levels(), self.fock_cutoff)
    }

    fn sigma(&self, space: &HilbertSpace, i: usize, j: usize) -> Result<Operator> {
        embed(&atomic_projector(i + 1, j + 1, self.n_levels())?, ATOM, space)
    }

    pub fn hamiltonian(&self) -> Result<Operator> {
        let space = self.space()?;
        let re = |x: f64| C64::new(x, 0.0);
        let a = embed(&annihilation_op(self.fock_cutoff)?, CAVITY, &space)?;
        let ad = a.dag();
        let mut h = (&ad * &a).scale_re(self.cavity_detuning);
        for i in 0..self.n_levels() {
            let e = self.detunings[i] + self.zeeman[i];
            if e != 0.0 {
                h = &h + &self.sigma(&space, i, i)?.scale(re(e));
            }
        }
        let c = self.cavity;
        let coupling = &(&ad * &self.sigma(&space, c.lower, c.upper)?) + &(&self.sigma(&space, c.upper, c.lower)? * &a);
        h = &h + &coupling.scale_re(c.g);
        for d in &self.drives {
            let x = &self.sigma(&space, d.lower, d.upper)? + &self.sigma(&space, d.upper, d.lower)?;
            h = &h + &x.scale_re(d.rabi / 2.0);
        }
        Ok(h)
    }

    /// Channels in order: spontaneous decays, cavity loss, dephasing.
    pub fn channels(&self) -> Result<Vec<JumpChannel>> {
        let space = self.space()?;
        let mut out = Vec::new();
        for d in &self.decays {
            let counted = matches!(&self.counting, PhotonCounting::Spontaneous(ls) if ls.contains(&d.lower));
            out.push(JumpChannel {
                name: format!("{}->{}", self.levels[d.upper], self.levels[d.lower]),
                op: self.sigma(&space, d.lower, d.upper)?.scale_re((self.gamma * d.weight).sqrt()).into_matrix(),
                counted,
            });
        }
        let a = embed(&annihilation_op(self.fock_cutoff)?, CAVITY, &space)?;
        out.push(JumpChannel {
            name: "cavity".into(),
            op: a.scale_re(self.kappa.sqrt()).into_matrix(),
            counted: self.counting == PhotonCounting::Cavity,
        });
        for (l, r) in &self.dephasing {
            out.push(JumpChannel {
                name: format!("dephasing {}", self.levels[*l]),
                op: self.sigma(&space, *l, *l)?.scale_re(r.sqrt()).into_matrix(),
                counted: false,
            });
        }
        Ok(out)
    }

    pub fn realize(&self) -> Result<JumpModel> {
        self.validate()?;
        let space = self.space()?;
        let initial = self
            .initial
            .iter()
            .map(|(l, p)| Ok((*p, unit_vector(space.total_dim(), space.index_of(&[*l, 0])?))))
            .collect::<Result<Vec<_>>>()?;
        JumpModel::new(
            self.hamiltonian()?.into_matrix(),
            self.channels()?,
            self.levels.clone(),
            self.fock_cutoff,
            self.terminal.clone(),
            initial,
        )
    }

    /// Projection onto the listed levels: the Hamiltonian block and every
    /// channel that acts within the subset, dropping channels that vanish.
    pub fn restrict(&self, keep_levels: &[usize]) -> Result<(Operator, Vec<Operator>)> {
        let nf = self.fock_cutoff + 1;
        let idx: Vec<usize> = keep_levels.iter().flat_map(|l| (0..nf).map(move |n| l * nf + n)).collect();
        let sub = HilbertSpace::atom_cavity(keep_levels.len(), self.fock_cutoff)?;
        let h = Operator::new(sub.clone(), self.hamiltonian()?.submatrix(&idx))?;
        let mut ops = Vec::new();
        for ch in self.channels()? {
            let m = DMatrix::from_fn(idx.len(), idx.len(), |i, j| ch.op[(idx[i], idx[j])]);
            if m.iter().any(|z| z.norm() > 0.0) {
                ops.push(Operator::new(sub.clone(), m)?);
            }
        }
        Ok((h, ops))
    }
}

fn unit_vector(d: usize, k: usize) -> DVector<C64> {
    let mut v = DVector::zeros(d);
    v[k] = C64::new(1.0, 0.0);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpChannel {
    pub name: String,
    pub op: DMatrix<C64>,
    pub counted: bool,
}

/// A pure-state unravelling ready for trajectories.
#[derive(Debug, Clone)]
pub struct JumpModel {
    hamiltonian: DMatrix<C64>,
    channels: Vec<JumpChannel>,
    level_names: Vec<String>,
    fock_cutoff: usize,
    terminal: Vec<usize>,
    initial: Vec<(f64, DVector<C64>)>,
    h_eff: DMatrix<C64>,
}

impl JumpModel {
    pub fn new(
        hamiltonian: DMatrix<C64>,
        channels: Vec<JumpChannel>,
        level_names: Vec<String>,
        fock_cutoff: usize,
        terminal: Vec<usize>,
        initial: Vec<(f64, DVector<C64>)>,
    ) -> Result<Self> {
        let d = hamiltonian.nrows();
        if d != level_names.len() * (fock_cutoff + 1) || channels.iter().any(|c| c.op.shape() != (d, d)) {
            return Err(Error::Dimension("jump model operators do not match the level/cutoff layout".into()));
        }
        if initial.is_empty() || initial.iter().any(|(_, v)| v.len() != d) {
            return Err(Error::Dimension("initial states must match the space".into()));
        }
        let mut h_eff = hamiltonian.clone();
        for c in &channels {
            h_eff -= (c.op.adjoint() * &c.op) * C64::new(0.0, 1.0);
        }
        Ok(Self { hamiltonian, channels, level_names, fock_cutoff, terminal, initial, h_eff })
    }

    /// Three-level model from `model-builder` with cavity photons counted,
    /// starting in |1,0⟩.
    pub fn from_realization(m: &ModelRealization) -> Result<Self> {
        let names = ["cavity-decay-13", "decay-23", "cavity", "dephasing"];
        let channels = m
            .collapse_ops
            .iter()
            .enumerate()
            .map(|(k, c)| JumpChannel { name: names.get(k).unwrap_or(&"extra").to_string(), op: c.matrix().clone(), counted: k == 2 })
            .collect();
        let d = m.space().total_dim();
        JumpModel::new(
            m.hamiltonian.matrix().clone(),
            channels,
            vec!["1".into(), "2".into(), "3".into()],
            m.params.fock_cutoff,
            vec![],
            vec![(1.0, unit_vector(d, 0))],
        )
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.nrows()
    }

    pub fn channels(&self) -> &[JumpChannel] {
        &self.channels
    }

    pub fn hamiltonian(&self) -> &DMatrix<C64> {
        &self.hamiltonian
    }

    pub fn level_names(&self) -> &[String] {
        &self.level_names
    }

    fn level_populations(&self, psi: &DVector<C64>) -> Vec<f64> {
        let nf = self.fock_cutoff + 1;
        (0..self.level_names.len()).map(|l| (0..nf).map(|n| psi[l * nf + n].norm_sqr()).sum()).collect()
    }

    /// Whether the atom sits entirely in the uncoupled levels.
    fn parked(&self, psi: &DVector<C64>) -> bool {
        if self.terminal.is_empty() {
            return false;
        }
        let pops = self.level_populations(psi);
        let inside: f64 = self.terminal.iter().map(|l| pops[*l]).sum();
        inside >= psi.norm_squared() * (1.0 - 1e-12)
    }

    /// Terminal when the state is parked and no jump can occur any more. A
    /// parked atom may still hold a cavity photon that leaks out.
    fn terminal_level(&self, psi: &DVector<C64>) -> Option<usize> {
        if !self.parked(psi) {
            return None;
        }
        let n2 = psi.norm_squared();
        let pops = self.level_populations(psi);
        let rate: f64 = self.channels.iter().map(|c| (&c.op * psi).norm_squared()).sum();
        if rate > 1e-20 * n2 {
            return None;
        }
        self.terminal.iter().copied().max_by(|a, b| pops[*a].total_cmp(&pops[*b]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub channel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    /// Master seed; the trajectory draws from stream `stream` of it.
    pub seed: u64,
    pub stream: u64,
    pub jump_events: Vec<JumpEvent>,
    /// Jumps on counted channels (cavity output, or the spontaneous class in
    /// the free-space variant).
    pub photon_count: usize,
    /// Level name, or "active" if the trajectory has not reached an uncoupled level.
    pub terminal_state: String,
}

impl TrajectoryResult {
    pub fn counted_times<'a>(&'a self, model: &'a JumpModel) -> impl Iterator<Item = f64> + 'a {
        self.jump_events.iter().filter(move |e| model.channels[e.channel].counted).map(|e| e.time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOptions {
    pub t_max: f64,
    /// Largest coarse step; jump times resolve to dt/128 with dt ≤ dt_max.
    pub dt_max: f64,
}

/// exp(−iH_eff 2ᵏτ) for k = 0..=DESCENT.
pub struct Propagators {
    tau: f64,
    total_ticks: u64,
    steps: Vec<DMatrix<C64>>,
}

impl Propagators {
    pub fn new(model: &JumpModel, opts: &TrajectoryOptions) -> Result<Self> {
        if !(opts.t_max > 0.0) || !opts.t_max.is_finite() {
            return Err(Error::InvalidParameter { name: "t_max".into(), reason: "must be positive".into() });
        }
        if !(opts.dt_max > 0.0) {
            return Err(Error::InvalidParameter { name: "dt_max".into(), reason: "must be positive".into() });
        }
        let n_steps = (opts.t_max / opts.dt_max).ceil().max(1.0) as u64;
        let total_ticks = n_steps * TICKS_PER_STEP;
        let tau = opts.t_max / total_ticks as f64;
        let gen = model.h_eff.map(|z| z * C64::new(0.0, -1.0));
        let steps = (0..=DESCENT).map(|k| (&gen * C64::new(tau * (1u64 << k) as f64, 0.0)).exp()).collect();
        Ok(Self { tau, total_ticks, steps })
    }

    pub fn tick(&self) -> f64 {
        self.tau
    }
}

struct Walker<'a> {
    props: &'a Propagators,
    psi: DVector<C64>,
    buf: DVector<C64>,
    tick: u64,
    threshold: f64,
}

impl Walker<'_> {
    fn trial(&mut self, k: usize) -> f64 {
        self.buf.gemv(C64::new(1.0, 0.0), &self.props.steps[k], &self.psi, C64::new(0.0, 0.0));
        self.buf.norm_squared()
    }

    fn accept(&mut self, k: usize) -> Result<()> {
        std::mem::swap(&mut self.psi, &mut self.buf);
        self.tick += 1 << k;
        let n2 = self.psi.norm_squared();
        if !(n2 > 1e-300) || !n2.is_finite() {
            return Err(Error::StepSizeFailure { t: self.tick as f64 * self.props.tau });
        }
        Ok(())
    }

    /// Advance by up to 2ᵏ ticks; returns true if the norm crossed the
    /// threshold, leaving the clock at the jump tick.
    fn advance(&mut self, k: usize) -> Result<bool> {
        if self.trial(k) > self.threshold {
            self.accept(k)?;
            return Ok(false);
        }
        for j in (0..k).rev() {
            if self.trial(j) > self.threshold {
                self.accept(j)?;
            }
        }
        self.trial(0);
        self.accept(0)?;
        Ok(true)
    }
}

fn draw_threshold(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let r: f64 = rng.random();
        if r > 0.0 {
            return r;
        }
    }
}

fn trajectory_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn pick_initial(model: &JumpModel, seed: u64, stream: u64) -> DVector<C64> {
    if model.initial.len() == 1 {
        return model.initial[0].1.clone();
    }
    let mut rng = trajectory_rng(seed ^ INITIAL_SALT, stream);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (p, v) in &model.initial {
        acc += p;
        if u < acc {
            return v.clone();
        }
    }
    model.initial.last().expect("nonempty").1.clone()
}

/// One trajectory, recording the normalized state at each of `sample_times`
/// (rounded to the tick grid, ascending).
pub fn run_trajectory_sampled(
    model: &JumpModel,
    props: &Propagators,
    seed: u64,
    stream: u64,
    sample_times: &[f64],
) -> Result<(TrajectoryResult, Vec<DVector<C64>>)> {
    let mut rng = trajectory_rng(seed, stream);
    let sample_ticks: Vec<u64> =
        sample_times.iter().map(|t| ((t / props.tau).round().max(0.0) as u64).min(props.total_ticks)).collect();
    if sample_ticks.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter { name: "sample_times".into(), reason: "must be ascending".into() });
    }
    let psi = pick_initial(model, seed, stream);
    let d = psi.len();
    let mut w = Walker { props, psi, buf: DVector::zeros(d), tick: 0, threshold: draw_threshold(&mut rng) };
    let mut events = Vec::new();
    let mut samples = Vec::with_capacity(sample_ticks.len());
    let mut next_sample = 0;
    let mut parked = model.parked(&w.psi);
    let mut terminal = model.terminal_level(&w.psi);
    let mut weights = vec![0.0; model.channels.len()];

    loop {
        while next_sample < sample_ticks.len() && sample_ticks[next_sample] <= w.tick {
            samples.push(&w.psi / C64::new(w.psi.norm(), 0.0));
            next_sample += 1;
        }
        if w.tick >= props.total_ticks || terminal.is_some() {
            break;
        }
        let stop = sample_ticks.get(next_sample).copied().unwrap_or(props.total_ticks).min(props.total_ticks);
        while w.tick < stop {
            let remaining = stop - w.tick;
            let k = (63 - remaining.leading_zeros() as usize).min(DESCENT);
            if !w.advance(k)? {
                if parked {
                    terminal = model.terminal_level(&w.psi);
                    if terminal.is_some() {
                        break;
                    }
                }
                continue;
            }
            let mut total = 0.0;
            for (wt, ch) in weights.iter_mut().zip(&model.channels) {
                *wt = (&ch.op * &w.psi).norm_squared();
                total += *wt;
            }
            if !(total > 0.0) {
                return Err(Error::StepSizeFailure { t: w.tick as f64 * props.tau });
            }
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = weights.len() - 1;
            for (k, wt) in weights.iter().enumerate() {
                acc += wt;
                if u < acc && *wt > 0.0 {
                    chosen = k;
                    break;
                }
            }
            let next = &model.channels[chosen].op * &w.psi;
            let norm = next.norm();
            w.psi = next / C64::new(norm, 0.0);
            w.threshold = draw_threshold(&mut rng);
            events.push(JumpEvent { time: w.tick as f64 * props.tau, channel: chosen });
            parked = model.parked(&w.psi);
            terminal = model.terminal_level(&w.psi);
            if terminal.is_some() {
                break;
            }
        }
    }
    // an absorbed state is stationary up to a phase
    while samples.len() < sample_ticks.len() {
        samples.push(&w.psi / C64::new(w.psi.norm(), 0.0));
    }
    let photon_count = events.iter().filter(|e| model.channels[e.channel].counted).count();
    let terminal_state = terminal.map_or_else(|| "active".to_string(), |l| model.level_names[l].clone());
    Ok((TrajectoryResult { seed, stream, jump_events: events, photon_count, terminal_state }, samples))
}

pub fn run_trajectory(model: &JumpModel, opts: &TrajectoryOptions, seed: u64, stream: u64) -> Result<TrajectoryResult> {
    let props = Propagators::new(model, opts)?;
    Ok(run_trajectory_sampled(model, &props, seed, stream, &[])?.0)
}

/// Ensemble means and standard errors of Hermitian observables at fixed times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleAverage {
    pub times: Vec<f64>,
    /// mean[observable][time]
    pub mean: Vec<Vec<f64>>,
    pub std_error: Vec<Vec<f64>>,
    pub n_trajectories: usize,
}

pub fn ensemble_expectations(
    model: &JumpModel,
    opts: &TrajectoryOptions,
    observables: &[DMatrix<C64>],
    times: &[f64],
    n_traj: usize,
    seed: u64,
) -> Result<EnsembleAverage> {
    let props = Propagators::new(model, opts)?;
    let per: Vec<Vec<f64>> = (0..n_traj as u64)
        .into_par_iter()
        .map(|s| {
            let (_, states) = run_trajectory_sampled(model, &props, seed, s, times)?;
            let mut v = Vec::with_capacity(observables.len() * times.len());
            for o in observables {
                for psi in &states {
                    v.push(psi.dotc(&(o * psi)).re);
                }
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let nt = times.len();
    let n = n_traj as f64;
    let mut mean = vec![vec![0.0; nt]; observables.len()];
    let mut std_error = vec![vec![0.0; nt]; observables.len()];
    for (o, (m_row, e_row)) in mean.iter_mut().zip(std_error.iter_mut()).enumerate() {
        for t in 0..nt {
            let xs = per.iter().map(|v| v[o * nt + t]);
            let m = xs.clone().sum::<f64>() / n;
            let var = if n_traj > 1 { xs.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            m_row[t] = m;
            e_row[t] = (var / n).sqrt();
        }
    }
    Ok(EnsembleAverage { times: times.to_vec(), mean, std_error, n_trajectories: n_traj })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsOptions {
    pub n_traj: usize,
    pub trajectory: TrajectoryOptions,
    pub efficiency: f64,
    pub seed: u64,
    /// Width of the count-rate bins.
    pub bin_width: f64,
    /// Window of the exponential fit to the count rate.
    pub fit_start: f64,
    pub fit_end: f64,
}

impl StatsOptions {
    pub fn new(n_traj: usize, t_max: f64, efficiency: f64, seed: u64) -> Self {
        Self {
            n_traj,
            trajectory: TrajectoryOptions { t_max, dt_max: 0.5 },
            efficiency,
            seed,
            bin_width: 1.0,
            fit_start: (0.1 * t_max).min(5.0),
            fit_end: t_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonStats {
    pub n_trajectories: usize,
    pub detected_histogram: BTreeMap<usize, usize>,
    pub mean_detected: f64,
    pub mean_produced: f64,
    pub detected_std_error: f64,
    pub produced_std_error: f64,
    /// Detected photons before `fit_start` plus the fitted tail integrated to ∞;
    /// NaN when the rate fit fails.
    pub extrapolated_total: f64,
    pub efficiency: f64,
    /// Bin centres and expected detected rate (efficiency × produced rate, per µs).
    pub rate_times: Vec<f64>,
    pub rates: Vec<f64>,
    pub rate_fit: Option<ExpDecayFit>,
    /// Fraction of trajectories not yet in an uncoupled level at t_max.
    pub active_fraction: f64,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub stream: u64,
    pub jumps: Vec<(f64, usize)>,
    pub photon_count: usize,
    pub detected_count: usize,
    pub terminal_state: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

pub struct Ensemble {
    pub stats: PhotonStats,
    pub records: Vec<TrajectoryRecord>,
    pub channel_names: Vec<String>,
}

fn thin(n: usize, efficiency: f64, seed: u64, stream: u64) -> usize {
    if efficiency >= 1.0 {
        return n;
    }
    let mut rng = trajectory_rng(seed ^ THINNING_SALT, stream);
    (0..n).filter(|_| rng.random::<f64>() < efficiency).count()
}

pub fn simulate_photon_statistics(model: &JumpModel, opts: &StatsOptions) -> Result<Ensemble> {
    if opts.n_traj == 0 {
        return Err(Error::InvalidParameter { name: "n_traj".into(), reason: "must be at least 1".into() });
    }
    if !(0.0..=1.0).contains(&opts.efficiency) {
        return Err(Error::InvalidParameter { name: "efficiency".into(), reason: "must lie in [0, 1]".into() });
    }
    if !(opts.bin_width > 0.0) {
        return Err(Error::InvalidParameter { name: "bin_width".into(), reason: "must be positive".into() });
    }
    let props = Propagators::new(model, &opts.trajectory)?;
    let seed = opts.seed;
    let records: Vec<TrajectoryRecord> = (0..opts.n_traj as u64)
        .into_par_iter()
        .map(|s| match run_trajectory_sampled(model, &props, seed, s, &[]) {
            Ok((r, _)) => TrajectoryRecord {
                seed,
                stream: s,
                jumps: r.jump_events.iter().map(|e| (e.time, e.channel)).collect(),
                photon_count: r.photon_count,
                detected_count: thin(r.photon_count, opts.efficiency, seed, s),
                terminal_state: r.terminal_state,
                failure: None,
            },
            Err(e) => TrajectoryRecord {
                seed,
                stream: s,
                jumps: vec![],
                photon_count: 0,
                detected_count: 0,
                terminal_state: "failed".into(),
                failure: Some(e.to_string()),
            },
        })
        .collect();
    let ok: Vec<&TrajectoryRecord> = records.iter().filter(|r| r.failure.is_none()).collect();
    let failed = records.len() - ok.len();
    let n = ok.len();
    if n == 0 {
        return Err(Error::NonConvergence("every trajectory failed".into()));
    }
    let nf = n as f64;
    let mut detected_histogram = BTreeMap::new();
    for r in &ok {
        *detected_histogram.entry(r.detected_count).or_insert(0) += 1;
    }
    let mean_sem = |xs: &dyn Fn(&TrajectoryRecord) -> f64| {
        let m = ok.iter().map(|r| xs(r)).sum::<f64>() / nf;
        let v = if n > 1 { ok.iter().map(|r| (xs(r) - m).powi(2)).sum::<f64>() / (nf - 1.0) } else { 0.0 };
        (m, (v / nf).sqrt())
    };
    let (mean_detected, detected_std_error) = mean_sem(&|r| r.detected_count as f64);
    let (mean_produced, produced_std_error) = mean_sem(&|r| r.photon_count as f64);

    let t_max = opts.trajectory.t_max;
    let n_bins = (t_max / opts.bin_width).ceil() as usize;
    let mut counts = vec![0u64; n_bins];
    let mut early = 0u64;
    for r in &ok {
        for &(t, ch) in &r.jumps {
            if model.channels[ch].counted {
                counts[((t / opts.bin_width) as usize).min(n_bins - 1)] += 1;
                if t < opts.fit_start {
                    early += 1;
                }
            }
        }
    }
    let rate_times: Vec<f64> = (0..n_bins).map(|b| (b as f64 + 0.5) * opts.bin_width).collect();
    let rates: Vec<f64> = (0..n_bins)
        .map(|b| {
            let width = (opts.bin_width).min(t_max - b as f64 * opts.bin_width);
            opts.efficiency * counts[b] as f64 / (nf * width)
        })
        .collect();
    let (ft, fr): (Vec<f64>, Vec<f64>) = rate_times
        .iter()
        .zip(&rates)
        .filter(|(t, _)| **t >= opts.fit_start && **t <= opts.fit_end)
        .map(|(t, r)| (*t, *r))
        .unzip();
    let rate_fit = fit_exponential_decay(&ft, &fr).ok();
    let extrapolated_total = match &rate_fit {
        Some(f) if !f.non_decaying => {
            opts.efficiency * early as f64 / nf + f.initial_rate / f.decay_constant * (-f.decay_constant * opts.fit_start).exp()
        }
        _ => f64::NAN,
    };
    let active_fraction = ok.iter().filter(|r| r.terminal_state == "active").count() as f64 / nf;
    let stats = PhotonStats {
        n_trajectories: n,
        detected_histogram,
        mean_detected,
        mean_produced,
        detected_std_error,
        produced_std_error,
        extrapolated_total,
        efficiency: opts.efficiency,
        rate_times,
        rates,
        rate_fit,
        active_fraction,
        failed,
    };
    Ok(Ensemble { stats, records, channel_names: model.channels.iter().map(|c| c.name.clone()).collect() })
}

/// One JSON object per line.
pub fn write_records<W: Write>(mut w: W, records: &[TrajectoryRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records(text: &str) -> Result<Vec<TrajectoryRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::InvalidParameter { name: "record".into(), reason: e.to_string() }))
        .collect()
}
