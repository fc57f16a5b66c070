//! Parameter sweeps over the steady-state and Monte-Carlo solvers.
//!
//! Grid values are stored row-major with the first axis slowest. Failed
//! points hold NaN and carry the error text; nothing is silently zeroed.

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemParams;
use crate::montecarlo::{build_rb87_model, free_space_variant, simulate_photon_statistics, Rb87Config, StatsOptions};
use crate::observables::{steady_observables, SteadyObservables};

/// Relative change between cutoff and cutoff+2 above which a point is flagged.
pub const TRUNCATION_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Param {
    G,
    Kappa,
    Gamma13,
    Gamma23,
    /// γ₁₃ + γ₂₃, scaled with the split ratio held fixed.
    Gamma33,
    GammaD,
    Omega12,
    Omega23,
    Delta12,
    Delta23,
}

impl Param {
    pub const ALL: [Param; 10] = [
        Param::G,
        Param::Kappa,
        Param::Gamma13,
        Param::Gamma23,
        Param::Gamma33,
        Param::GammaD,
        Param::Omega12,
        Param::Omega23,
        Param::Delta12,
        Param::Delta23,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::G => "g",
            Param::Kappa => "kappa",
            Param::Gamma13 => "gamma13",
            Param::Gamma23 => "gamma23",
            Param::Gamma33 => "gamma33",
            Param::GammaD => "gamma_d",
            Param::Omega12 => "omega12",
            Param::Omega23 => "omega23",
            Param::Delta12 => "delta12",
            Param::Delta23 => "delta23",
        }
    }

    pub fn get(self, p: &SystemParams) -> f64 {
        match self {
            Param::G => p.g,
            Param::Kappa => p.kappa,
            Param::Gamma13 => p.gamma13,
            Param::Gamma23 => p.gamma23,
            Param::Gamma33 => p.gamma33(),
            Param::GammaD => p.gamma_d,
            Param::Omega12 => p.omega12,
            Param::Omega23 => p.omega23,
            Param::Delta12 => p.delta12,
            Param::Delta23 => p.delta23,
        }
    }

    pub fn set(self, p: &mut SystemParams, v: f64) {
        match self {
            Param::G => p.g = v,
            Param::Kappa => p.kappa = v,
            Param::Gamma13 => p.gamma13 = v,
            Param::Gamma23 => p.gamma23 = v,
            Param::Gamma33 => {
                let total = p.gamma33();
                let frac = if total > 0.0 { p.gamma13 / total } else { 0.5 };
                p.gamma13 = v * frac;
                p.gamma23 = v * (1.0 - frac);
            }
            Param::GammaD => p.gamma_d = v,
            Param::Omega12 => p.omega12 = v,
            Param::Omega23 => p.omega23 = v,
            Param::Delta12 => p.delta12 = v,
            Param::Delta23 => p.delta23 = v,
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Param::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidScan(format!("unknown parameter `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observable {
    EmissionRate,
    G2Zero,
    PhotonNumber,
    Sigma33,
    FigureOfMerit,
    /// Monte-Carlo engine only.
    ExtrapolatedPhotons,
    /// Monte-Carlo engine only: mean detected photons within t_max.
    DetectedPhotons,
}

impl Observable {
    pub const ALL: [Observable; 7] = [
        Observable::EmissionRate,
        Observable::G2Zero,
        Observable::PhotonNumber,
        Observable::Sigma33,
        Observable::FigureOfMerit,
        Observable::ExtrapolatedPhotons,
        Observable::DetectedPhotons,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Observable::EmissionRate => "emission_rate",
            Observable::G2Zero => "g2_zero",
            Observable::PhotonNumber => "photon_number",
            Observable::Sigma33 => "sigma33",
            Observable::FigureOfMerit => "figure_of_merit",
            Observable::ExtrapolatedPhotons => "extrapolated_photons",
            Observable::DetectedPhotons => "detected_photons",
        }
    }

    fn steady(self) -> bool {
        !matches!(self, Observable::ExtrapolatedPhotons | Observable::DetectedPhotons)
    }

    fn pick(self, s: &SteadyObservables) -> Result<f64> {
        let v = match self {
            Observable::EmissionRate => s.emission_rate,
            Observable::G2Zero => s.g2_zero,
            Observable::PhotonNumber => s.photon_number,
            Observable::Sigma33 => s.sigma33,
            Observable::FigureOfMerit => s.figure_of_merit,
            _ => unreachable!("checked by validate"),
        };
        if v.is_nan() {
            return Err(Error::ZeroPhoton(s.photon_number));
        }
        Ok(v)
    }
}

impl FromStr for Observable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Observable::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::InvalidScan(format!("unknown observable `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEngine {
    /// 7-level settings; `params` is overwritten per grid point.
    pub rb87: Rb87Config,
    pub stats: StatsOptions,
    pub free_space: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Engine {
    SteadyState,
    MonteCarlo(Box<MonteCarloEngine>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanAxis {
    pub param: Param,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub base: SystemParams,
    pub axes: Vec<ScanAxis>,
    pub observable: Observable,
    pub engine: Engine,
    /// Detection efficiency for `emission_rate`.
    pub efficiency: f64,
    /// Re-solve at cutoff + 2 and flag points whose value moves by more than 1e-4.
    pub truncation_check: bool,
}

impl ScanSpec {
    pub fn steady(base: SystemParams, axes: Vec<ScanAxis>, observable: Observable) -> Self {
        Self { base, axes, observable, engine: Engine::SteadyState, efficiency: 1.0, truncation_check: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() || self.axes.len() > 2 {
            return Err(Error::InvalidScan(format!("need 1 or 2 axes, got {}", self.axes.len())));
        }
        if self.axes.len() == 2 && self.axes[0].param == self.axes[1].param {
            return Err(Error::InvalidScan("axes must scan different parameters".into()));
        }
        for ax in &self.axes {
            if ax.values.is_empty() {
                return Err(Error::InvalidScan(format!("axis {} has an empty grid", ax.param)));
            }
            if ax.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidScan(format!("axis {} has non-finite values", ax.param)));
            }
            let up = ax.values.windows(2).all(|w| w[1] > w[0]);
            let down = ax.values.windows(2).all(|w| w[1] < w[0]);
            if !(up || down) {
                return Err(Error::InvalidScan(format!("axis {} is not strictly monotone", ax.param)));
            }
        }
        match (&self.engine, self.observable.steady()) {
            (Engine::SteadyState, false) => {
                return Err(Error::InvalidScan(format!("{} needs the montecarlo engine", self.observable.name())))
            }
            (Engine::MonteCarlo(_), true) => {
                return Err(Error::InvalidScan(format!("{} needs the steady_state engine", self.observable.name())))
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::InvalidScan("efficiency must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.values.len()).collect()
    }

    pub fn n_points(&self) -> usize {
        self.shape().iter().product()
    }

    /// Grid indices of the flat point `k`.
    pub fn indices(&self, k: usize) -> Vec<usize> {
        let shape = self.shape();
        let mut idx = vec![0; shape.len()];
        let mut rem = k;
        for d in (0..shape.len()).rev() {
            idx[d] = rem % shape[d];
            rem /= shape[d];
        }
        idx
    }

    pub fn params_at(&self, k: usize) -> SystemParams {
        let mut p = self.base;
        for (ax, i) in self.axes.iter().zip(self.indices(k)) {
            ax.param.set(&mut p, ax.values[i]);
        }
        p
    }

    /// Seed of a Monte-Carlo point, derived from its coordinates so that it
    /// does not depend on axis order.
    fn point_seed(&self, master: u64, k: usize) -> u64 {
        let mut coords: Vec<(Param, u64)> =
            self.axes.iter().zip(self.indices(k)).map(|(ax, i)| (ax.param, ax.values[i].to_bits())).collect();
        coords.sort();
        coords.iter().fold(splitmix(master), |h, (p, bits)| splitmix(h ^ splitmix(*p as u64 ^ bits.rotate_left(17))))
    }
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDiagnostics {
    pub converged: bool,
    /// ‖Lρ‖/‖L‖ for steady-state points; standard error for Monte-Carlo points.
    pub residual: f64,
    pub truncation_flag: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub spec: ScanSpec,
    pub values: Vec<f64>,
    pub diagnostics: Vec<PointDiagnostics>,
}

impl ScanResult {
    pub fn shape(&self) -> Vec<usize> {
        self.spec.shape()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        let shape = self.shape();
        let k = idx.iter().zip(&shape).fold(0, |acc, (i, n)| acc * n + i);
        self.values[k]
    }

    pub fn n_converged(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.converged).count()
    }

    pub fn n_failed(&self) -> usize {
        self.diagnostics.len() - self.n_converged()
    }

    pub fn n_truncation_flagged(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.truncation_flag == Some(true)).count()
    }

    /// Same data with the two axes swapped.
    pub fn transposed(&self) -> Result<ScanResult> {
        if self.spec.axes.len() != 2 {
            return Err(Error::InvalidScan("transpose needs two axes".into()));
        }
        let (n0, n1) = (self.spec.axes[0].values.len(), self.spec.axes[1].values.len());
        let mut spec = self.spec.clone();
        spec.axes.swap(0, 1);
        let mut values = Vec::with_capacity(self.values.len());
        let mut diagnostics = Vec::with_capacity(self.values.len());
        for j in 0..n1 {
            for i in 0..n0 {
                values.push(self.values[i * n1 + j]);
                diagnostics.push(self.diagnostics[i * n1 + j].clone());
            }
        }
        Ok(ScanResult { spec, values, diagnostics })
    }

    /// Long-format rows: axis values in axis order, then value and diagnostics.
    pub fn rows(&self) -> impl Iterator<Item = (Vec<f64>, f64, &PointDiagnostics)> + '_ {
        (0..self.values.len()).map(move |k| {
            let idx = self.spec.indices(k);
            let coords = self.spec.axes.iter().zip(&idx).map(|(a, i)| a.values[*i]).collect();
            (coords, self.values[k], &self.diagnostics[k])
        })
    }
}

fn steady_point(spec: &ScanSpec, p: &SystemParams) -> (f64, PointDiagnostics) {
    let fail = |e: Error| {
        (f64::NAN, PointDiagnostics { converged: false, residual: f64::NAN, truncation_flag: None, error: Some(e.to_string()) })
    };
    let s = match steady_observables(p, spec.efficiency) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let v = match spec.observable.pick(&s) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    let truncation_flag = spec.truncation_check.then(|| {
        let wider = SystemParams { fock_cutoff: p.fock_cutoff + 2, ..*p };
        match steady_observables(&wider, spec.efficiency).and_then(|s| spec.observable.pick(&s)) {
            Ok(w) => relative_change(v, w) > TRUNCATION_TOL,
            Err(_) => true,
        }
    });
    (v, PointDiagnostics { converged: true, residual: s.residual, truncation_flag, error: None })
}

fn montecarlo_point(spec: &ScanSpec, mc: &MonteCarloEngine, p: &SystemParams, seed: u64) -> (f64, PointDiagnostics) {
    let run = || -> Result<(f64, f64)> {
        let mut cfg = mc.rb87.clone();
        cfg.params = *p;
        let mut model = build_rb87_model(&cfg)?;
        if mc.free_space {
            model = free_space_variant(&model);
        }
        let jm = model.realize()?;
        let mut opts = mc.stats;
        opts.seed = seed;
        let e = simulate_photon_statistics(&jm, &opts)?;
        match spec.observable {
            Observable::DetectedPhotons => Ok((e.stats.mean_detected, e.stats.detected_std_error)),
            _ if e.stats.extrapolated_total.is_finite() => Ok((e.stats.extrapolated_total, e.stats.detected_std_error)),
            _ => Err(Error::FitFailure("count-rate fit failed".into())),
        }
    };
    match run() {
        Ok((v, se)) => (v, PointDiagnostics { converged: true, residual: se, truncation_flag: None, error: None }),
        Err(e) => {
            (f64::NAN, PointDiagnostics { converged: false, residual: f64::NAN, truncation_flag: None, error: Some(e.to_string()) })
        }
    }
}

pub fn run_scan(spec: &ScanSpec) -> Result<ScanResult> {
    spec.validate()?;
    let points: Vec<(f64, PointDiagnostics)> = (0..spec.n_points())
        .into_par_iter()
        .map(|k| {
            let p = spec.params_at(k);
            match &spec.engine {
                Engine::SteadyState => steady_point(spec, &p),
                Engine::MonteCarlo(mc) => montecarlo_point(spec, mc, &p, spec.point_seed(mc.stats.seed, k)),
            }
        })
        .collect();
    let (values, diagnostics) = points.into_iter().unzip();
    Ok(ScanResult { spec: spec.clone(), values, diagnostics })
}

fn relative_change(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub cutoff: usize,
    pub value: f64,
    pub value_wider: f64,
    pub relative_change: f64,
    pub flagged: bool,
}

/// Re-solve `observable` at cutoff and cutoff + 2.
pub fn truncation_check(params: &SystemParams, observable: Observable, efficiency: f64) -> Result<TruncationReport> {
    if !observable.steady() {
        return Err(Error::InvalidScan(format!("{} is not a steady-state observable", observable.name())));
    }
    // without drives nothing leaves the vacuum sector; the steady state is not
    // unique but no Fock level above zero is ever touched
    if params.omega12 == 0.0 && params.omega23 == 0.0 {
        return Ok(TruncationReport { cutoff: params.fock_cutoff, value: 0.0, value_wider: 0.0, relative_change: 0.0, flagged: false });
    }
    let wider = SystemParams { fock_cutoff: params.fock_cutoff + 2, ..*params };
    let pick =|p: &SystemParams| -> Result<f64> {
        let s = steady_observables(p, efficiency)?;
        match observable.pick(&s) {
            Err(Error::ZeroPhoton(_)) => Ok(0.0),
            r => r,
        }
    };
    let (value, value_wider) = (pick(params)?, pick(&wider)?);
    let relative_change = relative_change(value, value_wider);
    Ok(TruncationReport { cutoff: params.fock_cutoff, value, value_wider, relative_change, flagged: relative_change > TRUNCATION_TOL })
}

/// One-excitation resonance loci: for each Δ₂₃ the three Δ₁₂ values where
/// the block {|1,1⟩, |2,0⟩, |3,0⟩} has an eigenvalue at the energy of |1,0⟩.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenCurves {
    pub delta23: Vec<f64>,
    /// branches[k][i], ascending in k.
    pub branches: [Vec<f64>; 3],
}

impl EigenCurves {
    /// Smallest |Δ₁₂ − branch| at grid row `i`.
    pub fn distance(&self, i: usize, delta12: f64) -> f64 {
        self.branches.iter().map(|b| (b[i] - delta12).abs()).fold(f64::INFINITY, f64::min)
    }
}

pub fn overlay_eigenenergies(params: &SystemParams, delta23: &[f64]) -> EigenCurves {
    let mut branches = [Vec::new(), Vec::new(), Vec::new()];
    for &d23 in delta23 {
        // H₁ = −Δ₁₂·I + M(Δ₂₃), so the resonance condition is Δ₁₂ ∈ spec M
        let m = Matrix3::new(-d23, 0.0, params.g, 0.0, 0.0, params.omega23 / 2.0, params.g, params.omega23 / 2.0, -d23);
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for k in 0..3 {
            branches[k].push(ev[k]);
        }
    }
    EigenCurves { delta23: delta23.to_vec(), branches }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Grid indices along axis 0 and axis 1.
    pub i: usize,
    pub j: usize,
    pub x0: f64,
    pub x1: f64,
    pub value: f64,
}

fn grid2(r: &ScanResult) -> Result<(usize, usize)> {
    match r.shape()[..] {
        [a, b] => Ok((a, b)),
        _ => Err(Error::InvalidScan("peak extraction needs a 2D scan".into())),
    }
}

fn global_max(r: &ScanResult) -> f64 {
    r.values.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max)
}

/// Strict local maxima over the 8-neighbourhood above `threshold_frac` × global max.
pub fn find_peaks_2d(r: &ScanResult, threshold_frac: f64) -> Result<Vec<Peak>> {
    let (n0, n1) = grid2(r)?;
    let floor = threshold_frac * global_max(r);
    let mut out = Vec::new();
    for i in 0..n0 {
        for j in 0..n1 {
            let v = r.values[i * n1 + j];
            if !(v >= floor) || !v.is_finite() {
                continue;
            }
            let mut is_max = true;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if (di, dj) == (0, 0) || a < 0 || b < 0 || a >= n0 as i64 || b >= n1 as i64 {
                        continue;
                    }
                    if r.values[a as usize * n1 + b as usize] >= v {
                        is_max = false;
                    }
                }
            }
            if is_max {
                out.push(Peak { i, j, x0: r.spec.axes[0].values[i], x1: r.spec.axes[1].values[j], value: v });
            }
        }
    }
    Ok(out)
}

/// Local maxima along `axis` within each line of the other axis, above
/// `threshold_frac` × global max.
pub fn ridge_peaks(r: &ScanResult, axis: usize, threshold_frac: f64) -> Result<Vec<Peak>> {
    let (n0, n1) = grid2(r)?;
    let floor = threshold_frac * global_max(r);
    let (lines, len) = if axis == 0 { (n1, n0) } else { (n0, n1) };
    let at = |line: usize, k: usize| if axis == 0 { (k, line) } else { (line, k) };
    let mut out = Vec::new();
    for line in 0..lines {
        for k in 0..len {
            let (i, j) = at(line, k);
            let v = r.values[i * n1 + j];
            if !(v >= floor) || !v.is_finite() {
                continue;
            }
            let left = (k > 0).then(|| {
                let (a, b) = at(line, k - 1);
                r.values[a * n1 + b]
            });
            let right = (k + 1 < len).then(|| {
                let (a, b) = at(line, k + 1);
                r.values[a * n1 + b]
            });
            if left.map_or(true, |l| v > l) && right.map_or(true, |x| v > x) {
                out.push(Peak { i, j, x0: r.spec.axes[0].values[i], x1: r.spec.axes[1].values[j], value: v });
            }
        }
    }
    Ok(out)
}

/// Fraction of peaks lying within one grid step of a resonance locus: some
/// point of a locus must fall inside the box of half-widths (Δ₁₂ step, Δ₂₃
/// step) around the peak.
pub fn colocation_fraction(r: &ScanResult, peaks: &[Peak], params: &SystemParams) -> Result<f64> {
    let (a12, a23) = detuning_axes(r)?;
    if peaks.is_empty() {
        return Ok(0.0);
    }
    let s12 = grid_step(&r.spec.axes[a12].values);
    let s23 = grid_step(&r.spec.axes[a23].values);
    const SAMPLES: usize = 41;
    let hits = peaks
        .iter()
        .filter(|p| {
            let (x12, x23) = if a12 == 0 { (p.x0, p.x1) } else { (p.x1, p.x0) };
            let window: Vec<f64> = (0..SAMPLES).map(|k| x23 - s23 + 2.0 * s23 * k as f64 / (SAMPLES - 1) as f64).collect();
            let curves = overlay_eigenenergies(params, &window);
            (0..SAMPLES).any(|k| curves.distance(k, x12) <= s12 * (1.0 + 1e-9))
        })
        .count();
    Ok(hits as f64 / peaks.len() as f64)
}

/// Horizontal distance between the two outer diagonal branches, from ridge
/// peaks at |Δ₂₃| ≥ `min_abs_d23`: rows with Δ₂₃ > 0 contribute their
/// leftmost peak, rows with Δ₂₃ < 0 their rightmost, each as an intercept
/// c = Δ₁₂ + Δ₂₃ of a slope −1 line. Returns mean(c₊) − mean(c₋) with c₊ from
/// Δ₂₃ < 0, or None if either side has no rows.
pub fn outer_branch_separation(r: &ScanResult, ridge: &[Peak], min_abs_d23: f64) -> Result<Option<f64>> {
    let (a12, _) = detuning_axes(r)?;
    let coords = |p: &Peak| if a12 == 0 { (p.x0, p.x1) } else { (p.x1, p.x0) };
    let mut rows: std::collections::BTreeMap<u64, (f64, Vec<f64>)> = Default::default();
    for p in ridge {
        let (x12, x23) = coords(p);
        if x23.abs() >= min_abs_d23 {
            rows.entry(x23.to_bits()).or_insert((x23, vec![])).1.push(x12);
        }
    }
    let (mut left, mut right) = (vec![], vec![]);
    for (x23, xs) in rows.values() {
        if *x23 > 0.0 {
            left.push(xs.iter().copied().fold(f64::INFINITY, f64::min) + x23);
        } else {
            right.push(xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + x23);
        }
    }
    if left.is_empty() || right.is_empty() {
        return Ok(None);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(Some(mean(&right) - mean(&left)))
}

/// Smallest Δ₁₂ distance between two ridge peaks straddling Δ₁₂ = 0 within
/// |Δ₁₂| < g/2, over rows within one Δ₂₃ step of the anticrossings at
/// Δ₂₃ = ±g. None when no row resolves two peaks there.
pub fn anticrossing_gap(r: &ScanResult, ridge: &[Peak], params: &SystemParams) -> Result<Option<f64>> {
    let (a12, a23) = detuning_axes(r)?;
    let s23 = grid_step(&r.spec.axes[a23].values);
    let coords = |p: &Peak| if a12 == 0 { (p.x0, p.x1) } else { (p.x1, p.x0) };
    let mut rows: std::collections::BTreeMap<u64, Vec<f64>> = Default::default();
    for p in ridge {
        let (x12, x23) = coords(p);
        if (x23.abs() - params.g).abs() <= s23 && x12.abs() < params.g / 2.0 {
            rows.entry(x23.to_bits()).or_default().push(x12);
        }
    }
    let gap = rows
        .values()
        .filter_map(|xs| {
            let lo = xs.iter().copied().filter(|x| *x < 0.0).fold(f64::NEG_INFINITY, f64::max);
            let hi = xs.iter().copied().filter(|x| *x > 0.0).fold(f64::INFINITY, f64::min);
            (lo.is_finite() && hi.is_finite()).then_some(hi - lo)
        })
        .fold(f64::INFINITY, f64::min);
    Ok(gap.is_finite().then_some(gap))
}

/// Minimum horizontal gap of the resonance loci at the anticrossing Δ₂₃ = ±g.
pub fn analytic_anticrossing_gap(params: &SystemParams) -> f64 {
    let c = overlay_eigenenergies(params, &[-params.g]);
    let mids: Vec<f64> = c.branches.iter().map(|b| b[0]).filter(|x| x.abs() < params.g / 2.0).collect();
    mids.iter().copied().fold(f64::NEG_INFINITY, f64::max) - mids.iter().copied().fold(f64::INFINITY, f64::min)
}

/// (Δ₁₂ axis index, Δ₂₃ axis index) of a 2D detuning scan.
pub fn detuning_axes(r: &ScanResult) -> Result<(usize, usize)> {
    let names: Vec<Param> = r.spec.axes.iter().map(|a| a.param).collect();
    match names[..] {
        [Param::Delta12, Param::Delta23] => Ok((0, 1)),
        [Param::Delta23, Param::Delta12] => Ok((1, 0)),
        _ => Err(Error::InvalidScan("expected a delta12 × delta23 scan".into())),
    }
}

/// Largest grid step of an axis.
pub fn grid_step(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
}
