//! Subcommand pipelines. Each command writes its artifacts into the output
//! directory and returns the printed report lines and its numeric checks; the
//! caller does all terminal output.

use anyhow::{bail, Context, Result};
use darkcycle::fit::fit_damped_sinusoid;
use darkcycle::ladder::{block_spectrum, bright_energy, overlap_decay_rate, verify_darkness, zeno_factor};
use darkcycle::liouvillian::{build_liouvillian, evolve, expectation, steady_state};
use darkcycle::model::{build_model, SystemParams};
use darkcycle::montecarlo::{
    build_rb87_model, free_space_variant, simulate_photon_statistics, write_records, Ensemble, Rb87Config, StatsOptions,
};
use darkcycle::observables::{coherent_amplitude, driven_empty_cavity, g2_correlation};
use darkcycle::scan::{
    analytic_anticrossing_gap, anticrossing_gap, colocation_fraction, find_peaks_2d, grid_step, outer_branch_separation,
    overlay_eigenenergies, ridge_peaks, run_scan, truncation_check, Observable, Param, ScanAxis, ScanResult, ScanSpec,
};
use darkcycle::units::{mhz, to_mhz};
use darkcycle::C64;

use crate::config::{Grid, RunConfig};
use crate::output::{num, OutDir, Table};
use crate::plot::{bar_chart, best_effort, heat_map, line_plot, Series};

/// Built-in configs used when `--config` is not given.
pub mod defaults {
    pub const SPECTROSCOPY: &str = include_str!("../../../configs/spectroscopy.toml");
    pub const CORRELATION: &str = include_str!("../../../configs/correlation.toml");
    pub const ZENO: &str = include_str!("../../../configs/zeno.toml");
    pub const MONTECARLO: &str = include_str!("../../../configs/montecarlo.toml");
    pub const FOM: &str = include_str!("../../../configs/fom.toml");
}

pub const DEFAULT_SEED: u64 = 20240607;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub report: Vec<String>,
    pub checks: Vec<Check>,
    /// Grid points or trajectories that produced no value.
    pub failed_points: usize,
}

impl Outcome {
    fn say(&mut self, line: impl Into<String>) {
        self.report.push(line.into());
    }
}

pub struct RunContext<'a> {
    pub out: &'a mut OutDir,
    /// Overrides the config's master seed.
    pub seed: Option<u64>,
}

fn mhz_values(grid: &Grid, key: &str) -> Result<Vec<f64>> {
    Ok(grid.values(key)?.into_iter().map(mhz).collect())
}

/// Short file-name form of a config value, e.g. 3.7 -> "3.7".
fn tag(v: f64) -> String {
    format!("{v}").replace('-', "m")
}

// ----------------------------------------------------------------------------
// spectroscopy

pub struct SpectroscopyRun {
    pub result: ScanResult,
    pub params: SystemParams,
    pub peaks: Vec<darkcycle::scan::Peak>,
    pub ridge: Vec<darkcycle::scan::Peak>,
    pub colocation: f64,
    pub ridge_colocation: f64,
    pub outer_separation: Option<f64>,
    pub gap: Option<f64>,
}

pub fn spectroscopy_run(cfg: &RunConfig) -> Result<SpectroscopyRun> {
    let sc = cfg.spectroscopy.as_ref().context("config has no [spectroscopy] block")?;
    let params = cfg.system_params()?;
    let axes = vec![
        ScanAxis { param: Param::Delta12, values: mhz_values(&sc.delta12, "spectroscopy.delta12")? },
        ScanAxis { param: Param::Delta23, values: mhz_values(&sc.delta23, "spectroscopy.delta23")? },
    ];
    let spec = ScanSpec {
        efficiency: RunConfig::efficiency_or_default(sc.efficiency)?,
        truncation_check: sc.truncation_check.unwrap_or(false),
        ..ScanSpec::steady(params, axes, Observable::EmissionRate)
    };
    let result = run_scan(&spec)?;
    let peaks = find_peaks_2d(&result, sc.peak_threshold.unwrap_or(0.05))?;
    let ridge = ridge_peaks(&result, 0, sc.ridge_threshold.unwrap_or(1e-4))?;
    let colocation = colocation_fraction(&result, &peaks, &params)?;
    let ridge_colocation = colocation_fraction(&result, &ridge, &params)?;
    let outer_separation = outer_branch_separation(&result, &ridge, params.g / 2.0)?;
    let gap = anticrossing_gap(&result, &ridge, &params)?;
    Ok(SpectroscopyRun { result, params, peaks, ridge, colocation, ridge_colocation, outer_separation, gap })
}

pub fn cmd_spectroscopy(cfg: &RunConfig, ctx: &mut RunContext) -> Result<Outcome> {
    let run = spectroscopy_run(cfg)?;
    let r = &run.result;
    let p = run.params;
    let mut o = Outcome { failed_points: r.n_failed(), ..Default::default() };

    let mut t = Table::new("spectroscopy", &[
        "delta12_mhz",
        "delta23_mhz",
        "emission_rate_per_us",
        "converged",
        "residual",
        "truncation_flag",
        "error",
    ])
    .note(format!("fock_cutoff={} efficiency={}", p.fock_cutoff, r.spec.efficiency));
    for (x, v, d) in r.rows() {
        t.push([
            num(to_mhz(x[0])),
            num(to_mhz(x[1])),
            num(v),
            d.converged.to_string(),
            num(d.residual),
            d.truncation_flag.map_or(String::new(), |f| f.to_string()),
            d.error.clone().unwrap_or_default(),
        ]);
    }
    ctx.out.table("spectroscopy.csv", &t)?;

    let d23 = &r.spec.axes[1].values;
    let curves = overlay_eigenenergies(&p, d23);
    let mut t = Table::new("eigencurves", &["delta23_mhz", "branch_low_mhz", "branch_mid_mhz", "branch_high_mhz"])
        .note("delta12 positions of the one-excitation resonances");
    for (i, x) in d23.iter().enumerate() {
        t.push([num(to_mhz(*x)), num(to_mhz(curves.branches[0][i])), num(to_mhz(curves.branches[1][i])), num(to_mhz(curves.branches[2][i]))]);
    }
    ctx.out.table("eigencurves.csv", &t)?;

    let mut t = Table::new("peaks", &["kind", "delta12_mhz", "delta23_mhz", "emission_rate_per_us", "on_curve"]);
    for (kind, list) in [("local", &run.peaks), ("ridge", &run.ridge)] {
        for pk in list.iter() {
            let on = colocation_fraction(r, std::slice::from_ref(pk), &p)? == 1.0;
            t.push([kind.to_string(), num(to_mhz(pk.x0)), num(to_mhz(pk.x1)), num(pk.value), on.to_string()]);
        }
    }
    ctx.out.table("peaks.csv", &t)?;

    if ctx.out.plots {
        let d12 = r.spec.axes[0].values.iter().map(|v| to_mhz(*v)).collect::<Vec<_>>();
        let d23m = d23.iter().map(|v| to_mhz(*v)).collect::<Vec<_>>();
        let (lo, hi) = (d23[0].min(d23[d23.len() - 1]), d23[0].max(d23[d23.len() - 1]));
        let dense: Vec<f64> = (0..=400).map(|k| lo + (hi - lo) * k as f64 / 400.0).collect();
        let c = overlay_eigenenergies(&p, &dense);
        let (xmin, xmax) = (d12.iter().copied().fold(f64::INFINITY, f64::min), d12.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let lines: Vec<Vec<(f64, f64)>> = c
            .branches
            .iter()
            .map(|b| {
                b.iter()
                    .zip(&dense)
                    .map(|(x, y)| (to_mhz(*x), to_mhz(*y)))
                    .filter(|(x, _)| *x >= xmin && *x <= xmax)
                    .collect()
            })
            .collect();
        let n1 = d23.len();
        let path = ctx.out.path("spectroscopy.svg");
        best_effort("spectroscopy.svg", || {
            heat_map(&path, "Cavity emission rate", "Δ12/2π (MHz)", "Δ23/2π (MHz)", &d12, &d23m, &|i, j| r.values[i * n1 + j], &lines)
        });
    }

    let step12 = to_mhz(grid_step(&r.spec.axes[0].values));
    let step23 = to_mhz(grid_step(d23));
    o.say(format!("grid {}x{}, {} failed points, {} truncation-flagged", r.shape()[0], r.shape()[1], r.n_failed(), r.n_truncation_flagged()));
    o.say(format!(
        "co-location: {:.1}% of {} local maxima, {:.1}% of {} ridge maxima within one grid step of the eigencurves",
        100.0 * run.colocation,
        run.peaks.len(),
        100.0 * run.ridge_colocation,
        run.ridge.len()
    ));
    o.checks.push(Check::new("colocation", run.ridge_colocation >= 0.9, format!("{:.3} of ridge maxima", run.ridge_colocation)));
    let two_g = 2.0 * to_mhz(p.g);
    match run.outer_separation {
        Some(s) => {
            let s = to_mhz(s);
            o.say(format!("outer-branch separation {s:.3} MHz vs 2g = {two_g:.3} MHz (step {step12:.3})"));
            o.checks.push(Check::new("outer_separation", (s - two_g).abs() <= step12, format!("{s:.3} vs {two_g:.3} MHz")));
        }
        None => {
            o.say("outer-branch separation: not resolved");
            o.checks.push(Check::new("outer_separation", false, "not resolved"));
        }
    }
    let om = to_mhz(p.omega23);
    let analytic = to_mhz(analytic_anticrossing_gap(&p));
    match run.gap {
        Some(gp) => {
            let gp = to_mhz(gp);
            o.say(format!("anticrossing gap {gp:.3} MHz vs Ω23 = {om:.3} MHz (locus gap {analytic:.3}, step {step12:.3})"));
            o.checks.push(Check::new("anticrossing_gap", (gp - om).abs() <= step12, format!("{gp:.3} vs {om:.3} MHz")));
        }
        None => {
            o.say(format!(
                "anticrossing gap: not resolved at Δ23 = ±g within ±{step23:.3} MHz (locus gap {analytic:.3} MHz, Ω23 = {om:.3} MHz)"
            ));
            o.checks.push(Check::new("anticrossing_gap", false, "not resolved"));
        }
    }
    Ok(o)
}

// ----------------------------------------------------------------------------
// correlation

#[derive(Debug, Clone)]
pub struct CorrelationPoint {
    pub omega23_mhz: f64,
    pub tau: Vec<f64>,
    pub g2: Vec<f64>,
    pub fit: darkcycle::fit::DampedSinusoidFit,
}

pub fn correlation_point(params: &SystemParams, tau: &[f64]) -> Result<CorrelationPoint> {
    let model = build_model(params)?;
    let l = build_liouvillian(&model)?;
    let rho = steady_state(&l)?;
    let series = g2_correlation(&l, &rho, model.operators().a(), tau)
        .with_context(|| format!("g2 at Ω23/2π = {} MHz", to_mhz(params.omega23)))?;
    let fit = fit_damped_sinusoid(&series.tau, &series.values)?;
    Ok(CorrelationPoint { omega23_mhz: to_mhz(params.omega23), tau: series.tau, g2: series.values, fit })
}

#[derive(Debug, Clone, Copy)]
pub struct CoherentReport {
    pub amplitude_error: f64,
    pub number_error: f64,
    pub g2_deviation: f64,
}

/// Driven empty cavity against α = −iε/(κ + iΔ): absolute errors in ⟨a⟩ and
/// ⟨a†a⟩ and the largest |g²(τ) − 1| on `tau`.
pub fn coherent_selftest(tau: &[f64]) -> Result<CoherentReport> {
    let (eps, detuning, kappa) = (C64::new(0.4, 0.2), 0.3, 1.1);
    let (l, a) = driven_empty_cavity(eps, detuning, kappa, 12)?;
    let rho = steady_state(&l)?;
    let alpha = coherent_amplitude(eps, detuning, kappa);
    let amplitude_error = (expectation(&rho, &a)? - alpha).norm();
    let number_error = (expectation(&rho, &(&a.dag() * &a))?.re - alpha.norm_sqr()).abs();
    let g2 = g2_correlation(&l, &rho, &a, tau)?;
    let g2_deviation = g2.values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    Ok(CoherentReport { amplitude_error, number_error, g2_deviation })
}

pub fn tau_grid(tau_max: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(tau_max > 0.0) || !tau_max.is_finite() {
        bail!("correlation: need tau_points >= 2 and tau_max > 0");
    }
    Ok((0..points).map(|k| tau_max * k as f64 / (points - 1) as f64).collect())
}

pub fn cmd_correlation(cfg: &RunConfig, ctx: &mut RunContext) -> Result<Outcome> {
    let cc = cfg.correlation.as_ref().context("config has no [correlation] block")?;
    if cc.omega23.is_empty() {
        bail!("correlation.omega23: empty list");
    }
    let base = cfg.system_params()?;
    let tau = tau_grid(cc.tau_max, cc.tau_points)?;
    let mut o = Outcome::default();
    let mut points = Vec::new();
    for &om in &cc.omega23 {
        let p = SystemParams { omega23: mhz(om), ..base };
        let pt = correlation_point(&p, &tau)?;
        let mut t = Table::new("g2", &["tau_us", "g2", "fit"]).note(format!("omega23_mhz={om} omega12_mhz={}", to_mhz(base.omega12)));
        for (x, y) in pt.tau.iter().zip(&pt.g2) {
            t.push([num(*x), num(*y), num(pt.fit.eval(*x))]);
        }
        ctx.out.table(&format!("g2_omega23_{}.csv", tag(om)), &t)?;
        points.push(pt);
    }

    let o12 = to_mhz(base.omega12);
    let mut t = Table::new("correlation_fits", &[
        "omega23_mhz",
        "omega12_mhz",
        "frequency_mhz",
        "frequency_err_mhz",
        "frequency_rel_dev",
        "decay_rate_per_us",
        "decay_rate_err_per_us",
        "residual_rms",
    ]);
    for pt in &points {
        let f = pt.fit.frequency_mhz();
        let fe = to_mhz(pt.fit.frequency_err);
        let dev = (f - o12) / o12;
        t.push([num(pt.omega23_mhz), num(o12), num(f), num(fe), num(dev), num(pt.fit.decay_rate), num(pt.fit.decay_rate_err), num(pt.fit.residual_rms)]);
        o.say(format!(
            "Ω23 = {} MHz: frequency {f:.4} ± {fe:.4} MHz ({:+.1}% vs Ω12 = {o12} MHz), decay {:.4} ± {:.4} /µs",
            pt.omega23_mhz,
            100.0 * dev,
            pt.fit.decay_rate,
            pt.fit.decay_rate_err
        ));
        o.checks.push(Check::new(format!("frequency_omega23_{}", pt.omega23_mhz), dev.abs() <= 0.1, format!("{:+.3}", dev)));
    }
    ctx.out.table("correlation_fits.csv", &t)?;
    if points.len() >= 2 {
        let (a, b) = (&points[0].fit, &points[points.len() - 1].fit);
        let df = (a.frequency - b.frequency).abs();
        let joint_f = a.frequency_err.hypot(b.frequency_err);
        let dk = (a.decay_rate - b.decay_rate).abs();
        let joint_k = a.decay_rate_err.hypot(b.decay_rate_err);
        o.say(format!(
            "frequency difference {:.4} MHz (joint error {:.4}); decay difference {dk:.4} /µs (joint error {joint_k:.4})",
            to_mhz(df),
            to_mhz(joint_f)
        ));
        o.checks.push(Check::new("equal_frequencies", df <= joint_f, format!("{:.3} joint sigma", df / joint_f)));
        o.checks.push(Check::new("different_decay", dk > joint_k, format!("{:.3} joint sigma", dk / joint_k)));
    }
    if cc.coherent_selftest.unwrap_or(false) {
        let rep = coherent_selftest(&tau)?;
        o.say(format!(
            "coherent cavity: |Δ⟨a⟩| = {:.2e}, |Δ⟨a†a⟩| = {:.2e}, max |g2 − 1| = {:.2e}",
            rep.amplitude_error, rep.number_error, rep.g2_deviation
        ));
        o.checks.push(Check::new("coherent_g2", rep.g2_deviation <= 1e-6, format!("{:.2e}", rep.g2_deviation)));
    }
    if ctx.out.plots {
        let labels: Vec<String> = points.iter().map(|pt| format!("Ω23/2π = {} MHz", pt.omega23_mhz)).collect();
        let series: Vec<Series> = points
            .iter()
            .zip(&labels)
            .map(|(pt, l)| Series { label: l, points: pt.tau.iter().copied().zip(pt.g2.iter().copied()).collect() })
            .collect();
        let path = ctx.out.path("g2.svg");
        best_effort("g2.svg", || line_plot(&path, "g2(τ)", "τ (µs)", "g2", &series));
    }
    Ok(o)
}

// ----------------------------------------------------------------------------
// zeno

pub fn cmd_zeno(cfg: &RunConfig, ctx: &mut RunContext) -> Result<Outcome> {
    let zc = cfg.zeno.as_ref().context("config has no [zeno] block")?;
    if zc.omega23.is_empty() || zc.n_max == 0 {
        bail!("zeno: need a non-empty omega23 list and n_max >= 1");
    }
    let base = cfg.system_params()?;
    let mut o = Outcome::default();
    let mut t = Table::new("zeno", &[
        "omega23_mhz",
        "n",
        "gamma_n_per_us",
        "omega_n_per_us",
        "zeno",
        "zeno_rel",
        "gamma_overlap_per_us",
        "overlap_rel_err",
    ]);
    for &om in &zc.omega23 {
        let p = SystemParams { omega23: mhz(om), ..base };
        let mut bars = Vec::new();
        let mut worst = 0.0f64;
        for n in 1..=zc.n_max {
            let lp = zeno_factor(n, &p)?;
            let ov = overlap_decay_rate(n, p.g, p.omega23, p.kappa)?;
            let err = if lp.gamma_n > 0.0 { (ov - lp.gamma_n).abs() / lp.gamma_n } else { ov };
            worst = worst.max(err);
            t.push([num(om), n.to_string(), num(lp.gamma_n), num(lp.omega_n), num(lp.zeno), num(lp.zeno_rel), num(ov), num(err)]);
            bars.push((n as i64, lp.zeno_rel));
        }
        let z2 = bars.get(1).map(|b| b.1);
        o.say(format!(
            "Ω23 = {om} MHz: Z2/Z1 = {}, worst overlap error {worst:.1e}",
            z2.map_or("n/a".into(), |v| format!("{v:.3e}"))
        ));
        o.checks.push(Check::new(format!("overlap_omega23_{om}"), worst <= 1e-12, format!("{worst:.1e}")));
        if ctx.out.plots {
            let path = ctx.out.path(&format!("zeno_omega23_{}.svg", tag(om)));
            let title = format!("Relative Zeno factor, Ω23/2π = {om} MHz");
            best_effort("zeno", || bar_chart(&path, &title, "n", "Zn/Z1", &bars, true));
        }
    }
    ctx.out.table("zeno.csv", &t)?;
    Ok(o)
}

// ----------------------------------------------------------------------------
// montecarlo

pub struct MonteCarloRun {
    pub cavity: Ensemble,
    /// (Δ₂₃ in MHz, g = 0 ensemble).
    pub free: Vec<(f64, Ensemble)>,
    pub enhancement: f64,
    pub cavity_options: StatsOptions,
}

impl MonteCarloRun {
    pub fn free_mean(&self) -> f64 {
        self.free.iter().map(|(_, e)| e.stats.mean_detected).sum::<f64>() / self.free.len().max(1) as f64
    }
}

pub fn montecarlo_run(cfg: &RunConfig, seed_override: Option<u64>) -> Result<MonteCarloRun> {
    let mc = cfg.montecarlo.as_ref().context("config has no [montecarlo] block")?;
    if mc.n_traj == 0 {
        bail!("montecarlo.n_traj must be >= 1");
    }
    if !(mc.t_max > 0.0) {
        bail!("montecarlo.t_max must be > 0");
    }
    let base = cfg.system_params()?;
    let mut rb = Rb87Config::new(base);
    if let Some(v) = mc.gamma {
        rb.gamma = mhz(v);
    }
    if let Some(v) = mc.zeeman_shift {
        rb.zeeman_shift = mhz(v);
    }
    if let Some(v) = mc.repump_ratio {
        rb.repump_ratio = v;
    }
    if let Some(v) = mc.preparation {
        rb.preparation = v;
    }
    if mc.include_e_to_1 == Some(false) {
        rb.branching = rb.branching.without_e_to_1();
    }
    let eff = RunConfig::efficiency_or_default(mc.efficiency)?;
    let seed = seed_override.or(mc.seed).unwrap_or(DEFAULT_SEED);
    let options = |t_max: f64, seed: u64| {
        let mut s = StatsOptions::new(mc.n_traj, t_max, eff, seed);
        if let Some(dt) = mc.dt_max {
            s.trajectory.dt_max = dt;
        }
        if let Some(w) = mc.bin_width {
            s.bin_width = w;
        }
        if let Some(f) = mc.fit_start {
            s.fit_start = f.min(t_max);
        }
        s
    };
    let model = build_rb87_model(&rb)?.realize()?;
    let cavity_options = options(mc.t_max, seed);
    let cavity = simulate_photon_statistics(&model, &cavity_options)?;
    let mut free = Vec::new();
    let d23s = mc.free_space_delta23.clone().unwrap_or_else(|| vec![0.0]);
    for (k, d23) in d23s.iter().enumerate() {
        let mut r = rb.clone();
        r.params.delta23 = mhz(*d23);
        let m = free_space_variant(&build_rb87_model(&r)?).realize()?;
        let e = simulate_photon_statistics(&m, &options(mc.free_space_t_max.unwrap_or(400.0), seed.wrapping_add(1 + k as u64)))?;
        free.push((*d23, e));
    }
    let mut run = MonteCarloRun { cavity, free, enhancement: f64::NAN, cavity_options };
    run.enhancement = run.cavity.stats.extrapolated_total / run.free_mean();
    Ok(run)
}

pub fn cmd_montecarlo(cfg: &RunConfig, ctx: &mut RunContext) -> Result<Outcome> {
    let run = montecarlo_run(cfg, ctx.seed)?;
    let mc = cfg.montecarlo.as_ref().expect("checked by montecarlo_run");
    let cs = &run.cavity.stats;
    let mut o = Outcome { failed_points: cs.failed + run.free.iter().map(|(_, e)| e.stats.failed).sum::<usize>(), ..Default::default() };

    if mc.records.unwrap_or(true) {
        let mut buf = Vec::new();
        write_records(&mut buf, &run.cavity.records)?;
        ctx.out.bytes("trajectories.jsonl", &buf)?;
    }

    let mut t = Table::new("histogram", &["run", "delta23_mhz", "detected", "count", "fraction"]);
    let cavity_d23 = to_mhz(cfg.system_params()?.delta23);
    let mut runs: Vec<(&str, f64, &Ensemble)> = vec![("cavity", cavity_d23, &run.cavity)];
    runs.extend(run.free.iter().map(|(d, e)| ("free_space", *d, e)));
    for (name, d23, e) in &runs {
        for (k, c) in &e.stats.detected_histogram {
            t.push([name.to_string(), num(*d23), k.to_string(), c.to_string(), num(*c as f64 / e.stats.n_trajectories as f64)]);
        }
    }
    ctx.out.table("histogram.csv", &t)?;

    let mut t = Table::new("countrate", &["time_us", "rate_per_us", "fit_per_us"]).note(match &cs.rate_fit {
        Some(f) => format!(
            "initial_rate={} decay_time_us={} normalized_rms={} fit_start_us={}",
            num(f.initial_rate),
            num(f.decay_time()),
            num(f.normalized_rms),
            num(run.cavity_options.fit_start)
        ),
        None => "fit failed".into(),
    });
    for (time, rate) in cs.rate_times.iter().zip(&cs.rates) {
        t.push([num(*time), num(*rate), num(cs.rate_fit.map_or(f64::NAN, |f| f.eval(*time)))]);
    }
    ctx.out.table("countrate.csv", &t)?;

    let mut t = Table::new("comparison", &[
        "run",
        "delta23_mhz",
        "n_traj",
        "mean_detected",
        "detected_se",
        "mean_produced",
        "produced_se",
        "extrapolated_total",
        "active_fraction",
        "failed",
    ]);
    for (name, d23, e) in &runs {
        let s = &e.stats;
        t.push([
            name.to_string(),
            num(*d23),
            s.n_trajectories.to_string(),
            num(s.mean_detected),
            num(s.detected_std_error),
            num(s.mean_produced),
            num(s.produced_std_error),
            num(s.extrapolated_total),
            num(s.active_fraction),
            s.failed.to_string(),
        ]);
    }
    ctx.out.table("comparison.csv", &t)?;

    o.say(format!(
        "cavity: {:.3} ± {:.3} detected in {} µs, {:.3} produced, extrapolated total {:.3}, active {:.1}%",
        cs.mean_detected,
        cs.detected_std_error,
        mc.t_max,
        cs.mean_produced,
        cs.extrapolated_total,
        100.0 * cs.active_fraction
    ));
    if let Some(f) = &cs.rate_fit {
        o.say(format!("count rate: decay time {:.1} µs, normalized RMS residual {:.3}", f.decay_time(), f.normalized_rms));
        o.checks.push(Check::new("countrate_fit", f.normalized_rms <= 0.1, format!("{:.3}", f.normalized_rms)));
    }
    for (d23, e) in &run.free {
        o.say(format!(
            "free space Δ23 = {d23} MHz: {:.3} ± {:.3} detected, active {:.1}%",
            e.stats.mean_detected,
            e.stats.detected_std_error,
            100.0 * e.stats.active_fraction
        ));
    }
    let fm = run.free_mean();
    let spread = run.free.iter().map(|(_, e)| e.stats.mean_detected).fold(f64::NEG_INFINITY, f64::max)
        - run.free.iter().map(|(_, e)| e.stats.mean_detected).fold(f64::INFINITY, f64::min);
    o.say(format!("free-space mean {fm:.3}, spread {:.1}%; enhancement {:.2}x", 100.0 * spread / fm, run.enhancement));
    o.checks.push(Check::new("free_space_mean", (fm - 1.55).abs() <= 0.4, format!("{fm:.3}")));
    o.checks.push(Check::new("enhancement", run.enhancement >= 2.5, format!("{:.2}", run.enhancement)));
    for r in run.cavity.records.iter().filter(|r| r.failure.is_some()) {
        o.say(format!("trajectory stream {} failed: {}", r.stream, r.failure.as_deref().unwrap_or("")));
    }

    if ctx.out.plots {
        let bars: Vec<(i64, f64)> = cs.detected_histogram.iter().map(|(k, c)| (*k as i64, *c as f64 / cs.n_trajectories as f64)).collect();
        let path = ctx.out.path("histogram.svg");
        best_effort("histogram.svg", || bar_chart(&path, "Detected photons per trajectory", "photons", "probability", &bars, false));
        let mut series = vec![Series { label: "count rate", points: cs.rate_times.iter().copied().zip(cs.rates.iter().copied()).collect() }];
        if let Some(f) = cs.rate_fit {
            series.push(Series { label: "exponential fit", points: cs.rate_times.iter().map(|x| (*x, f.eval(*x))).collect() });
        }
        let path = ctx.out.path("countrate.svg");
        best_effort("countrate.svg", || line_plot(&path, "Detected count rate", "t (µs)", "rate (1/µs)", &series));
    }
    Ok(o)
}

// ----------------------------------------------------------------------------
// fom

/// How a figure-of-merit curve moves along its sweep variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    Increasing,
    Decreasing,
    Mixed { rises: bool, falls: bool },
}

pub fn trend(values: &[f64]) -> Trend {
    let rises = values.windows(2).any(|w| w[1] > w[0]);
    let falls = values.windows(2).any(|w| w[1] < w[0]);
    match (rises, falls) {
        (true, false) => Trend::Increasing,
        (false, true) => Trend::Decreasing,
        _ => Trend::Mixed { rises, falls },
    }
}

pub fn fom_sweeps(cfg: &RunConfig) -> Result<Vec<(&'static str, ScanResult)>> {
    let fc = cfg.fom.as_ref().context("config has no [fom] block")?;
    let base = cfg.system_params()?;
    let mut out = Vec::new();
    for (name, param, grid) in [
        ("g", Param::G, &fc.g),
        ("gamma33", Param::Gamma33, &fc.gamma33),
        ("kappa", Param::Kappa, &fc.kappa),
        ("gamma_d", Param::GammaD, &fc.gamma_d),
    ] {
        let Some(grid) = grid else { continue };
        let values = mhz_values(grid, &format!("fom.{name}"))?;
        let spec = ScanSpec::steady(base, vec![ScanAxis { param, values }], Observable::FigureOfMerit);
        out.push((name, run_scan(&spec)?));
    }
    if out.is_empty() {
        bail!("[fom] lists no sweep variable (g, gamma33, kappa, gamma_d)");
    }
    Ok(out)
}

pub fn cmd_fom(cfg: &RunConfig, ctx: &mut RunContext) -> Result<Outcome> {
    let sweeps = fom_sweeps(cfg)?;
    let mut o = Outcome::default();
    for (name, r) in &sweeps {
        o.failed_points += r.n_failed();
        let mut t = Table::new("fom", &[&format!("{name}_mhz"), "figure_of_merit", "converged", "residual", "error"]);
        for (x, v, d) in r.rows() {
            t.push([num(to_mhz(x[0])), num(v), d.converged.to_string(), num(d.residual), d.error.clone().unwrap_or_default()]);
        }
        ctx.out.table(&format!("fom_{name}.csv"), &t)?;
        let tr = trend(&r.values);
        o.say(format!("{name}: {tr:?} over {} points, {} failed", r.values.len(), r.n_failed()));
        let expected = match *name {
            "g" => tr == Trend::Increasing,
            "kappa" | "gamma_d" => tr == Trend::Decreasing,
            _ => matches!(tr, Trend::Increasing | Trend::Mixed { rises: true, .. }),
        };
        o.checks.push(Check::new(format!("trend_{name}"), expected, format!("{tr:?}")));
        if ctx.out.plots {
            let pts: Vec<(f64, f64)> = r.rows().map(|(x, v, _)| (to_mhz(x[0]), v)).collect();
            let path = ctx.out.path(&format!("fom_{name}.svg"));
            let xl = format!("{name}/2π (MHz)");
            best_effort("fom", || line_plot(&path, "⟨a†a⟩/⟨σ33⟩", &xl, "figure of merit", &[Series { label: name, points: pts }]));
        }
    }
    Ok(o)
}

// ----------------------------------------------------------------------------
// selftest

/// Fast numerical self-checks that need no config.
pub fn selftest_checks() -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    let p = SystemParams { omega12: 0.0, fock_cutoff: 4, ..SystemParams::baseline() };
    let mut worst = 0.0f64;
    for n in 1..=4 {
        let ev = block_spectrum(&p, n)?;
        let e = bright_energy(n, p.g, p.omega23);
        worst = worst.max(((ev[0] + e) / e).abs()).max((ev[1] / e).abs()).max(((ev[2] - e) / e).abs());
    }
    checks.push(Check::new("eigenstructure", worst <= 1e-10, format!("max relative error {worst:.1e}")));

    let dark = verify_darkness(&p)?;
    let worst_h = dark.rungs.iter().map(|r| r.h_residual).fold(0.0, f64::max);
    checks.push(Check::new("darkness", dark.pass, format!("max ‖HΨ‖ {worst_h:.1e}")));

    let rep = coherent_selftest(&tau_grid(10.0, 101)?)?;
    checks.push(Check::new(
        "coherent_cavity",
        rep.amplitude_error <= 1e-8 && rep.number_error <= 1e-8 && rep.g2_deviation <= 1e-6,
        format!("⟨a⟩ {:.1e}, ⟨a†a⟩ {:.1e}, g2 {:.1e}", rep.amplitude_error, rep.number_error, rep.g2_deviation),
    ));

    let p = SystemParams { fock_cutoff: 2, ..SystemParams::baseline() };
    let model = build_model(&p)?;
    let l = build_liouvillian(&model)?;
    let ss = steady_state(&l)?;
    let rho0 = darkcycle::liouvillian::DensityMatrix::basis(&p.space(), &[0, 0])?;
    let t = 40.0 * l.relaxation_time()?;
    let dist = evolve(&l, &rho0, t)?.trace_distance(&ss);
    checks.push(Check::new("evolve_to_steady_state", dist <= 1e-6, format!("trace distance {dist:.1e} at t = {t:.0} µs")));

    let p = SystemParams { fock_cutoff: 5, ..SystemParams::baseline() };
    let tr = truncation_check(&p, Observable::PhotonNumber, 1.0)?;
    checks.push(Check::new("fock_truncation", !tr.flagged, format!("relative change {:.1e} from cutoff 5 to 7", tr.relative_change)));
    Ok(checks)
}

pub fn cmd_selftest(ctx: &mut RunContext) -> Result<Outcome> {
    let checks = selftest_checks()?;
    let mut t = Table::new("selftest", &["check", "pass", "detail"]);
    for c in &checks {
        t.push([c.name.clone(), c.pass.to_string(), c.detail.clone()]);
    }
    ctx.out.table("selftest.csv", &t)?;
    Ok(Outcome { checks, ..Default::default() })
}
