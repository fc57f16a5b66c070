//! TOML run configuration. Frequencies are in MHz (value/2π) and times in µs;
//! everything is converted to rad/µs once, here.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use darkcycle::model::SystemParams;
use darkcycle::observables::DEFAULT_EFFICIENCY;
use darkcycle::units::mhz;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// g, κ, γ = 10.2, 1.5, 3.0 MHz with Ω₁₂ = 0.4, Ω₂₃ = 4.0 MHz.
    Baseline,
    /// Same rates with g = 9.2, Ω₁₂ = 0.3 MHz.
    Fom,
}

impl Preset {
    pub fn params(self) -> SystemParams {
        match self {
            Preset::Baseline => SystemParams::baseline(),
            Preset::Fom => SystemParams::fom_preset(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsMhz {
    pub g: Option<f64>,
    pub kappa: Option<f64>,
    /// Total excited-state decay, split equally unless gamma13/gamma23 are given.
    pub gamma: Option<f64>,
    pub gamma13: Option<f64>,
    pub gamma23: Option<f64>,
    pub gamma_d: Option<f64>,
    pub omega12: Option<f64>,
    pub omega23: Option<f64>,
    pub delta12: Option<f64>,
    pub delta23: Option<f64>,
    pub fock_cutoff: Option<usize>,
}

/// Either an explicit list or `points` evenly spaced values from `start` to `stop`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub points: Option<usize>,
    pub values: Option<Vec<f64>>,
}

impl Grid {
    pub fn linspace(start: f64, stop: f64, points: usize) -> Self {
        Self { start: Some(start), stop: Some(stop), points: Some(points), values: None }
    }

    /// Values in config units.
    pub fn values(&self, key: &str) -> Result<Vec<f64>> {
        let v = match (&self.values, self.start, self.stop, self.points) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(a), Some(b), Some(n)) => match n {
                0 => vec![],
                1 => vec![a],
                _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
            },
            _ => bail!("{key}: give either `values` or all of `start`, `stop`, `points`"),
        };
        if v.is_empty() {
            bail!("{key}: empty grid");
        }
        if v.iter().any(|x| !x.is_finite()) {
            bail!("{key}: non-finite grid value");
        }
        let up = v.windows(2).all(|w| w[1] > w[0]);
        let down = v.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            bail!("{key}: grid must be strictly monotone");
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub plots: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectroscopyConfig {
    pub delta12: Grid,
    pub delta23: Grid,
    pub efficiency: Option<f64>,
    /// 8-neighbourhood maxima above this fraction of the global maximum.
    pub peak_threshold: Option<f64>,
    /// Row-wise maxima along Δ₁₂ above this fraction of the global maximum.
    pub ridge_threshold: Option<f64>,
    pub truncation_check: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationConfig {
    pub omega23: Vec<f64>,
    pub tau_max: f64,
    pub tau_points: usize,
    pub coherent_selftest: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZenoConfig {
    pub omega23: Vec<f64>,
    pub n_max: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub n_traj: usize,
    pub t_max: f64,
    pub dt_max: Option<f64>,
    pub efficiency: Option<f64>,
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
    pub zeeman_shift: Option<f64>,
    pub repump_ratio: Option<f64>,
    pub preparation: Option<f64>,
    pub include_e_to_1: Option<bool>,
    pub bin_width: Option<f64>,
    pub fit_start: Option<f64>,
    /// Free-space (g = 0) comparison runs, one per Δ₂₃ value.
    pub free_space_delta23: Option<Vec<f64>>,
    pub free_space_t_max: Option<f64>,
    pub records: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FomConfig {
    pub g: Option<Grid>,
    pub gamma33: Option<Grid>,
    pub kappa: Option<Grid>,
    pub gamma_d: Option<Grid>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    #[serde(default)]
    pub params: ParamsMhz,
    #[serde(default)]
    pub output: OutputConfig,
    pub spectroscopy: Option<SpectroscopyConfig>,
    pub correlation: Option<CorrelationConfig>,
    pub zeno: Option<ZenoConfig>,
    pub montecarlo: Option<MonteCarloConfig>,
    pub fom: Option<FomConfig>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.system_params()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Physical parameters in rad/µs. Without a preset every rate must be given.
    pub fn system_params(&self) -> Result<SystemParams> {
        let p = &self.params;
        let mut out = match self.preset {
            Some(preset) => preset.params(),
            None => {
                let mut missing = vec![];
                for (name, v) in [
                    ("g", p.g),
                    ("kappa", p.kappa),
                    ("gamma_d", p.gamma_d),
                    ("omega12", p.omega12),
                    ("omega23", p.omega23),
                ] {
                    if v.is_none() {
                        missing.push(name);
                    }
                }
                if p.gamma.is_none() && (p.gamma13.is_none() || p.gamma23.is_none()) {
                    missing.push("gamma (or gamma13 and gamma23)");
                }
                if p.fock_cutoff.is_none() {
                    missing.push("fock_cutoff");
                }
                if !missing.is_empty() {
                    bail!("[params] is missing {} and no preset is set", missing.join(", "));
                }
                SystemParams { delta12: 0.0, delta23: 0.0, ..SystemParams::baseline() }
            }
        };
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = mhz(v);
            }
        };
        set(&mut out.g, p.g);
        set(&mut out.kappa, p.kappa);
        if let Some(gm) = p.gamma {
            out.gamma13 = mhz(gm / 2.0);
            out.gamma23 = mhz(gm / 2.0);
        }
        set(&mut out.gamma13, p.gamma13);
        set(&mut out.gamma23, p.gamma23);
        set(&mut out.gamma_d, p.gamma_d);
        set(&mut out.omega12, p.omega12);
        set(&mut out.omega23, p.omega23);
        set(&mut out.delta12, p.delta12);
        set(&mut out.delta23, p.delta23);
        if let Some(n) = p.fock_cutoff {
            out.fock_cutoff = n;
        }
        out.validate().context("[params]")?;
        Ok(out)
    }

    pub fn efficiency_or_default(v: Option<f64>) -> Result<f64> {
        let e = v.unwrap_or(DEFAULT_EFFICIENCY);
        if !(0.0..=1.0).contains(&e) {
            bail!("efficiency must lie in [0, 1], got {e}");
        }
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("preset = \"fom\"\n[params]\ng = 1.0\nfoo = 2.0\n").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("foo"), "{msg}");
        assert!(msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn missing_rates_without_preset() {
        let err = RunConfig::parse("[params]\ng = 1.0\n").unwrap_err();
        assert!(format!("{err:#}").contains("kappa"));
    }

    #[test]
    fn units_convert_once() {
        let c = RunConfig::parse("preset = \"baseline\"\n[params]\ng = 2.0\ngamma = 4.0\n").unwrap();
        let p = c.system_params().unwrap();
        assert!((p.g - mhz(2.0)).abs() < 1e-12);
        assert!((p.gamma13 - mhz(2.0)).abs() < 1e-12 && (p.gamma23 - mhz(2.0)).abs() < 1e-12);
        assert_eq!(p.omega23, SystemParams::baseline().omega23);
    }

    #[test]
    fn grids() {
        assert_eq!(Grid::linspace(0.0, 1.0, 3).values("x").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(Grid::linspace(0.0, 1.0, 0).values("x").is_err());
        let g = Grid { values: Some(vec![1.0, 1.0]), ..Default::default() };
        assert!(g.values("x").is_err());
        let g = Grid { values: Some(vec![1.0]), start: Some(0.0), ..Default::default() };
        assert!(g.values("x").is_err());
    }
}
