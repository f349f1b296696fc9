//! Run configuration: a single TOML file drives every CLI command; all
//! command-line flags override the corresponding config values.

use crate::channel::ChannelSpec;
use crate::gammafit::{DEFAULT_EPSILON, N_HAT};
use crate::metrics::Numerics;
use crate::montecarlo::SimConfig;
use crate::moments::{DEFAULT_N_Q, DEFAULT_N_T};
use crate::{HarqError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub channel: ChannelConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub mc: McConfig,
    /// Transmission rate 𝓡 in bps/Hz for fit/sweep/validate.
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    #[serde(default)]
    pub optimize: OptimizeConfig,
    #[serde(default)]
    pub diversity: DiversityConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_rate() -> f64 {
    2.0
}

/// Channel description: either the homogeneous shorthand (rho, gamma_t_db)
/// or explicit per-round vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub rounds: usize,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub gamma_t_db: Option<f64>,
    #[serde(default)]
    pub sigma: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda: Option<Vec<f64>>,
    #[serde(default)]
    pub snr_db: Option<Vec<f64>>,
}

impl ChannelConfig {
    pub fn build(&self) -> Result<ChannelSpec> {
        match (&self.sigma, &self.lambda, &self.snr_db) {
            (Some(s), Some(l), Some(g)) => ChannelSpec::new(s.clone(), l.clone(), g.clone()),
            (None, None, None) => {
                let rho = self.rho.ok_or_else(|| {
                    HarqError::Parameter(
                        "channel needs either (rho, gamma_t_db) or explicit vectors".into(),
                    )
                })?;
                let g = self.gamma_t_db.ok_or_else(|| {
                    HarqError::Parameter("homogeneous channel needs gamma_t_db".into())
                })?;
                if rho >= 1.0 {
                    return Err(HarqError::Parameter(
                        "rho = 1 is the fully-correlated closed form; use the sweep/diversity \
                         commands which route it automatically, or pick rho < 1 for fitting"
                            .into(),
                    ));
                }
                ChannelSpec::homogeneous(self.rounds, rho, g)
            }
            _ => Err(HarqError::Parameter(
                "explicit channel needs all of sigma, lambda, snr_db".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsConfig {
    pub n_q: usize,
    pub n_t: usize,
    pub degree_cap: usize,
    pub epsilon_degree: f64,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        NumericsConfig {
            n_q: DEFAULT_N_Q,
            n_t: DEFAULT_N_T,
            degree_cap: N_HAT,
            epsilon_degree: DEFAULT_EPSILON,
        }
    }
}

impl NumericsConfig {
    pub fn to_numerics(&self) -> Numerics {
        Numerics {
            n_q: self.n_q,
            n_t: self.n_t,
            degree_cap: self.degree_cap,
            epsilon_degree: self.epsilon_degree,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub samples: u64,
    pub seed: u64,
    pub batch: u64,
    pub lanes: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { samples: 1_000_000, seed: 20240, batch: 1 << 16, lanes: 8 }
    }
}

impl McConfig {
    pub fn to_sim_config(&self) -> SimConfig {
        SimConfig {
            samples: self.samples,
            seed: self.seed,
            batch: self.batch.min(self.samples),
            lanes: self.lanes,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// One of: gamma_t_db, rho, rate, rounds.
    pub param: String,
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
    #[serde(default = "default_scale")]
    pub scale: String,
}

fn default_scale() -> String {
    "linear".into()
}

impl SweepAxis {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.param.as_str(), "gamma_t_db" | "rho" | "rate" | "rounds") {
            return Err(HarqError::Parameter(format!(
                "unknown sweep parameter '{}' (expected gamma_t_db, rho, rate or rounds)",
                self.param
            )));
        }
        if self.steps < 2 {
            return Err(HarqError::Parameter(format!(
                "sweep axis '{}' needs steps >= 2",
                self.param
            )));
        }
        if self.scale != "linear" && self.scale != "log" {
            return Err(HarqError::Parameter(format!(
                "sweep scale must be 'linear' or 'log', got '{}'",
                self.scale
            )));
        }
        if self.scale == "log" && (self.start <= 0.0 || self.stop <= 0.0) {
            return Err(HarqError::Parameter("log axis needs positive endpoints".into()));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let n = self.steps;
        (0..n)
            .map(|i| {
                let f = i as f64 / (n - 1) as f64;
                if self.scale == "log" {
                    (self.start.ln() + f * (self.stop.ln() - self.start.ln())).exp()
                } else {
                    self.start + f * (self.stop - self.start)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeConfig {
    pub epsilon: Vec<f64>,
    pub gamma_t_db: Vec<f64>,
    /// Correlation grid; defaults to the channel's own rho.
    pub rho: Option<Vec<f64>>,
    pub rate_min: f64,
    pub rate_max: f64,
    pub tolerance: f64,
    /// The constant-rate baseline is the optimum at this SNR.
    pub baseline_gamma_db: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            epsilon: vec![0.01],
            gamma_t_db: (0..=10).map(|i| i as f64).collect(),
            rho: None,
            rate_min: 0.05,
            rate_max: 16.0,
            tolerance: 1e-3,
            baseline_gamma_db: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiversityConfig {
    pub rounds: Vec<usize>,
    pub rho: Vec<f64>,
    pub rate: f64,
    pub grid_start_db: f64,
    pub grid_stop_db: f64,
    pub grid_steps: usize,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        DiversityConfig {
            rounds: vec![1, 2, 3, 4],
            rho: vec![0.0, 0.5, 0.9, 1.0],
            rate: 2.0,
            grid_start_db: 20.0,
            grid_stop_db: 40.0,
            grid_steps: 6,
        }
    }
}

impl DiversityConfig {
    pub fn grid(&self) -> Vec<f64> {
        let n = self.grid_steps.max(2);
        (0..n)
            .map(|i| {
                self.grid_start_db
                    + (self.grid_stop_db - self.grid_start_db) * i as f64 / (n - 1) as f64
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub path: Option<String>,
    /// csv (default) or json.
    pub format: Option<String>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| HarqError::Parameter(format!("config parse error: {e}")))?;
        for axis in &cfg.sweep {
            axis.validate()?;
        }
        Ok(cfg)
    }

    /// Minimal default config around a homogeneous channel.
    pub fn default_homogeneous(rounds: usize, rho: f64, gamma_t_db: f64) -> Self {
        RunConfig {
            channel: ChannelConfig {
                rounds,
                rho: Some(rho),
                gamma_t_db: Some(gamma_t_db),
                sigma: None,
                lambda: None,
                snr_db: None,
            },
            numerics: NumericsConfig::default(),
            mc: McConfig::default(),
            rate: default_rate(),
            sweep: Vec::new(),
            optimize: OptimizeConfig::default(),
            diversity: DiversityConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// FNV-1a hash of the canonical TOML serialization; recorded in every
    /// output file so results can be traced to the exact configuration.
    /// The output destination is excluded — it does not affect results.
    pub fn hash(&self) -> u64 {
        let mut canonical = self.clone();
        canonical.output = OutputConfig::default();
        let text = toml::to_string(&canonical).unwrap_or_default();
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_homogeneous_toml() {
        let cfg = RunConfig::from_toml(
            r#"
            rate = 2.0
            [channel]
            rounds = 4
            rho = 0.5
            gamma_t_db = 10.0
            [mc]
            samples = 500000
            seed = 7
            "#,
        )
        .unwrap();
        let spec = cfg.channel.build().unwrap();
        assert_eq!(spec.rounds, 4);
        assert_eq!(cfg.mc.samples, 500_000);
        assert_eq!(cfg.numerics.n_q, 64);
        let h1 = cfg.hash();
        assert_eq!(h1, cfg.hash(), "hash must be deterministic");
    }

    #[test]
    fn explicit_channel_and_errors() {
        let cfg = RunConfig::from_toml(
            r#"
            [channel]
            rounds = 2
            sigma = [0.7071067811865476, 0.7071067811865476]
            lambda = [0.5, 0.3]
            snr_db = [0.0, 3.0]
            "#,
        )
        .unwrap();
        assert!(cfg.channel.build().is_ok());

        // rho = 1 refused on the fitting path
        let cfg = RunConfig::from_toml(
            "[channel]\nrounds = 2\nrho = 1.0\ngamma_t_db = 7.0\n",
        )
        .unwrap();
        assert!(cfg.channel.build().is_err());

        // unknown keys rejected
        assert!(RunConfig::from_toml("[channel]\nrounds = 2\nbogus = 1\n").is_err());
    }

    #[test]
    fn sweep_axis_values() {
        let ax = SweepAxis {
            param: "gamma_t_db".into(),
            start: 0.0,
            stop: 16.0,
            steps: 9,
            scale: "linear".into(),
        };
        ax.validate().unwrap();
        let v = ax.values();
        assert_eq!(v.len(), 9);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[8], 16.0);
        assert!((v[4] - 8.0).abs() < 1e-12);

        let bad = SweepAxis { param: "nope".into(), ..ax.clone() };
        assert!(bad.validate().is_err());
        let bad = SweepAxis { steps: 1, ..ax };
        assert!(bad.validate().is_err());
    }
}
