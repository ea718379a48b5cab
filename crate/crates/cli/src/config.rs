use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kl_erasure::chain::{equilibrium, Distribution, PassiveRates};
use kl_erasure::control::{erasure_protocol, solve_desirability};
use kl_erasure::estimators::config_digest;
use kl_erasure::protocol::{GridProtocol, OptimalProtocol, Protocol};
use serde::{Deserialize, Serialize};

/// Which protocol `simulate` and `thermo-report` run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    /// The KL-optimal erasure protocol.
    Optimal,
    /// The optimal protocol frozen on its last tenth.
    Truncated,
    /// The passive rates.
    Passive,
    /// Constant rates `u01 = 4 k01`, `u10 = k10`.
    Quench,
}

/// Fraction of the horizon over which `truncated` freezes the rates.
pub const TRUNCATION_FRACTION: f64 = 0.1;

/// The flat key-value configuration. Every field can also be given on the
/// command line, which takes precedence over the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tau_r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k01: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k10: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    pub steps: usize,
    pub threads: usize,
    pub out: PathBuf,
    pub kt: f64,
    pub sigma: f64,
    pub ratios: Vec<f64>,
    pub protocol: ProtocolKind,
    pub grid_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tau_r: 1.0,
            tau_e: None,
            k01: None,
            k10: None,
            p0: None,
            samples: 100_000,
            seed: 0,
            steps: 12,
            threads: 0,
            out: PathBuf::from("."),
            kt: 1.0,
            sigma: 1.0,
            ratios: vec![0.01, 0.1, 0.5, 1.0, 2.0, 10.0],
            protocol: ProtocolKind::Optimal,
            grid_points: 200,
        }
    }
}

/// Optional overrides, as read from a file or the command line.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub tau_r: Option<f64>,
    pub tau_e: Option<f64>,
    pub k01: Option<f64>,
    pub k10: Option<f64>,
    pub p0: Option<f64>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub kt: Option<f64>,
    pub sigma: Option<f64>,
    pub ratios: Option<Vec<f64>>,
    pub protocol: Option<ProtocolKind>,
    pub grid_points: Option<usize>,
}

impl RunConfig {
    pub fn apply(&mut self, o: Overrides) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = o.$f { self.$f = v; })*};
        }
        macro_rules! set_opt {
            ($($f:ident),*) => {$(if o.$f.is_some() { self.$f = o.$f; })*};
        }
        set!(
            tau_r,
            samples,
            seed,
            steps,
            threads,
            out,
            kt,
            sigma,
            ratios,
            protocol,
            grid_points
        );
        set_opt!(tau_e, k01, k10, p0);
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(toml::from_str(text).context("invalid configuration file")?);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if !(v.is_finite() && v > 0.0) {
                bail!("{name} must be a positive number, got {v}");
            }
            Ok(())
        };
        positive("tau_r", self.tau_r)?;
        if let Some(t) = self.tau_e {
            positive("tau_e", t)?;
        }
        match (self.k01, self.k10) {
            (Some(a), Some(b)) => {
                positive("k01", a)?;
                positive("k10", b)?;
            }
            (None, None) => {}
            _ => bail!("k01 and k10 must be given together"),
        }
        if let Some(p) = self.p0 {
            if !(0.0..=1.0).contains(&p) {
                bail!("p0 must lie in [0, 1], got {p}");
            }
        }
        if self.samples < 2 {
            bail!("samples must be at least 2, got {}", self.samples);
        }
        if self.steps == 0 {
            bail!("steps must be at least 1");
        }
        if self.grid_points == 0 {
            bail!("grid_points must be at least 1");
        }
        positive("kt", self.kt)?;
        positive("sigma", self.sigma)?;
        if self.ratios.is_empty() {
            bail!("ratios must not be empty");
        }
        for &r in &self.ratios {
            positive("every ratio", r)?;
        }
        Ok(())
    }

    pub fn rates(&self) -> Result<PassiveRates> {
        Ok(match (self.k01, self.k10) {
            (Some(a), Some(b)) => PassiveRates::new(a, b)?,
            _ => PassiveRates::symmetric(self.tau_r)?,
        })
    }

    pub fn tau_e(&self) -> Result<f64> {
        self.tau_e
            .context("tau_e is required (--tau-e or `tau_e` in the config file)")
    }

    /// The initial law: `p0` if given, else equilibrium.
    pub fn p_init(&self) -> Result<Distribution> {
        Ok(match self.p0 {
            Some(p) => Distribution::from_p0(p)?,
            None => equilibrium(&self.rates()?),
        })
    }

    pub fn protocol(&self, kind: ProtocolKind) -> Result<Protocol> {
        let rates = self.rates()?;
        let tau_e = self.tau_e()?;
        Ok(match kind {
            ProtocolKind::Optimal => erasure_protocol(&rates, tau_e)?,
            ProtocolKind::Truncated => {
                let z = solve_desirability(&rates, [1.0, 0.0], tau_e)?;
                Protocol::Optimal(OptimalProtocol::truncated(z, TRUNCATION_FRACTION * tau_e)?)
            }
            ProtocolKind::Passive => Protocol::passive(rates, tau_e)?,
            ProtocolKind::Quench => Protocol::Grid(GridProtocol::constant(tau_e, 4.0 * rates.k01(), rates.k10())?),
        })
    }

    /// The configuration as embedded in reports: everything that affects
    /// the numbers, so the output location and thread count are left out.
    pub fn report_value(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("configuration serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("out");
            map.remove("threads");
        }
        v
    }

    pub fn digest(&self) -> String {
        config_digest(&self.report_value().to_string())
    }
}
