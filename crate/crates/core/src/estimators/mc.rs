use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::Distribution;
use crate::control::ControlledMarginal;
use crate::error::{Error, Result};
use crate::parallel::{map_indices, pairwise_sum, Execution};
use crate::path::{log_rn_derivative, sample_path_seeded, Path, SampleOptions};
use crate::protocol::Protocol;

/// Hex SHA-256 of a configuration string.
pub fn config_digest(config: &str) -> String {
    hex::encode(Sha256::digest(config.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub config_digest: String,
}

impl McEstimate {
    /// Mean and standard error `sd / sqrt(n)` of `values`.
    pub fn from_samples(values: &[f64], config: &str) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::TooFewSamples { min: 2, got: n });
        }
        let mean = pairwise_sum(values) / n as f64;
        let dev: Vec<f64> = values.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&dev) / (n - 1) as f64;
        Ok(Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n_samples: n,
            config_digest: config_digest(config),
        })
    }

    /// Whether `target` lies within `k` standard errors of the mean.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error + 1e-12 * (1.0 + target.abs())
    }
}

/// Sampling configuration. Path `i` uses stream `stream_offset + i` of
/// `seed`, so runs that share a seed and offset use common random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct McOptions {
    pub seed: u64,
    pub stream_offset: u64,
    pub execution: Execution,
}

fn sample_values<F>(n: usize, opts: &McOptions, f: F) -> Result<Vec<f64>>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    map_indices(n as u64, opts.execution, |i| f(opts.stream_offset + i))
        .into_iter()
        .collect()
}

/// Monte Carlo estimate of `D(mu_sampling || mu_reference)` from `n` paths.
pub fn mc_kl(
    sampling: &Protocol,
    reference: &Protocol,
    p_init: &Distribution,
    n: usize,
    opts: &McOptions,
) -> Result<McEstimate> {
    let values = sample_values(n, opts, |stream| {
        let path = sample_path_seeded(sampling, p_init, opts.seed, stream, &SampleOptions::default())?;
        log_rn_derivative(&path, sampling, reference)
    })?;
    let config = format!(
        "mc_kl|sampling={}|reference={}|p_init=[{:?},{:?}]|n={n}|seed={}|offset={}",
        sampling.describe(),
        reference.describe(),
        p_init.p0(),
        p_init.p1(),
        opts.seed,
        opts.stream_offset
    );
    McEstimate::from_samples(&values, &config)
}

/// `sum over jumps (t, i -> j)` of `log(p_i(t) u_ij(t) / (p_j(t) u_ji(t)))`,
/// with `marginals` the solution of the master equation under `protocol`.
pub fn trajectory_entropy_production<M>(path: &Path, protocol: &Protocol, marginals: M) -> Result<f64>
where
    M: Fn(f64) -> Result<Distribution>,
{
    let mut total = 0.0;
    let mut i = path.initial_state();
    for &(t, j) in path.jumps() {
        let p = marginals(t)?;
        let u = protocol.rates(t)?;
        let forward = p.get(i) * u[i];
        let backward = p.get(j) * u[j];
        if forward == 0.0 {
            return Err(Error::LogDivergence { term: "p_i u_ij", t });
        }
        if backward == 0.0 {
            return Err(Error::LogDivergence { term: "p_j u_ji", t });
        }
        total += p.get(i).ln() + u[i].ln() - p.get(j).ln() - u[j].ln();
        i = j;
    }
    Ok(total)
}

/// Monte Carlo mean of [`trajectory_entropy_production`] over `n` paths.
pub fn mc_entropy_production(
    protocol: &Protocol,
    p_init: &Distribution,
    n: usize,
    opts: &McOptions,
) -> Result<McEstimate> {
    let marginal = ControlledMarginal::solve(protocol, p_init)?;
    let values = sample_values(n, opts, |stream| {
        let path = sample_path_seeded(protocol, p_init, opts.seed, stream, &SampleOptions::default())?;
        trajectory_entropy_production(&path, protocol, |t| marginal.at(t))
    })?;
    let config = format!(
        "entropy_production|protocol={}|p_init=[{:?},{:?}]|n={n}|seed={}|offset={}",
        protocol.describe(),
        p_init.p0(),
        p_init.p1(),
        opts.seed,
        opts.stream_offset
    );
    McEstimate::from_samples(&values, &config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{equilibrium, PassiveRates};

    #[test]
    fn summary_statistics() {
        let e = McEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0], "x").unwrap();
        assert_eq!(e.mean, 2.5);
        assert!((e.std_error - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(e.config_digest.len(), 64);
        assert!(McEstimate::from_samples(&[1.0], "x").is_err());
    }

    #[test]
    fn identical_protocols_estimate_zero() {
        let rates = PassiveRates::new(0.5, 0.5).unwrap();
        let p = Protocol::passive(rates, 1.0).unwrap();
        let e = mc_kl(&p, &p, &equilibrium(&rates), 100, &McOptions::default()).unwrap();
        assert_eq!((e.mean, e.std_error), (0.0, 0.0));
    }

    #[test]
    fn execution_modes_are_bit_identical() {
        let rates = PassiveRates::new(0.7, 0.2).unwrap();
        let p = crate::control::erasure_protocol(&rates, 0.8).unwrap();
        let q = Protocol::passive(rates, 0.8).unwrap();
        let init = Distribution::new(0.4, 0.6).unwrap();
        let mut opts = McOptions {
            seed: 9,
            ..McOptions::default()
        };
        opts.execution = Execution::Sequential;
        let a = mc_kl(&p, &q, &init, 500, &opts).unwrap();
        opts.execution = Execution::Parallel;
        let b = mc_kl(&p, &q, &init, 500, &opts).unwrap();
        assert_eq!(a, b);
    }
}
