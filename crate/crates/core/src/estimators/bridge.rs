use crate::chain::{Distribution, PassiveRates};
use crate::error::{Error, Result};
use crate::path::{step_kernel, DiscreteGrid, KernelChain};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeOptions {
    /// Bound on the total-variation residual of the start marginal.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iterations: 100_000,
        }
    }
}

/// The measure closest in relative entropy to the passive chain started
/// from `start`, among those with marginals `start` and `end`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bridge {
    pub initial: Distribution,
    pub chain: KernelChain,
    /// Relative entropy to the passive chain started from `start`.
    pub kl: f64,
    pub iterations: usize,
    /// Total-variation residual of the end marginal after each start update.
    pub residuals: Vec<f64>,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn ln_or_neg_inf(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Iterative proportional fitting on the endpoint coupling of the passive
/// chain, in log-space potentials: the optimal measure has density
/// `f(i_0) g(i_N)` with respect to the reference, and `f`, `g` are fitted
/// alternately to the two marginals.
pub fn sinkhorn_bridge(
    grid: &DiscreteGrid,
    rates: &PassiveRates,
    start: &Distribution,
    end: &Distribution,
    opts: &BridgeOptions,
) -> Result<Bridge> {
    let p = step_kernel([rates.k01(), rates.k10()], grid.h(), 0.0)?;
    let ln_p = p.map(|row| row.map(ln_or_neg_inf));
    // Endpoint transition matrix P^N in log space.
    let mut ln_m = [[0.0, f64::NEG_INFINITY], [f64::NEG_INFINITY, 0.0]];
    for _ in 0..grid.n() {
        let mut next = [[0.0; 2]; 2];
        for i in 0..2 {
            for k in 0..2 {
                next[i][k] = log_sum_exp(ln_m[i][0] + ln_p[0][k], ln_m[i][1] + ln_p[1][k]);
            }
        }
        ln_m = next;
    }
    let ln_start = start.as_array().map(ln_or_neg_inf);
    let ln_end = end.as_array().map(ln_or_neg_inf);
    // Potentials include the reference start law: alpha = log(start * f).
    let mut alpha = [0.0; 2];
    let mut beta = [0.0; 2];
    let mut residuals = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        for i in 0..2 {
            let s = log_sum_exp(ln_m[i][0] + beta[0], ln_m[i][1] + beta[1]);
            alpha[i] = if ln_start[i] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                ln_start[i] - s
            };
        }
        let mut residual = 0.0;
        let mut col = [0.0; 2];
        for (k, c) in col.iter_mut().enumerate() {
            *c = log_sum_exp(alpha[0] + ln_m[0][k], alpha[1] + ln_m[1][k]);
            let mass = if beta[k] == f64::NEG_INFINITY {
                0.0
            } else {
                (*c + beta[k]).exp()
            };
            residual += 0.5 * (mass - end.get(k)).abs();
        }
        residuals.push(residual);
        if residual < opts.tol {
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(Error::NoConvergence { iterations, residual });
        }
        for k in 0..2 {
            beta[k] = if ln_end[k] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                ln_end[k] - col[k]
            };
        }
    }

    // Kernels K_j(i, k) = P(i, k) phi_{j+1}(k) / phi_j(i), phi_N = exp(beta).
    let n = grid.n();
    let mut ln_phi = vec![[0.0; 2]; n + 1];
    ln_phi[n] = beta;
    for j in (0..n).rev() {
        for i in 0..2 {
            ln_phi[j][i] = log_sum_exp(ln_p[i][0] + ln_phi[j + 1][0], ln_p[i][1] + ln_phi[j + 1][1]);
        }
    }
    let kernels = (0..n)
        .map(|j| {
            let mut k = [[0.0; 2]; 2];
            for i in 0..2 {
                for b in 0..2 {
                    let x = ln_p[i][b] + ln_phi[j + 1][b] - ln_phi[j][i];
                    k[i][b] = if x.is_nan() { 0.0 } else { x.exp() };
                }
            }
            k
        })
        .collect();

    let mut kl = 0.0;
    for i in 0..2 {
        if start.get(i) > 0.0 {
            // f_i = exp(alpha_i) / start_i
            kl += start.get(i) * (alpha[i] - ln_start[i]);
        }
        if end.get(i) > 0.0 {
            kl += end.get(i) * beta[i];
        }
    }
    Ok(Bridge {
        initial: *start,
        chain: KernelChain::new(*grid, kernels)?,
        kl,
        iterations,
        residuals,
    })
}
