use crate::chain::{Distribution, PassiveRates};
use crate::error::{Error, Result};
use crate::path::{enumerate_discrete, step_kernel, DiscreteGrid, DiscretePath, KernelChain};
use crate::protocol::Protocol;

/// `D(A || B)` for two discrete-time chains, by the chain rule:
/// the initial relative entropy plus the expected per-step kernel
/// relative entropies under `A`'s marginals. Exact and `O(N)`.
pub fn chain_kl(init_a: &Distribution, a: &KernelChain, init_b: &Distribution, b: &KernelChain) -> Result<f64> {
    if a.kernels().len() != b.kernels().len() {
        return Err(Error::InvalidArgument("chains have different lengths".into()));
    }
    let mut total = 0.0;
    for i in 0..2 {
        let p = init_a.get(i);
        if p > 0.0 {
            let q = init_b.get(i);
            if q == 0.0 {
                return Err(Error::AbsoluteContinuity { t: 0.0, from: i, to: i });
            }
            total += p * (p / q).ln();
        }
    }
    let marginals = a.marginals(init_a);
    let h = a.grid().h();
    for (j, (ka, kb)) in a.kernels().iter().zip(b.kernels()).enumerate() {
        for i in 0..2 {
            let w = marginals[j][i];
            if w <= 0.0 {
                continue;
            }
            let mut row = 0.0;
            for k in 0..2 {
                let pa = ka[i][k];
                if pa > 0.0 {
                    let pb = kb[i][k];
                    if pb == 0.0 {
                        return Err(Error::AbsoluteContinuity {
                            t: j as f64 * h,
                            from: i,
                            to: k,
                        });
                    }
                    row += pa * (pa / pb).ln();
                }
            }
            total += w * row;
        }
    }
    Ok(total)
}

/// Exact `D(mu^h_sampling || mu^h_reference)` with both chains started
/// from `p_init`.
pub fn exact_discrete_kl(
    grid: &DiscreteGrid,
    sampling: &Protocol,
    reference: &Protocol,
    p_init: &Distribution,
) -> Result<f64> {
    let a = KernelChain::from_protocol(sampling, grid)?;
    let b = KernelChain::from_protocol(reference, grid)?;
    chain_kl(p_init, &a, p_init, &b)
}

/// `sum_paths mu_a log(mu_a / mu_b)` by brute-force enumeration.
pub fn enumerated_kl<A, B>(grid: &DiscreteGrid, mu_a: A, mu_b: B) -> Result<f64>
where
    A: Fn(&DiscretePath) -> Result<f64>,
    B: Fn(&DiscretePath) -> Result<f64>,
{
    let mut total = 0.0;
    for path in enumerate_discrete(grid)? {
        let pa = mu_a(&path)?;
        if pa > 0.0 {
            let pb = mu_b(&path)?;
            if pb == 0.0 {
                return Err(Error::AbsoluteContinuity {
                    t: 0.0,
                    from: path.states()[0] as usize,
                    to: path.states()[0] as usize,
                });
            }
            total += pa * (pa / pb).ln();
        }
    }
    Ok(total)
}

/// [`exact_discrete_kl`] by enumerating every path (`N` up to 22).
pub fn enumerated_discrete_kl(
    grid: &DiscreteGrid,
    sampling: &Protocol,
    reference: &Protocol,
    p_init: &Distribution,
) -> Result<f64> {
    let a = KernelChain::from_protocol(sampling, grid)?;
    let b = KernelChain::from_protocol(reference, grid)?;
    enumerated_kl(
        grid,
        |d| Ok(a.path_probability(p_init, d)),
        |d| Ok(b.path_probability(p_init, d)),
    )
}

/// One-step passive kernels on `grid`.
pub fn passive_chain(rates: &PassiveRates, grid: &DiscreteGrid) -> Result<KernelChain> {
    let k = step_kernel([rates.k01(), rates.k10()], grid.h(), 0.0)?;
    KernelChain::new(*grid, vec![k; grid.n()])
}

/// The discrete KL-optimal chain toward a terminal desirability.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOptimum {
    /// `z_j` for `j = 0..=N`.
    pub z: Vec<[f64; 2]>,
    pub chain: KernelChain,
}

impl DiscreteOptimum {
    /// `sum_i p_i (-log z_0(i))`, the optimal discrete cost from `p_init`.
    pub fn expected_cost(&self, p_init: &Distribution) -> f64 {
        (0..2)
            .filter(|&i| p_init.get(i) > 0.0)
            .map(|i| -p_init.get(i) * self.z[0][i].ln())
            .sum()
    }
}

/// `z_j = (I + hK) z_{j+1}` from `z_N = terminal`, with optimal kernels
/// `P(a, b) z_{j+1}(b) / z_j(a)`.
pub fn discrete_backward_recursion(
    rates: &PassiveRates,
    grid: &DiscreteGrid,
    terminal: [f64; 2],
) -> Result<DiscreteOptimum> {
    let h = grid.h();
    let product = h * rates.total();
    if !(product < 1.0) {
        return Err(Error::StepTooLarge { h, t: 0.0, product });
    }
    if terminal.iter().any(|z| !(z.is_finite() && *z >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "invalid terminal desirability {terminal:?}"
        )));
    }
    if terminal == [0.0, 0.0] {
        return Err(Error::ZeroTerminal);
    }
    let p = step_kernel([rates.k01(), rates.k10()], h, 0.0)?;
    let n = grid.n();
    let mut z = vec![[0.0; 2]; n + 1];
    z[n] = terminal;
    for j in (0..n).rev() {
        for a in 0..2 {
            z[j][a] = p[a][0] * z[j + 1][0] + p[a][1] * z[j + 1][1];
        }
    }
    let kernels = (0..n)
        .map(|j| {
            let mut k = [[0.0; 2]; 2];
            for a in 0..2 {
                for b in 0..2 {
                    k[a][b] = p[a][b] * z[j + 1][b] / z[j][a];
                }
            }
            k
        })
        .collect();
    Ok(DiscreteOptimum {
        z,
        chain: KernelChain::new(*grid, kernels)?,
    })
}
