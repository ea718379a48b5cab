//! Estimators of path-space relative entropies: Monte Carlo over sampled
//! paths, exact discrete-time sums, and the Schrödinger-bridge oracle.

mod bridge;
mod discrete;
mod mc;

pub use bridge::{sinkhorn_bridge, Bridge, BridgeOptions};
pub use discrete::{
    chain_kl, discrete_backward_recursion, enumerated_discrete_kl, enumerated_kl, exact_discrete_kl, passive_chain,
    DiscreteOptimum,
};
pub use mc::{config_digest, mc_entropy_production, mc_kl, trajectory_entropy_production, McEstimate, McOptions};
