//! Time reversal of inhomogeneous two-state chains and the entropy
//! production identities that compare a run with its reversal.

use serde::Serialize;

use crate::chain::{equilibrium, Distribution, PassiveRates};
use crate::control::{marginal_ode_options, ControlledMarginal};
use crate::error::{Error, Result};
use crate::estimators::{chain_kl, enumerated_kl, mc_entropy_production, passive_chain, McEstimate, McOptions};
use crate::ode::{integrate, DenseSolution};
use crate::path::{DiscreteGrid, DiscretePath, KernelChain, MAX_ENUMERATION_STEPS};
use crate::protocol::Protocol;
use crate::thermo::{free_energy_gap, integrate_ledger};

/// The time reversal of `base` with boundary marginal `q(T) = terminal`.
///
/// `q` solves `dq/dt = -q U(t)` backwards from `T`, i.e. it is the marginal
/// of the backward process that runs the protocol in reverse. In the
/// forward clock the reversal has rates `ubar_ij = q_j u_ji / q_i`, and the
/// chain with these rates started from `q(0)` has marginal `q(t)`.
#[derive(Debug, Clone)]
pub struct ReversedProtocol {
    base: Protocol,
    terminal: Distribution,
    // q as a function of sigma = T - t.
    q: DenseSolution<2>,
}

/// Builds the reversal of `protocol` with boundary marginal `terminal`.
pub fn reverse(protocol: &Protocol, terminal: &Distribution) -> Result<ReversedProtocol> {
    let horizon = protocol.horizon();
    if let Some(state) = protocol.singular_state() {
        return Err(Error::TerminalSingularity { t: horizon, state });
    }
    for state in 0..2 {
        if terminal.get(state) == 0.0 {
            return Err(Error::MarginalVanishes { t: horizon, state });
        }
    }
    let breaks: Vec<f64> = protocol.breakpoints().iter().map(|b| horizon - b).collect();
    let q = integrate(
        |sigma, q: &[f64; 2]| {
            let u = protocol.rates((horizon - sigma).max(0.0))?;
            let flux = u[0] * q[0] - u[1] * q[1];
            Ok([-flux, flux])
        },
        0.0,
        terminal.as_array(),
        horizon,
        &breaks,
        &marginal_ode_options(),
    )?;
    for (sigma, v) in q.nodes() {
        for (state, &value) in v.iter().enumerate() {
            if !(value > 0.0) {
                return Err(Error::MarginalVanishes {
                    t: horizon - sigma,
                    state,
                });
            }
        }
    }
    Ok(ReversedProtocol {
        base: protocol.clone(),
        terminal: *terminal,
        q,
    })
}

impl ReversedProtocol {
    pub fn base(&self) -> &Protocol {
        &self.base
    }

    pub fn terminal(&self) -> &Distribution {
        &self.terminal
    }

    pub fn horizon(&self) -> f64 {
        self.base.horizon()
    }

    /// The reversal's marginal `q(t)`.
    pub fn marginal(&self, t: f64) -> Result<Distribution> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::TimeOutOfRange { t, horizon });
        }
        Distribution::from_pair(self.q.at(horizon - t))
    }

    /// Forward-clock rates `[ubar01, ubar10]`.
    pub fn rates(&self, t: f64) -> Result<[f64; 2]> {
        let u = self.base.rates(t)?;
        let q = self.marginal(t)?;
        Ok([q.p1() * u[1] / q.p0(), q.p0() * u[0] / q.p1()])
    }
}

/// How the reversed kernels weight the backward marginals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReversalFormula {
    /// `R_j(a, b) = r_{j+1}(b) K_j(b, a) / r_j(a)`.
    #[default]
    Standard,
    /// The marginal ratio inverted, rows renormalized. A negative control
    /// for the identity checks.
    Corrupted,
}

/// Weight of `path` under the reversal of `forward` with boundary law
/// `terminal` at the last step: `q(i_N) prod_j K_j(i_{j+1}, i_j)`.
pub fn reversed_path_probability(forward: &KernelChain, terminal: &Distribution, path: &DiscretePath) -> f64 {
    let s = path.states();
    let n = forward.kernels().len();
    let mut prob = terminal.get(s[n] as usize);
    for (j, k) in forward.kernels().iter().enumerate() {
        prob *= k[s[j + 1] as usize][s[j] as usize];
    }
    prob
}

/// The reversal of `forward` written as a forward chain: its law at step 0
/// and its kernels. The backward marginals are `r_N = terminal` and
/// `r_j(a) = sum_b r_{j+1}(b) K_j(b, a)`.
pub fn discrete_reversed_chain(
    forward: &KernelChain,
    terminal: &Distribution,
    formula: ReversalFormula,
) -> Result<(Distribution, KernelChain)> {
    let n = forward.kernels().len();
    let mut r = vec![[0.0; 2]; n + 1];
    r[n] = terminal.as_array();
    for j in (0..n).rev() {
        let k = forward.kernel(j);
        for a in 0..2 {
            r[j][a] = r[j + 1][0] * k[0][a] + r[j + 1][1] * k[1][a];
        }
    }
    let kernels = (0..n)
        .map(|j| {
            let k = forward.kernel(j);
            let mut out = [[0.0; 2]; 2];
            for a in 0..2 {
                if r[j][a] == 0.0 {
                    out[a][a] = 1.0;
                    continue;
                }
                match formula {
                    ReversalFormula::Standard => {
                        for b in 0..2 {
                            out[a][b] = r[j + 1][b] * k[b][a] / r[j][a];
                        }
                    }
                    ReversalFormula::Corrupted => {
                        let w = [0, 1].map(|b| {
                            if r[j + 1][b] == 0.0 {
                                0.0
                            } else {
                                r[j][a] * k[b][a] / r[j + 1][b]
                            }
                        });
                        let total = w[0] + w[1];
                        for b in 0..2 {
                            out[a][b] = w[b] / total;
                        }
                    }
                }
            }
            out
        })
        .collect();
    Ok((
        Distribution::from_pair(r[0])?,
        KernelChain::new(*forward.grid(), kernels)?,
    ))
}

/// Exact `D(mu || mu_rev)` between a chain started from `p_init` and the
/// reversal of `reversed_of` with boundary law `terminal`.
pub fn discrete_reversal_kl(
    chain: &KernelChain,
    p_init: &Distribution,
    reversed_of: &KernelChain,
    terminal: &Distribution,
    formula: ReversalFormula,
) -> Result<f64> {
    let (r0, rev) = discrete_reversed_chain(reversed_of, terminal, formula)?;
    chain_kl(p_init, chain, &r0, &rev)
}

/// [`discrete_reversal_kl`] with the standard formula, by enumeration.
pub fn enumerated_reversal_kl(
    chain: &KernelChain,
    p_init: &Distribution,
    reversed_of: &KernelChain,
    terminal: &Distribution,
) -> Result<f64> {
    enumerated_kl(
        chain.grid(),
        |d| Ok(chain.path_probability(p_init, d)),
        |d| Ok(reversed_path_probability(reversed_of, terminal, d)),
    )
}

/// Outcome of one check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Too few samples for the standard error to mean anything.
    Inconclusive,
}

/// Below this many paths Monte Carlo comparisons are reported as
/// inconclusive rather than failed.
pub const MIN_CONCLUSIVE_SAMPLES: usize = 1000;

/// Tolerances shared by [`verify_theorem1`] and [`verify_identities`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyOptions {
    pub n_samples: usize,
    pub mc: McOptions,
    /// Coarse step count; discrete terms are also evaluated at twice it.
    pub steps: usize,
    /// Number of standard errors allowed between MC means and their targets.
    pub se_multiple: f64,
    /// Smallest accepted ratio of discretization errors at `N` and `2N`.
    pub min_error_ratio: f64,
    /// Errors at `2N` below this count as converged.
    pub error_floor: f64,
    pub formula: ReversalFormula,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            mc: McOptions::default(),
            steps: 12,
            se_multiple: 3.0,
            min_error_ratio: 1.6,
            error_floor: 1e-9,
            formula: ReversalFormula::Standard,
        }
    }
}

/// A discrete quantity at `N` and `2N` steps compared with its limit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Convergence {
    pub steps: [usize; 2],
    pub values: [f64; 2],
    pub target: f64,
    pub errors: [f64; 2],
    pub status: Status,
}

impl Convergence {
    fn new(steps: [usize; 2], values: [f64; 2], target: f64, opts: &VerifyOptions) -> Self {
        let errors = values.map(|v| (v - target).abs());
        let converged = errors[1] <= opts.error_floor
            || (errors[1] * opts.min_error_ratio <= errors[0] && errors.iter().all(|e| e.is_finite()));
        Self {
            steps,
            values,
            target,
            errors,
            status: if converged { Status::Pass } else { Status::Fail },
        }
    }
}

/// The three evaluations of total entropy production.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem1Report {
    /// `S_tot` from the ledger.
    pub ledger_s_tot: f64,
    /// Monte Carlo mean of the pathwise entropy production.
    pub mc: McEstimate,
    pub mc_status: Status,
    /// Exact discrete `D(mu_u || mu_rev)` against `ledger_s_tot`.
    pub discrete: Convergence,
    /// Enumerated discrete value at `N` steps, when `N` allows it.
    pub enumerated: Option<f64>,
    pub passed: bool,
}

fn grids(horizon: f64, steps: usize) -> Result<[DiscreteGrid; 2]> {
    Ok([
        DiscreteGrid::new(horizon, steps)?,
        DiscreteGrid::new(horizon, 2 * steps)?,
    ])
}

fn mc_status(mc: &McEstimate, target: f64, opts: &VerifyOptions) -> Status {
    if mc.n_samples < MIN_CONCLUSIVE_SAMPLES {
        Status::Inconclusive
    } else if mc.agrees_with(target, opts.se_multiple) {
        Status::Pass
    } else {
        Status::Fail
    }
}

/// Checks that total entropy production equals the relative entropy of a
/// run to its reversal, three ways.
pub fn verify_theorem1(
    protocol: &Protocol,
    rates: &PassiveRates,
    p_init: &Distribution,
    opts: &VerifyOptions,
) -> Result<Theorem1Report> {
    let ledger = integrate_ledger(protocol, rates, p_init)?;
    let s_tot = ledger.totals.s_tot.finite().ok_or(Error::LogDivergence {
        term: "S_tot",
        t: protocol.horizon(),
    })?;
    let terminal = ControlledMarginal::solve(protocol, p_init)?.terminal()?;
    let mc = mc_entropy_production(protocol, p_init, opts.n_samples, &opts.mc)?;
    let grids = grids(protocol.horizon(), opts.steps)?;
    let mut values = [0.0; 2];
    let mut enumerated = None;
    for (v, g) in values.iter_mut().zip(&grids) {
        let chain = KernelChain::from_protocol(protocol, g)?;
        *v = discrete_reversal_kl(&chain, p_init, &chain, &terminal, opts.formula)?;
        if enumerated.is_none() && g.n() <= MAX_ENUMERATION_STEPS {
            enumerated = Some(enumerated_reversal_kl(&chain, p_init, &chain, &terminal)?);
        }
    }
    let discrete = Convergence::new([grids[0].n(), grids[1].n()], values, s_tot, opts);
    let mc_status = mc_status(&mc, s_tot, opts);
    Ok(Theorem1Report {
        ledger_s_tot: s_tot,
        passed: mc_status != Status::Fail && discrete.status == Status::Pass,
        mc,
        mc_status,
        discrete,
        enumerated,
    })
}

/// Both sides of the work identity `W = dF + D(mu_u || mu_rev_u)` and of
/// its passive counterpart `D(mu_u || mu_k) = dF + D(mu_u || mu_rev_k)`,
/// on one grid. Every discrete relative entropy is exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResiduals {
    pub steps: usize,
    pub work: f64,
    pub delta_f: f64,
    /// `D(mu_u || mu_rev_u)`.
    pub kl_reversed_control: f64,
    /// `D(mu_u || mu_k)`, both started from `p_init`.
    pub kl_passive: f64,
    /// `D(mu_u || mu_rev_k)`.
    pub kl_reversed_passive: f64,
    /// `D(mu_u || mu_k)` with the passive chain started from `pi`.
    pub kl_passive_from_equilibrium: f64,
    /// `W - dF - D(mu_u || mu_rev_u)`.
    pub eq14_residual: f64,
    /// `D(mu_u || mu_k) - dF - D(mu_u || mu_rev_k)`.
    pub eq15_residual: f64,
    /// `D(mu_u || mu_k) + D(p(0) || pi) - D(mu_u || mu_k from pi)`.
    pub rearranged_lhs_residual: f64,
    /// `D(mu_u || mu_rev_k) + D(p(T) || pi) - D(mu_u || mu_k from pi)`.
    pub rearranged_rhs_residual: f64,
    pub enumerated: bool,
}

/// Evaluates [`IdentityResiduals`] with `grid.n()` steps. Grids within the
/// enumeration bound are summed path by path; longer ones use the exact
/// chain rule.
pub fn identity_residuals(
    protocol: &Protocol,
    rates: &PassiveRates,
    p_init: &Distribution,
    grid: &DiscreteGrid,
    formula: ReversalFormula,
) -> Result<IdentityResiduals> {
    let ledger = integrate_ledger(protocol, rates, p_init)?;
    let work = ledger.totals.work.finite().ok_or(Error::LogDivergence {
        term: "W",
        t: protocol.horizon(),
    })?;
    let terminal = ControlledMarginal::solve(protocol, p_init)?.terminal()?;
    let pi = equilibrium(rates);
    let d0 = free_energy_gap(p_init, rates);
    let d1 = free_energy_gap(&terminal, rates);
    let delta_f = d1 - d0;

    let chain = KernelChain::from_protocol(protocol, grid)?;
    let passive = passive_chain(rates, grid)?;
    let enumerated = formula == ReversalFormula::Standard && grid.n() <= MAX_ENUMERATION_STEPS;
    let (rev_u, rev_k, kl_k, kl_pi) = if enumerated {
        let mu = |d: &DiscretePath| Ok(chain.path_probability(p_init, d));
        (
            enumerated_kl(grid, mu, |d| Ok(reversed_path_probability(&chain, &terminal, d)))?,
            enumerated_kl(grid, mu, |d| Ok(reversed_path_probability(&passive, &terminal, d)))?,
            enumerated_kl(grid, mu, |d| Ok(passive.path_probability(p_init, d)))?,
            enumerated_kl(grid, mu, |d| Ok(passive.path_probability(&pi, d)))?,
        )
    } else {
        (
            discrete_reversal_kl(&chain, p_init, &chain, &terminal, formula)?,
            discrete_reversal_kl(&chain, p_init, &passive, &terminal, formula)?,
            chain_kl(p_init, &chain, p_init, &passive)?,
            chain_kl(p_init, &chain, &pi, &passive)?,
        )
    };
    Ok(IdentityResiduals {
        steps: grid.n(),
        work,
        delta_f,
        kl_reversed_control: rev_u,
        kl_passive: kl_k,
        kl_reversed_passive: rev_k,
        kl_passive_from_equilibrium: kl_pi,
        eq14_residual: work - delta_f - rev_u,
        eq15_residual: kl_k - delta_f - rev_k,
        rearranged_lhs_residual: kl_k + d0 - kl_pi,
        rearranged_rhs_residual: rev_k + d1 - kl_pi,
        enumerated,
    })
}

/// [`IdentityResiduals`] at `N` and `2N` steps with convergence verdicts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub coarse: IdentityResiduals,
    pub fine: IdentityResiduals,
    pub eq14: Convergence,
    pub eq15: Convergence,
    pub passed: bool,
}

impl IdentityReport {
    /// Names of the identities that failed.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.eq14.status != Status::Pass {
            out.push("eq14");
        }
        if self.eq15.status != Status::Pass {
            out.push("eq15");
        }
        out
    }
}

/// Runs [`identity_residuals`] at `opts.steps` and twice that, requiring
/// both residuals to shrink at least at the first-order rate.
pub fn verify_identities(
    protocol: &Protocol,
    rates: &PassiveRates,
    p_init: &Distribution,
    opts: &VerifyOptions,
) -> Result<IdentityReport> {
    let [g0, g1] = grids(protocol.horizon(), opts.steps)?;
    let coarse = identity_residuals(protocol, rates, p_init, &g0, opts.formula)?;
    let fine = identity_residuals(protocol, rates, p_init, &g1, opts.formula)?;
    let steps = [g0.n(), g1.n()];
    let eq14 = Convergence::new(steps, [coarse.eq14_residual, fine.eq14_residual], 0.0, opts);
    let eq15 = Convergence::new(steps, [coarse.eq15_residual, fine.eq15_residual], 0.0, opts);
    Ok(IdentityReport {
        passed: eq14.status == Status::Pass && eq15.status == Status::Pass,
        coarse,
        fine,
        eq14,
        eq15,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{solve_desirability, ControlledMarginal};
    use crate::path::enumerate_discrete;
    use crate::protocol::{GridProtocol, Interpolation, OptimalProtocol};
    use std::sync::Arc;

    fn sym() -> PassiveRates {
        PassiveRates::new(0.5, 0.5).unwrap()
    }

    fn wiggly() -> Protocol {
        Protocol::Grid(
            GridProtocol::new(
                vec![0.0, 0.4, 1.0, 1.5],
                vec![0.3, 1.4, 0.8, 2.0],
                vec![1.1, 0.2, 0.9, 0.5],
                Interpolation::Linear,
            )
            .unwrap(),
        )
    }

    #[test]
    fn passive_at_equilibrium_is_self_reversed() {
        let rates = PassiveRates::new(0.3, 1.2).unwrap();
        let base = Protocol::passive(rates, 2.0).unwrap();
        let pi = equilibrium(&rates);
        let rev = reverse(&base, &pi).unwrap();
        for t in [0.0, 0.5, 1.3, 2.0] {
            let u = rev.rates(t).unwrap();
            assert!((u[0] - 0.3).abs() < 1e-12 && (u[1] - 1.2).abs() < 1e-12);
            assert!((rev.marginal(t).unwrap().p0() - pi.p0()).abs() < 1e-13);
        }
    }

    #[test]
    fn boundary_rate_by_hand() {
        let base = Protocol::passive(sym(), 1.0).unwrap();
        let rev = reverse(&base, &Distribution::new(0.9, 0.1).unwrap()).unwrap();
        let u = rev.rates(1.0).unwrap();
        assert!((u[0] - 0.1 * 0.5 / 0.9).abs() < 1e-15);
        assert!((u[0] - 0.055556).abs() < 1e-6);
    }

    #[test]
    fn reversed_marginal_is_its_own_flow() {
        let base = wiggly();
        let rev = Arc::new(reverse(&base, &Distribution::new(0.7, 0.3).unwrap()).unwrap());
        let q0 = rev.marginal(0.0).unwrap();
        let run = ControlledMarginal::solve(&Protocol::Reversed(rev.clone()), &q0).unwrap();
        for k in 0..=30 {
            let t = 1.5 * k as f64 / 30.0;
            assert!((run.at(t).unwrap().p0() - rev.marginal(t).unwrap().p0()).abs() < 1e-9);
        }
    }

    #[test]
    fn double_reversal_returns_the_protocol() {
        let base = wiggly();
        let first = Arc::new(reverse(&base, &Distribution::new(0.2, 0.8).unwrap()).unwrap());
        // In its own clock the reversal runs backwards from q(T).
        let backward = Protocol::Reversed(first.clone()).time_flipped().unwrap();
        let second = reverse(&backward, &first.marginal(0.0).unwrap()).unwrap();
        let again = Protocol::Reversed(Arc::new(second)).time_flipped().unwrap();
        for k in 0..=40 {
            let t = 1.5 * k as f64 / 40.0;
            let (a, b) = (again.rates(t).unwrap(), base.rates(t).unwrap());
            assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn guarded_inputs() {
        let z = solve_desirability(&sym(), [1.0, 0.0], 1.0).unwrap();
        let opt = Protocol::Optimal(OptimalProtocol::new(z));
        assert!(matches!(
            reverse(&opt, &Distribution::uniform()),
            Err(Error::TerminalSingularity { .. })
        ));
        let base = Protocol::passive(sym(), 1.0).unwrap();
        assert!(matches!(
            reverse(&base, &Distribution::point(0)),
            Err(Error::MarginalVanishes { state: 1, .. })
        ));
    }

    #[test]
    fn discrete_reversal_is_a_probability_measure_matching_its_chain() {
        let g = DiscreteGrid::new(1.5, 8).unwrap();
        let chain = KernelChain::from_protocol(&wiggly(), &g).unwrap();
        let q = Distribution::new(0.35, 0.65).unwrap();
        let (r0, rev) = discrete_reversed_chain(&chain, &q, ReversalFormula::Standard).unwrap();
        let mut total = 0.0;
        for d in enumerate_discrete(&g).unwrap() {
            let direct = reversed_path_probability(&chain, &q, &d);
            assert!((direct - rev.path_probability(&r0, &d)).abs() < 1e-15);
            total += direct;
        }
        assert!((total - 1.0).abs() < 1e-13);
        assert!((rev.marginals(&r0)[8][0] - 0.35).abs() < 1e-15);
    }

    #[test]
    fn chain_rule_reversal_kl_matches_enumeration() {
        let g = DiscreteGrid::new(1.5, 10).unwrap();
        let init = Distribution::new(0.8, 0.2).unwrap();
        let chain = KernelChain::from_protocol(&wiggly(), &g).unwrap();
        let passive = passive_chain(&sym(), &g).unwrap();
        let q = Distribution::new(0.4, 0.6).unwrap();
        for other in [&chain, &passive] {
            let a = discrete_reversal_kl(&chain, &init, other, &q, ReversalFormula::Standard).unwrap();
            let b = enumerated_reversal_kl(&chain, &init, other, &q).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn passive_from_equilibrium_has_zero_residuals() {
        let rates = PassiveRates::new(0.7, 0.3).unwrap();
        let base = Protocol::passive(rates, 1.0).unwrap();
        let pi = equilibrium(&rates);
        let g = DiscreteGrid::new(1.0, 12).unwrap();
        let r = identity_residuals(&base, &rates, &pi, &g, ReversalFormula::Standard).unwrap();
        assert!(r.enumerated);
        for v in [
            r.eq14_residual,
            r.eq15_residual,
            r.rearranged_lhs_residual,
            r.rearranged_rhs_residual,
            r.kl_passive,
            r.kl_reversed_control,
        ] {
            assert!(v.abs() < 1e-12, "{r:?}");
        }
        let opts = VerifyOptions {
            n_samples: 2000,
            ..VerifyOptions::default()
        };
        let t = verify_theorem1(&base, &rates, &pi, &opts).unwrap();
        assert!(t.passed, "{t:?}");
        assert!(t.ledger_s_tot.abs() < 1e-14);
    }

    #[test]
    fn random_grid_protocol_residuals_shrink_with_h() {
        use rand::Rng;
        let rates = sym();
        let mut r = crate::rng::stream(15, 0);
        for _ in 0..5 {
            let times = vec![0.0, 0.25, 0.5, 0.75, 1.0];
            let mut rate = || r.random_range(0.1..3.0);
            let u01 = (0..5).map(|_| rate()).collect();
            let u10 = (0..5).map(|_| rate()).collect();
            let base = Protocol::Grid(GridProtocol::new(times, u01, u10, Interpolation::Linear).unwrap());
            let p = Distribution::from_p0(r.random_range(0.0..1.0)).unwrap();
            let [c, f] = [12, 24].map(|n| {
                identity_residuals(
                    &base,
                    &rates,
                    &p,
                    &DiscreteGrid::new(1.0, n).unwrap(),
                    ReversalFormula::Standard,
                )
                .unwrap()
            });
            assert!(c.enumerated && !f.enumerated);
            assert!(c.eq15_residual.abs() <= 1.0 / 12.0, "{c:?}");
            assert!(f.eq15_residual.abs() * 1.6 <= c.eq15_residual.abs(), "{c:?} {f:?}");
            for x in [c, f] {
                assert!(x.rearranged_lhs_residual.abs() < 1e-12, "{x:?}");
                assert!((x.rearranged_rhs_residual + x.eq15_residual).abs() < 1e-12, "{x:?}");
            }
        }
    }

    #[test]
    fn truncated_optimal_control_residual_is_first_order() {
        let z = crate::control::solve_desirability(&sym(), [1.0, 0.0], 1.0).unwrap();
        let base = Protocol::Optimal(OptimalProtocol::truncated(z, 0.1).unwrap());
        let pi = equilibrium(&sym());
        let [c, f] = [12, 24].map(|n| {
            identity_residuals(
                &base,
                &sym(),
                &pi,
                &DiscreteGrid::new(1.0, n).unwrap(),
                ReversalFormula::Standard,
            )
            .unwrap()
        });
        assert!(c.eq14_residual.abs() < (1.0f64 / 12.0).max(1e-6), "{c:?}");
        assert!(f.eq14_residual.abs() * 1.6 <= c.eq14_residual.abs(), "{c:?} {f:?}");
    }

    #[test]
    fn theorem_holds_for_a_quench() {
        let base = Protocol::Grid(GridProtocol::constant(1.0, 2.0, 0.5).unwrap());
        let opts = VerifyOptions {
            n_samples: 4000,
            ..VerifyOptions::default()
        };
        let t = verify_theorem1(&base, &sym(), &Distribution::uniform(), &opts).unwrap();
        assert!(t.passed, "{t:?}");
        assert!((t.enumerated.unwrap() - t.discrete.values[0]).abs() < 1e-12);
        let ids = verify_identities(&base, &sym(), &Distribution::uniform(), &opts).unwrap();
        assert!(ids.passed && ids.failures().is_empty(), "{ids:?}");
    }

    #[test]
    fn corrupted_reversal_is_caught() {
        let base = Protocol::Grid(GridProtocol::constant(1.0, 2.0, 0.5).unwrap());
        let opts = VerifyOptions {
            formula: ReversalFormula::Corrupted,
            ..VerifyOptions::default()
        };
        let ids = verify_identities(&base, &sym(), &Distribution::uniform(), &opts).unwrap();
        assert!(ids.failures().contains(&"eq15"));
    }

    #[test]
    fn few_samples_are_inconclusive() {
        let base = Protocol::Grid(GridProtocol::constant(1.0, 2.0, 0.5).unwrap());
        let opts = VerifyOptions {
            n_samples: 10,
            ..VerifyOptions::default()
        };
        let t = verify_theorem1(&base, &sym(), &Distribution::uniform(), &opts).unwrap();
        assert_eq!(t.mc_status, Status::Inconclusive);
        assert!(t.passed);
    }
}
