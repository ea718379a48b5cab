//! Trajectories of the two-state chain, their sampling, and path-measure
//! arithmetic in continuous and discrete time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::Distribution;
use crate::error::{Error, Result};
use crate::ode::prev_float;
use crate::protocol::Protocol;
use crate::rng;

/// Largest `N` for which all `2^(N+1)` discrete paths may be enumerated.
pub const MAX_ENUMERATION_STEPS: usize = 22;

/// A right-continuous trajectory on `[0, T]`: the initial state and the
/// ordered jump times with the state entered at each jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPath", into = "RawPath")]
pub struct Path {
    initial_state: usize,
    jumps: Vec<(f64, usize)>,
    horizon: f64,
}

// Wire format, one JSON object per line.
#[derive(Serialize, Deserialize)]
struct RawPath {
    initial: usize,
    jumps: Vec<(f64, usize)>,
    horizon: f64,
}

impl TryFrom<RawPath> for Path {
    type Error = Error;
    fn try_from(raw: RawPath) -> Result<Self> {
        Path::new(raw.initial, raw.jumps, raw.horizon)
    }
}

impl From<Path> for RawPath {
    fn from(p: Path) -> Self {
        RawPath {
            initial: p.initial_state,
            jumps: p.jumps,
            horizon: p.horizon,
        }
    }
}

impl Path {
    pub fn new(initial_state: usize, jumps: Vec<(f64, usize)>, horizon: f64) -> Result<Self> {
        if initial_state > 1 {
            return Err(Error::InvalidArgument(format!("state {initial_state} is not 0 or 1")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let mut state = initial_state;
        let mut last = 0.0;
        for &(t, target) in &jumps {
            if !(t > last && t < horizon) {
                return Err(Error::InvalidArgument(format!(
                    "jump times must increase strictly inside (0, {horizon}); got {t} after {last}"
                )));
            }
            if target != 1 - state {
                return Err(Error::InvalidArgument(format!(
                    "jump at {t} targets {target} from state {state}"
                )));
            }
            state = target;
            last = t;
        }
        Ok(Self {
            initial_state,
            jumps,
            horizon,
        })
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn jumps(&self) -> &[(f64, usize)] {
        &self.jumps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn final_state(&self) -> usize {
        self.jumps.last().map_or(self.initial_state, |&(_, s)| s)
    }

    /// State at `t`, right-continuous at jumps.
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jumps.partition_point(|&(tj, _)| tj <= t);
        if k == 0 {
            self.initial_state
        } else {
            self.jumps[k - 1].1
        }
    }

    /// Holding intervals `(state, start, end)` covering `[0, T]`.
    pub fn holding_intervals(&self) -> Vec<(usize, f64, f64)> {
        let mut out = Vec::with_capacity(self.jumps.len() + 1);
        let mut state = self.initial_state;
        let mut t = 0.0;
        for &(tj, target) in &self.jumps {
            out.push((state, t, tj));
            state = target;
            t = tj;
        }
        out.push((state, t, self.horizon));
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SampleOptions {
    /// Demand that every path ends in this state: a path that sits elsewhere
    /// with too little hazard left to leave is a protocol error.
    pub erasure_target: Option<usize>,
}

/// Draws a path under `protocol` from `p_init` by inverting the integrated
/// hazard of each holding interval against a unit exponential.
pub fn sample_path<R: Rng + ?Sized>(
    protocol: &Protocol,
    p_init: &Distribution,
    rng: &mut R,
    options: &SampleOptions,
) -> Result<Path> {
    let horizon = protocol.horizon();
    let singular = protocol.singular_state();
    let mut state = if rng.random::<f64>() < p_init.p0() { 0 } else { 1 };
    let initial = state;
    let mut t = 0.0;
    let mut jumps = Vec::new();
    loop {
        let e = -(-rng.random::<f64>()).ln_1p();
        let next = protocol.next_jump(state, t, e)?;
        let mut b = match next {
            Some(b) if b < horizon => b,
            Some(_) if singular == Some(state) => prev_float(horizon),
            _ => {
                if let Some(target) = options.erasure_target {
                    if state != target {
                        return Err(Error::HazardBracket { state, t });
                    }
                }
                break;
            }
        };
        if b <= t {
            b = f64::from_bits(t.to_bits() + 1);
            if b >= horizon {
                return Err(Error::HazardBracket { state, t });
            }
        }
        state = 1 - state;
        jumps.push((b, state));
        t = b;
    }
    Path::new(initial, jumps, horizon)
}

/// [`sample_path`] on stream `stream` of `seed`.
pub fn sample_path_seeded(
    protocol: &Protocol,
    p_init: &Distribution,
    seed: u64,
    stream: u64,
    options: &SampleOptions,
) -> Result<Path> {
    let mut r = rng::stream(seed, stream);
    sample_path(protocol, p_init, &mut r, options)
}

/// `log dmu_num/dmu_den` of a path whose initial laws agree:
/// the jump terms `log(u_num/u_den)` minus the integrated rate difference.
pub fn log_rn_derivative(path: &Path, numerator: &Protocol, denominator: &Protocol) -> Result<f64> {
    let horizon = path.horizon();
    for p in [numerator, denominator] {
        if (p.horizon() - horizon).abs() > 1e-12 * horizon {
            return Err(Error::InvalidArgument(format!(
                "protocol horizon {} differs from path horizon {horizon}",
                p.horizon()
            )));
        }
    }
    let mut total = 0.0;
    for (state, a, b) in path.holding_intervals() {
        let hn = numerator.integrated_hazard(state, a, b)?;
        let hd = denominator.integrated_hazard(state, a, b)?;
        match (hn.is_finite(), hd.is_finite()) {
            (true, true) => total -= hn - hd,
            (false, true) => return Ok(f64::NEG_INFINITY),
            (true, false) => return Ok(f64::INFINITY),
            (false, false) => {
                return Err(Error::LogDivergence {
                    term: "integrated hazard",
                    t: b,
                })
            }
        }
    }
    let mut state = path.initial_state();
    for &(t, target) in path.jumps() {
        let un = numerator.rate(state, t)?;
        let ud = denominator.rate(state, t)?;
        if ud == 0.0 {
            return Err(Error::AbsoluteContinuity {
                t,
                from: state,
                to: target,
            });
        }
        total += (un / ud).ln();
        state = target;
    }
    Ok(total)
}

/// Time discretization `t_j = j h`, `j = 0..=n`, of `[0, n h]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteGrid {
    h: f64,
    n: usize,
}

impl DiscreteGrid {
    pub fn new(horizon: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("a discrete grid needs N >= 1 steps".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self {
            h: horizon / n as f64,
            n,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.h
    }

    pub fn horizon(&self) -> f64 {
        self.n as f64 * self.h
    }
}

/// A discrete-time path `(i_0, ..., i_N)` with step `h`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DiscretePath {
    states: Vec<u8>,
    h_bits: u64,
}

impl DiscretePath {
    pub fn new(states: Vec<u8>, h: f64) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::InvalidArgument("a discrete path needs N >= 1 steps".into()));
        }
        if states.iter().any(|&s| s > 1) {
            return Err(Error::InvalidArgument("discrete path states must be 0 or 1".into()));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
        }
        Ok(Self {
            states,
            h_bits: h.to_bits(),
        })
    }

    pub fn states(&self) -> &[u8] {
        &self.states
    }

    pub fn h(&self) -> f64 {
        f64::from_bits(self.h_bits)
    }

    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }
}

/// One-step transition matrix for rates `u` over a step `h`.
pub fn step_kernel(u: [f64; 2], h: f64, t: f64) -> Result<[[f64; 2]; 2]> {
    for &r in &u {
        let product = h * r;
        if !(product < 1.0) {
            return Err(Error::StepTooLarge { h, t, product });
        }
    }
    Ok([[1.0 - h * u[0], h * u[0]], [h * u[1], 1.0 - h * u[1]]])
}

/// `mu^h(path) = p_{i_0} prod_j u^h_{i_j i_{j+1}}(j h)` under `protocol`.
pub fn discrete_measure(dpath: &DiscretePath, protocol: &Protocol, p_init: &Distribution) -> Result<f64> {
    let h = dpath.h();
    let n = dpath.n_steps();
    if (n as f64 * h - protocol.horizon()).abs() > 1e-9 * protocol.horizon() {
        return Err(Error::InvalidArgument(format!(
            "path covers {} but the protocol horizon is {}",
            n as f64 * h,
            protocol.horizon()
        )));
    }
    let s = dpath.states();
    let mut prob = p_init.get(s[0] as usize);
    for j in 0..n {
        let t = j as f64 * h;
        let k = step_kernel(protocol.rates(t)?, h, t)?;
        prob *= k[s[j] as usize][s[j + 1] as usize];
    }
    Ok(prob)
}

/// Every path in `{0,1}^(N+1)` exactly once, in binary order with `i_0`
/// as the most significant digit.
pub fn enumerate_discrete(grid: &DiscreteGrid) -> Result<impl Iterator<Item = DiscretePath>> {
    let n = grid.n();
    if n > MAX_ENUMERATION_STEPS {
        return Err(Error::EnumerationTooLarge {
            n_steps: n,
            max: MAX_ENUMERATION_STEPS,
        });
    }
    let h = grid.h();
    let len = n + 1;
    Ok((0u64..(1u64 << len)).map(move |code| {
        let states = (0..len).map(|k| ((code >> (len - 1 - k)) & 1) as u8).collect();
        DiscretePath {
            states,
            h_bits: h.to_bits(),
        }
    }))
}

/// A discrete-time Markov chain: one row-stochastic 2x2 kernel per step.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelChain {
    grid: DiscreteGrid,
    kernels: Vec<[[f64; 2]; 2]>,
}

impl KernelChain {
    pub fn new(grid: DiscreteGrid, kernels: Vec<[[f64; 2]; 2]>) -> Result<Self> {
        if kernels.len() != grid.n() {
            return Err(Error::InvalidArgument(format!(
                "{} kernels for {} steps",
                kernels.len(),
                grid.n()
            )));
        }
        for (j, k) in kernels.iter().enumerate() {
            for row in k {
                if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || (row[0] + row[1] - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "kernel {j} is not row-stochastic: {k:?}"
                    )));
                }
            }
        }
        Ok(Self { grid, kernels })
    }

    /// Kernels of `protocol` sampled at the left end of each step.
    pub fn from_protocol(protocol: &Protocol, grid: &DiscreteGrid) -> Result<Self> {
        if (grid.horizon() - protocol.horizon()).abs() > 1e-9 * protocol.horizon() {
            return Err(Error::InvalidArgument(format!(
                "grid horizon {} differs from protocol horizon {}",
                grid.horizon(),
                protocol.horizon()
            )));
        }
        let kernels = (0..grid.n())
            .map(|j| {
                let t = grid.time(j);
                step_kernel(protocol.rates(t)?, grid.h(), t)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid: *grid, kernels })
    }

    pub fn grid(&self) -> &DiscreteGrid {
        &self.grid
    }

    pub fn kernels(&self) -> &[[[f64; 2]; 2]] {
        &self.kernels
    }

    pub fn kernel(&self, j: usize) -> &[[f64; 2]; 2] {
        &self.kernels[j]
    }

    /// Marginals at steps `0..=N` from `init`.
    pub fn marginals(&self, init: &Distribution) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.kernels.len() + 1);
        let mut p = init.as_array();
        out.push(p);
        for k in &self.kernels {
            p = [p[0] * k[0][0] + p[1] * k[1][0], p[0] * k[0][1] + p[1] * k[1][1]];
            out.push(p);
        }
        out
    }

    pub fn path_probability(&self, init: &Distribution, dpath: &DiscretePath) -> f64 {
        let s = dpath.states();
        let mut prob = init.get(s[0] as usize);
        for (j, k) in self.kernels.iter().enumerate() {
            prob *= k[s[j] as usize][s[j + 1] as usize];
        }
        prob
    }
}
