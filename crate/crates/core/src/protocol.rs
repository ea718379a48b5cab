//! Time-dependent control rates on a finite horizon `[0, T]`.
//!
//! Rates are returned as `[u01, u10]`. The integrated hazard out of a state
//! and its inverse drive path sampling and the path-space log-likelihoods.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chain::PassiveRates;
use crate::control::Desirability;
use crate::error::{Error, Result};
use crate::ode::prev_float;
use crate::quadrature::adaptive_simpson;
use crate::reversal::ReversedProtocol;

/// Tolerance for hazard integrals that have no closed form.
pub const HAZARD_QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    /// Piecewise linear between nodes.
    Linear,
    /// Piecewise constant and right-continuous: node `k` holds on
    /// `[t_k, t_{k+1})`. The last node only sets the value at `T`.
    Hold,
}

/// Rates sampled on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridProtocol {
    times: Vec<f64>,
    u01: Vec<f64>,
    u10: Vec<f64>,
    interpolation: Interpolation,
}

impl GridProtocol {
    pub fn new(times: Vec<f64>, u01: Vec<f64>, u10: Vec<f64>, interpolation: Interpolation) -> Result<Self> {
        if times.len() < 2 || u01.len() != times.len() || u10.len() != times.len() {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least two nodes and equal lengths (times {}, u01 {}, u10 {})",
                times.len(),
                u01.len(),
                u10.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "grid must start at t = 0, got {}",
                times[0]
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || !times.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidArgument(
                "grid times must be finite and strictly increasing".into(),
            ));
        }
        for (name, values) in [("u01", &u01), ("u10", &u10)] {
            for (index, &value) in values.iter().enumerate() {
                if !(value >= 0.0) || !value.is_finite() {
                    return Err(Error::NegativeRate { name, index, value });
                }
            }
        }
        Ok(Self {
            times,
            u01,
            u10,
            interpolation,
        })
    }

    /// Constant rates on `[0, horizon]`.
    pub fn constant(horizon: f64, u01: f64, u10: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Self::new(vec![0.0, horizon], vec![u01; 2], vec![u10; 2], Interpolation::Hold)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self, state: usize) -> &[f64] {
        if state == 0 {
            &self.u01
        } else {
            &self.u10
        }
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("validated")
    }

    fn segment(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&x| x <= t);
        k.saturating_sub(1).min(self.times.len() - 2)
    }

    fn rate_at(&self, state: usize, t: f64) -> f64 {
        let v = self.values(state);
        let n = self.times.len();
        if t >= self.times[n - 1] {
            return v[n - 1];
        }
        let k = self.segment(t);
        match self.interpolation {
            Interpolation::Hold => v[k],
            Interpolation::Linear => {
                let (t0, t1) = (self.times[k], self.times[k + 1]);
                let w = (t - t0) / (t1 - t0);
                v[k] + w * (v[k + 1] - v[k])
            }
        }
    }

    // Value at the left end and slope on segment k.
    fn segment_line(&self, state: usize, k: usize) -> (f64, f64) {
        let v = self.values(state);
        match self.interpolation {
            Interpolation::Hold => (v[k], 0.0),
            Interpolation::Linear => (v[k], (v[k + 1] - v[k]) / (self.times[k + 1] - self.times[k])),
        }
    }

    fn hazard(&self, state: usize, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        let mut k = self.segment(a);
        let mut x = a;
        while x < b && k + 1 < self.times.len() {
            let y = b.min(self.times[k + 1]);
            let (v0, slope) = self.segment_line(state, k);
            let t0 = self.times[k];
            let vx = v0 + slope * (x - t0);
            let vy = v0 + slope * (y - t0);
            total += 0.5 * (vx + vy) * (y - x);
            x = y;
            k += 1;
        }
        total
    }

    fn invert(&self, state: usize, a: f64, e: f64) -> Option<f64> {
        let mut remaining = e;
        let mut k = self.segment(a);
        let mut x = a;
        while k + 1 < self.times.len() {
            let y = self.times[k + 1];
            let (v0, slope) = self.segment_line(state, k);
            let t0 = self.times[k];
            let vx = v0 + slope * (x - t0);
            let vy = v0 + slope * (y - t0);
            let mass = 0.5 * (vx + vy) * (y - x);
            if mass >= remaining && mass > 0.0 {
                // Solve vx*d + slope*d^2/2 = remaining in the cancellation-free form.
                let disc = (vx * vx + 2.0 * slope * remaining).max(0.0);
                let d = 2.0 * remaining / (vx + disc.sqrt());
                return Some((x + d).clamp(x, y));
            }
            remaining -= mass;
            x = y;
            k += 1;
        }
        None
    }
}

/// The closed-form KL-optimal protocol of a desirability, optionally frozen
/// at its value at `T - eps` on the final window `(T - eps, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalProtocol {
    z: Desirability,
    truncation: Option<f64>,
}

impl OptimalProtocol {
    pub fn new(z: Desirability) -> Self {
        Self { z, truncation: None }
    }

    /// Freezes the rates on `(T - eps, T]`, which keeps them finite.
    pub fn truncated(z: Desirability, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < z.horizon()) {
            return Err(Error::InvalidArgument(format!(
                "truncation window {eps} must lie in (0, {})",
                z.horizon()
            )));
        }
        Ok(Self {
            z,
            truncation: Some(eps),
        })
    }

    pub fn desirability(&self) -> &Desirability {
        &self.z
    }

    pub fn truncation(&self) -> Option<f64> {
        self.truncation
    }

    fn cut_time(&self) -> Option<f64> {
        self.truncation.map(|eps| self.z.horizon() - eps)
    }

    /// Rates at remaining time `s = T - t`.
    pub fn rates_remaining(&self, s: f64) -> Result<[f64; 2]> {
        let s = match self.truncation {
            Some(eps) => s.max(eps),
            None => s,
        };
        let z = self.z.at_remaining(s);
        let k = self.z.rates();
        let mut u = [0.0; 2];
        for (i, ui) in u.iter_mut().enumerate() {
            let j = 1 - i;
            if z[i] == 0.0 {
                return Err(Error::TerminalSingularity {
                    t: self.z.horizon() - s,
                    state: i,
                });
            }
            *ui = k.out_of(i) * z[j] / z[i];
        }
        Ok(u)
    }

    fn hazard_smooth(&self, state: usize, a: f64, b: f64) -> f64 {
        // d/dt log z_i = k_i - u_i, so the hazard is a difference of logs.
        let horizon = self.z.horizon();
        let ln_b = self.z.ln_at_remaining(state, horizon - b);
        if ln_b == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        let ln_a = self.z.ln_at_remaining(state, horizon - a);
        self.z.rates().out_of(state) * (b - a) - (ln_b - ln_a)
    }

    fn hazard(&self, state: usize, a: f64, b: f64) -> Result<f64> {
        match self.cut_time() {
            Some(tc) if b > tc => {
                let smooth = if a < tc { self.hazard_smooth(state, a, tc) } else { 0.0 };
                let frozen = self.rates_remaining(self.z.horizon() - tc)?[state];
                Ok(smooth + frozen * (b - a.max(tc)))
            }
            _ => Ok(self.hazard_smooth(state, a, b)),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Protocol {
    Passive {
        rates: PassiveRates,
        horizon: f64,
    },
    Optimal(OptimalProtocol),
    Grid(GridProtocol),
    /// Forward-clock rates of the time reversal.
    Reversed(Arc<ReversedProtocol>),
    /// `t -> base(T - t)`.
    TimeFlipped(Arc<Protocol>),
    /// `t -> factor * base(factor * t)` on `[0, T / factor]`.
    Rescaled {
        base: Arc<Protocol>,
        factor: f64,
    },
}

impl Protocol {
    pub fn passive(rates: PassiveRates, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Protocol::Passive { rates, horizon })
    }

    pub fn horizon(&self) -> f64 {
        match self {
            Protocol::Passive { horizon, .. } => *horizon,
            Protocol::Optimal(o) => o.z.horizon(),
            Protocol::Grid(g) => g.horizon(),
            Protocol::Reversed(r) => r.horizon(),
            Protocol::TimeFlipped(b) => b.horizon(),
            Protocol::Rescaled { base, factor } => base.horizon() / factor,
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::TimeOutOfRange { t, horizon });
        }
        Ok(())
    }

    /// `[u01(t), u10(t)]`. Fails at a terminal singularity.
    pub fn rates(&self, t: f64) -> Result<[f64; 2]> {
        self.check_time(t)?;
        match self {
            Protocol::Passive { rates, .. } => Ok([rates.k01(), rates.k10()]),
            Protocol::Optimal(o) => o.rates_remaining(o.z.horizon() - t),
            Protocol::Grid(g) => Ok([g.rate_at(0, t), g.rate_at(1, t)]),
            Protocol::Reversed(r) => r.rates(t),
            Protocol::TimeFlipped(b) => b.rates((b.horizon() - t).max(0.0)),
            Protocol::Rescaled { base, factor } => {
                let u = base.rates((factor * t).min(base.horizon()))?;
                Ok([factor * u[0], factor * u[1]])
            }
        }
    }

    /// Rate out of `state` at `t`.
    pub fn rate(&self, state: usize, t: f64) -> Result<f64> {
        Ok(self.rates(t)?[state])
    }

    /// The state whose exit rate diverges at `T`, if any.
    pub fn singular_state(&self) -> Option<usize> {
        match self {
            Protocol::Optimal(o) if o.truncation.is_none() => o.z.singular_state(),
            Protocol::Rescaled { base, .. } => base.singular_state(),
            _ => None,
        }
    }

    /// Times in `(0, T)` where the rates or their derivatives may jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Protocol::Passive { .. } => Vec::new(),
            Protocol::Optimal(o) => o.cut_time().into_iter().collect(),
            Protocol::Grid(g) => g.times[1..g.times.len() - 1].to_vec(),
            Protocol::Reversed(r) => r.base().breakpoints(),
            Protocol::TimeFlipped(b) => {
                let h = b.horizon();
                let mut v: Vec<f64> = b.breakpoints().iter().map(|x| h - x).collect();
                v.reverse();
                v
            }
            Protocol::Rescaled { base, factor } => base.breakpoints().iter().map(|x| x / factor).collect(),
        }
    }

    /// `∫_a^b u_state(t) dt`, which is `+inf` when it diverges at `T`.
    pub fn integrated_hazard(&self, state: usize, a: f64, b: f64) -> Result<f64> {
        self.check_time(a)?;
        self.check_time(b)?;
        if b <= a {
            return Ok(0.0);
        }
        match self {
            Protocol::Passive { rates, .. } => Ok(rates.out_of(state) * (b - a)),
            Protocol::Optimal(o) => o.hazard(state, a, b),
            Protocol::Grid(g) => Ok(g.hazard(state, a, b)),
            Protocol::Reversed(_) => self.hazard_quadrature(state, a, b),
            Protocol::TimeFlipped(base) => {
                let h = base.horizon();
                base.integrated_hazard(state, (h - b).max(0.0), (h - a).max(0.0))
            }
            Protocol::Rescaled { base, factor } => {
                let h = base.horizon();
                base.integrated_hazard(state, (factor * a).min(h), (factor * b).min(h))
            }
        }
    }

    fn hazard_quadrature(&self, state: usize, a: f64, b: f64) -> Result<f64> {
        let mut cuts = vec![a];
        cuts.extend(self.breakpoints().into_iter().filter(|&x| x > a && x < b));
        cuts.push(b);
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let part = adaptive_simpson(|t| self.rate(state, t).unwrap_or(f64::NAN), w[0], w[1], HAZARD_QUAD_TOL);
            if !part.is_finite() {
                self.rate(state, w[0])?;
                self.rate(state, w[1])?;
                return Err(Error::Integration {
                    x: w[0],
                    reason: "non-finite rate inside a hazard integral".into(),
                });
            }
            total += part;
        }
        Ok(total)
    }

    /// Earliest `b` in `(a, T]` with `∫_a^b u_state = e`, or `None` if the
    /// total hazard up to `T` is below `e`.
    pub fn next_jump(&self, state: usize, a: f64, e: f64) -> Result<Option<f64>> {
        self.check_time(a)?;
        match self {
            Protocol::Passive { rates, horizon } => {
                let b = a + e / rates.out_of(state);
                Ok((b <= *horizon).then_some(b))
            }
            Protocol::Grid(g) => Ok(g.invert(state, a, e)),
            Protocol::Rescaled { base, factor } => {
                let h = base.horizon();
                Ok(base
                    .next_jump(state, (factor * a).min(h), e)?
                    .map(|x| (x / factor).min(self.horizon())))
            }
            _ => self.invert_numeric(state, a, e),
        }
    }

    fn invert_numeric(&self, state: usize, a: f64, e: f64) -> Result<Option<f64>> {
        let horizon = self.horizon();
        let total = self.integrated_hazard(state, a, horizon)?;
        if total < e {
            return Ok(None);
        }
        let (mut lo, mut hi) = (a, horizon);
        let r0 = self.rate(state, a)?;
        let mut b = if r0 > 0.0 { a + e / r0 } else { f64::NAN };
        if !(b > lo && b < hi) {
            b = 0.5 * (lo + hi);
        }
        for _ in 0..400 {
            let f = self.integrated_hazard(state, a, b)? - e;
            if f.abs() <= 1e-14 * (1.0 + e) {
                return Ok(Some(b));
            }
            if f < 0.0 {
                lo = b;
            } else {
                hi = b;
            }
            if hi <= lo || prev_float(hi) <= lo {
                break;
            }
            let r = match self.rates(b) {
                Ok(u) => u[state],
                Err(_) => f64::NAN,
            };
            let newton = b - f / r;
            b = if r > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        Ok(Some(hi))
    }

    /// `t -> factor * u(factor * t)` on `[0, T / factor]`.
    pub fn time_rescaled(&self, factor: f64) -> Result<Protocol> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "rescaling factor must be positive, got {factor}"
            )));
        }
        Ok(Protocol::Rescaled {
            base: Arc::new(self.clone()),
            factor,
        })
    }

    /// `t -> u(T - t)`. Singular protocols cannot be flipped.
    pub fn time_flipped(&self) -> Result<Protocol> {
        if let Some(state) = self.singular_state() {
            return Err(Error::TerminalSingularity {
                t: self.horizon(),
                state,
            });
        }
        Ok(Protocol::TimeFlipped(Arc::new(self.clone())))
    }

    /// A compact, deterministic description used in report digests.
    pub fn describe(&self) -> String {
        match self {
            Protocol::Passive { rates, horizon } => {
                format!("passive(k01={:?},k10={:?},T={:?})", rates.k01(), rates.k10(), horizon)
            }
            Protocol::Optimal(o) => {
                let k = o.z.rates();
                let zt = o.z.terminal();
                format!(
                    "optimal(k01={:?},k10={:?},T={:?},terminal=[{:?},{:?}],eps={:?})",
                    k.k01(),
                    k.k10(),
                    o.z.horizon(),
                    zt[0],
                    zt[1],
                    o.truncation
                )
            }
            Protocol::Grid(g) => format!(
                "grid({:?},t={:?},u01={:?},u10={:?})",
                g.interpolation, g.times, g.u01, g.u10
            ),
            Protocol::Reversed(r) => {
                let q = r.terminal();
                format!("reversed({},q=[{:?},{:?}])", r.base().describe(), q.p0(), q.p1())
            }
            Protocol::TimeFlipped(b) => format!("flipped({})", b.describe()),
            Protocol::Rescaled { base, factor } => format!("rescaled({},{:?})", base.describe(), factor),
        }
    }
}
