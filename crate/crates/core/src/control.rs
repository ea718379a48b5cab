//! KL-optimal control: desirability, optimal protocol, cost-to-go, the
//! closed-form erasing cost and controlled marginals.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::chain::{equilibrium, Distribution, Generator, PassiveRates};
use crate::error::{Error, Result};
use crate::ode::{integrate, DenseSolution, OdeOptions};
use crate::protocol::{OptimalProtocol, Protocol};

/// Desirability `z(t) = exp(-v(t))` of the two-state chain, the solution of
/// `dz/dt = -K z` with `z(T) = terminal`.
///
/// With `s = T - t`, `c = pi . z(T)` and `m = 1 - exp(-s / tau_r)`,
/// `z_i = z_i(T) + (c - z_i(T)) m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Desirability {
    rates: PassiveRates,
    horizon: f64,
    terminal: [f64; 2],
    c: f64,
}

pub fn solve_desirability(rates: &PassiveRates, terminal: [f64; 2], tau_e: f64) -> Result<Desirability> {
    if !(tau_e > 0.0) || !tau_e.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {tau_e}")));
    }
    if terminal.iter().any(|z| !(z.is_finite() && *z >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "terminal desirability must be finite and non-negative, got {terminal:?}"
        )));
    }
    if terminal == [0.0, 0.0] {
        return Err(Error::ZeroTerminal);
    }
    let c = (rates.k10() * terminal[0] + rates.k01() * terminal[1]) / (rates.k10() + rates.k01());
    Ok(Desirability {
        rates: *rates,
        horizon: tau_e,
        terminal,
        c,
    })
}

impl Desirability {
    pub fn rates(&self) -> &PassiveRates {
        &self.rates
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn terminal(&self) -> [f64; 2] {
        self.terminal
    }

    /// `m(s) = 1 - exp(-s / tau_r)`.
    fn relaxed(&self, s: f64) -> f64 {
        -(-s * self.rates.total()).exp_m1()
    }

    /// `z` at remaining time `s = T - t`, `s` in `[0, T]`.
    pub fn at_remaining(&self, s: f64) -> [f64; 2] {
        let m = self.relaxed(s);
        let zt = self.terminal;
        [zt[0] + (self.c - zt[0]) * m, zt[1] + (self.c - zt[1]) * m]
    }

    /// `log z_state` at remaining time `s`, exact to relative precision even
    /// when `z_state(T) = 0` and `s` is tiny.
    pub fn ln_at_remaining(&self, state: usize, s: f64) -> f64 {
        if self.terminal[state] == 0.0 {
            if s <= 0.0 {
                return f64::NEG_INFINITY;
            }
            return self.c.ln() + self.relaxed(s).ln();
        }
        self.at_remaining(s)[state].ln()
    }

    pub fn at(&self, t: f64) -> Result<[f64; 2]> {
        self.check(t)?;
        Ok(self.at_remaining(self.horizon - t))
    }

    fn check(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    /// The state with zero terminal desirability, whose exit rate diverges.
    pub fn singular_state(&self) -> Option<usize> {
        (0..2).find(|&i| self.terminal[i] == 0.0)
    }

    /// `v(t) = -log z(t)`.
    pub fn cost_to_go(&self, t: f64) -> Result<[Nats; 2]> {
        self.check(t)?;
        let s = self.horizon - t;
        Ok([0, 1].map(|i| {
            let ln = self.ln_at_remaining(i, s);
            if ln == f64::NEG_INFINITY {
                Nats::Infinite
            } else {
                Nats::Finite(-ln)
            }
        }))
    }
}

/// An amount in nats that may be `+inf` by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nats {
    Finite(f64),
    Infinite,
}

impl Nats {
    pub fn finite(self) -> Option<f64> {
        match self {
            Nats::Finite(v) => Some(v),
            Nats::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Nats::Infinite)
    }
}

impl fmt::Display for Nats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nats::Finite(v) => write!(f, "{v}"),
            Nats::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Nats {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Nats::Finite(v) => serializer.serialize_f64(*v),
            Nats::Infinite => serializer.serialize_str("inf"),
        }
    }
}

/// Desirability of an `n`-state chain, `z(T - s) = exp(K s) z(T)`.
#[derive(Debug, Clone)]
pub struct GeneralDesirability {
    generator: Generator,
    horizon: f64,
    terminal: Vec<f64>,
}

pub fn solve_desirability_general(generator: &Generator, terminal: &[f64], tau_e: f64) -> Result<GeneralDesirability> {
    if !(tau_e > 0.0) || !tau_e.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {tau_e}")));
    }
    if terminal.len() != generator.n() {
        return Err(Error::InvalidArgument(format!(
            "terminal has {} entries for a {}-state generator",
            terminal.len(),
            generator.n()
        )));
    }
    if terminal.iter().any(|z| !(z.is_finite() && *z >= 0.0)) {
        return Err(Error::InvalidArgument(
            "terminal desirability must be finite and non-negative".into(),
        ));
    }
    if terminal.iter().all(|&z| z == 0.0) {
        return Err(Error::ZeroTerminal);
    }
    Ok(GeneralDesirability {
        generator: generator.clone(),
        horizon: tau_e,
        terminal: terminal.to_vec(),
    })
}

impl GeneralDesirability {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn at(&self, t: f64) -> Result<Vec<f64>> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        let e = self.generator.exp(self.horizon - t);
        Ok((0..self.generator.n())
            .map(|i| (0..self.generator.n()).map(|j| e[(i, j)] * self.terminal[j]).sum())
            .collect())
    }

    /// Optimal rates `u_ij = k_ij z_j / z_i` at `t`; row `i` is `+inf`
    /// off the diagonal where `z_i(t) = 0` and `k_ij z_j > 0`.
    pub fn optimal_rates(&self, t: f64) -> Result<Vec<Vec<f64>>> {
        let z = self.at(t)?;
        let n = self.generator.n();
        let mut u = vec![vec![0.0; n]; n];
        for i in 0..n {
            if z[i] == 0.0 {
                return Err(Error::TerminalSingularity { t, state: i });
            }
            for j in 0..n {
                if i != j {
                    u[i][j] = self.generator.get(i, j) * z[j] / z[i];
                }
            }
        }
        Ok(u)
    }
}

/// The optimal protocol `u_ij = k_ij z_j / z_i`.
pub fn optimal_protocol(z: &Desirability) -> Protocol {
    Protocol::Optimal(OptimalProtocol::new(z.clone()))
}

/// The optimal protocol that resets the bit to state 0 by `tau_e`.
pub fn erasure_protocol(rates: &PassiveRates, tau_e: f64) -> Result<Protocol> {
    Ok(optimal_protocol(&solve_desirability(rates, [1.0, 0.0], tau_e)?))
}

/// Expected optimal erasure cost from equilibrium,
/// `log 2 - log(1 - exp(-2 tau_e / tau_r)) / 2` nats.
pub fn erasing_cost(tau_r: f64, tau_e: f64) -> Result<f64> {
    if !(tau_r > 0.0) || !tau_r.is_finite() {
        return Err(Error::InvalidArgument(format!("tau_r must be positive, got {tau_r}")));
    }
    if !(tau_e > 0.0) || !tau_e.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "tau_e must be positive (the cost diverges as tau_e -> 0), got {tau_e}"
        )));
    }
    Ok(std::f64::consts::LN_2 - 0.5 * (-(-2.0 * tau_e / tau_r).exp_m1()).ln())
}

/// Expected optimal erasure cost `sum_i p_i v_i(0)` from `p_init`.
pub fn erasing_cost_from(rates: &PassiveRates, tau_e: f64, p_init: &Distribution) -> Result<f64> {
    let z = solve_desirability(rates, [1.0, 0.0], tau_e)?;
    let v = z.cost_to_go(0.0)?;
    let mut total = 0.0;
    for (i, vi) in v.iter().enumerate() {
        if p_init.get(i) > 0.0 {
            total += p_init.get(i) * vi.finite().expect("v(0) is finite for tau_e > 0");
        }
    }
    Ok(total)
}

/// Expected optimal erasure cost from equilibrium for arbitrary rates.
pub fn erasing_cost_for(rates: &PassiveRates, tau_e: f64) -> Result<f64> {
    erasing_cost_from(rates, tau_e, &equilibrium(rates))
}

pub(crate) fn marginal_ode_options() -> OdeOptions {
    OdeOptions::default()
}

/// Variables of the final window of a singular optimal protocol, in which
/// time is replaced by `y = -log z_j` for the singular state `j`.
///
/// Times are in the clock of the underlying optimal protocol; `scale`
/// converts to the clock of the (possibly rescaled) protocol being run.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TailGeometry {
    pub j: usize,
    pub i: usize,
    c: f64,
    zt_i: f64,
    pub k_ij: f64,
    pub k_ji: f64,
    total: f64,
    pub scale: f64,
}

impl TailGeometry {
    /// The singular optimal core of `protocol`, if any, looking through
    /// time rescalings.
    pub fn of(protocol: &Protocol) -> Option<(TailGeometry, f64)> {
        let mut scale = 1.0;
        let mut p = protocol;
        loop {
            match p {
                Protocol::Rescaled { base, factor } => {
                    scale *= factor;
                    p = base.as_ref();
                }
                Protocol::Optimal(o) if o.truncation().is_none() => {
                    let z = o.desirability();
                    let j = z.singular_state()?;
                    let i = 1 - j;
                    let k = z.rates();
                    return Some((
                        TailGeometry {
                            j,
                            i,
                            c: z.c,
                            zt_i: z.terminal[i],
                            k_ij: k.out_of(i),
                            k_ji: k.out_of(j),
                            total: k.total(),
                            scale,
                        },
                        z.horizon(),
                    ));
                }
                _ => return None,
            }
        }
    }

    /// `y` at remaining base time `s > 0`.
    pub fn y_at(&self, s: f64) -> f64 {
        -(self.c.ln() + (-(-s * self.total).exp_m1()).ln())
    }

    fn m(&self, y: f64) -> f64 {
        (-y).exp() / self.c
    }

    /// Remaining base time at `y`.
    pub fn s_at(&self, y: f64) -> f64 {
        -(-self.m(y)).ln_1p() / self.total
    }

    /// `(z_i, z_j)` at `y`.
    pub fn z_at(&self, y: f64) -> (f64, f64) {
        let m = self.m(y);
        (self.zt_i + (self.c - self.zt_i) * m, (-y).exp())
    }

    /// `dt/dy` in the run clock.
    pub fn dt_dy(&self, y: f64) -> f64 {
        let m = self.m(y);
        // z_i - z_j = z_i(T) (1 - m)
        (-y).exp() / (self.k_ji * self.zt_i * (1.0 - m)) / self.scale
    }

    /// Rates `(u_ij, u_ji)` at `y` in the run clock.
    pub fn rates_at(&self, y: f64) -> (f64, f64) {
        let (zi, zj) = self.z_at(y);
        (self.scale * self.k_ij * zj / zi, self.scale * self.k_ji * zi / zj)
    }

    /// `dw/dy` for `w = p_j / z_j`, in either clock.
    pub fn dw_dy(&self, y: f64, w: f64) -> f64 {
        let (zi, zj) = self.z_at(y);
        let pi = 1.0 - w * zj;
        let ratio = zj / (self.zt_i * (1.0 - self.m(y)));
        ratio * (pi * self.k_ij / (self.k_ji * zi) - w)
    }

    /// Remaining base time at which the `y` variable takes over.
    pub fn switch_remaining(&self, base_horizon: f64) -> f64 {
        (0.25 / self.total).min(0.5 * base_horizon)
    }
}

/// Span of the `y` window beyond its starting value; `exp(-TAIL_SPAN)`
/// bounds the relative change of `p_j / z_j` left after it.
pub(crate) const TAIL_SPAN: f64 = 50.0;

#[derive(Debug, Clone)]
struct Tail {
    geometry: TailGeometry,
    base_horizon: f64,
    t_switch: f64,
    y_end: f64,
    // w = p_j / z_j as a function of y.
    sol: DenseSolution<1>,
}

/// The controlled marginal `p(t)` on `[0, T]`, solved once with adaptive
/// steps and then evaluated anywhere by dense output.
#[derive(Debug, Clone)]
pub struct ControlledMarginal {
    horizon: f64,
    body: DenseSolution<2>,
    tail: Option<Tail>,
}

impl ControlledMarginal {
    pub fn solve(protocol: &Protocol, p_init: &Distribution) -> Result<Self> {
        let horizon = protocol.horizon();
        let tail_geometry = TailGeometry::of(protocol);
        let t_body = match &tail_geometry {
            Some((g, base_h)) => (base_h - g.switch_remaining(*base_h)) / g.scale,
            None => horizon,
        };
        let opts = marginal_ode_options();
        let body = integrate(
            |t, p: &[f64; 2]| {
                let u = protocol.rates(t.min(horizon))?;
                let flux = u[0] * p[0] - u[1] * p[1];
                Ok([-flux, flux])
            },
            0.0,
            p_init.as_array(),
            t_body,
            &protocol.breakpoints(),
            &opts,
        )?;
        let tail = match tail_geometry {
            None => None,
            Some((g, base_h)) => {
                let s_switch = g.switch_remaining(base_h);
                let y0 = g.y_at(s_switch);
                let p_switch = body.last();
                let w0 = p_switch[g.j] / g.z_at(y0).1;
                let y_end = y0 + TAIL_SPAN;
                let sol = integrate(|y, w: &[f64; 1]| Ok([g.dw_dy(y, w[0])]), y0, [w0], y_end, &[], &opts)?;
                Some(Tail {
                    geometry: g,
                    base_horizon: base_h,
                    t_switch: t_body,
                    y_end,
                    sol,
                })
            }
        };
        Ok(Self { horizon, body, tail })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn at(&self, t: f64) -> Result<Distribution> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        match &self.tail {
            Some(tail) if t > tail.t_switch => {
                let g = &tail.geometry;
                let s = (tail.base_horizon - g.scale * t).max(0.0);
                let pj = if s == 0.0 {
                    0.0
                } else {
                    let y = g.y_at(s);
                    let w = tail.sol.at(y.min(tail.y_end))[0];
                    w * (-y).exp()
                };
                let mut p = [0.0; 2];
                p[g.j] = pj;
                p[g.i] = 1.0 - pj;
                Distribution::from_pair(p)
            }
            _ => Distribution::from_pair(self.body.at(t)),
        }
    }

    /// The marginal at the horizon.
    pub fn terminal(&self) -> Result<Distribution> {
        self.at(self.horizon)
    }

    /// Accepted step times of the adaptive solution in `[0, T]`.
    pub fn knots(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.body.nodes().map(|(t, _)| t).collect();
        if let Some(tail) = &self.tail {
            let g = &tail.geometry;
            ts.extend(
                tail.sol
                    .nodes()
                    .skip(1)
                    .map(|(y, _)| (tail.base_horizon - g.s_at(y)) / g.scale)
                    .filter(|&t| t < self.horizon),
            );
            ts.push(self.horizon);
        }
        ts
    }
}

/// `p(t)` under `protocol` from `p_init`.
pub fn evolve_controlled(protocol: &Protocol, p_init: &Distribution, t: f64) -> Result<Distribution> {
    ControlledMarginal::solve(protocol, p_init)?.at(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::evolve_passive;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn sym() -> PassiveRates {
        PassiveRates::new(0.5, 0.5).unwrap()
    }

    // Backward RK4 for dz/dt = -K z, an oracle independent of the closed form.
    fn rk4_backward(rates: &PassiveRates, terminal: [f64; 2], s_end: f64, steps: usize) -> [f64; 2] {
        let f = |z: [f64; 2]| [rates.k01() * (z[1] - z[0]), rates.k10() * (z[0] - z[1])];
        let h = s_end / steps as f64;
        let mut z = terminal;
        for _ in 0..steps {
            let k1 = f(z);
            let k2 = f([z[0] + 0.5 * h * k1[0], z[1] + 0.5 * h * k1[1]]);
            let k3 = f([z[0] + 0.5 * h * k2[0], z[1] + 0.5 * h * k2[1]]);
            let k4 = f([z[0] + h * k3[0], z[1] + h * k3[1]]);
            for i in 0..2 {
                z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        z
    }

    #[test]
    fn constant_terminal_is_constant() {
        let z = solve_desirability(&PassiveRates::new(2.0, 0.3).unwrap(), [1.0, 1.0], 2.0).unwrap();
        for t in [0.0, 0.5, 1.9, 2.0] {
            assert_eq!(z.at(t).unwrap(), [1.0, 1.0]);
        }
        assert_eq!(z.cost_to_go(0.3).unwrap(), [Nats::Finite(0.0), Nats::Finite(0.0)]);
    }

    #[test]
    fn symmetric_erasure_closed_form() {
        let z = solve_desirability(&sym(), [1.0, 0.0], 1.0).unwrap();
        let z0 = z.at(0.0).unwrap();
        let e = (-1.0f64).exp();
        assert!((z0[0] - (1.0 + e) / 2.0).abs() < 1e-15);
        assert!((z0[1] - (1.0 - e) / 2.0).abs() < 1e-15);
        assert!((z0[0] - 0.683940).abs() < 1e-6);
        assert!((z0[1] - 0.316060).abs() < 1e-6);
        for t in [0.1, 0.5, 0.99] {
            let zt = z.at(t).unwrap();
            let d = (-(1.0 - t) / 1.0f64).exp();
            assert!((zt[0] - 0.5 * (1.0 + d)).abs() < 1e-15);
            assert!((zt[1] - 0.5 * (1.0 - d)).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_matrix_exponential_and_rk4() {
        let rates = PassiveRates::new(1.7, 0.4).unwrap();
        let gen = Generator::two_state(&rates);
        for terminal in [[1.0, 0.0], [0.3, 2.0], [0.0, 1.0]] {
            let z = solve_desirability(&rates, terminal, 3.0).unwrap();
            let general = solve_desirability_general(&gen, &terminal, 3.0).unwrap();
            for k in 0..=30 {
                let t = 0.1 * k as f64;
                let a = z.at(t).unwrap();
                let b = general.at(t).unwrap();
                let c = rk4_backward(&rates, terminal, 3.0 - t, 4000);
                for i in 0..2 {
                    assert!((a[i] - b[i]).abs() < 1e-10, "expm at t={t}");
                    assert!((a[i] - c[i]).abs() < 1e-9, "rk4 at t={t}");
                }
            }
        }
    }

    #[test]
    fn general_optimal_rates_on_three_states() {
        let gen = Generator::from_rates(&[vec![0.0, 1.0, 0.5], vec![0.2, 0.0, 0.3], vec![0.7, 0.1, 0.0]]).unwrap();
        let z = solve_desirability_general(&gen, &[1.0, 0.0, 0.0], 2.0).unwrap();
        let zt = z.at(0.7).unwrap();
        assert!(zt.iter().all(|&v| v > 0.0));
        let u = z.optimal_rates(0.7).unwrap();
        assert!((u[1][0] - 0.2 * zt[0] / zt[1]).abs() < 1e-14);
        assert!(z.optimal_rates(2.0).is_err());
        assert!(solve_desirability_general(&gen, &[0.0, 0.0, 0.0], 2.0).is_err());
    }

    #[test]
    fn zero_terminal_rejected() {
        assert!(matches!(
            solve_desirability(&sym(), [0.0, 0.0], 1.0),
            Err(Error::ZeroTerminal)
        ));
        assert!(solve_desirability(&sym(), [-1.0, 1.0], 1.0).is_err());
        assert!(solve_desirability(&sym(), [1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn optimal_rates_and_product_invariance() {
        let z = solve_desirability(&sym(), [1.0, 0.0], 1.0).unwrap();
        let p = optimal_protocol(&z);
        let u = p.rates(0.0).unwrap();
        assert!((u[1] - 1.08198).abs() < 1e-5);
        let rates = PassiveRates::new(2.0, 0.3).unwrap();
        let p = erasure_protocol(&rates, 1.5).unwrap();
        for k in 0..150 {
            let u = p.rates(0.01 * k as f64).unwrap();
            assert!((u[0] * u[1] - 0.6).abs() < 1e-12);
        }
        assert!(matches!(p.rates(1.5), Err(Error::TerminalSingularity { state: 1, .. })));
        let u_late = p.rates(1.5 - 1e-9).unwrap();
        assert!(u_late[0] < 1e-7 && u_late[1] > 1e7);
    }

    #[test]
    fn constant_terminal_recovers_passive_rates() {
        let rates = PassiveRates::new(2.0, 0.3).unwrap();
        let p = optimal_protocol(&solve_desirability(&rates, [1.0, 1.0], 1.0).unwrap());
        for t in [0.0, 0.4, 1.0] {
            assert_eq!(p.rates(t).unwrap(), [2.0, 0.3]);
        }
    }

    #[test]
    fn cost_to_go_values() {
        let z = solve_desirability(&sym(), [1.0, 0.0], 1.0).unwrap();
        let v = z.cost_to_go(0.0).unwrap();
        let e = (-1.0f64).exp();
        assert!((v[0].finite().unwrap() - (LN_2 - (1.0 + e).ln())).abs() < 1e-15);
        assert!((v[1].finite().unwrap() - (LN_2 - (1.0 - e).ln())).abs() < 1e-15);
        assert!((v[0].finite().unwrap() - 0.379885).abs() < 1e-6);
        assert!((v[1].finite().unwrap() - 1.151822).abs() < 1e-6);
        assert_eq!(z.cost_to_go(1.0).unwrap(), [Nats::Finite(0.0), Nats::Infinite]);
        assert_eq!(serde_json::to_string(&Nats::Infinite).unwrap(), "\"inf\"");
    }

    #[test]
    fn erasing_cost_values() {
        assert!((erasing_cost(1.0, 1.0).unwrap() - 0.765853).abs() < 1e-6);
        assert!((erasing_cost(1.0, 0.01).unwrap() - 2.65416).abs() < 1e-5);
        assert!((0.5 * 200f64.ln() - 2.64916).abs() < 1e-5);
        assert!((erasing_cost(1.0, 40.0).unwrap() - LN_2).abs() < 1e-15);
        assert!(erasing_cost(1.0, 0.0).is_err());
        assert!(erasing_cost(0.0, 1.0).is_err());
    }

    #[test]
    fn expected_cost_is_pi_average_of_v0() {
        for tau_e in [0.01, 0.3, 1.0, 4.0] {
            let rates = sym();
            let direct = erasing_cost(1.0, tau_e).unwrap();
            let averaged = erasing_cost_for(&rates, tau_e).unwrap();
            assert!((direct - averaged).abs() < 1e-12, "{tau_e}");
        }
    }

    proptest! {
        #[test]
        fn erasing_cost_monotone_and_bounded(r in 0.05f64..5.0, e in 0.01f64..5.0, d in 0.01f64..1.0) {
            let c = erasing_cost(r, e).unwrap();
            prop_assert!(c >= LN_2);
            // Beyond e/r ~ 15 the excess over log 2 is below double resolution.
            if e / r < 15.0 {
                prop_assert!(erasing_cost(r, e + d).unwrap() < c);
                prop_assert!(erasing_cost(r + d, e).unwrap() > c);
            }
            if e / r <= 0.5 {
                prop_assert!(c >= 0.5 * (2.0 * r / e).ln());
            }
        }
    }

    #[test]
    fn passive_marginal_matches_closed_form() {
        let rates = PassiveRates::new(1.3, 0.4).unwrap();
        let p = Protocol::passive(rates, 3.0).unwrap();
        let init = Distribution::new(0.9, 0.1).unwrap();
        let m = ControlledMarginal::solve(&p, &init).unwrap();
        for t in [0.0, 0.2, 1.0, 2.5, 3.0] {
            let a = m.at(t).unwrap();
            let b = evolve_passive(&rates, &init, t).unwrap();
            assert!((a.p0() - b.p0()).abs() < 1e-10, "t = {t}: {} vs {}", a.p0(), b.p0());
        }
    }

    // Doob-transform oracle: p_i(t) = rho_i(t) z_i(t), rho passive from p(0)/z(0).
    fn h_transform_marginal(rates: &PassiveRates, tau_e: f64, init: &Distribution, t: f64) -> [f64; 2] {
        let tr = 1.0 / (rates.k01() + rates.k10());
        let pi0 = rates.k10() * tr;
        let pi1 = rates.k01() * tr;
        let z = |s: f64| {
            let d = (-s / tr).exp();
            [pi0 + pi1 * d, pi0 * (1.0 - d)]
        };
        let z0 = z(tau_e);
        let rho0 = [init.p0() / z0[0], init.p1() / z0[1]];
        let mass = rho0[0] + rho0[1];
        let d = (-t / tr).exp();
        let rho_t0 = mass * pi0 + d * (rho0[0] - mass * pi0);
        let rho_t1 = mass * pi1 + d * (rho0[1] - mass * pi1);
        let zt = z(tau_e - t);
        [rho_t0 * zt[0], rho_t1 * zt[1]]
    }

    #[test]
    fn optimal_marginal_matches_h_transform() {
        for (rates, tau_e, init) in [
            (sym(), 1.0, Distribution::uniform()),
            (
                PassiveRates::new(2.0, 0.3).unwrap(),
                0.7,
                Distribution::new(0.2, 0.8).unwrap(),
            ),
            (
                PassiveRates::new(0.1, 1.0).unwrap(),
                4.0,
                Distribution::new(0.6, 0.4).unwrap(),
            ),
        ] {
            let p = erasure_protocol(&rates, tau_e).unwrap();
            let m = ControlledMarginal::solve(&p, &init).unwrap();
            for frac in [0.25, 0.5, 0.9, 0.99, 0.999999] {
                let t = frac * tau_e;
                let oracle = h_transform_marginal(&rates, tau_e, &init, t);
                let got = m.at(t).unwrap();
                assert!(
                    (got.p0() - oracle[0]).abs() < 1e-9,
                    "t = {t}: {:?} vs {:?}",
                    got,
                    oracle
                );
                assert!((got.p1() - oracle[1]).abs() <= 1e-9 * oracle[1].max(1e-6), "t = {t}");
            }
            let end = m.terminal().unwrap();
            assert_eq!(end.p1(), 0.0);
            assert!(m.at(tau_e * (1.0 - 1e-12)).unwrap().p1() <= 1e-9);
        }
    }

    #[test]
    fn symmetric_erasure_reaches_state_zero() {
        let p = erasure_protocol(&sym(), 1.0).unwrap();
        let end = evolve_controlled(&p, &Distribution::uniform(), 1.0).unwrap();
        assert!((end.p0() - 1.0).abs() < 1e-9 && end.p1() <= 1e-9);
    }

    #[test]
    fn rescaled_optimal_marginal_is_time_changed() {
        let rates = PassiveRates::new(0.8, 0.6).unwrap();
        let p = erasure_protocol(&rates, 2.0).unwrap();
        let q = p.time_rescaled(2.0).unwrap();
        let init = Distribution::new(0.3, 0.7).unwrap();
        let mp = ControlledMarginal::solve(&p, &init).unwrap();
        let mq = ControlledMarginal::solve(&q, &init).unwrap();
        for t in [0.1, 0.4, 0.8, 0.99, 1.0] {
            assert!((mq.at(t).unwrap().p1() - mp.at(2.0 * t).unwrap().p1()).abs() < 1e-10);
        }
    }

    #[test]
    fn knots_are_sorted_and_cover_horizon() {
        let p = erasure_protocol(&sym(), 1.0).unwrap();
        let m = ControlledMarginal::solve(&p, &Distribution::uniform()).unwrap();
        let k = m.knots();
        assert_eq!(k[0], 0.0);
        assert_eq!(*k.last().unwrap(), 1.0);
        assert!(k.windows(2).all(|w| w[1] >= w[0]));
    }
}
