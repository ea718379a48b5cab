//! Stochastic-thermodynamics bookkeeping for a controlled two-state bit,
//! in units with `kT = 1` so that every quantity is in nats.
//!
//! State energies come from detailed balance of the passive chain:
//! `E_0 = 0` and `E_1 = log(k10 / k01)`. A protocol `u` is read as the
//! passive chain in a control potential `phi` with
//! `phi_0 - phi_1 = log(u01 k10 / (u10 k01))`.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::chain::{equilibrium, Distribution, PassiveRates};
use crate::control::{marginal_ode_options, TailGeometry, TAIL_SPAN};
use crate::error::{Error, Result};
use crate::ode::{integrate, prev_float, DenseSolution, OdeOptions};
use crate::protocol::{GridProtocol, Interpolation, Protocol};

/// The terms behind `F(p) - F(pi) = D(p || pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FreeEnergyAudit {
    /// `sum_i p_i E_i`.
    pub energy: f64,
    /// `S(p)`.
    pub entropy: f64,
    /// `F(p) = E(p) - S(p)`.
    pub free_energy: f64,
    /// `F(pi) = -log Z`.
    pub equilibrium_free_energy: f64,
    /// `D(p || pi)`.
    pub gap: f64,
}

/// Energies `[E_0, E_1]` with `E_0 = 0`.
pub fn state_energies(rates: &PassiveRates) -> [f64; 2] {
    [0.0, (rates.k10() / rates.k01()).ln()]
}

/// `F(p) - F(pi)`, computed as `D(p || pi)`.
pub fn free_energy_gap(p: &Distribution, rates: &PassiveRates) -> f64 {
    p.relative_entropy(&equilibrium(rates))
}

/// Evaluates the energy and entropy sides of [`free_energy_gap`] separately.
pub fn free_energy_audit(p: &Distribution, rates: &PassiveRates) -> FreeEnergyAudit {
    let e = state_energies(rates);
    let energy = p.p0() * e[0] + p.p1() * e[1];
    let entropy = p.entropy();
    let equilibrium_free_energy = -((-e[0]).exp() + (-e[1]).exp()).ln();
    FreeEnergyAudit {
        energy,
        entropy,
        free_energy: energy - entropy,
        equilibrium_free_energy,
        gap: free_energy_gap(p, rates),
    }
}

/// `phi_0(t) - phi_1(t) = log(u01 k10 / (u10 k01))`.
pub fn control_potential_gap(protocol: &Protocol, rates: &PassiveRates, t: f64) -> Result<f64> {
    let u = protocol.rates(t)?;
    if u[0] == 0.0 {
        return Err(Error::LogDivergence { term: "u01", t });
    }
    if u[1] == 0.0 {
        return Err(Error::LogDivergence { term: "u10", t });
    }
    Ok((u[0] / u[1]).ln() + (rates.k10() / rates.k01()).ln())
}

/// Instantaneous rates of the ledger quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerRates {
    /// `J_01 = p0 u01 - p1 u10`.
    pub j01: f64,
    pub de: f64,
    pub dw: f64,
    pub dq: f64,
    pub ds: f64,
    pub df: f64,
    pub ds_tot: f64,
}

const TERMS: [&str; 6] = ["dE", "dW", "dQ", "dS", "dF", "dS_tot"];

/// `[dE, dW, dQ, dS, dF, dS_tot]` from the flux and logarithms, with
/// `0 * log 0 = 0` when the flux vanishes.
fn densities(j: f64, ln_p: [f64; 2], ln_u: [f64; 2], ln_k: f64) -> [f64; 6] {
    if j == 0.0 {
        return [0.0; 6];
    }
    let du = ln_u[0] - ln_u[1];
    let dp = ln_p[0] - ln_p[1];
    [
        j * ln_k,
        j * (du + ln_k),
        j * du,
        j * dp,
        j * (ln_k - dp),
        j * (dp + du),
    ]
}

fn logs(x: [f64; 2]) -> [f64; 2] {
    x.map(f64::ln)
}

fn ln_k(rates: &PassiveRates) -> f64 {
    (rates.k10() / rates.k01()).ln()
}

/// Ledger rates at marginal `p` under `protocol` at time `t`.
pub fn power_rates(p: &Distribution, protocol: &Protocol, rates: &PassiveRates, t: f64) -> Result<PowerRates> {
    let u = protocol.rates(t)?;
    let j = p.p0() * u[0] - p.p1() * u[1];
    let d = densities(j, logs(p.as_array()), logs(u), ln_k(rates));
    if let Some(k) = d.iter().position(|v| !v.is_finite()) {
        return Err(Error::LogDivergence { term: TERMS[k], t });
    }
    Ok(PowerRates {
        j01: j,
        de: d[0],
        dw: d[1],
        dq: d[2],
        ds: d[3],
        df: d[4],
        ds_tot: d[5],
    })
}

/// A ledger total, or a marker that its integral diverges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Entry {
    Finite(f64),
    Unbounded,
}

impl Entry {
    pub fn finite(self) -> Option<f64> {
        match self {
            Entry::Finite(v) => Some(v),
            Entry::Unbounded => None,
        }
    }
}

impl fmt::Display for Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entry::Finite(v) => write!(f, "{v}"),
            Entry::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl Serialize for Entry {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Entry::Finite(v) => serializer.serialize_f64(*v),
            Entry::Unbounded => serializer.serialize_str("unbounded"),
        }
    }
}

/// Totals over `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerTotals {
    pub delta_e: Entry,
    pub work: Entry,
    pub heat: Entry,
    pub delta_s: Entry,
    pub delta_f: Entry,
    pub s_tot: Entry,
}

impl LedgerTotals {
    /// `|W - Q - dE|`, if all three are finite.
    pub fn first_law_residual(&self) -> Option<f64> {
        Some((self.work.finite()? - self.heat.finite()? - self.delta_e.finite()?).abs())
    }

    /// `|W - dF - S_tot|`, if all three are finite.
    pub fn free_energy_residual(&self) -> Option<f64> {
        Some((self.work.finite()? - self.delta_f.finite()? - self.s_tot.finite()?).abs())
    }
}

/// One time-series row: instantaneous rates and running totals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerRow {
    pub t: f64,
    pub p0: f64,
    pub u01: f64,
    pub u10: f64,
    pub rates: PowerRates,
    pub delta_e: f64,
    pub work: f64,
    pub heat: f64,
    pub delta_s: f64,
    pub delta_f: f64,
    pub s_tot: f64,
}

impl LedgerRow {
    pub const CSV_HEADER: &'static str = "t,p0,u01,u10,J01,dW,dQ,dS,dF,dS_tot,dE,W,Q,delta_S,delta_F,S_tot,delta_E";

    /// Comma-separated values with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let r = &self.rates;
        [
            self.t,
            self.p0,
            self.u01,
            self.u10,
            r.j01,
            r.dw,
            r.dq,
            r.ds,
            r.df,
            r.ds_tot,
            r.de,
            self.work,
            self.heat,
            self.delta_s,
            self.delta_f,
            self.s_tot,
            self.delta_e,
        ]
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(",")
    }
}

// Body state: [p0, p1, E, W, Q, S, F, S_tot]. Tail state: [w, E, W, Q, S, F, S_tot].
#[derive(Debug, Clone)]
enum Segment {
    /// `t = x^2` on `[0, sqrt(t_end)]`.
    Sqrt {
        t_end: f64,
        sol: DenseSolution<8>,
    },
    Time {
        t_end: f64,
        sol: DenseSolution<8>,
    },
    Tail {
        geometry: TailGeometry,
        base_horizon: f64,
        y_end: f64,
        sol: DenseSolution<7>,
    },
}

/// Work, heat, energy, entropy and free-energy changes of one run, with
/// the running totals available at any time.
#[derive(Debug, Clone)]
pub struct ThermoLedger {
    protocol: Protocol,
    rates: PassiveRates,
    horizon: f64,
    segments: Vec<Segment>,
    pub totals: LedgerTotals,
}

fn body_rhs(protocol: &Protocol, ln_k: f64, t: f64, y: &[f64; 8], unbounded: &mut [bool; 6]) -> Result<[f64; 8]> {
    let p = [y[0], y[1]];
    if !(p[0] >= 0.0 && p[1] >= 0.0) {
        return Ok([f64::NAN; 8]);
    }
    let u = protocol.rates(t)?;
    let j = p[0] * u[0] - p[1] * u[1];
    // An empty state is only ever reached at isolated instants (the start
    // of a boundary run), where `J log p` is integrable; its log is
    // dropped there. Vanishing rates are not integrable against a flux.
    let ln_p = p.map(|v| if v > 0.0 { v.ln() } else { 0.0 });
    let d = densities(j, ln_p, logs(u), ln_k);
    let mut out = [0.0; 8];
    out[0] = -j;
    out[1] = j;
    for k in 0..6 {
        if d[k].is_finite() {
            out[2 + k] = d[k];
        } else {
            unbounded[k] = true;
        }
    }
    Ok(out)
}

/// Integrates the ledger along the controlled marginal from `p_init`.
///
/// The marginal and the six totals are solved as one adaptive ODE. A start
/// on the simplex boundary is integrated in `x = sqrt(t)` over the first
/// smooth piece, which removes the `log t` behaviour of the entropy rate.
/// For the exact optimal erasure protocol the final window is integrated
/// in `y = -log z_j`, where every integrand decays like `y exp(-y)`.
pub fn integrate_ledger(protocol: &Protocol, rates: &PassiveRates, p_init: &Distribution) -> Result<ThermoLedger> {
    let horizon = protocol.horizon();
    let lk = ln_k(rates);
    let body_opts = OdeOptions {
        coupled: 2,
        ..marginal_ode_options()
    };
    let tail_opts = OdeOptions {
        coupled: 1,
        ..marginal_ode_options()
    };
    let tail = TailGeometry::of(protocol);
    let t_body = match &tail {
        Some((g, base_h)) => (base_h - g.switch_remaining(*base_h)) / g.scale,
        None => horizon,
    };
    let breaks = protocol.breakpoints();
    let mut unbounded = [false; 6];
    let mut segments = Vec::new();
    let mut state = [p_init.p0(), p_init.p1(), 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let mut t0 = 0.0;

    if p_init.p0() == 0.0 || p_init.p1() == 0.0 {
        let t1 = breaks
            .iter()
            .copied()
            .find(|&b| b > 0.0 && b < t_body)
            .unwrap_or(t_body);
        let sol = integrate(
            |x, y: &[f64; 8]| {
                if x == 0.0 {
                    return Ok([0.0; 8]);
                }
                let d = body_rhs(protocol, lk, (x * x).min(t1), y, &mut unbounded)?;
                Ok(d.map(|v| 2.0 * x * v))
            },
            0.0,
            state,
            t1.sqrt(),
            &[],
            &body_opts,
        )?;
        state = sol.last();
        t0 = t1;
        segments.push(Segment::Sqrt { t_end: t1, sol });
    }
    if t0 < t_body {
        let sol = integrate(
            |t, y: &[f64; 8]| body_rhs(protocol, lk, t.min(t_body), y, &mut unbounded),
            t0,
            state,
            t_body,
            &breaks,
            &body_opts,
        )?;
        state = sol.last();
        segments.push(Segment::Time { t_end: t_body, sol });
    }
    if let Some((g, base_h)) = tail {
        let y0 = g.y_at(g.switch_remaining(base_h));
        let y_end = y0 + TAIL_SPAN;
        let mut init = [0.0; 7];
        init[0] = state[g.j] / g.z_at(y0).1;
        init[1..].copy_from_slice(&state[2..]);
        let sol = integrate(
            |y, s: &[f64; 7]| {
                let w = s[0];
                let (zi, zj) = g.z_at(y);
                let mut p = [0.0; 2];
                let mut ln_p = [0.0; 2];
                p[g.j] = w * zj;
                p[g.i] = 1.0 - p[g.j];
                ln_p[g.j] = w.ln() - y;
                ln_p[g.i] = p[g.i].ln();
                let (u_ij, _) = g.rates_at(y);
                let mut ln_u = [0.0; 2];
                ln_u[g.i] = u_ij.ln();
                ln_u[g.j] = (g.scale * g.k_ji * zi).ln() + y;
                let dt = g.dt_dy(y);
                // Flux i -> j per unit y.
                let flux = p[g.i] * u_ij * dt - w * zi * g.scale * g.k_ji * dt;
                let j01 = if g.i == 0 { flux } else { -flux };
                let d = densities(j01, ln_p, ln_u, lk);
                let mut out = [0.0; 7];
                out[0] = g.dw_dy(y, w);
                out[1..].copy_from_slice(&d);
                Ok(out)
            },
            y0,
            init,
            y_end,
            &[],
            &tail_opts,
        )?;
        state[2..].copy_from_slice(&sol.last()[1..]);
        segments.push(Segment::Tail {
            geometry: g,
            base_horizon: base_h,
            y_end,
            sol,
        });
    }

    let entry = |k: usize| {
        if unbounded[k] {
            Entry::Unbounded
        } else {
            Entry::Finite(state[2 + k])
        }
    };
    let totals = LedgerTotals {
        delta_e: entry(0),
        work: entry(1),
        heat: entry(2),
        delta_s: entry(3),
        delta_f: entry(4),
        s_tot: entry(5),
    };
    Ok(ThermoLedger {
        protocol: protocol.clone(),
        rates: *rates,
        horizon,
        segments,
        totals,
    })
}

impl ThermoLedger {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `(p, [dE, W, Q, dS, dF, S_tot])` accumulated up to `t`.
    pub fn cumulative(&self, t: f64) -> Result<(Distribution, [f64; 6])> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        for seg in &self.segments {
            match seg {
                Segment::Sqrt { t_end, sol } if t <= *t_end => return split8(sol.at(t.sqrt())),
                Segment::Time { t_end, sol } if t <= *t_end => return split8(sol.at(t)),
                Segment::Tail {
                    geometry: g,
                    base_horizon,
                    y_end,
                    sol,
                } => {
                    let s = (base_horizon - g.scale * t).max(0.0);
                    let y = if s == 0.0 { *y_end } else { g.y_at(s).min(*y_end) };
                    let v = sol.at(y);
                    let pj = if s == 0.0 { 0.0 } else { v[0] * g.z_at(y).1 };
                    let mut p = [0.0; 2];
                    p[g.j] = pj;
                    p[g.i] = 1.0 - pj;
                    let mut acc = [0.0; 6];
                    acc.copy_from_slice(&v[1..]);
                    return Ok((Distribution::from_pair(p)?, acc));
                }
                _ => {}
            }
        }
        Err(Error::TimeOutOfRange {
            t,
            horizon: self.horizon,
        })
    }

    /// Rows at the requested times. At the horizon of a singular protocol
    /// the instantaneous columns are evaluated at the last float before it.
    pub fn series(&self, times: &[f64]) -> Result<Vec<LedgerRow>> {
        times
            .iter()
            .map(|&t| {
                let (p, acc) = self.cumulative(t)?;
                let t_eval = if t == self.horizon && self.protocol.singular_state().is_some() {
                    prev_float(t)
                } else {
                    t
                };
                let u = self.protocol.rates(t_eval)?;
                let j = p.p0() * u[0] - p.p1() * u[1];
                let d = densities(j, logs(p.as_array()), logs(u), ln_k(&self.rates));
                Ok(LedgerRow {
                    t,
                    p0: p.p0(),
                    u01: u[0],
                    u10: u[1],
                    rates: PowerRates {
                        j01: j,
                        de: d[0],
                        dw: d[1],
                        dq: d[2],
                        ds: d[3],
                        df: d[4],
                        ds_tot: d[5],
                    },
                    delta_e: acc[0],
                    work: acc[1],
                    heat: acc[2],
                    delta_s: acc[3],
                    delta_f: acc[4],
                    s_tot: acc[5],
                })
            })
            .collect()
    }

    /// Rows on `n + 1` evenly spaced times.
    pub fn uniform_series(&self, n: usize) -> Result<Vec<LedgerRow>> {
        let n = n.max(1);
        let times: Vec<f64> = (0..=n).map(|k| self.horizon * k as f64 / n as f64).collect();
        self.series(&times)
    }
}

fn split8(v: [f64; 8]) -> Result<(Distribution, [f64; 6])> {
    let mut acc = [0.0; 6];
    acc.copy_from_slice(&v[2..]);
    Ok((Distribution::from_pair([v[0], v[1]])?, acc))
}

/// Equilibrium occupation of state 1 left by the final stage of the
/// staircase in [`quasistatic_erasure_work`].
pub const STAIRCASE_RESIDUAL: f64 = 1e-9;

/// The staircase erasure protocol: `n_stages` holds of length `stage_time`,
/// raising the potential of state 1 so that the stage equilibria are
/// evenly spaced in thermodynamic length `2 asin(sqrt(p1))`, from `pi` to
/// [`STAIRCASE_RESIDUAL`]. A raise by `phi` is applied symmetrically:
/// `u01 = k01 exp(-phi/2)`, `u10 = k10 exp(phi/2)`.
pub fn staircase_protocol(rates: &PassiveRates, n_stages: usize, stage_time: f64) -> Result<Protocol> {
    if n_stages == 0 {
        return Err(Error::InvalidArgument("at least one stage is required".into()));
    }
    if !(stage_time.is_finite() && stage_time > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "stage time must be positive, got {stage_time}"
        )));
    }
    let pi = equilibrium(rates);
    let theta0 = pi.p1().sqrt().asin();
    let theta1 = STAIRCASE_RESIDUAL.sqrt().asin();
    let mut times = Vec::with_capacity(n_stages + 1);
    let mut u01 = Vec::with_capacity(n_stages + 1);
    let mut u10 = Vec::with_capacity(n_stages + 1);
    for k in 1..=n_stages {
        let theta = theta0 + (theta1 - theta0) * k as f64 / n_stages as f64;
        let p1 = theta.sin().powi(2);
        let phi = (pi.p1() * (1.0 - p1) / (pi.p0() * p1)).ln();
        times.push((k - 1) as f64 * stage_time);
        u01.push(rates.k01() * (-0.5 * phi).exp());
        u10.push(rates.k10() * (0.5 * phi).exp());
    }
    times.push(n_stages as f64 * stage_time);
    u01.push(*u01.last().unwrap_or(&rates.k01()));
    u10.push(*u10.last().unwrap_or(&rates.k10()));
    Ok(Protocol::Grid(GridProtocol::new(times, u01, u10, Interpolation::Hold)?))
}

/// Ledger work of [`staircase_protocol`] run from equilibrium.
pub fn quasistatic_erasure_work(rates: &PassiveRates, n_stages: usize, stage_time: f64) -> Result<f64> {
    let protocol = staircase_protocol(rates, n_stages, stage_time)?;
    let ledger = integrate_ledger(&protocol, rates, &equilibrium(rates))?;
    ledger
        .totals
        .work
        .finite()
        .ok_or_else(|| Error::InvalidArgument("staircase work diverged".into()))
}

/// `(1 + log 2 / (sigma tau_e - log 2)) log 2`, a finite-time erasure bound
/// for a bit with thermal conductance `sigma`.
pub fn salamon_bound(tau_e: f64, sigma: f64) -> Result<f64> {
    let ln2 = std::f64::consts::LN_2;
    let x = sigma * tau_e;
    if !(x > ln2) {
        return Err(Error::InvalidArgument(format!("sigma * tau_e = {x} must exceed log 2")));
    }
    Ok((1.0 + ln2 / (x - ln2)) * ln2)
}
