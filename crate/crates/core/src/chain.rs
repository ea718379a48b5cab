//! Two-state continuous-time Markov chain primitives.
//!
//! Everything here is in units where `k_B T = 1`, so energies are
//! dimensionless and information is measured in nats.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalization tolerance for [`Distribution`].
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Constant rates of the uncontrolled bit: `k01` is the rate of 0 -> 1,
/// `k10` the rate of 1 -> 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassiveRates {
    k01: f64,
    k10: f64,
}

impl PassiveRates {
    pub fn new(k01: f64, k10: f64) -> Result<Self> {
        for (name, value) in [("k01", k01), ("k10", k10)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidRate { name, value });
            }
        }
        Ok(Self { k01, k10 })
    }

    /// Symmetric rates `k01 = k10 = 1 / (2 tau_r)`.
    pub fn symmetric(tau_r: f64) -> Result<Self> {
        if !(tau_r.is_finite() && tau_r > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "reliability timescale must be positive, got {tau_r}"
            )));
        }
        let k = 0.5 / tau_r;
        Self::new(k, k)
    }

    pub fn k01(&self) -> f64 {
        self.k01
    }

    pub fn k10(&self) -> f64 {
        self.k10
    }

    /// Rate of leaving `state`.
    pub fn out_of(&self, state: usize) -> f64 {
        if state == 0 {
            self.k01
        } else {
            self.k10
        }
    }

    pub fn total(&self) -> f64 {
        self.k01 + self.k10
    }

    /// Both rates multiplied by `factor` (ratio, hence energies, unchanged).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.k01 * factor, self.k10 * factor)
    }

    pub fn is_symmetric(&self) -> bool {
        self.k01 == self.k10
    }
}

/// A probability distribution `(p0, p1)` over the two states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    p0: f64,
    p1: f64,
}

impl Distribution {
    pub fn new(p0: f64, p1: f64) -> Result<Self> {
        let ok = (0.0..=1.0).contains(&p0) && (0.0..=1.0).contains(&p1) && (p0 + p1 - 1.0).abs() <= NORMALIZATION_TOL;
        if ok {
            Ok(Self { p0, p1 })
        } else {
            Err(Error::InvalidDistribution { p0, p1 })
        }
    }

    /// Builds `(p0, 1 - p0)`, clamping roundoff just outside `[0, 1]`.
    pub fn from_p0(p0: f64) -> Result<Self> {
        if !(p0.is_finite() && (-NORMALIZATION_TOL..=1.0 + NORMALIZATION_TOL).contains(&p0)) {
            return Err(Error::InvalidDistribution { p0, p1: 1.0 - p0 });
        }
        let p0 = p0.clamp(0.0, 1.0);
        Ok(Self { p0, p1: 1.0 - p0 })
    }

    /// Builds `(1 - p1, p1)`; used when `p1` is tiny and must keep its
    /// relative precision.
    pub fn from_p1(p1: f64) -> Result<Self> {
        let d = Self::from_p0(1.0 - p1)?;
        Ok(Self {
            p0: d.p0,
            p1: p1.clamp(0.0, 1.0),
        })
    }

    /// Normalizes a non-negative pair, rebuilding the larger entry from the
    /// smaller one so a tiny component keeps its relative precision.
    pub fn from_pair(p: [f64; 2]) -> Result<Self> {
        let sum = p[0] + p[1];
        if !(sum > 0.0) || !sum.is_finite() || p[0] < -NORMALIZATION_TOL || p[1] < -NORMALIZATION_TOL {
            return Err(Error::InvalidDistribution { p0: p[0], p1: p[1] });
        }
        let (p0, p1) = (p[0].max(0.0) / sum, p[1].max(0.0) / sum);
        if p1 < p0 {
            Self::from_p1(p1)
        } else {
            Self::from_p0(p0)
        }
    }

    pub fn point(state: usize) -> Self {
        if state == 0 {
            Self { p0: 1.0, p1: 0.0 }
        } else {
            Self { p0: 0.0, p1: 1.0 }
        }
    }

    pub fn uniform() -> Self {
        Self { p0: 0.5, p1: 0.5 }
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn get(&self, state: usize) -> f64 {
        if state == 0 {
            self.p0
        } else {
            self.p1
        }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.p0, self.p1]
    }

    /// Relative entropy `D(self || other)` in nats, with `0 log 0 = 0`.
    pub fn relative_entropy(&self, other: &Distribution) -> f64 {
        let mut d = 0.0;
        for i in 0..2 {
            let p = self.get(i);
            if p > 0.0 {
                let q = other.get(i);
                if q == 0.0 {
                    return f64::INFINITY;
                }
                d += p * (p / q).ln();
            }
        }
        d
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.as_array().iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
    }
}

/// Equilibrium distribution `pi = (k10, k01) / (k01 + k10)`.
pub fn equilibrium(rates: &PassiveRates) -> Distribution {
    let total = rates.total();
    let pi0 = rates.k10 / total;
    Distribution {
        p0: pi0,
        p1: rates.k01 / total,
    }
}

/// `tau_r = 1 / (k01 + k10)`, the time scale on which the bit forgets.
pub fn reliability_timescale(rates: &PassiveRates) -> f64 {
    1.0 / rates.total()
}

/// Closed-form passive evolution `p0(t) = pi0 + exp(-t/tau_r) (p0(0) - pi0)`.
pub fn evolve_passive(rates: &PassiveRates, p_init: &Distribution, t: f64) -> Result<Distribution> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "evolution time must be non-negative, got {t}"
        )));
    }
    let pi = equilibrium(rates);
    let decay = (-t * rates.total()).exp();
    // Evolve the smaller component so it keeps relative precision.
    if p_init.p1 < p_init.p0 {
        Distribution::from_p1(pi.p1 + decay * (p_init.p1 - pi.p1))
    } else {
        Distribution::from_p0(pi.p0 + decay * (p_init.p0 - pi.p0))
    }
}

/// `E0 - E1 = kT log(k01 / k10)`, from detailed balance.
pub fn internal_energy_gap(rates: &PassiveRates, kt: f64) -> Result<f64> {
    if !(kt.is_finite() && kt > 0.0) {
        return Err(Error::InvalidArgument(format!("kT must be positive, got {kt}")));
    }
    Ok(kt * (rates.k01 / rates.k10).ln())
}

/// Infinitesimal generator of an `n`-state chain, stored row-major.
///
/// Row `i` holds the rates `k_ij` of jumping `i -> j`; the diagonal is
/// minus the row sum, so each row sums to zero. As a backward operator it
/// acts on functions by `(K z)_i = sum_j k_ij (z_j - z_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    n: usize,
    entries: Vec<f64>,
}

impl Generator {
    /// Builds a generator from off-diagonal rates (`off[i][j]`, diagonal ignored).
    pub fn from_rates(off: &[Vec<f64>]) -> Result<Self> {
        let n = off.len();
        if n < 2 {
            return Err(Error::InvalidGenerator(format!("need at least 2 states, got {n}")));
        }
        let mut entries = vec![0.0; n * n];
        for (i, row) in off.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidGenerator(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            let mut sum = 0.0;
            for (j, &r) in row.iter().enumerate() {
                if i == j {
                    continue;
                }
                if !(r.is_finite() && r >= 0.0) {
                    return Err(Error::InvalidGenerator(format!(
                        "off-diagonal rate ({i},{j}) = {r} must be finite and >= 0"
                    )));
                }
                entries[i * n + j] = r;
                sum += r;
            }
            entries[i * n + i] = -sum;
        }
        Ok(Self { n, entries })
    }

    pub fn two_state(rates: &PassiveRates) -> Self {
        Self {
            n: 2,
            entries: vec![-rates.k01, rates.k01, rates.k10, -rates.k10],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// Largest absolute row-sum deviation from zero.
    pub fn row_sum_residual(&self) -> f64 {
        (0..self.n)
            .map(|i| self.entries[i * self.n..(i + 1) * self.n].iter().sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.entries)
    }

    /// `exp(K t)`.
    pub fn exp(&self, t: f64) -> DMatrix<f64> {
        (self.to_matrix() * t).exp()
    }

    /// `(K z)_i`.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * z[j]).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rk4_passive(rates: &PassiveRates, p0: f64, t: f64, steps: usize) -> f64 {
        let f = |p: f64| -rates.k01() * p + rates.k10() * (1.0 - p);
        let h = t / steps as f64;
        let mut p = p0;
        for _ in 0..steps {
            let a = f(p);
            let b = f(p + 0.5 * h * a);
            let c = f(p + 0.5 * h * b);
            let d = f(p + h * c);
            p += h / 6.0 * (a + 2.0 * b + 2.0 * c + d);
        }
        p
    }

    #[test]
    fn rejects_degenerate_rates() {
        assert!(PassiveRates::new(0.0, 1.0).is_err());
        assert!(PassiveRates::new(1.0, -1.0).is_err());
        assert!(PassiveRates::new(f64::NAN, 1.0).is_err());
        assert!(PassiveRates::new(f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn equilibrium_values() {
        let pi = equilibrium(&PassiveRates::new(0.5, 0.5).unwrap());
        assert_eq!(pi.as_array(), [0.5, 0.5]);
        let pi = equilibrium(&PassiveRates::new(2.0, 1.0).unwrap());
        assert!((pi.p0() - 1.0 / 3.0).abs() < 1e-15);
        assert!((pi.p1() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn equilibrium_is_stationary() {
        let rates = PassiveRates::new(2.0, 1.0).unwrap();
        let pi = equilibrium(&rates);
        for t in [0.1, 1.0, 10.0] {
            let p = evolve_passive(&rates, &pi, t).unwrap();
            assert!((p.p0() - pi.p0()).abs() < 1e-15);
        }
    }

    #[test]
    fn reliability_timescale_values() {
        let t = |a, b| reliability_timescale(&PassiveRates::new(a, b).unwrap());
        assert_eq!(t(0.5, 0.5), 1.0);
        assert!((t(2.0, 1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((t(5.0, 5.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn evolve_passive_closed_form() {
        let rates = PassiveRates::new(0.5, 0.5).unwrap();
        let p = evolve_passive(&rates, &Distribution::point(0), 1.0).unwrap();
        assert!((p.p0() - 0.683_939_720_585_721).abs() < 1e-12);
        let rk = rk4_passive(&rates, 1.0, 1.0, 1000);
        assert!((p.p0() - rk).abs() < 1e-12);
    }

    #[test]
    fn evolve_passive_long_time_limit() {
        let rates = PassiveRates::new(2.0, 1.0).unwrap();
        let tau = reliability_timescale(&rates);
        let p = evolve_passive(&rates, &Distribution::point(1), 50.0 * tau).unwrap();
        assert!((p.p0() - equilibrium(&rates).p0()).abs() < 1e-12);
    }

    #[test]
    fn evolve_passive_rejects_negative_time() {
        let rates = PassiveRates::new(2.0, 1.0).unwrap();
        assert!(evolve_passive(&rates, &Distribution::uniform(), -1.0).is_err());
    }

    #[test]
    fn evolve_passive_matches_rk4_on_ten_tau_r() {
        let rates = PassiveRates::new(1.7, 0.4).unwrap();
        let tau = reliability_timescale(&rates);
        for k in 0..=20 {
            let t = 0.5 * k as f64 * tau;
            let p = evolve_passive(&rates, &Distribution::point(0), t).unwrap();
            let rk = rk4_passive(&rates, 1.0, t, 2000);
            assert!((p.p0() - rk).abs() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn energy_gap() {
        let sym = PassiveRates::new(0.3, 0.3).unwrap();
        assert_eq!(internal_energy_gap(&sym, 1.0).unwrap(), 0.0);
        let r = PassiveRates::new(2.0, 1.0).unwrap();
        assert!((internal_energy_gap(&r, 1.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let swapped = PassiveRates::new(1.0, 2.0).unwrap();
        assert_eq!(
            internal_energy_gap(&r, 1.3).unwrap(),
            -internal_energy_gap(&swapped, 1.3).unwrap()
        );
        assert!(internal_energy_gap(&r, 0.0).is_err());
    }

    #[test]
    fn distribution_validation() {
        assert!(Distribution::new(0.3, 0.7).is_ok());
        assert!(Distribution::new(0.3, 0.6).is_err());
        assert!(Distribution::new(-0.1, 1.1).is_err());
        let d = Distribution::from_p1(1e-20).unwrap();
        assert_eq!(d.p1(), 1e-20);
        assert_eq!(d.p0(), 1.0);
    }

    #[test]
    fn relative_entropy_edge_cases() {
        let pi = Distribution::uniform();
        assert_eq!(pi.relative_entropy(&pi), 0.0);
        assert!((Distribution::point(0).relative_entropy(&pi) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(pi.relative_entropy(&Distribution::point(0)), f64::INFINITY);
    }

    #[test]
    fn generator_rows_sum_to_zero() {
        let g = Generator::from_rates(&[vec![0.0, 1.0, 0.5], vec![0.2, 0.0, 0.3], vec![2.0, 0.1, 0.0]]).unwrap();
        assert!(g.row_sum_residual() < 1e-12);
        assert!(Generator::from_rates(&[vec![0.0, -1.0], vec![1.0, 0.0]]).is_err());
        assert!(Generator::from_rates(&[vec![0.0]]).is_err());
    }

    #[test]
    fn two_state_exponential_matches_closed_form() {
        let rates = PassiveRates::new(2.0, 1.0).unwrap();
        let g = Generator::two_state(&rates);
        let t = 0.37;
        let e = g.exp(t);
        // Row i of exp(Kt) is the passive law at t started from state i.
        for i in 0..2 {
            let p = evolve_passive(&rates, &Distribution::point(i), t).unwrap();
            assert!((e[(i, 0)] - p.p0()).abs() < 1e-12);
            assert!((e[(i, 1)] - p.p1()).abs() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn semigroup(k01 in 0.05f64..5.0, k10 in 0.05f64..5.0, p0 in 0.0f64..1.0,
                         s in 0.0f64..5.0, t in 0.0f64..5.0) {
                let rates = PassiveRates::new(k01, k10).unwrap();
                let p = Distribution::from_p0(p0).unwrap();
                let two = evolve_passive(&rates, &evolve_passive(&rates, &p, s).unwrap(), t).unwrap();
                let one = evolve_passive(&rates, &p, s + t).unwrap();
                prop_assert!((two.p0() - one.p0()).abs() < 1e-12);
                prop_assert!((one.p0() + one.p1() - 1.0).abs() < 1e-12);
            }
        }
    }
}
