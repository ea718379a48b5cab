//! Embedded Dormand–Prince 5(4) integrator with its fourth-order continuous
//! extension for dense output.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Upper bound on the step, also bounding the dense-output error.
    pub max_step: f64,
    pub max_steps: usize,
    /// Number of leading components that feed back into the right-hand
    /// side. Trailing components that are pure quadratures are left out of
    /// the stability estimate.
    pub coupled: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            max_step: f64::INFINITY,
            max_steps: 2_000_000,
            coupled: usize::MAX,
        }
    }
}

/// Accepted steps with the continuous extension of each step.
#[derive(Debug, Clone)]
pub struct DenseSolution<const M: usize> {
    xs: Vec<f64>,
    ys: Vec<[f64; M]>,
    // Per interval: h*k1 - (y1 - y0), (y1 - y0) - h*k7 - that, and the
    // fifth dense coefficient.
    coef: Vec<[[f64; M]; 3]>,
}

impl<const M: usize> DenseSolution<M> {
    fn new(x0: f64, y0: [f64; M]) -> Self {
        Self {
            xs: vec![x0],
            ys: vec![y0],
            coef: Vec::new(),
        }
    }

    fn push(&mut self, h: f64, k1: &[f64; M], x1: f64, y1: [f64; M], k7: &[f64; M], d5: [f64; M]) {
        let y0 = self.ys.last().expect("non-empty solution");
        let mut c = [[0.0; M]; 3];
        for i in 0..M {
            let diff = y1[i] - y0[i];
            let bspl = h * k1[i] - diff;
            c[0][i] = bspl;
            c[1][i] = diff - h * k7[i] - bspl;
            c[2][i] = d5[i];
        }
        self.coef.push(c);
        self.xs.push(x1);
        self.ys.push(y1);
    }

    pub fn x_start(&self) -> f64 {
        self.xs[0]
    }

    pub fn x_end(&self) -> f64 {
        *self.xs.last().expect("non-empty solution")
    }

    pub fn last(&self) -> [f64; M] {
        *self.ys.last().expect("non-empty solution")
    }

    pub fn n_nodes(&self) -> usize {
        self.xs.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, &[f64; M])> {
        self.xs.iter().copied().zip(self.ys.iter())
    }

    /// Value at `x`, clamped to the integrated interval.
    pub fn at(&self, x: f64) -> [f64; M] {
        let n = self.xs.len();
        if n == 1 || x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let k = self.xs.partition_point(|&v| v <= x) - 1;
        let (x0, x1) = (self.xs[k], self.xs[k + 1]);
        let th = (x - x0) / (x1 - x0);
        let th1 = 1.0 - th;
        let c = &self.coef[k];
        let mut out = [0.0; M];
        for i in 0..M {
            let diff = self.ys[k + 1][i] - self.ys[k][i];
            out[i] = self.ys[k][i] + th * (diff + th1 * (c[0][i] + th * (c[1][i] + th1 * c[2][i])));
        }
        out
    }
}

/// Largest float strictly below a positive finite `x` (used to evaluate
/// left limits at breakpoints).
pub(crate) fn prev_float(x: f64) -> f64 {
    if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else if x == 0.0 {
        -f64::from_bits(1)
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order weights minus embedded fourth-order weights.
// Dense output weights.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `dy/dx = f(x, y)` from `x0` to `x1 > x0`, stopping exactly at
/// every breakpoint in between (where the right-hand side may be
/// discontinuous).
pub fn integrate<const M: usize, F>(
    mut f: F,
    x0: f64,
    y0: [f64; M],
    x1: f64,
    breakpoints: &[f64],
    opts: &OdeOptions,
) -> Result<DenseSolution<M>>
where
    F: FnMut(f64, &[f64; M]) -> Result<[f64; M]>,
{
    if !(x1 > x0) {
        return Err(Error::Integration {
            x: x0,
            reason: format!("empty interval [{x0}, {x1}]"),
        });
    }
    let mut stops: Vec<f64> = breakpoints.iter().copied().filter(|&b| b > x0 && b < x1).collect();
    stops.sort_by(|a, b| a.total_cmp(b));
    stops.dedup();
    stops.push(x1);

    let mut sol = DenseSolution::new(x0, y0);
    let mut x = x0;
    let mut y = y0;
    let mut steps = 0usize;
    let mut h_guess = f64::NAN;
    for &stop in &stops {
        let mut k1 = f(x, &y)?;
        let span = stop - x;
        let mut h = if h_guess.is_finite() {
            h_guess.min(span)
        } else {
            initial_step(&y, &k1, span, opts)
        };
        h = h.min(opts.max_step);
        while x < stop {
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::Integration {
                    x,
                    reason: "step budget exhausted".into(),
                });
            }
            let last = x + h >= stop || stop - (x + h) < 1e-12 * h;
            let h_try = if last { stop - x } else { h };
            let (y_new, k7, err, d5, h_lambda) = dp_step(&mut f, x, &y, &k1, h_try, last.then_some(stop), opts)?;
            let stable = h_lambda <= STABILITY_LIMIT;
            if err <= 1.0 && stable {
                let x_new = if last { stop } else { x + h_try };
                sol.push(h_try, &k1, x_new, y_new, &k7, d5);
                x = x_new;
                y = y_new;
                k1 = k7;
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = (h_try * factor).min(opts.max_step);
            if !stable {
                h = h.min(h_try * 0.9 * STABILITY_LIMIT / h_lambda);
            }
            if h < 1e-15 * (1.0 + x.abs()) {
                return Err(Error::Integration {
                    x,
                    reason: "step size underflow".into(),
                });
            }
        }
        h_guess = h;
    }
    Ok(sol)
}

fn initial_step<const M: usize>(y: &[f64; M], dy: &[f64; M], span: f64, opts: &OdeOptions) -> f64 {
    let mut d0 = 0.0f64;
    let mut d1 = 0.0f64;
    for i in 0..M {
        let sc = opts.abs_tol + opts.rel_tol * y[i].abs();
        d0 = d0.max(y[i].abs() / sc);
        d1 = d1.max(dy[i].abs() / sc);
    }
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    (h * 1e-2).max(1e-10 * span).min(span).min(opts.max_step)
}

// (5th-order solution, f at it, scaled error, fifth dense coefficient,
// estimate of h times the local Lipschitz constant).
type Step<const M: usize> = ([f64; M], [f64; M], f64, [f64; M], f64);

/// Bound on `h * lambda` inside the real stability interval of the method.
/// Near an equilibrium the error estimate alone cannot see an unstable
/// step, so steps beyond it are rejected.
const STABILITY_LIMIT: f64 = 3.25;

fn dp_step<const M: usize, F>(
    f: &mut F,
    x: f64,
    y: &[f64; M],
    k1: &[f64; M],
    h: f64,
    stop: Option<f64>,
    opts: &OdeOptions,
) -> Result<Step<M>>
where
    F: FnMut(f64, &[f64; M]) -> Result<[f64; M]>,
{
    let mut k = [[0.0; M]; 7];
    k[0] = *k1;
    let mut y6 = *y;
    for s in 1..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            let a = A[s][j];
            if a != 0.0 {
                for i in 0..M {
                    ys[i] += h * a * kj[i];
                }
            }
        }
        if s == 6 {
            // FSAL: the stage-7 argument is the 5th-order solution.
            let x_end = stop.map_or(x + h, prev_float);
            let k7 = f(x_end, &ys)?;
            k[6] = k7;
            let mut err = 0.0;
            for i in 0..M {
                let mut e = 0.0;
                for (st, ks) in k.iter().enumerate() {
                    e += E[st] * ks[i];
                }
                let sc = opts.abs_tol + opts.rel_tol * y[i].abs().max(ys[i].abs());
                let r = h * e / sc;
                err += r * r;
            }
            let err = (err / M as f64).sqrt();
            if !err.is_finite() || ys.iter().any(|v| !v.is_finite()) {
                return Ok((ys, k7, f64::INFINITY, [0.0; M], 0.0));
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..M.min(opts.coupled) {
                num += (k7[i] - k[5][i]).powi(2);
                den += (ys[i] - y6[i]).powi(2);
            }
            let h_lambda = if den > 0.0 { h * (num / den).sqrt() } else { 0.0 };
            let mut d5 = [0.0; M];
            for (i, d) in d5.iter_mut().enumerate() {
                *d = h * k.iter().zip(D.iter()).map(|(ks, w)| w * ks[i]).sum::<f64>();
            }
            return Ok((ys, k7, err, d5, h_lambda));
        }
        let xs = match stop {
            Some(b) if C[s] == 1.0 => prev_float(b),
            _ => x + C[s] * h,
        };
        if s == 5 {
            y6 = ys;
        }
        k[s] = f(xs, &ys)?;
    }
    unreachable!("seven stages always return")
}
