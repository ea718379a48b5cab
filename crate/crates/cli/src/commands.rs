use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use kl_erasure::chain::{equilibrium, reliability_timescale, Distribution};
use kl_erasure::control::{
    erasing_cost_for, erasing_cost_from, erasure_protocol, solve_desirability, ControlledMarginal,
};
use kl_erasure::estimators::{mc_kl, McEstimate, McOptions};
use kl_erasure::parallel::{map_indices, Execution};
use kl_erasure::path::{sample_path_seeded, SampleOptions};
use kl_erasure::protocol::{OptimalProtocol, Protocol};
use kl_erasure::reversal::{
    verify_identities, verify_theorem1, Convergence, ReversalFormula, Status, VerifyOptions, MIN_CONCLUSIVE_SAMPLES,
};
use kl_erasure::thermo::{free_energy_gap, integrate_ledger, salamon_bound, LedgerRow, LedgerTotals};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ProtocolKind, RunConfig, TRUNCATION_FRACTION};

pub enum Outcome {
    Success,
    /// Names of the checks that failed.
    Failed(Vec<String>),
}

/// Tolerance on the ledger's first-law residuals.
pub const LEDGER_TOL: f64 = 1e-8;

/// Initial `p0` of the passive relaxation run by `verify`.
pub const RELAXATION_P0: f64 = 0.9;

fn f(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    note(&format!("wrote {}", path.display()));
    Ok(())
}

/// Progress line on stdout; a closed stdout is not an error.
fn note(line: &str) {
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(dir, name, &text)
}

/// Creates the output directory and records the resolved configuration.
fn prepare(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("cannot create {}", cfg.out.display()))?;
    write_file(&cfg.out, "config.toml", &cfg.to_toml()?)?;
    Ok(&cfg.out)
}

fn header(cfg: &RunConfig) -> Value {
    json!({ "config": cfg.report_value(), "digest": cfg.digest() })
}

fn extend(mut base: Value, more: Value) -> Value {
    if let (Some(a), Value::Object(b)) = (base.as_object_mut(), more) {
        a.extend(b);
    }
    base
}

fn mc_options(cfg: &RunConfig) -> McOptions {
    McOptions {
        seed: cfg.seed,
        stream_offset: 0,
        execution: Execution::Parallel,
    }
}

fn times(horizon: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| horizon * k as f64 / n as f64).collect()
}

pub fn solve(cfg: &RunConfig) -> Result<Outcome> {
    let dir = prepare(cfg)?;
    let rates = cfg.rates()?;
    let tau_e = cfg.tau_e()?;
    let p_init = cfg.p_init()?;
    let z = solve_desirability(&rates, [1.0, 0.0], tau_e)?;
    let protocol = Protocol::Optimal(OptimalProtocol::new(z.clone()));
    let marginal = ControlledMarginal::solve(&protocol, &p_init)?;
    let cost = erasing_cost_from(&rates, tau_e, &p_init)?;
    let v0 = z.cost_to_go(0.0)?;

    let mut csv = String::from("t,z0,z1,u01,u10,p0,p1\n");
    let mut z_grid = Vec::new();
    let mut protocol_grid = Vec::new();
    for t in times(tau_e, cfg.grid_points) {
        let zt = z.at(t)?;
        let u = match protocol.rates(t) {
            Ok(u) => u,
            Err(_) => [rates.k01() * zt[1] / zt[0], rates.k10() * zt[0] / zt[1]],
        };
        let p = marginal.at(t)?;
        csv.push_str(&[t, zt[0], zt[1], u[0], u[1], p.p0(), p.p1()].map(f).join(","));
        csv.push('\n');
        z_grid.push(json!({ "t": t, "z0": zt[0], "z1": zt[1] }));
        protocol_grid.push(json!({ "t": t, "u01": u[0], "u10": u[1] }));
    }
    let report = extend(
        header(cfg),
        json!({
            "tau_r": reliability_timescale(&rates),
            "tau_e": tau_e,
            "rates": rates,
            "p_init": p_init,
            "cost_nats": cost,
            "cost_kt": cost * cfg.kt,
            "v0_0": v0[0],
            "v1_0": v0[1],
            "z_grid": z_grid,
            "protocol_grid": protocol_grid,
        }),
    );
    write_json(dir, "solve.json", &report)?;
    write_file(dir, "solve.csv", &csv)?;
    Ok(Outcome::Success)
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let dir = prepare(cfg)?;
    let protocol = cfg.protocol(cfg.protocol)?;
    let p_init = cfg.p_init()?;
    let options = SampleOptions {
        erasure_target: (cfg.protocol == ProtocolKind::Optimal).then_some(0),
    };
    let paths = map_indices(cfg.samples as u64, Execution::Parallel, |i| {
        sample_path_seeded(&protocol, &p_init, cfg.seed, i, &options)
    });
    let path = dir.join("paths.jsonl");
    let file = fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut out = BufWriter::new(file);
    let mut ended_in_zero = 0usize;
    for p in paths {
        let p = p?;
        if p.final_state() == 0 {
            ended_in_zero += 1;
        }
        serde_json::to_writer(&mut out, &p)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    note(&format!("wrote {}", path.display()));
    let summary = extend(
        header(cfg),
        json!({
            "protocol": protocol.describe(),
            "p_init": p_init,
            "n_paths": cfg.samples,
            "fraction_ending_in_0": ended_in_zero as f64 / cfg.samples as f64,
        }),
    );
    write_json(dir, "simulate.json", &summary)?;
    Ok(Outcome::Success)
}

/// One line of the verification report.
#[derive(Debug, Clone, Serialize)]
struct Check {
    name: String,
    value: f64,
    target: f64,
    tolerance: f64,
    status: Status,
}

impl Check {
    fn bound(name: String, value: f64, target: f64, tolerance: f64) -> Self {
        let ok = (value - target).abs() <= tolerance;
        Self {
            name,
            value,
            target,
            tolerance,
            status: if ok { Status::Pass } else { Status::Fail },
        }
    }

    fn mc(name: String, est: &McEstimate, target: f64, se_multiple: f64, status: Status) -> Self {
        Self {
            name,
            value: est.mean,
            target,
            tolerance: se_multiple * est.std_error,
            status,
        }
    }

    /// A discrete value at `2N`: accepted when its error is below the floor
    /// or at most `err(N) / min_ratio`.
    fn convergence(name: String, c: &Convergence, opts: &VerifyOptions) -> Self {
        Self {
            name,
            value: c.values[1],
            target: c.target,
            tolerance: (c.errors[0] / opts.min_error_ratio).max(opts.error_floor),
            status: c.status,
        }
    }
}

fn mc_verdict(est: &McEstimate, target: f64, se_multiple: f64) -> Status {
    if est.n_samples < MIN_CONCLUSIVE_SAMPLES {
        Status::Inconclusive
    } else if est.agrees_with(target, se_multiple) {
        Status::Pass
    } else {
        Status::Fail
    }
}

pub fn verify(cfg: &RunConfig, corrupt_reversal: bool) -> Result<Outcome> {
    let dir = prepare(cfg)?;
    let rates = cfg.rates()?;
    let tau_e = cfg.tau_e()?;
    let pi = equilibrium(&rates);
    let opts = VerifyOptions {
        n_samples: cfg.samples,
        mc: mc_options(cfg),
        steps: cfg.steps,
        formula: if corrupt_reversal {
            ReversalFormula::Corrupted
        } else {
            ReversalFormula::Standard
        },
        ..VerifyOptions::default()
    };
    let runs: [(&str, Protocol, Distribution); 3] = [
        (
            "passive",
            cfg.protocol(ProtocolKind::Passive)?,
            Distribution::from_p0(RELAXATION_P0)?,
        ),
        ("quench", cfg.protocol(ProtocolKind::Quench)?, pi),
        ("truncated", cfg.protocol(ProtocolKind::Truncated)?, pi),
    ];

    let mut checks = Vec::new();
    let mut details = serde_json::Map::new();
    for (label, protocol, p_init) in &runs {
        let ledger = integrate_ledger(protocol, &rates, p_init)?;
        let totals = ledger.totals;
        let terminal = ControlledMarginal::solve(protocol, p_init)?.terminal()?;
        let first = totals.first_law_residual().unwrap_or(f64::INFINITY);
        let second = totals.free_energy_residual().unwrap_or(f64::INFINITY);
        checks.push(Check::bound(format!("first_law[{label}]"), first, 0.0, LEDGER_TOL));
        checks.push(Check::bound(
            format!("work_free_energy[{label}]"),
            second,
            0.0,
            LEDGER_TOL,
        ));
        let endpoint_df = free_energy_gap(&terminal, &rates) - free_energy_gap(p_init, &rates);
        checks.push(Check::bound(
            format!("delta_f_endpoints[{label}]"),
            totals.delta_f.finite().unwrap_or(f64::INFINITY),
            endpoint_df,
            LEDGER_TOL,
        ));

        let t1 = verify_theorem1(protocol, &rates, p_init, &opts)?;
        checks.push(Check::mc(
            format!("entropy_production_mc[{label}]"),
            &t1.mc,
            t1.ledger_s_tot,
            opts.se_multiple,
            t1.mc_status,
        ));
        checks.push(Check::convergence(
            format!("entropy_production_discrete[{label}]"),
            &t1.discrete,
            &opts,
        ));

        let ids = verify_identities(protocol, &rates, p_init, &opts)?;
        checks.push(Check::convergence(format!("eq14[{label}]"), &ids.eq14, &opts));
        checks.push(Check::convergence(format!("eq15[{label}]"), &ids.eq15, &opts));

        details.insert(
            (*label).to_string(),
            json!({
                "protocol": protocol.describe(),
                "p_init": p_init,
                "ledger": totals,
                "entropy_production": t1,
                "identities": ids,
            }),
        );
    }

    let cost = erasing_cost_for(&rates, tau_e)?;
    let optimal = erasure_protocol(&rates, tau_e)?;
    let passive = Protocol::passive(rates, tau_e)?;
    let est = mc_kl(&optimal, &passive, &pi, cfg.samples, &opts.mc)?;
    let status = mc_verdict(&est, cost, opts.se_multiple);
    checks.push(Check::mc(
        "erasing_cost_mc".into(),
        &est,
        cost,
        opts.se_multiple,
        status,
    ));

    let failed: Vec<String> = checks
        .iter()
        .filter(|c| c.status == Status::Fail)
        .map(|c| c.name.clone())
        .collect();
    let inconclusive = checks.iter().filter(|c| c.status == Status::Inconclusive).count();
    let report = extend(
        header(cfg),
        json!({
            "passed": failed.is_empty(),
            "inconclusive": inconclusive,
            "checks": checks,
            "details": details,
        }),
    );
    write_json(dir, "verify.json", &report)?;
    for c in &checks {
        note(&format!("{:<40} {:?}", c.name, c.status));
    }
    Ok(if failed.is_empty() {
        Outcome::Success
    } else {
        Outcome::Failed(failed)
    })
}

pub fn sweep(cfg: &RunConfig) -> Result<Outcome> {
    let dir = prepare(cfg)?;
    let rates = cfg.rates()?;
    let tau_r = reliability_timescale(&rates);
    let pi = equilibrium(&rates);
    let ln2 = std::f64::consts::LN_2;
    let mut csv = String::from("ratio,cost_eq8,asymptote_half_log,floor_log2,salamon_bound,mc_estimate,mc_se\n");
    for &ratio in &cfg.ratios {
        let tau_e = ratio * tau_r;
        let cost = erasing_cost_for(&rates, tau_e)?;
        let asymptote = 0.5 * (2.0 / ratio).ln();
        let bound = salamon_bound(tau_e, cfg.sigma).map(f).unwrap_or_default();
        let optimal = erasure_protocol(&rates, tau_e)?;
        let passive = Protocol::passive(rates, tau_e)?;
        let est = mc_kl(&optimal, &passive, &pi, cfg.samples, &mc_options(cfg))?;
        let row = [
            f(ratio),
            f(cost),
            f(asymptote),
            f(ln2),
            bound,
            f(est.mean),
            f(est.std_error),
        ];
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write_file(dir, "sweep.csv", &csv)?;
    Ok(Outcome::Success)
}

fn scaled(totals: &LedgerTotals, kt: f64) -> Value {
    let s = |e: kl_erasure::thermo::Entry| match e.finite() {
        Some(v) => json!(v * kt),
        None => json!("unbounded"),
    };
    json!({
        "delta_e": s(totals.delta_e),
        "work": s(totals.work),
        "heat": s(totals.heat),
        "delta_s": s(totals.delta_s),
        "delta_f": s(totals.delta_f),
        "s_tot": s(totals.s_tot),
    })
}

pub fn thermo_report(cfg: &RunConfig) -> Result<Outcome> {
    let dir = prepare(cfg)?;
    let rates = cfg.rates()?;
    let protocol = cfg.protocol(cfg.protocol)?;
    let p_init = cfg.p_init()?;
    let ledger = integrate_ledger(&protocol, &rates, &p_init)?;
    let rows = ledger.uniform_series(cfg.grid_points)?;
    let mut csv = String::from(LedgerRow::CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.to_csv());
        csv.push('\n');
    }
    let totals = ledger.totals;
    let report = extend(
        header(cfg),
        json!({
            "protocol": protocol.describe(),
            "p_init": p_init,
            "truncation_fraction": (cfg.protocol == ProtocolKind::Truncated).then_some(TRUNCATION_FRACTION),
            "totals_nats": totals,
            "totals_kt": scaled(&totals, cfg.kt),
            "first_law_residual": totals.first_law_residual(),
            "free_energy_residual": totals.free_energy_residual(),
        }),
    );
    write_json(dir, "thermo.json", &report)?;
    write_file(dir, "thermo.csv", &csv)?;
    Ok(Outcome::Success)
}
