//! The four subcommands. Each builds its tables in memory; nothing is
//! written unless the command gets that far.

use rayon::prelude::*;
use rfeh_core::charge_model::harvested_energy;
use rfeh_core::offline_scheduler::{solve, SolveOptions};
use rfeh_core::oracle::{brute_force_optimize, GridSpec};
use rfeh_core::simulator::{
    evaluate, future_impact_probe, generate_scenario, monte_carlo, run_rng, solve_for_rate,
    ExperimentConfig, Perturbation, RateModel, Strategy, SweepAxis, SweepRow,
};
use rfeh_core::EnergyScenario;

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::output::{num, Table};

/// Tables to write, a line for the terminal, and the reason a check
/// failed, if one did.
#[derive(Debug)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub summary: String,
    pub failure: Option<String>,
}

impl Outcome {
    fn ok(table: Table, summary: String) -> Self {
        Outcome {
            tables: vec![table],
            summary,
            failure: None,
        }
    }
}

pub const OPTIMIZE_COLUMNS: [&str; 10] = [
    "kind",
    "epoch",
    "t_start",
    "t_end",
    "power",
    "E_r",
    "E_h",
    "consumed",
    "throughput",
    "terminal_residual_error",
];

pub const SIMULATE_COLUMNS: [&str; 13] = [
    "kind",
    "strategy",
    "seed",
    "epoch",
    "t_start",
    "t_end",
    "power",
    "E_r",
    "E_h",
    "consumed",
    "clamped",
    "throughput",
    "total_harvested",
];

pub const SWEEP_COLUMNS: [&str; 13] = [
    "figure",
    "packet_scale",
    "capacitance",
    "strategy",
    "runs",
    "seed",
    "mean_packet_ratio",
    "mean_throughput",
    "std_throughput",
    "mean_rate",
    "mean_harvested",
    "std_harvested",
    "clamped_runs",
];

pub const PROBE_COLUMNS: [&str; 9] = [
    "figure",
    "perturbation",
    "current",
    "d",
    "runs",
    "seed",
    "packet_scale",
    "mean_relative_change",
    "max_relative_change",
];

pub const ORACLE_COLUMNS: [&str; 9] = [
    "instance",
    "seed",
    "packets",
    "solve_throughput",
    "oracle_throughput",
    "grid_error",
    "tolerance",
    "margin",
    "pass",
];

/// The configured scenario with its classic harvests, or run 0 of the
/// generated experiment. An explicit scenario's classic harvests are what
/// each packet would deliver into an empty store.
fn scenario_of(config: &Config) -> CliResult<(EnergyScenario, Vec<f64>)> {
    match &config.scenario {
        Some(s) => {
            let classic = s
                .packets()
                .iter()
                .map(|p| harvested_energy(0.0, p.length, &config.circuit))
                .collect::<Result<_, _>>()?;
            Ok((s.clone(), classic))
        }
        None => {
            let e = config.experiment_config();
            let g = generate_scenario(&e, &mut run_rng(e.seed, 0))?;
            Ok((g.scenario, g.classic_harvests))
        }
    }
}

pub fn optimize(config: &Config) -> CliResult<Outcome> {
    let (scenario, _) = scenario_of(config)?;
    let e = config.experiment_config();
    let report = solve_for_rate(
        &scenario,
        &config.circuit,
        &e.rate_function(),
        &SolveOptions::default(),
    )?;
    let mut t = Table::new("optimize.csv", &OPTIMIZE_COLUMNS);
    let bounds = report.schedule.epoch_bounds();
    for (i, (p, r)) in report
        .schedule
        .powers()
        .iter()
        .zip(&report.trace.epochs)
        .enumerate()
    {
        t.push(vec![
            "epoch".into(),
            (i + 1).to_string(),
            num(bounds[i]),
            num(bounds[i + 1]),
            num(*p),
            num(r.residual),
            num(r.harvested),
            num(r.consumed),
            String::new(),
            String::new(),
        ]);
    }
    let mut summary = vec![String::new(); OPTIMIZE_COLUMNS.len()];
    summary[0] = "summary".into();
    summary[8] = num(report.throughput);
    summary[9] = num(report.terminal_residual_error);
    t.push(summary);
    Ok(Outcome::ok(
        t,
        format!(
            "{} epochs, throughput {:e}, terminal residual error {:e}",
            report.schedule.epoch_count(),
            report.throughput,
            report.terminal_residual_error
        ),
    ))
}

pub fn simulate(config: &Config, strategy: &str) -> CliResult<Outcome> {
    let strategy: Strategy = strategy
        .parse()
        .map_err(|_| CliError::Config(format!("unknown strategy {strategy:?}")))?;
    let (scenario, classic) = scenario_of(config)?;
    let e = config.experiment_config();
    let out = evaluate(strategy, &scenario, Some(&classic), &config.circuit, &e)?;
    let file = format!("simulate_{strategy}.csv");
    let mut t = Table::new(file, &SIMULATE_COLUMNS);
    let bounds = scenario.epoch_bounds();
    let seed = e.seed.to_string();
    for (i, (p, r)) in out.powers.iter().zip(&out.trace.epochs).enumerate() {
        t.push(vec![
            "epoch".into(),
            strategy.to_string(),
            seed.clone(),
            (i + 1).to_string(),
            num(bounds[i]),
            num(bounds[i + 1]),
            num(*p),
            num(r.residual),
            num(r.harvested),
            num(r.consumed),
            r.clamped.to_string(),
            String::new(),
            String::new(),
        ]);
    }
    let mut summary = vec![String::new(); SIMULATE_COLUMNS.len()];
    summary[0] = "summary".into();
    summary[1] = strategy.to_string();
    summary[2] = seed;
    summary[10] = out.trace.any_clamped().to_string();
    summary[11] = num(out.throughput);
    summary[12] = num(out.trace.total_harvested());
    t.push(summary);
    Ok(Outcome::ok(
        t,
        format!(
            "{strategy}: throughput {:e}, harvested {:e} J{}",
            out.throughput,
            out.trace.total_harvested(),
            if out.trace.any_clamped() {
                ", clamped"
            } else {
                ""
            }
        ),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    /// Optimal throughput over packet scale and capacitance.
    Fig5,
    /// Strategy throughputs over packet scale.
    Fig6,
    /// Strategy harvests over packet scale.
    Fig7,
    /// Relative change of the current optimal power under future perturbations.
    Fig8,
}

impl Figure {
    fn name(self) -> &'static str {
        match self {
            Figure::Fig5 => "fig5",
            Figure::Fig6 => "fig6",
            Figure::Fig7 => "fig7",
            Figure::Fig8 => "fig8",
        }
    }
}

fn scaled(e: &ExperimentConfig, scale: f64) -> ExperimentConfig {
    let mut c = e.clone();
    c.mean_epoch *= scale;
    c.mean_harvest *= scale;
    if let Some(p) = c.priors.as_mut() {
        p.mean_gap *= scale;
    }
    c
}

fn sweep_row(
    figure: Figure,
    packet_scale: f64,
    capacitance: f64,
    seed: u64,
    r: &SweepRow,
) -> Vec<String> {
    vec![
        figure.name().into(),
        num(packet_scale),
        num(capacitance),
        r.strategy.to_string(),
        r.runs.to_string(),
        seed.to_string(),
        num(r.mean_packet_ratio),
        num(r.mean_throughput),
        num(r.std_throughput),
        num(r.mean_rate),
        num(r.mean_harvested),
        num(r.std_harvested),
        r.clamped_runs.to_string(),
    ]
}

pub fn sweep(config: &Config, figure: Figure) -> CliResult<Outcome> {
    let e = config.experiment_config();
    let file = format!("sweep_{}.csv", figure.name());
    let s = &config.sweep;
    match figure {
        Figure::Fig5 => {
            let mut t = Table::new(file, &SWEEP_COLUMNS);
            for &scale in &s.packet_scales {
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(CliError::Config(format!(
                        "packet scale must be positive, got {scale}"
                    )));
                }
                let axis = SweepAxis::Capacitance(s.capacitances.clone());
                for r in monte_carlo(&scaled(&e, scale), &axis, &[Strategy::Optimal])? {
                    t.push(sweep_row(figure, scale, r.value, e.seed, &r));
                }
            }
            let n = t.rows.len();
            Ok(Outcome::ok(t, format!("fig5: {n} sweep points")))
        }
        Figure::Fig6 | Figure::Fig7 => {
            let mut t = Table::new(file, &SWEEP_COLUMNS);
            let axis = SweepAxis::PacketScale(s.packet_scales.clone());
            let capacitance = config.circuit.capacitance();
            for r in monte_carlo(&e, &axis, &s.strategies)? {
                t.push(sweep_row(figure, r.value, capacitance, e.seed, &r));
            }
            let n = t.rows.len();
            Ok(Outcome::ok(t, format!("{}: {n} rows", figure.name())))
        }
        Figure::Fig8 => probe(config),
    }
}

fn probe(config: &Config) -> CliResult<Outcome> {
    let p = &config.sweep.probe;
    let e = scaled(&config.experiment_config(), p.packet_scale);
    e.validate()?;
    let rate = e.rate_function();
    let kinds = ["epoch", "packet"];
    // changes[run][distance][kind]
    let changes: Vec<Vec<[f64; 2]>> = (0..p.runs as u64)
        .into_par_iter()
        .map(|run| -> CliResult<Vec<[f64; 2]>> {
            let g = generate_scenario(&e, &mut run_rng(e.seed, run))?;
            let s = &g.scenario;
            let mean_length =
                s.packets().iter().map(|q| q.length).sum::<f64>() / s.packet_count().max(1) as f64;
            let perturbations = [
                Perturbation {
                    delta_epoch: p.delta_epoch * e.mean_epoch,
                    delta_packet: 0.0,
                },
                Perturbation {
                    delta_epoch: 0.0,
                    delta_packet: p.delta_packet * mean_length,
                },
            ];
            p.distances
                .iter()
                .map(|&d| {
                    let mut row = [0.0; 2];
                    for (slot, &q) in row.iter_mut().zip(&perturbations) {
                        *slot = future_impact_probe(s, &e.circuit, &rate, p.current, d, q)?;
                    }
                    Ok(row)
                })
                .collect()
        })
        .collect::<CliResult<_>>()?;

    let mut t = Table::new("sweep_fig8.csv", &PROBE_COLUMNS);
    for (k, kind) in kinds.iter().enumerate() {
        for (j, &d) in p.distances.iter().enumerate() {
            let values: Vec<f64> = changes.iter().map(|r| r[j][k]).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let max = values.iter().copied().fold(0.0, f64::max);
            t.push(vec![
                "fig8".into(),
                kind.to_string(),
                p.current.to_string(),
                d.to_string(),
                values.len().to_string(),
                e.seed.to_string(),
                num(p.packet_scale),
                num(mean),
                num(max),
            ]);
        }
    }
    Ok(Outcome::ok(
        t,
        format!("fig8: {} runs, distances {:?}", p.runs, p.distances),
    ))
}

/// Solves seeded instances and checks each against the brute-force grid:
/// the solver must reach `oracle - tolerance`, where the tolerance is the
/// oracle's grid error unless overridden.
pub fn oracle_check(config: &Config, tolerance: Option<f64>) -> CliResult<Outcome> {
    let o = &config.oracle;
    let grid = GridSpec::default().with_resolution(o.resolution);
    if o.packets > grid.max_packets {
        return Err(CliError::Config(format!(
            "oracle-check handles at most {} packets, config asks for {}",
            grid.max_packets, o.packets
        )));
    }
    let mut e = config.experiment_config();
    e.packets = o.packets;
    // The oracle scores with the normalized objective.
    e.rate_model = RateModel::Normalized;

    let mut t = Table::new("oracle_check.csv", &ORACLE_COLUMNS);
    let mut worst = f64::INFINITY;
    let mut failed = 0;
    let mut worst_instance = 0;
    for i in 0..o.instances as u64 {
        let g = generate_scenario(&e, &mut run_rng(e.seed, i))?;
        let solved = solve(&g.scenario, &e.circuit)?;
        let oracle = brute_force_optimize(&g.scenario, &e.circuit, &grid)?;
        let eps = tolerance.unwrap_or(oracle.grid_error);
        let margin = solved.throughput - (oracle.throughput - eps);
        if margin < worst {
            worst = margin;
            worst_instance = i;
        }
        let pass = margin >= 0.0;
        failed += usize::from(!pass);
        t.push(vec![
            i.to_string(),
            e.seed.to_string(),
            o.packets.to_string(),
            num(solved.throughput),
            num(oracle.throughput),
            num(oracle.grid_error),
            num(eps),
            num(margin),
            pass.to_string(),
        ]);
    }
    let summary = format!(
        "{} instances with {} packets, worst solve - (oracle - tolerance) = {worst:e}",
        o.instances, o.packets
    );
    Ok(Outcome {
        tables: vec![t],
        failure: (failed > 0).then(|| {
            format!(
                "{failed} of {} instances fall short; worst is instance {worst_instance}",
                o.instances
            )
        }),
        summary,
    })
}
