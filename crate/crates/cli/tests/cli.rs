use std::path::{Path, PathBuf};
use std::process::Command;

use rfeh_cli::config::Config;
use rfeh_core::offline_scheduler::solve;
use rfeh_core::simulator::{evaluate, generate_scenario, run_rng, RateModel, Strategy};
use tempfile::TempDir;

const TWO_PACKET: &str = r#"
[circuit]
resistance = 750.0
capacitance = 0.68
v_max = 2.5

[experiment]
rate_model = "normalized"

[scenario]
initial_energy = 0.5
deadline = 30.0
packets = [
    { arrival = 10.0, length = 5.0 },
    { arrival = 20.0, length = 5.0 },
]
"#;

const SMALL: &str = r#"
[experiment]
packets = 60
runs = 3
seed = 9

[sweep]
packet_scales = [1.0, 10.0, 100.0]
capacitances = [0.05, 0.1, 0.2]

[sweep.probe]
runs = 3
"#;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn rfeh(dir: &Path, config: Option<&str>, args: &[&str]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rfeh"));
    if let Some(text) = config {
        let path = dir.join("config.toml");
        std::fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    let out = cmd
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn out_file(dir: &Path, name: &str) -> PathBuf {
    dir.join("out").join(name)
}

/// Header names and data rows, skipping the manifest comments.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

fn f(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn optimize_matches_the_library_field_for_field() {
    let dir = TempDir::new().unwrap();
    let run = rfeh(dir.path(), Some(TWO_PACKET), &["optimize"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let config = Config::parse(TWO_PACKET).unwrap();
    let scenario = config.scenario.clone().unwrap();
    let report = solve(&scenario, &config.circuit).unwrap();

    let (header, rows) = read_csv(&out_file(dir.path(), "optimize.csv"));
    assert_eq!(
        header,
        [
            "kind",
            "epoch",
            "t_start",
            "t_end",
            "power",
            "E_r",
            "E_h",
            "consumed",
            "throughput",
            "terminal_residual_error"
        ]
    );
    assert_eq!(rows.len(), 4);
    let bounds = scenario.epoch_bounds();
    for (i, row) in rows[..3].iter().enumerate() {
        let e = &report.trace.epochs[i];
        assert_eq!(row[0], "epoch");
        assert_eq!(row[1], (i + 1).to_string());
        assert_eq!(f(&row[2]), bounds[i]);
        assert_eq!(f(&row[3]), bounds[i + 1]);
        assert_eq!(f(&row[4]), report.schedule.powers()[i]);
        assert_eq!(f(&row[5]), e.residual);
        assert_eq!(f(&row[6]), e.harvested);
        assert_eq!(f(&row[7]), e.consumed);
    }
    assert_eq!(rows[3][0], "summary");
    assert_eq!(f(&rows[3][8]), report.throughput);
    assert_eq!(f(&rows[3][9]), report.terminal_residual_error);
    assert!(out_file(dir.path(), "optimize.manifest.toml").exists());
}

#[test]
fn optimize_without_packets_writes_one_epoch() {
    let dir = TempDir::new().unwrap();
    let config = "[scenario]\ninitial_energy = 0.01\ndeadline = 4.0\npackets = []\n";
    let run = rfeh(
        dir.path(),
        Some(config),
        &["optimize", "--rate-model", "normalized"],
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (_, rows) = read_csv(&out_file(dir.path(), "optimize.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "epoch");
    assert_eq!(f(&rows[0][4]), 0.01 / 4.0);
    assert_eq!(rows[1][0], "summary");
}

#[test]
fn malformed_config_exits_2_without_output() {
    let dir = TempDir::new().unwrap();
    for text in [
        "[experiment\n",
        "[experiment]\nrunz = 3\n",
        "[experiment]\nruns = 0\n",
    ] {
        let run = rfeh(dir.path(), Some(text), &["optimize"]);
        assert_eq!(run.code, 2, "{text}");
        assert!(run.stderr.contains("config error"), "{}", run.stderr);
        assert!(!dir.path().join("out").exists());
    }
    let run = rfeh(
        dir.path(),
        None,
        &["--config", "/nonexistent/rfeh.toml", "optimize"],
    );
    assert_eq!(run.code, 2);
}

#[test]
fn simulate_zero_has_zero_throughput() {
    let dir = TempDir::new().unwrap();
    let run = rfeh(
        dir.path(),
        Some(TWO_PACKET),
        &["simulate", "--strategy", "zero"],
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (header, rows) = read_csv(&out_file(dir.path(), "simulate_zero.csv"));
    let summary = rows.last().unwrap();
    assert_eq!(summary[0], "summary");
    assert_eq!(f(&summary[column(&header, "throughput")]), 0.0);
    assert!(rows[..rows.len() - 1]
        .iter()
        .all(|r| f(&r[column(&header, "power")]) == 0.0));
}

#[test]
fn simulate_tight_string_matches_the_library_trace() {
    let dir = TempDir::new().unwrap();
    let run = rfeh(
        dir.path(),
        Some(SMALL),
        &["simulate", "--strategy", "tight_string"],
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    let config = Config::parse(SMALL).unwrap();
    let e = config.experiment_config();
    let g = generate_scenario(&e, &mut run_rng(9, 0)).unwrap();
    let out = evaluate(
        Strategy::TightString,
        &g.scenario,
        Some(&g.classic_harvests),
        &e.circuit,
        &e,
    )
    .unwrap();

    let (header, rows) = read_csv(&out_file(dir.path(), "simulate_tight_string.csv"));
    let clamped = column(&header, "clamped");
    assert_eq!(rows.len(), out.powers.len() + 1);
    for (row, (p, r)) in rows.iter().zip(out.powers.iter().zip(&out.trace.epochs)) {
        assert_eq!(row[column(&header, "seed")], "9");
        assert_eq!(f(&row[column(&header, "power")]), *p);
        assert_eq!(f(&row[column(&header, "E_r")]), r.residual);
        assert_eq!(f(&row[column(&header, "E_h")]), r.harvested);
        assert_eq!(f(&row[column(&header, "consumed")]), r.consumed);
        assert_eq!(row[clamped], r.clamped.to_string());
    }
    let summary = rows.last().unwrap();
    assert_eq!(f(&summary[column(&header, "throughput")]), out.throughput);
}

#[test]
fn unknown_strategy_exits_2() {
    let dir = TempDir::new().unwrap();
    let run = rfeh(
        dir.path(),
        Some(TWO_PACKET),
        &["simulate", "--strategy", "greedy"],
    );
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("greedy"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn fig5_rate_falls_with_packet_length_and_rises_with_capacity() {
    let dir = TempDir::new().unwrap();
    let run = rfeh(dir.path(), Some(SMALL), &["sweep", "--figure", "fig5"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (header, rows) = read_csv(&out_file(dir.path(), "sweep_fig5.csv"));
    assert_eq!(rows.len(), 9);
    let (scale, cap, rate, thr) = (
        column(&header, "packet_scale"),
        column(&header, "capacitance"),
        column(&header, "mean_rate"),
        column(&header, "mean_throughput"),
    );
    for c in ["0.05", "0.1", "0.2"] {
        let rates: Vec<f64> = rows
            .iter()
            .filter(|r| r[cap] == c)
            .map(|r| f(&r[rate]))
            .collect();
        assert_eq!(rates.len(), 3);
        assert!(rates.windows(2).all(|w| w[1] < w[0]), "{c}: {rates:?}");
    }
    for s in ["1.0", "10.0", "100.0"] {
        let t: Vec<f64> = rows
            .iter()
            .filter(|r| r[scale] == s)
            .map(|r| f(&r[thr]))
            .collect();
        assert!(t.windows(2).all(|w| w[1] > w[0]), "{s}: {t:?}");
    }
}

#[test]
fn fig8_far_future_changes_stay_below_two_percent() {
    let dir = TempDir::new().unwrap();
    let run = rfeh(dir.path(), Some(SMALL), &["sweep", "--figure", "fig8"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (header, rows) = read_csv(&out_file(dir.path(), "sweep_fig8.csv"));
    let (d, max) = (column(&header, "d"), column(&header, "max_relative_change"));
    let far: Vec<f64> = rows
        .iter()
        .filter(|r| r[d] == "5")
        .map(|r| f(&r[max]))
        .collect();
    assert_eq!(far.len(), 2);
    assert!(far.iter().all(|&x| x < 0.02), "{far:?}");
}

#[test]
fn single_run_sweep_equals_simulate() {
    let dir = TempDir::new().unwrap();
    let config = format!("{SMALL}\n").replace("runs = 3\nseed", "runs = 1\nseed").replace(
        "packet_scales = [1.0, 10.0, 100.0]",
        "packet_scales = [1.0]\nstrategies = [\"zero\", \"optimal\", \"max_harvest\", \"tight_string\", \"online\"]",
    );
    let run = rfeh(dir.path(), Some(&config), &["sweep", "--figure", "fig6"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (header, rows) = read_csv(&out_file(dir.path(), "sweep_fig6.csv"));
    assert_eq!(rows.len(), 5);
    for row in &rows {
        let strategy = &row[column(&header, "strategy")];
        assert_eq!(row[column(&header, "runs")], "1");
        let sim = rfeh(
            dir.path(),
            Some(&config),
            &["simulate", "--strategy", strategy],
        );
        assert_eq!(sim.code, 0, "{}", sim.stderr);
        let (h, trace) = read_csv(&out_file(dir.path(), &format!("simulate_{strategy}.csv")));
        let summary = trace.last().unwrap();
        assert_eq!(
            f(&row[column(&header, "mean_throughput")]),
            f(&summary[column(&h, "throughput")]),
            "{strategy}"
        );
        assert_eq!(
            f(&row[column(&header, "mean_harvested")]),
            f(&summary[column(&h, "total_harvested")]),
            "{strategy}"
        );
    }
}

#[test]
fn oracle_check_exit_codes() {
    let dir = TempDir::new().unwrap();
    let run = rfeh(dir.path(), None, &["oracle-check"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stdout.contains("20 instances with 2 packets"));
    let (header, rows) = read_csv(&out_file(dir.path(), "oracle_check.csv"));
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r[column(&header, "pass")] == "true"));

    // A negative tolerance demands more than the optimum.
    let run = rfeh(dir.path(), None, &["oracle-check", "--tolerance", "-1.0"]);
    assert_eq!(run.code, 4);
    assert!(run.stderr.contains("worst"), "{}", run.stderr);

    let run = rfeh(
        dir.path(),
        Some("[oracle]\npackets = 4\n"),
        &["oracle-check"],
    );
    assert_eq!(run.code, 2);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [&a, &b] {
        assert_eq!(
            rfeh(dir.path(), Some(SMALL), &["sweep", "--figure", "fig6"]).code,
            0
        );
        assert_eq!(rfeh(dir.path(), Some(SMALL), &["optimize"]).code, 0);
    }
    for name in ["sweep_fig6.csv", "optimize.csv"] {
        let x = std::fs::read(out_file(a.path(), name)).unwrap();
        let y = std::fs::read(out_file(b.path(), name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn overrides_reach_the_manifest() {
    let dir = TempDir::new().unwrap();
    let base = rfeh(dir.path(), Some(SMALL), &["optimize"]);
    assert_eq!(base.code, 0);
    let text = std::fs::read_to_string(out_file(dir.path(), "optimize.csv")).unwrap();
    let run = rfeh(
        dir.path(),
        Some(SMALL),
        &["optimize", "--seed", "4", "--rate-model", "normalized"],
    );
    assert_eq!(run.code, 0);
    let other = std::fs::read_to_string(out_file(dir.path(), "optimize.csv")).unwrap();
    assert!(text.contains("# seed: 9\n# rate_model: link-budget\n"));
    assert!(other.contains("# seed: 4\n# rate_model: normalized\n"));
    let hash = |t: &str| {
        t.lines()
            .find(|l| l.starts_with("# config_sha256"))
            .unwrap()
            .to_string()
    };
    assert_ne!(hash(&text), hash(&other));
    let sidecar = std::fs::read_to_string(out_file(dir.path(), "optimize.manifest.toml")).unwrap();
    assert!(sidecar.contains("started") && sidecar.contains("finished"));
}

#[test]
fn config_round_trips() {
    let full = r#"
[circuit]
resistance = 4000.0
capacitance = 0.1
v_max = 2.5

[link]
frequency = 915e6
distance = 2.0
bandwidth = 1e6
noise_density = -170.0

[experiment]
seed = 3
rate_model = "normalized"
initial_energy = 0.01
packets = 12
mean_epoch = 0.5
mean_harvest = 1e-5
runs = 2
max_attempts = 7
priors = { mean_length = 0.01, mean_gap = 0.5 }

[scenario]
initial_energy = 0.02
deadline = 3.0
packets = [{ arrival = 1.0, length = 0.1 }]

[sweep]
packet_scales = [1.0, 2.0]
capacitances = [0.1]
strategies = ["optimal", "zero"]
probe = { packet_scale = 3.0, runs = 2, current = 2, distances = [1, 3], delta_epoch = 0.1, delta_packet = 0.0 }

[oracle]
instances = 5
packets = 3
resolution = 20
"#;
    for text in [full, "", TWO_PACKET, SMALL] {
        let parsed = Config::parse(text).unwrap();
        let again = Config::parse(&parsed.to_toml()).unwrap();
        assert_eq!(again, parsed);
        assert_eq!(again.hash(), parsed.hash());
    }
    let c = Config::parse(full).unwrap();
    assert_eq!(c.experiment.rate_model, RateModel::Normalized);
    assert_eq!(c.sweep.probe.distances, vec![1, 3]);
    assert_eq!(c.link.frequency(), 915e6);
}
