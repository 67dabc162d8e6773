use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use dualbridge::harness::{
    cmd_check_graph, cmd_conjugate_selftest, cmd_run, HarnessError, RunOverrides, EXIT_ERROR, EXIT_FAILED, EXIT_OK,
};

#[derive(Parser)]
#[command(
    name = "dualbridge",
    version,
    about = "Distributed dual solvers over random switching networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config; exit 0 converged, 2 not converged, 1 bad config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the network seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the iteration horizon.
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Validate a graph universe (and optional process); exit 0 iff all checks pass.
    CheckGraph {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Sample conjugate properties of one cost; exit 0 iff all are within tolerance.
    ConjugateSelftest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        quiet: bool,
    },
}

fn print_json<T: Serialize>(value: &T, quiet: bool) {
    if !quiet {
        println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
    }
}

fn dispatch(command: Command) -> Result<i32, HarnessError> {
    match command {
        Command::Run {
            config,
            seed,
            horizon,
            quiet,
        } => {
            let report = cmd_run(&config, RunOverrides { seed, horizon })?;
            if !quiet {
                let r = &report.final_residuals;
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3e}"));
                println!(
                    "{} after {} iterations: consensus {}, constraint {}, dual error {}",
                    if report.converged { "converged" } else { "not converged" },
                    report.horizon,
                    fmt(r.consensus),
                    fmt(r.constraint),
                    fmt(r.dual_error),
                );
                if report.inner_residual_flagged {
                    eprintln!("warning: inner residual reached {:e}", report.max_inner_residual);
                }
            }
            Ok(report.exit_code())
        }
        Command::CheckGraph { config, quiet } => {
            let report = cmd_check_graph(&config)?;
            print_json(&report, quiet);
            Ok(report.exit_code())
        }
        Command::ConjugateSelftest {
            config,
            samples,
            seed,
            quiet,
        } => {
            let report = cmd_conjugate_selftest(&config, samples, seed)?;
            print_json(&report, quiet);
            Ok(if report.passed() { EXIT_OK } else { EXIT_FAILED })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;
    use std::path::Path;

    fn configs_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
    }

    fn invoke(args: &[&str], config: &Path) -> Result<i32, HarnessError> {
        let mut argv = vec!["dualbridge"];
        argv.extend_from_slice(args);
        argv.push("--quiet");
        argv.push("--config");
        argv.push(config.to_str().unwrap());
        dispatch(Cli::try_parse_from(argv).unwrap().command)
    }

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, text).unwrap();
        path
    }

    /// Copies a shipped config into `dir` so its outputs land there.
    fn staged(dir: &Path, name: &str) -> PathBuf {
        write(dir, name, &fs::read_to_string(configs_dir().join(name)).unwrap())
    }

    fn json(path: PathBuf) -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
    }

    #[test]
    fn run_example_converges_and_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = staged(dir.path(), "quadratic_m5.json");
        assert_eq!(invoke(&["run"], &cfg).unwrap(), EXIT_OK);

        let trace = fs::read_to_string(dir.path().join("quadratic_m5_trace.csv")).unwrap();
        let mut lines = trace.lines();
        assert_eq!(
            lines.next(),
            Some("t,graph_label,alpha_t,consensus_residual,constraint_residual,dual_error,mean_inner_iters")
        );
        assert_eq!(lines.count(), 20_000);

        let report = json(dir.path().join("quadratic_m5_report.json"));
        assert_eq!(report["converged"], true);
        assert!(report["oracle"]["dual_error"].as_f64().unwrap() < 1e-2);
        assert_eq!(report["derived_constants"]["beta"], 1.0);
        assert_eq!(report["assumptions"]["a3"]["verdict"], "certified");
        assert_eq!(report["multi_seed"]["outcomes"].as_array().unwrap().len(), 5);
    }

    #[test]
    fn run_short_horizon_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = staged(dir.path(), "quadratic_m5.json");
        assert_eq!(invoke(&["run", "--horizon", "10"], &cfg).unwrap(), EXIT_FAILED);
        let trace = fs::read_to_string(dir.path().join("quadratic_m5_trace.csv")).unwrap();
        assert_eq!(trace.lines().count(), 11);
    }

    #[test]
    fn run_rejects_nonstationary_markov() {
        let dir = tempfile::tempdir().unwrap();
        let err = invoke(&["run"], &staged(dir.path(), "markov_nonstationary.json")).unwrap_err();
        assert!(matches!(err, HarnessError::Config(_)));
        assert!(err.to_string().contains("A3"), "{err}");
    }

    #[test]
    fn run_reports_schema_errors_by_field() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(
            dir.path(),
            "bad.json",
            r#"{
  "problem": {"kind": "consensus", "costs": [{"type": "quadratic", "q": 1, "a": 0}]},
  "network": {"process": {"model": "uniform"}},
  "algorithm": {"horizon": -3}
}"#,
        );
        let err = invoke(&["run"], &cfg).unwrap_err().to_string();
        assert!(err.contains("algorithm.horizon") && err.contains("line 4"), "{err}");
    }

    #[test]
    fn run_reverse_and_lse_configs() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            invoke(&["run"], &staged(dir.path(), "reverse_m4.json")).unwrap(),
            EXIT_OK
        );
        let report = json(dir.path().join("reverse_m4_report.json"));
        assert_eq!(report["direction"], "consensus_to_ra");
        assert!((report["solution"][0].as_f64().unwrap() - 3.0).abs() < 1e-3);

        assert_eq!(
            invoke(&["run"], &staged(dir.path(), "gossip_lse.json")).unwrap(),
            EXIT_OK
        );
        let report = json(dir.path().join("gossip_lse_report.json"));
        assert!(report["oracle"]["dual_error"].as_f64().unwrap() < 1e-2);
        assert_eq!(report["inner_residual_flagged"], false);
    }

    #[test]
    fn seed_override_changes_the_trace() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = staged(dir.path(), "quadratic_m5.json");
        let trace = dir.path().join("quadratic_m5_trace.csv");
        invoke(&["run", "--horizon", "200"], &cfg).unwrap();
        let a = fs::read(&trace).unwrap();
        invoke(&["run", "--horizon", "200"], &cfg).unwrap();
        assert_eq!(a, fs::read(&trace).unwrap());
        invoke(&["run", "--horizon", "200", "--seed", "99"], &cfg).unwrap();
        assert_ne!(a, fs::read(&trace).unwrap());
    }

    #[test]
    fn check_graph_examples() {
        assert_eq!(
            invoke(&["check-graph"], &configs_dir().join("universe_complete3.json")).unwrap(),
            EXIT_OK
        );

        let dir = tempfile::tempdir().unwrap();
        let idle = write(
            dir.path(),
            "idle.json",
            r#"{"m": 2, "graphs": [{"label": "I", "weights": [[1,0],[0,1]]}]}"#,
        );
        assert_eq!(invoke(&["check-graph"], &idle).unwrap(), EXIT_FAILED);
        let short = write(
            dir.path(),
            "short.json",
            r#"{"m": 2, "graphs": [{"label": "short", "weights": [[0.4,0.5],[0.5,0.5]]}]}"#,
        );
        assert_eq!(invoke(&["check-graph"], &short).unwrap(), EXIT_FAILED);
        let garbage = write(dir.path(), "garbage.json", "{ not json");
        assert!(invoke(&["check-graph"], &garbage).is_err());
        assert!(invoke(&["check-graph"], &dir.path().join("missing.json")).is_err());
    }

    #[test]
    fn conjugate_selftest_examples() {
        let diag = configs_dir().join("cost_diag24.json");
        assert_eq!(
            invoke(&["conjugate-selftest", "--samples", "50"], &diag).unwrap(),
            EXIT_OK
        );
        let report = dualbridge::harness::cmd_conjugate_selftest(&diag, 50, 0).unwrap();
        assert!(report.gradient_lipschitz_estimate <= 0.5 + 1e-6);

        let dir = tempfile::tempdir().unwrap();
        let unit = write(dir.path(), "unit.json", r#"{"type": "quadratic", "q": 1, "a": 0}"#);
        assert_eq!(invoke(&["conjugate-selftest"], &unit).unwrap(), EXIT_OK);
        let flat = write(dir.path(), "flat.json", r#"{"type": "quadratic", "q": 0, "a": 0}"#);
        let err = invoke(&["conjugate-selftest"], &flat).unwrap_err();
        assert!(err.to_string().contains("not strictly convex"), "{err}");
    }

    #[test]
    fn cli_rejects_unknown_subcommands() {
        assert!(Cli::try_parse_from(["dualbridge", "solve"]).is_err());
        assert!(Cli::try_parse_from(["dualbridge", "run"]).is_err());
    }
}
