use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use platoon_core::harness::{self, ExperimentConfig, RunReport};
use platoon_core::oracle::solve_mpc;
use platoon_core::qp::build_lambda_closed_form;
use platoon_core::{Error, QuantizerKind, StepRate};
use serde_json::json;

#[derive(Parser)]
#[command(name = "platoon", version, about = "Quantized distributed MPC experiments for vehicle platoons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the QP and print its statistics and the closed-form cross-check.
    BuildQp {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the solver's own quantizer only.
    Solve {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Also write an SVG plot of the relative gap.
        #[arg(long)]
        svg: bool,
    },
    /// Run every sweep variant.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        svg: bool,
    },
    /// Solve the centralized baseline only.
    Oracle {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write a named preset config to `<out>/<name>.json`.
    Preset {
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    /// Step rate, a positive number or `auto`.
    #[arg(long)]
    alpha: Option<String>,
    /// `log`, `uniform` or `none`.
    #[arg(long)]
    quantizer: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    /// Output directory for traces and the summary.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), Error> {
        let s = &mut cfg.solver;
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(iters) = self.iters {
            s.iters = iters;
        }
        if let Some(a) = &self.alpha {
            s.alpha = if a == "auto" {
                StepRate::Auto
            } else {
                StepRate::Fixed(a.parse().map_err(|_| Error::ConfigInvalid {
                    field: "solver.alpha".into(),
                    rule: format!("must be a number or `auto`, got `{a}`"),
                })?)
            };
        }
        if let Some(q) = &self.quantizer {
            s.quantizer.kind = q.parse::<QuantizerKind>().map_err(|e| Error::ConfigInvalid {
                field: "solver.quantizer".into(),
                rule: e.to_string(),
            })?;
        }
        if let Some(rho) = self.rho {
            s.quantizer.rho = rho;
        }
        if let Some(out) = &self.out {
            cfg.output = Some(out.clone());
        }
        cfg.validate()
    }
}

fn load(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, Error> {
    let mut cfg = harness::load_config(path)?;
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn report(report: &RunReport, svg: bool) -> Result<(), Error> {
    println!("F* = {:.10e} ({} iterations)", report.oracle.f_star, report.oracle.iterations);
    println!("{:<22} {:>12} {:>14} {:>12} {:>9}", "variant", "step", "relative gap", "consensus", "seconds");
    for v in &report.variants {
        let m = &v.final_metrics;
        println!(
            "{:<22} {:>12.4e} {:>14.4e} {:>12.4e} {:>9.2}",
            v.label, v.alpha, m.relative_gap, m.consensus_residual, v.wall_clock_secs
        );
    }
    if let Some(dir) = &report.config.output {
        let written = harness::write_outputs(report, dir, svg)?;
        println!("wrote {} files to {}", written.len(), dir.display());
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::BuildQp { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let (graph, problem) = harness::build_problem(&cfg)?;
            let qp = problem.qp();
            let min_eig = qp.min_eigenvalue();
            let max_eig = qp.lipschitz()?;
            let cf = build_lambda_closed_form(&cfg.scenario, &cfg.weights)?;
            let spectrum = graph.spectrum()?;
            let eta = problem.lipschitz_estimate(cfg.solver.lipschitz_radius)?;
            print_json(&json!({
                "dim": qp.dim(),
                "vehicles": cfg.scenario.n,
                "horizon": cfg.scenario.horizon,
                "min_eigenvalue": min_eig,
                "max_eigenvalue": max_eig,
                "condition": max_eig / min_eig,
                "c_norm": qp.c.norm(),
                "d": qp.d,
                "closed_form": {
                    "matrix_max_deviation": cf.omega_deviation,
                    "linear_term_max_deviation": cf.c_deviation,
                },
                "lambda2_abs": spectrum.lambda2_abs,
                "lipschitz_estimate": eta,
                "lipschitz_radius": cfg.solver.lipschitz_radius,
                "auto_alpha": spectrum.lambda2_abs / eta,
            }));
            Ok(())
        }
        Command::Solve { config, overrides, svg } => {
            let cfg = load(&config, &overrides)?;
            report(&harness::run_single(&cfg)?, svg)
        }
        Command::Sweep { config, overrides, svg } => {
            let cfg = load(&config, &overrides)?;
            report(&harness::run_experiment(&cfg)?, svg)
        }
        Command::Oracle { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let (_, problem) = harness::build_problem(&cfg)?;
            let result = solve_mpc(&problem)?;
            let value = serde_json::to_value(&result).expect("json");
            if let Some(dir) = &cfg.output {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
                let path = dir.join("oracle.json");
                std::fs::write(&path, serde_json::to_string_pretty(&value).expect("json") + "\n")
                    .map_err(|e| Error::Io { path: path.clone(), source: e })?;
            }
            print_json(&value);
            Ok(())
        }
        Command::Preset { name, out } => {
            let cfg = harness::preset(&name)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            let path = out.join(format!("{name}.json"));
            std::fs::write(&path, cfg.to_json() + "\n").map_err(|e| Error::Io { path: path.clone(), source: e })?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::ConfigParse { .. } | Error::ConfigInvalid { .. } => 2,
        Error::Divergence { .. } => 3,
        Error::Io { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
