use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use perc_runner::config::{ExperimentConfig, ExperimentKind};
use perc_runner::plot::{emit_plot, PlotSpec, Preset};
use perc_runner::{run_experiment, Overrides, RunError};

#[derive(Parser)]
#[command(name = "perclab", version, about = "Bond percolation experiments on Z^d and the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[command(rename_all = "snake_case")]
enum Command {
    /// tau_p(x) on a grid of p and x
    TwoPoint(RunArgs),
    /// Extrinsic or intrinsic one-arm probabilities
    OneArm(RunArgs),
    /// P_p(n) = E|P_0(n)|
    Pioneers(RunArgs),
    /// Expected cluster size
    Susceptibility(RunArgs),
    /// Orbit-averaged torus two-point function on every shell
    Plateau(RunArgs),
    /// Bubble, triangle and torus triangle at the origin
    Triangle(RunArgs),
    /// Solve chi^T(p_T) = lambda V^(1/3)
    PtSolve(RunArgs),
    /// Mass from the decay of tau_p(n e_1)
    MassFit(RunArgs),
    /// Exact enumeration on a small graph
    Oracle(RunArgs),
    /// Random exact OSSS instances
    OsssCheck(RunArgs),
    /// Render a result CSV as SVG
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Result CSV; sidecars are written next to it
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    x: Option<String>,
    #[arg(long)]
    y: Option<String>,
    /// Error-bar column
    #[arg(long)]
    err: Option<String>,
    #[arg(long)]
    group: Option<String>,
    #[arg(long)]
    lin_x: bool,
    #[arg(long)]
    lin_y: bool,
    #[arg(long, allow_hyphen_values = true)]
    ref_slope: Option<f64>,
    #[arg(long)]
    hline: Option<f64>,
    #[arg(long)]
    title: Option<String>,
}

fn plot(a: PlotArgs) -> Result<(), RunError> {
    let mut spec = match (a.preset, &a.x, &a.y) {
        (Some(p), _, _) => PlotSpec::preset(p),
        (None, Some(x), Some(y)) => PlotSpec { err: None, group: None, ..PlotSpec::log_log(x, y) },
        _ => {
            return Err(RunError::Config(perc_runner::config::ConfigError::Invalid {
                field: "plot",
                reason: "give --preset or both --x and --y".into(),
            }))
        }
    };
    if let Some(x) = a.x {
        spec.x = x;
    }
    if let Some(y) = a.y {
        spec.y = y;
    }
    spec.err = a.err.or(spec.err);
    spec.group = a.group.or(spec.group);
    spec.log_x &= !a.lin_x;
    spec.log_y &= !a.lin_y;
    spec.ref_slope = a.ref_slope.or(spec.ref_slope);
    spec.hline = a.hline.or(spec.hline);
    spec.title = a.title.unwrap_or(spec.title);
    let out = emit_plot(&a.csv, &spec, a.preset)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    std::fs::write(&a.out, out.svg).map_err(|source| RunError::Io { path: a.out.clone(), source })
}

fn run(kind: ExperimentKind, a: RunArgs) -> Result<(), RunError> {
    let config = ExperimentConfig::load(&a.config)?;
    let o = Overrides { seed: a.seed, workers: a.workers, out: a.out };
    let w = run_experiment(kind, config, &o)?;
    println!("{} rows -> {}", w.rows, w.csv.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::TwoPoint(a) => run(ExperimentKind::TwoPoint, a),
        Command::OneArm(a) => run(ExperimentKind::OneArm, a),
        Command::Pioneers(a) => run(ExperimentKind::Pioneers, a),
        Command::Susceptibility(a) => run(ExperimentKind::Susceptibility, a),
        Command::Plateau(a) => run(ExperimentKind::Plateau, a),
        Command::Triangle(a) => run(ExperimentKind::Triangle, a),
        Command::PtSolve(a) => run(ExperimentKind::PtSolve, a),
        Command::MassFit(a) => run(ExperimentKind::MassFit, a),
        Command::Oracle(a) => run(ExperimentKind::Oracle, a),
        Command::OsssCheck(a) => run(ExperimentKind::OsssCheck, a),
        Command::Plot(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
