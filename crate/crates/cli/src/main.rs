//! Command-line driver for the leader-follower density control experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use continuify::experiment::{
    self, write_run_artifacts, write_snapshot, Manifest, SweepAxis, SweepReport, MANIFEST_FILE, SWEEP_FILE,
};
use continuify::scenario::Scenario;
use continuify::Error;

/// Invalid configuration or arguments.
const EXIT_CONFIG: u8 = 2;
/// The simulation produced non-finite values.
const EXIT_DIVERGED: u8 = 3;
/// Any other failure, such as an unwritable output directory.
const EXIT_OTHER: u8 = 1;

#[derive(Parser)]
#[command(
    name = "continuify",
    version,
    about = "Leader-follower density control on the ring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML); the nominal scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving the artifacts.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides the scenario seed (the seed list for sweeps).
    #[arg(long)]
    seed: Option<u64>,
    /// Only report errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Leaders,
    Followers,
}

#[derive(Subcommand)]
enum Command {
    /// Agent-level closed loop.
    Run(Common),
    /// PDE closed loop, both bounding systems.
    RunMacro(Common),
    /// Terminal error against the heterogeneity bound.
    SweepHet(Common),
    /// Terminal error against a population size.
    SweepPop {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
    },
    /// Minimum leader mass along the nominal trajectory.
    MinMass(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Run(c) | Command::RunMacro(c) | Command::SweepHet(c) | Command::MinMass(c) => c,
            Command::SweepPop { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Run(_) => "run",
            Command::RunMacro(_) => "run-macro",
            Command::SweepHet(_) => "sweep-het",
            Command::SweepPop { .. } => "sweep-pop",
            Command::MinMass(_) => "min-mass",
        }
    }
}

/// Loads the scenario. Validation happens in every experiment entry point,
/// before anything touches the disk.
fn load_scenario(common: &Common) -> Result<Scenario, Error> {
    let mut s = match &common.config {
        Some(path) => Scenario::load(path)?,
        None => Scenario::default(),
    };
    if let Some(seed) = common.seed {
        s.numerics.seed = seed;
        s.sweep.seeds = vec![seed];
    }
    Ok(s)
}

fn write_sweep(dir: &Path, report: &SweepReport, manifest: &Manifest) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    report.write_csv(std::fs::File::create(dir.join(SWEEP_FILE))?)?;
    std::fs::write(dir.join(MANIFEST_FILE), manifest.to_toml_string())?;
    for (v, seed, e) in &report.failures {
        eprintln!("cell {v} (seed {seed}) failed: {e}");
    }
    Ok(())
}

fn print_sweep(report: &SweepReport) {
    println!(
        "{:>10} {:>12} {:>12} {:>10} {:>9}",
        report.axis.name(),
        "median err",
        "max err",
        "min mass",
        "feasible"
    );
    for a in report.aggregates() {
        println!(
            "{:>10} {:>12.4e} {:>12.4e} {:>10.2} {:>9}",
            a.axis_value, a.median, a.max, a.max_min_mass, a.feasible
        );
    }
}

fn execute(command: &Command, scenario: &Scenario) -> Result<(), Error> {
    let common = command.common();
    let out = &common.out_dir;
    let manifest = Manifest::new(command.name(), scenario, scenario.numerics.seed);
    match command {
        Command::Run(_) => {
            let r = experiment::run(scenario)?;
            write_run_artifacts(out, &r.log, &r.snapshot, &manifest)?;
            if let (Some(first), Some(last)) = (r.log.first(), r.log.last()) {
                println!(
                    "‖e_F‖₂: {:.4e} at t = 0, {:.4e} at t = {}",
                    first.l2_err_f, last.l2_err_f, last.t
                );
            }
        }
        Command::RunMacro(_) => {
            for r in experiment::run_macro_pair(scenario)? {
                let name = r.bounding.name();
                write_run_artifacts(&out.join(name), &r.log, &r.snapshot, &manifest)?;
                if let (Some(first), Some(last)) = (r.log.first(), r.log.last()) {
                    println!(
                        "{name}: ‖e_F‖₂ {:.4e} → {:.4e}, largest mass drift {:.1e}",
                        first.l2_err_f, last.l2_err_f, r.max_mass_drift
                    );
                }
            }
        }
        Command::SweepHet(_) => {
            let r = experiment::sweep_heterogeneity(scenario)?;
            write_sweep(out, &r, &manifest)?;
            print_sweep(&r);
        }
        Command::SweepPop { axis, .. } => {
            let axis = match axis {
                Axis::Leaders => SweepAxis::Leaders,
                Axis::Followers => SweepAxis::Followers,
            };
            let r = experiment::sweep_population(scenario, axis)?;
            write_sweep(out, &r, &manifest)?;
            print_sweep(&r);
            match r.threshold() {
                Some(n) => println!("threshold: {n}"),
                None => println!("threshold: none"),
            }
        }
        Command::MinMass(_) => {
            let r = experiment::min_mass_report(scenario)?;
            write_run_artifacts(out, &r.log, &r.snapshot, &manifest)?;
            println!("feedforward mass   {:.3}", r.feedforward);
            println!("bound at t = 0     {:.3}", r.initial);
            println!("sup along the run  {:.3}", r.estimate);
            let verdict = if r.feasible { "feasible" } else { "infeasible" };
            println!("available M_L      {:.3} ({verdict})", r.leader_mass);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = cli.command.common();
    let level = if common.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let scenario = match load_scenario(common) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match execute(&cli.command, &scenario) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Diverged { t, what, snapshot }) => {
            eprintln!("error: diverged at t = {t}: {what}");
            match write_snapshot(&common.out_dir, &snapshot) {
                Ok(path) => eprintln!("snapshot: {}", path.display()),
                Err(e) => eprintln!("could not write the snapshot: {e}"),
            }
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(e @ (Error::Config(_) | Error::InvalidParameter(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_OTHER)
        }
    }
}
