//! Command-line front end: run one simulation, solve one assignment,
//! compare the two assignment modes side by side, or run a success-rate
//! sweep. Exit codes: 0 success, 2 bad input, 3 solver failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use idcais::assignment::{
    build_cost_tables, solve_cadaa, solve_cudaa, Assignment, CostTables, DEFAULT_LARGE_COST,
    DEFAULT_T_EPS,
};
use idcais::scenario::{AssignmentMode, AttackerPolicy, Scenario};
use idcais::sim::{compare_assignments, run_simulation};
use idcais::sweep::{success_rate_sweep, SweepConfig};

#[derive(Parser)]
#[command(
    name = "idcais",
    about = "Collision-aware multi-defender interception: simulate, assign, compare, sweep",
    version
)]
struct Cli {
    /// Seed recorded alongside outputs. Every subcommand here is fully
    /// deterministic, so the seed is provenance, not a source of variation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop engagement and report the outcome.
    Simulate(SimulateArgs),
    /// Solve the defender-to-attacker assignment and write tables + result.
    Assign(AssignArgs),
    /// Run both assignment modes (filter off) and print the comparison.
    Compare(CompareArgs),
    /// Grid sweep of one defender's start state; reports the rate at which
    /// the collision-aware assignment clears forecast conflicts.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Directory for trajectory.csv and events.json (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario's integration step, seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Disable the inter-defender safety filter.
    #[arg(long)]
    no_cbf: bool,
    /// Override the scenario's assignment mode.
    #[arg(long)]
    assignment: Option<AssignmentMode>,
    /// Override the scenario's attacker policy.
    #[arg(long)]
    attacker_policy: Option<AttackerPolicy>,
}

#[derive(Args)]
struct AssignArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output JSON file for the cost tables and the chosen assignment.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep configuration JSON file.
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

/// Write the report in one shot; a reader that hung up early (e.g. `head`)
/// is not an error worth dying over.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(err) = out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        if err.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: writing to stdout: {err}");
            std::process::exit(3);
        }
    }
}

fn run(cli: Cli) -> idcais::Result<()> {
    match cli.command {
        Command::Simulate(args) => simulate(args, cli.seed),
        Command::Assign(args) => assign(args, cli.seed),
        Command::Compare(args) => compare(args),
        Command::Sweep(args) => sweep(args),
    }
}

fn simulate(args: SimulateArgs, seed: Option<u64>) -> idcais::Result<()> {
    let mut scenario = Scenario::load(&args.scenario)?;
    if let Some(dt) = args.dt {
        scenario.dt = dt;
    }
    if args.no_cbf {
        scenario.cbf_enabled = false;
    }
    if let Some(mode) = args.assignment {
        scenario.assignment_mode = mode;
    }
    if let Some(policy) = args.attacker_policy {
        scenario.attacker_policy = policy;
    }
    scenario.validate()?;

    let (log, outcome) = run_simulation(&scenario)?;

    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(|source| idcais::Error::Io {
            path: dir.clone(),
            source,
        })?;
        log.write_csv(&dir.join("trajectory.csv"))?;
        log.write_events(&dir.join("events.json"))?;
    }

    use std::fmt::Write;
    let mut report = String::new();
    if let Some(seed) = seed {
        let _ = writeln!(report, "seed: {seed}");
    }
    let _ = writeln!(report, "mode: {}", scenario.assignment_mode);
    let _ = writeln!(
        report,
        "assignment: {:?} (objective {:.6})",
        outcome.assignment.defender_to_attacker, outcome.assignment.objective
    );
    let _ = writeln!(
        report,
        "captures: {} / {}  breaches: {}  still active: {}",
        outcome.captures,
        scenario.attackers.len(),
        outcome.breaches,
        outcome.active_remaining
    );
    for (i, t) in outcome.capture_times.iter().enumerate() {
        if let Some(t) = t {
            let _ = writeln!(report, "  attacker a{i} captured at t = {t:.3} s");
        }
    }
    for (i, t) in outcome.breach_times.iter().enumerate() {
        if let Some(t) = t {
            let _ = writeln!(report, "  attacker a{i} breached at t = {t:.3} s");
        }
    }
    if outcome.min_defender_separation.is_finite() {
        let _ = writeln!(
            report,
            "min defender separation: {:.4} m (floor {})",
            outcome.min_defender_separation, scenario.world.collision_radius
        );
    }
    if outcome.relaxed_steps > 0 {
        let _ = writeln!(
            report,
            "filter ran relaxed on {} steps",
            outcome.relaxed_steps
        );
    }
    let _ = writeln!(report, "end time: {:.3} s", outcome.end_time);
    if let Some(dir) = &args.out {
        let _ = writeln!(report, "wrote {}", dir.join("trajectory.csv").display());
        let _ = writeln!(report, "wrote {}", dir.join("events.json").display());
    }
    emit(&report);
    Ok(())
}

/// Document written by `idcais assign`: the full cost tables plus the
/// assignment chosen under the scenario's mode.
#[derive(serde::Serialize)]
struct AssignmentDocument<'a> {
    mode: AssignmentMode,
    seed: Option<u64>,
    tables: &'a CostTables,
    assignment: &'a Assignment,
}

fn assign(args: AssignArgs, seed: Option<u64>) -> idcais::Result<()> {
    let scenario = Scenario::load(&args.scenario)?;
    let (tables, _) = build_cost_tables(
        &scenario.defender_setup(),
        &scenario.attacker_setup(),
        &scenario.world,
        scenario.weight,
        DEFAULT_LARGE_COST,
        DEFAULT_T_EPS,
    )?;
    let assignment = match scenario.assignment_mode {
        AssignmentMode::Cadaa => solve_cadaa(&tables)?,
        AssignmentMode::Cudaa => solve_cudaa(&tables)?,
    };
    let document = AssignmentDocument {
        mode: scenario.assignment_mode,
        seed,
        tables: &tables,
        assignment: &assignment,
    };
    let json = serde_json::to_string_pretty(&document).expect("assignment document serializes");
    std::fs::write(&args.out, json + "\n").map_err(|source| idcais::Error::Io {
        path: args.out.clone(),
        source,
    })?;
    emit(&format!(
        "{}: {:?} (objective {:.6})\nwrote {}\n",
        document.mode,
        assignment.defender_to_attacker,
        assignment.objective,
        args.out.display()
    ));
    Ok(())
}

fn compare(args: CompareArgs) -> idcais::Result<()> {
    let scenario = Scenario::load(&args.scenario)?;
    let report = compare_assignments(&scenario)?;
    let json = serde_json::to_string_pretty(&report).expect("comparison report serializes");
    emit(&(json + "\n"));
    Ok(())
}

fn sweep(args: SweepArgs) -> idcais::Result<()> {
    let config = SweepConfig::load(&args.config)?;
    let result = success_rate_sweep(&config)?;
    let json = serde_json::to_string_pretty(&result).expect("sweep result serializes");
    emit(&(json + "\n"));
    Ok(())
}
