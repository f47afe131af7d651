use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gridgather::engine::{EngineError, NullSink, TextTrace, TraceError};
use gridgather::grid::{enumerate_polyominoes, is_contractible};
use gridgather::harness::{
    self, demo_freeze, demo_lockstep, run_scenario, sweep, verify_lemma, HarnessError, SweepSpec,
};
use gridgather::scenario::{MachineKind, Scenario, StrategySpec};

/// Simulator for asynchronous gathering of anonymous agents on the grid.
///
/// Exit codes: 0 gathered / demonstrated; 1 bad inputs (parse or
/// precondition failures); 2 round budget exhausted; 3 false detection or
/// invariant violation.
#[derive(Parser)]
#[command(name = "gridgather", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file to its verdict.
    Run {
        /// Scenario file path.
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's round budget.
        #[arg(long = "max-rounds")]
        max_rounds: Option<u64>,
        /// Write the full event trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Audited cross-product sweep: polyominoes x strategies x seeds for
    /// the deterministic machines; the fixed random-scenario convergence
    /// suite for the general machine. Exit 3 on any false detection or
    /// invariant violation.
    Sweep {
        /// Machine: contractible, connected, or general.
        #[arg(long)]
        machine: String,
        /// Inclusive polyomino size range, e.g. 1..8 (ignored for general).
        #[arg(long, default_value = "1..6")]
        sizes: String,
        /// Comma list of lockstep, random-fair (ignored for general).
        #[arg(long, default_value = "lockstep,random-fair")]
        strategies: String,
        /// Number of seeds (1..=N) for randomized strategies.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Round budget per run.
        #[arg(long = "max-rounds", default_value_t = 100_000)]
        max_rounds: u64,
        /// List every verdict, not just non-gathered ones.
        #[arg(long)]
        verbose: bool,
    },
    /// Count polyominoes per size (set GRIDGATHER_ENUM_LIMIT to raise the
    /// size cap).
    Enumerate {
        /// Inclusive size range, e.g. 1..6, or a single size.
        #[arg(long, default_value = "1..6")]
        sizes: String,
        /// Print each shape's cells.
        #[arg(long)]
        list: bool,
    },
    /// Exhaustively check the leaf-or-block-corner dichotomy on all
    /// contractible polyominoes of sizes 2..=max-size.
    VerifyLemma {
        #[arg(long = "max-size", default_value_t = 8)]
        max_size: usize,
    },
    /// Two deterministic agents in lockstep keep their starting distance
    /// at every round boundary.
    DemoLockstep {
        /// Machine: contractible or connected.
        #[arg(long)]
        machine: String,
        /// Starting distance (must exceed 1).
        #[arg(long, default_value_t = 3)]
        distance: u64,
        #[arg(long = "max-rounds", default_value_t = 10_000)]
        max_rounds: u64,
    },
    /// Freeze demonstrator: agents at (0,0), (0,2), (0,delay+3); the far
    /// agent sleeps until round delay+1. With the true count declared the
    /// machine never declares termination early; with a deliberately wrong
    /// count the detector trips (negative control).
    DemoFreeze {
        /// Rounds the far agent stays frozen.
        #[arg(long, default_value_t = 100)]
        delay: u64,
        /// Number of seeds (1..=N).
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Agent count given to the machine (3 is the truth here).
        #[arg(long = "declared-agents", default_value_t = 3)]
        declared_agents: u64,
    },
    /// Re-execute a recorded trace against its scenario and verify it line
    /// for line.
    Replay {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Override the scenario's seed (must match the recording).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "max-rounds")]
        max_rounds: Option<u64>,
    },
}

const EXIT_BAD_INPUT: u8 = 1;
const EXIT_VIOLATION: u8 = 3;

fn fail(message: impl std::fmt::Display, code: u8) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn exit_for(error: HarnessError) -> ExitCode {
    let code = match &error {
        HarnessError::Trace(TraceError::Diverged { .. })
        | HarnessError::Trace(TraceError::LengthMismatch { .. }) => EXIT_VIOLATION,
        HarnessError::Engine(EngineError::Machine(_)) => EXIT_BAD_INPUT,
        _ => EXIT_BAD_INPUT,
    };
    fail(error, code)
}

fn parse_machine(text: &str) -> Result<MachineKind, String> {
    MachineKind::parse(text)
        .ok_or_else(|| format!("unknown machine `{text}` (contractible, connected, general)"))
}

fn parse_sizes(text: &str) -> Result<(usize, usize), String> {
    let parse_one = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| format!("bad size `{t}`"))
    };
    if let Some((lo, hi)) = text.split_once("..") {
        let lo = parse_one(lo)?;
        let hi = parse_one(hi)?;
        if lo < 1 || lo > hi {
            return Err(format!("bad size range `{text}`"));
        }
        Ok((lo, hi))
    } else {
        let n = parse_one(text)?;
        Ok((n, n))
    }
}

fn parse_strategies(text: &str) -> Result<Vec<StrategySpec>, String> {
    text.split(',')
        .map(|token| match token.trim() {
            "lockstep" => Ok(StrategySpec::Lockstep),
            "random-fair" => Ok(StrategySpec::RandomFair {
                p_look: 0.9,
                p_commit: 0.9,
                cap: 8,
            }),
            other => Err(format!(
                "unknown sweep strategy `{other}` (lockstep, random-fair)"
            )),
        })
        .collect()
}

fn load_scenario(
    path: &PathBuf,
    seed: Option<u64>,
    max_rounds: Option<u64>,
) -> Result<Scenario, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let mut scenario =
        Scenario::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    if let Some(budget) = max_rounds {
        scenario.max_rounds = budget;
    }
    Ok(scenario)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            seed,
            max_rounds,
            trace,
        } => {
            let scenario = match load_scenario(&scenario, seed, max_rounds) {
                Ok(s) => s,
                Err(e) => return fail(e, EXIT_BAD_INPUT),
            };
            let result = if let Some(trace_path) = trace {
                let mut sink = TextTrace::new();
                let result = run_scenario(&scenario, &mut sink);
                if result.is_ok() {
                    if let Err(e) = std::fs::write(&trace_path, sink.text()) {
                        return fail(format!("{}: {e}", trace_path.display()), EXIT_BAD_INPUT);
                    }
                }
                result
            } else {
                run_scenario(&scenario, &mut NullSink)
            };
            match result {
                Ok(report) => {
                    println!("{}", report.outcome);
                    ExitCode::from(report.outcome.exit_code() as u8)
                }
                Err(e) => exit_for(e),
            }
        }
        Command::Sweep {
            machine,
            sizes,
            strategies,
            seeds,
            max_rounds,
            verbose,
        } => {
            let machine = match parse_machine(&machine) {
                Ok(m) => m,
                Err(e) => return fail(e, EXIT_BAD_INPUT),
            };
            let sizes = match parse_sizes(&sizes) {
                Ok(s) => s,
                Err(e) => return fail(e, EXIT_BAD_INPUT),
            };
            let strategies = match parse_strategies(&strategies) {
                Ok(s) => s,
                Err(e) => return fail(e, EXIT_BAD_INPUT),
            };
            if seeds < 1 {
                return fail("--seeds must be at least 1", EXIT_BAD_INPUT);
            }
            let spec = SweepSpec {
                machine,
                sizes,
                strategies,
                seeds: (1..=seeds).collect(),
                budget: max_rounds,
            };
            match sweep(&spec) {
                Ok(report) => {
                    print!("{}", report.render(verbose));
                    if report.false_detections() > 0 || report.invariant_violations() > 0 {
                        ExitCode::from(EXIT_VIOLATION)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => exit_for(e),
            }
        }
        Command::Enumerate { sizes, list } => {
            let (lo, hi) = match parse_sizes(&sizes) {
                Ok(s) => s,
                Err(e) => return fail(e, EXIT_BAD_INPUT),
            };
            for size in lo..=hi {
                let shapes = match enumerate_polyominoes(size, false) {
                    Ok(s) => s,
                    Err(e) => return fail(e, EXIT_BAD_INPUT),
                };
                let contractible = shapes
                    .iter()
                    .filter(|cfg| is_contractible(cfg).unwrap_or(false))
                    .count();
                println!(
                    "size {size}: {} polyominoes, {contractible} contractible",
                    shapes.len()
                );
                if list {
                    for cfg in &shapes {
                        let cells: Vec<String> = cfg
                            .cells()
                            .map(|c| format!("{},{}", c.x, c.y))
                            .collect();
                        println!("  {}", cells.join(" "));
                    }
                }
            }
            ExitCode::SUCCESS
        }
        Command::VerifyLemma { max_size } => match verify_lemma(max_size) {
            Ok(report) => {
                print!("{}", report.render());
                if report.counterexamples.is_empty() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(EXIT_VIOLATION)
                }
            }
            Err(e) => exit_for(e),
        },
        Command::DemoLockstep {
            machine,
            distance,
            max_rounds,
        } => {
            let machine = match parse_machine(&machine) {
                Ok(m) => m,
                Err(e) => return fail(e, EXIT_BAD_INPUT),
            };
            match demo_lockstep(machine, distance, max_rounds) {
                Ok(report) => {
                    print!("{}", report.render());
                    if report.distance_held() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_VIOLATION)
                    }
                }
                Err(e) => exit_for(e),
            }
        }
        Command::DemoFreeze {
            delay,
            seeds,
            declared_agents,
        } => {
            if seeds < 1 {
                return fail("--seeds must be at least 1", EXIT_BAD_INPUT);
            }
            let seed_list: Vec<u64> = (1..=seeds).collect();
            match demo_freeze(delay, &seed_list, declared_agents) {
                Ok(report) => {
                    print!("{}", report.render());
                    let truthful = declared_agents == 3;
                    let demonstrated = if truthful {
                        report.false_detections() == 0
                    } else {
                        report.false_detections() >= 1
                    };
                    if demonstrated {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_VIOLATION)
                    }
                }
                Err(e) => exit_for(e),
            }
        }
        Command::Replay {
            scenario,
            trace,
            seed,
            max_rounds,
        } => {
            let scenario = match load_scenario(&scenario, seed, max_rounds) {
                Ok(s) => s,
                Err(e) => return fail(e, EXIT_BAD_INPUT),
            };
            let trace_text = match std::fs::read_to_string(&trace) {
                Ok(t) => t,
                Err(e) => return fail(format!("{}: {e}", trace.display()), EXIT_BAD_INPUT),
            };
            match harness::replay_scenario(&scenario, &trace_text) {
                Ok(report) => {
                    println!("replay verified: {}", report.outcome);
                    ExitCode::from(report.outcome.exit_code() as u8)
                }
                Err(e) => exit_for(e),
            }
        }
    }
}
