//! Batch drivers above the engine: scenario execution with the right
//! auditors attached, polyomino sweeps, the structural-lemma verifier, the
//! two scheduling demonstrators, and deterministic generators for the
//! randomized-machine convergence suite.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::connected::{self, ConnectedMachine};
use crate::contractible::{self, ContractibleMachine};
use crate::engine::{
    replay, run, Auditor, EngineError, NullSink, Outcome, RandomFair, Round, RunReport, RunSetup,
    TraceError, TraceSink,
};
use crate::general::{self, GeneralMachine};
use crate::grid::{enumerate_polyominoes, Cell, Configuration, GridError};
use crate::machine::AgentState;
use crate::scenario::{MachineKind, Scenario, ScenarioError, StrategySpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{0}")]
    Unsupported(String),
}

/// Runs one scenario with its machine's full auditor set attached.
pub fn run_scenario(
    scenario: &Scenario,
    sink: &mut dyn TraceSink,
) -> Result<RunReport, HarnessError> {
    let config = scenario.configuration();
    let mut scheduler = scenario.scheduler();
    let digest = scenario.digest();
    match scenario.machine {
        MachineKind::Contractible => {
            let setup = RunSetup {
                machine: &ContractibleMachine,
                config: &config,
                input: scenario.input.as_deref(),
                seed: scenario.seed,
                max_rounds: scenario.max_rounds,
                digest,
                halt_on_false_detection: true,
            };
            let mut auditors = contractible::auditors();
            Ok(run(&setup, &mut scheduler, &mut auditors, sink)?)
        }
        MachineKind::Connected => {
            let setup = RunSetup {
                machine: &ConnectedMachine,
                config: &config,
                input: scenario.input.as_deref(),
                seed: scenario.seed,
                max_rounds: scenario.max_rounds,
                digest,
                halt_on_false_detection: true,
            };
            let mut auditors = connected::auditors(&config);
            Ok(run(&setup, &mut scheduler, &mut auditors, sink)?)
        }
        MachineKind::General => {
            let setup = RunSetup {
                machine: &GeneralMachine,
                config: &config,
                input: scenario.input.as_deref(),
                seed: scenario.seed,
                max_rounds: scenario.max_rounds,
                digest,
                halt_on_false_detection: true,
            };
            let mut auditors = general::auditors();
            Ok(run(&setup, &mut scheduler, &mut auditors, sink)?)
        }
    }
}

/// Verifies a recorded trace against its scenario: same digest, same
/// machine, and a line-identical re-execution under the recorded schedule.
pub fn replay_scenario(scenario: &Scenario, trace_text: &str) -> Result<RunReport, HarnessError> {
    let config = scenario.configuration();
    let digest = scenario.digest();
    let report = match scenario.machine {
        MachineKind::Contractible => replay(
            &RunSetup {
                machine: &ContractibleMachine,
                config: &config,
                input: scenario.input.as_deref(),
                seed: scenario.seed,
                max_rounds: scenario.max_rounds,
                digest,
                halt_on_false_detection: true,
            },
            trace_text,
        )?,
        MachineKind::Connected => replay(
            &RunSetup {
                machine: &ConnectedMachine,
                config: &config,
                input: scenario.input.as_deref(),
                seed: scenario.seed,
                max_rounds: scenario.max_rounds,
                digest,
                halt_on_false_detection: true,
            },
            trace_text,
        )?,
        MachineKind::General => replay(
            &RunSetup {
                machine: &GeneralMachine,
                config: &config,
                input: scenario.input.as_deref(),
                seed: scenario.seed,
                max_rounds: scenario.max_rounds,
                digest,
                halt_on_false_detection: true,
            },
            trace_text,
        )?,
    };
    Ok(report)
}

// ---------------------------------------------------------------------------
// Sweeps

/// What one sweep covers. Built by the CLI or the test suites.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub machine: MachineKind,
    /// Inclusive polyomino size range (ignored for the general machine,
    /// whose sweep is the fixed random-scenario convergence suite).
    pub sizes: (usize, usize),
    pub strategies: Vec<StrategySpec>,
    /// Seeds used for randomized strategies; deterministic strategies run
    /// once on the first seed.
    pub seeds: Vec<u64>,
    pub budget: Round,
}

/// Ordered per-scenario verdicts plus derived aggregates.
#[derive(Clone, Debug)]
pub struct SweepReport {
    pub header: String,
    pub verdicts: Vec<(String, Outcome)>,
}

impl SweepReport {
    pub fn scenarios(&self) -> usize {
        self.verdicts.len()
    }

    pub fn gathered(&self) -> usize {
        self.verdicts.iter().filter(|(_, o)| o.is_gathered()).count()
    }

    pub fn budget_exhausted(&self) -> usize {
        self.verdicts
            .iter()
            .filter(|(_, o)| matches!(o, Outcome::BudgetExhausted { .. }))
            .count()
    }

    pub fn false_detections(&self) -> usize {
        self.verdicts
            .iter()
            .filter(|(_, o)| o.is_false_detection())
            .count()
    }

    pub fn invariant_violations(&self) -> usize {
        self.verdicts
            .iter()
            .filter(|(_, o)| matches!(o, Outcome::Error { .. }))
            .count()
    }

    /// (min, lower median, max) of rounds-to-gather over gathered runs.
    pub fn round_stats(&self) -> Option<(Round, Round, Round)> {
        let mut rounds: Vec<Round> = self
            .verdicts
            .iter()
            .filter_map(|(_, o)| match o {
                Outcome::Gathered { round, .. } => Some(*round),
                _ => None,
            })
            .collect();
        if rounds.is_empty() {
            return None;
        }
        rounds.sort_unstable();
        Some((
            rounds[0],
            rounds[(rounds.len() - 1) / 2],
            rounds[rounds.len() - 1],
        ))
    }

    /// Stable text form. With `verbose` every verdict is listed; otherwise
    /// only non-gathered ones are.
    pub fn render(&self, verbose: bool) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.header);
        for (label, outcome) in &self.verdicts {
            if verbose || !outcome.is_gathered() {
                let _ = writeln!(out, "{label} -> {outcome}");
            }
        }
        let _ = writeln!(out, "scenarios {}", self.scenarios());
        let _ = writeln!(
            out,
            "gathered {} budget-exhausted {} false-detection {} invariant-violations {}",
            self.gathered(),
            self.budget_exhausted(),
            self.false_detections(),
            self.invariant_violations()
        );
        let _ = writeln!(
            out,
            "gathered-fraction {}/{} = {:.3}",
            self.gathered(),
            self.scenarios(),
            self.gathered() as f64 / self.scenarios().max(1) as f64
        );
        if let Some((min, median, max)) = self.round_stats() {
            let _ = writeln!(out, "rounds-to-gather min {min} median {median} max {max}");
        }
        out
    }
}

fn strategy_label(spec: &StrategySpec) -> &'static str {
    match spec {
        StrategySpec::Lockstep => "lockstep",
        StrategySpec::RandomFair { .. } => "random-fair",
        StrategySpec::Freeze { .. } => "freeze",
        StrategySpec::Scripted => "scripted",
    }
}

fn is_deterministic(spec: &StrategySpec) -> bool {
    match spec {
        StrategySpec::Lockstep | StrategySpec::Scripted => true,
        StrategySpec::RandomFair { .. } => false,
        StrategySpec::Freeze { inner, .. } => is_deterministic(inner),
    }
}

/// Runs the cross product polyominoes x strategies x seeds for the two
/// deterministic machines, or the fixed convergence suite for the general
/// machine. Scenarios run in parallel; the report order is fixed.
pub fn sweep(spec: &SweepSpec) -> Result<SweepReport, HarnessError> {
    if spec.machine == MachineKind::General {
        return Ok(general_convergence_sweep(
            CONVERGENCE_PAIRS,
            CONVERGENCE_TRIPLES,
            spec.budget,
        ));
    }
    let (lo, hi) = spec.sizes;
    if lo < 1 || lo > hi {
        return Err(HarnessError::Unsupported(format!(
            "bad size range {lo}..{hi}"
        )));
    }
    let contractible_only = spec.machine == MachineKind::Contractible;
    let mut jobs: Vec<(String, Scenario)> = Vec::new();
    for size in lo..=hi {
        let shapes = enumerate_polyominoes(size, contractible_only)?;
        for (idx, shape) in shapes.iter().enumerate() {
            let cells: Vec<Cell> = shape.cells().collect();
            for strategy in &spec.strategies {
                let seeds: &[u64] = if is_deterministic(strategy) {
                    &spec.seeds[..1.min(spec.seeds.len())]
                } else {
                    &spec.seeds
                };
                for &seed in seeds {
                    let label = format!(
                        "size={size} shape={idx} strategy={} seed={seed}",
                        strategy_label(strategy)
                    );
                    jobs.push((
                        label,
                        Scenario {
                            machine: spec.machine,
                            cells: cells.clone(),
                            input: None,
                            strategy: strategy.clone(),
                            seed,
                            max_rounds: spec.budget,
                            script: Vec::new(),
                        },
                    ));
                }
            }
        }
    }
    let verdicts: Vec<(String, Outcome)> = jobs
        .into_par_iter()
        .map(|(label, scenario)| {
            let outcome = match run_scenario(&scenario, &mut NullSink) {
                Ok(report) => report.outcome,
                Err(e) => Outcome::Error {
                    round: 0,
                    description: e.to_string(),
                },
            };
            (label, outcome)
        })
        .collect();
    let header = format!(
        "sweep machine={} sizes={lo}..{hi} strategies={} seeds={} budget={}",
        spec.machine,
        spec.strategies
            .iter()
            .map(strategy_label)
            .collect::<Vec<_>>()
            .join(","),
        spec.seeds.len(),
        spec.budget
    );
    Ok(SweepReport { header, verdicts })
}

// ---------------------------------------------------------------------------
// Convergence suite for the randomized machine

pub const CONVERGENCE_PAIRS: usize = 100;
pub const CONVERGENCE_TRIPLES: usize = 50;
const PAIR_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const TRIPLE_SALT: u64 = 0x5851_f42d_4c95_7f2d;
/// Triples are drawn from the L1 ball of this radius around the origin,
/// keeping every pairwise start distance within the bound the two-agent
/// scenarios use.
const TRIPLE_RADIUS: i64 = 3;

fn l1_ball(radius: i64) -> Vec<Cell> {
    let mut cells = Vec::new();
    for y in -radius..=radius {
        for x in -radius..=radius {
            if x.abs() + y.abs() <= radius {
                cells.push(Cell::new(x, y));
            }
        }
    }
    cells
}

fn l1_ring(d: i64) -> Vec<Cell> {
    l1_ball(d)
        .into_iter()
        .filter(|c| c.x.abs() + c.y.abs() == d)
        .collect()
}

/// Two-agent scenarios: start distance uniform in 1..=6, then a uniform
/// cell at that distance. Deterministic in `k`.
pub fn convergence_pair(k: u64, budget: Round) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(PAIR_SALT ^ k);
    let d = rng.random_range(1..=6i64);
    let ring = l1_ring(d);
    let cell = ring[rng.random_range(0..ring.len())];
    Scenario {
        machine: MachineKind::General,
        cells: vec![Cell::new(0, 0), cell],
        input: Some("10".to_string()),
        strategy: StrategySpec::RandomFair { p_look: 0.9, p_commit: 0.9, cap: 8 },
        seed: k + 1,
        max_rounds: budget,
        script: Vec::new(),
    }
}

/// Three-agent scenarios: three distinct cells uniform in the L1 ball of
/// radius [`TRIPLE_RADIUS`]. Deterministic in `k`.
pub fn convergence_triple(k: u64, budget: Round) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(TRIPLE_SALT ^ k);
    let ball = l1_ball(TRIPLE_RADIUS);
    let mut picks: Vec<Cell> = Vec::new();
    while picks.len() < 3 {
        let c = ball[rng.random_range(0..ball.len())];
        if !picks.contains(&c) {
            picks.push(c);
        }
    }
    Scenario {
        machine: MachineKind::General,
        cells: picks,
        input: Some("11".to_string()),
        strategy: StrategySpec::RandomFair { p_look: 0.9, p_commit: 0.9, cap: 8 },
        seed: 1000 + k,
        max_rounds: budget,
        script: Vec::new(),
    }
}

/// The full randomized-machine convergence sweep: `pairs` two-agent runs and
/// `triples` three-agent runs under fair random schedules.
pub fn general_convergence_sweep(pairs: usize, triples: usize, budget: Round) -> SweepReport {
    let mut jobs: Vec<(String, Scenario)> = Vec::new();
    for k in 0..pairs as u64 {
        let scenario = convergence_pair(k, budget);
        let d = scenario.cells[0].distance(scenario.cells[1]);
        jobs.push((format!("pair={k} d={d}"), scenario));
    }
    for k in 0..triples as u64 {
        jobs.push((format!("triple={k}"), convergence_triple(k, budget)));
    }
    let verdicts: Vec<(String, Outcome)> = jobs
        .into_par_iter()
        .map(|(label, scenario)| {
            let outcome = match run_scenario(&scenario, &mut NullSink) {
                Ok(report) => report.outcome,
                Err(e) => Outcome::Error {
                    round: 0,
                    description: e.to_string(),
                },
            };
            (label, outcome)
        })
        .collect();
    let header = format!(
        "sweep machine=general pairs={pairs} triples={triples} budget={budget}"
    );
    SweepReport { header, verdicts }
}

// ---------------------------------------------------------------------------
// Structural-lemma verification

/// Exhaustive check of the leaf-or-block-corner dichotomy over all
/// contractible polyominoes of sizes 2..=max_size.
#[derive(Clone, Debug)]
pub struct LemmaReport {
    pub max_size: usize,
    /// (size, shapes examined) per size.
    pub examined: Vec<(usize, usize)>,
    pub counterexamples: Vec<Configuration>,
}

impl LemmaReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (size, count) in &self.examined {
            let _ = writeln!(out, "size {size}: {count} contractible shapes checked");
        }
        if self.counterexamples.is_empty() {
            let _ = writeln!(out, "0 counterexamples up to size {}", self.max_size);
        } else {
            for cfg in &self.counterexamples {
                let _ = writeln!(out, "counterexample:");
                let _ = write!(out, "{}", cfg.format_cells());
            }
            let _ = writeln!(out, "{} counterexamples", self.counterexamples.len());
        }
        out
    }
}

pub fn verify_lemma(max_size: usize) -> Result<LemmaReport, HarnessError> {
    let mut examined = Vec::new();
    let mut counterexamples = Vec::new();
    for size in 2..=max_size {
        let shapes = enumerate_polyominoes(size, true)?;
        examined.push((size, shapes.len()));
        let bad: Vec<Configuration> = shapes
            .into_par_iter()
            .filter_map(|cfg| match crate::grid::lemma_geo_holds(&cfg) {
                Ok(true) => None,
                Ok(false) => Some(cfg),
                Err(_) => unreachable!("enumeration yields valid contractible shapes"),
            })
            .collect();
        counterexamples.extend(bad);
    }
    Ok(LemmaReport { max_size, examined, counterexamples })
}

// ---------------------------------------------------------------------------
// Demonstrators

/// Checks the pairwise distance of a two-agent run at every round boundary.
struct DistanceAuditor {
    expected: u64,
}

impl<S: AgentState> Auditor<S> for DistanceAuditor {
    fn name(&self) -> &'static str {
        "distance"
    }

    fn check_round(&mut self, view: &crate::engine::RoundView<'_, S>) -> Result<(), String> {
        let d = view.positions[0].distance(view.positions[1]);
        if d != self.expected {
            return Err(format!(
                "round {}: pairwise distance {d}, expected {}",
                view.round, self.expected
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LockstepDemoReport {
    pub machine: MachineKind,
    pub distance: u64,
    pub rounds: Round,
    /// The run's final outcome (never Gathered; an Error outcome means the
    /// distance check failed).
    pub outcome: Outcome,
}

impl LockstepDemoReport {
    pub fn distance_held(&self) -> bool {
        !matches!(self.outcome, Outcome::Error { .. } | Outcome::Gathered { .. })
    }

    pub fn render(&self) -> String {
        format!(
            "machine={} distance={} rounds={}: {} ({})\n",
            self.machine,
            self.distance,
            self.rounds,
            if self.distance_held() {
                "distance preserved at every round boundary"
            } else {
                "DISTANCE CHECK FAILED"
            },
            self.outcome
        )
    }
}

/// Runs two agents at distance `d` under the lockstep schedule and asserts
/// the pairwise distance never changes. Only meaningful for deterministic
/// machines at d > 1; the run is expected to exhaust its budget (possibly
/// recording a false detection along the way, which the check tolerates:
/// the claim is about distance, not termination).
pub fn demo_lockstep(
    machine: MachineKind,
    d: u64,
    rounds: Round,
) -> Result<LockstepDemoReport, HarnessError> {
    if d <= 1 {
        return Err(HarnessError::Unsupported(format!(
            "demo-lockstep needs a distance larger than 1, got {d}"
        )));
    }
    let config =
        Configuration::from_cells([Cell::new(0, 0), Cell::new(0, d as i64)]);
    let mut scheduler = crate::engine::Lockstep;
    let mut auditors: Vec<Box<dyn Auditor<_>>>;
    let outcome = match machine {
        MachineKind::Contractible => {
            let setup = RunSetup {
                machine: &ContractibleMachine,
                config: &config,
                input: None,
                seed: 0,
                max_rounds: rounds,
                digest: 0,
                halt_on_false_detection: false,
            };
            auditors = vec![Box::new(DistanceAuditor { expected: d })];
            run(&setup, &mut scheduler, &mut auditors, &mut NullSink)?.outcome
        }
        MachineKind::Connected => {
            let setup = RunSetup {
                machine: &ConnectedMachine,
                config: &config,
                input: None,
                seed: 0,
                max_rounds: rounds,
                digest: 0,
                halt_on_false_detection: false,
            };
            let mut connected_auditors: Vec<Box<dyn Auditor<_>>> =
                vec![Box::new(DistanceAuditor { expected: d })];
            run(&setup, &mut scheduler, &mut connected_auditors, &mut NullSink)?.outcome
        }
        MachineKind::General => {
            return Err(HarnessError::Unsupported(
                "demo-lockstep applies to deterministic machines only".to_string(),
            ));
        }
    };
    Ok(LockstepDemoReport { machine, distance: d, rounds, outcome })
}

#[derive(Clone, Debug)]
pub struct FreezeDemoReport {
    pub delay: Round,
    pub declared_agents: u64,
    /// (seed, outcome) per run, in seed order.
    pub outcomes: Vec<(u64, Outcome)>,
}

impl FreezeDemoReport {
    pub fn false_detections(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|(_, o)| o.is_false_detection())
            .count()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "freeze demo: delay={} declared-agents={} seeds={}",
            self.delay,
            self.declared_agents,
            self.outcomes.len()
        );
        for (seed, outcome) in &self.outcomes {
            let _ = writeln!(out, "seed={seed} -> {outcome}");
        }
        let _ = writeln!(out, "false-detections {}", self.false_detections());
        out
    }
}

/// The frozen-agent construction: agents at (0,0), (0,2) and (0,t+3); the
/// far agent receives no events before round t+1, while the near pair runs
/// under a fair random schedule. With the correct count declared, the
/// machine must never declare termination early; `declared_agents` lets the
/// negative control deliberately lie about the count.
pub fn demo_freeze(
    t: Round,
    seeds: &[u64],
    declared_agents: u64,
) -> Result<FreezeDemoReport, HarnessError> {
    if t < 1 {
        return Err(HarnessError::Unsupported(
            "demo-freeze needs a delay of at least 1 round".to_string(),
        ));
    }
    let input = format!("{declared_agents:b}");
    let cells = [
        Cell::new(0, 0),
        Cell::new(0, 2),
        Cell::new(0, t as i64 + 3),
    ];
    let config = Configuration::from_cells(cells);
    let outcomes: Vec<(u64, Outcome)> = seeds
        .par_iter()
        .map(|&seed| {
            let setup = RunSetup {
                machine: &GeneralMachine,
                config: &config,
                input: Some(&input),
                seed,
                max_rounds: 1_000_000,
                digest: 0,
                halt_on_false_detection: true,
            };
            let mut scheduler = crate::engine::FreezeSubset {
                frozen: vec![2],
                thaw_round: t + 1,
                inner: RandomFair::default(),
            };
            let mut auditors = general::auditors();
            let outcome = match run(&setup, &mut scheduler, &mut auditors, &mut NullSink) {
                Ok(report) => report.outcome,
                Err(e) => Outcome::Error { round: 0, description: e.to_string() },
            };
            (seed, outcome)
        })
        .collect();
    Ok(FreezeDemoReport { delay: t, declared_agents, outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::TextTrace;

    #[test]
    fn the_domino_scenario_runs_to_gathering() {
        let scenario =
            Scenario::parse("machine: contractible\ncells:\n0 0\n0 1\n").unwrap();
        let report = run_scenario(&scenario, &mut NullSink).unwrap();
        // The north leaf folds south onto its support.
        assert!(matches!(
            report.outcome,
            Outcome::Gathered { cell, .. } if cell == Cell::new(0, 0)
        ));
    }

    #[test]
    fn traces_replay_line_for_line() {
        let scenario = Scenario::parse(
            "machine: general\ninput: 10\nseed: 5\nmax-rounds: 2000\ncells:\n0 0\n0 1\n",
        )
        .unwrap();
        let mut sink = TextTrace::new();
        let report = run_scenario(&scenario, &mut sink).unwrap();
        assert!(report.outcome.is_gathered());
        let replayed = replay_scenario(&scenario, &sink.text()).unwrap();
        assert_eq!(replayed.outcome, report.outcome);
    }

    #[test]
    fn replay_rejects_a_doctored_trace() {
        let scenario =
            Scenario::parse("machine: contractible\ncells:\n0 0\n0 1\n").unwrap();
        let mut sink = TextTrace::new();
        run_scenario(&scenario, &mut sink).unwrap();
        let tampered = sink.text().replace("Gathered 4", "Gathered 6");
        assert!(matches!(
            replay_scenario(&scenario, &tampered),
            Err(HarnessError::Trace(TraceError::Diverged { .. }))
        ));
    }

    #[test]
    fn small_contractible_sweeps_all_gather() {
        let report = sweep(&SweepSpec {
            machine: MachineKind::Contractible,
            sizes: (1, 4),
            strategies: vec![
                StrategySpec::Lockstep,
                StrategySpec::RandomFair { p_look: 0.9, p_commit: 0.9, cap: 8 },
            ],
            seeds: vec![1, 2, 3],
            budget: 100_000,
        })
        .unwrap();
        // 1 + 2 + 6 + 19 shapes; lockstep once plus random-fair x3 each.
        assert_eq!(report.scenarios(), 28 * 4);
        assert_eq!(report.gathered(), report.scenarios());
        assert_eq!(report.false_detections(), 0);
        assert_eq!(report.invariant_violations(), 0);
        assert!(report.round_stats().is_some());
    }

    #[test]
    fn sweep_reports_render_identically_across_runs() {
        let spec = SweepSpec {
            machine: MachineKind::Connected,
            sizes: (2, 3),
            strategies: vec![StrategySpec::RandomFair {
                p_look: 0.9,
                p_commit: 0.9,
                cap: 8,
            }],
            seeds: vec![1, 2],
            budget: 100_000,
        };
        let a = sweep(&spec).unwrap().render(true);
        let b = sweep(&spec).unwrap().render(true);
        assert_eq!(a, b);
        assert!(a.contains("gathered-fraction"));
    }

    #[test]
    fn the_lemma_holds_through_size_six() {
        let report = verify_lemma(6).unwrap();
        assert!(report.counterexamples.is_empty());
        let total: usize = report.examined.iter().map(|(_, c)| c).sum();
        assert_eq!(total, 2 + 6 + 19 + 63 + 216);
    }

    #[test]
    fn lockstep_demo_preserves_distance_for_both_machines() {
        for machine in [MachineKind::Contractible, MachineKind::Connected] {
            for d in [2, 3] {
                let report = demo_lockstep(machine, d, 1000).unwrap();
                assert!(report.distance_held(), "{machine} d={d}: {}", report.outcome);
            }
        }
    }

    #[test]
    fn lockstep_demo_rejects_bad_arguments() {
        assert!(matches!(
            demo_lockstep(MachineKind::Contractible, 1, 100),
            Err(HarnessError::Unsupported(_))
        ));
        assert!(matches!(
            demo_lockstep(MachineKind::General, 3, 100),
            Err(HarnessError::Unsupported(_))
        ));
    }

    #[test]
    fn freeze_demo_is_clean_with_the_true_count_and_dirty_with_a_lie() {
        let honest = demo_freeze(5, &[1, 2, 3], 3).unwrap();
        assert_eq!(honest.false_detections(), 0);
        let lying = demo_freeze(5, &[1, 2, 3], 2).unwrap();
        assert!(lying.false_detections() >= 1, "{}", lying.render());
    }

    #[test]
    fn convergence_generators_are_deterministic_and_in_range() {
        for k in 0..CONVERGENCE_PAIRS as u64 {
            let a = convergence_pair(k, 10);
            let b = convergence_pair(k, 10);
            assert_eq!(a, b);
            let d = a.cells[0].distance(a.cells[1]);
            assert!((1..=6).contains(&d), "pair {k} distance {d}");
        }
        for k in 0..CONVERGENCE_TRIPLES as u64 {
            let a = convergence_triple(k, 10);
            assert_eq!(a, convergence_triple(k, 10));
            assert_eq!(a.cells.len(), 3);
            for c in &a.cells {
                assert!(c.x.abs() + c.y.abs() <= TRIPLE_RADIUS);
            }
        }
    }
}
