//! Plain-text scenario files: one run's machine, starting cells, schedule,
//! random seed, and round budget, plus the canonical digest that ties traces
//! back to the scenario they came from.
//!
//! ```text
//! # one agent per line under cells:
//! machine: general
//! input: 11
//! seed: 7
//! max-rounds: 1000000
//! strategy: random-fair 0.9 0.9 8
//! cells:
//! 0 0
//! 2 1
//! 0 3
//! ```
//!
//! Strategies: `lockstep`, `random-fair <p_look> <p_commit> <cap>`,
//! `freeze <id,id,...> <thaw-round> <inner strategy...>`, and `scripted`
//! (which reads a `script:` block of `round agent look|commit` lines).
//! `#` starts a comment anywhere; blank lines are ignored.

use std::fmt;

use thiserror::Error;

use crate::engine::{
    fnv1a64, AgentId, EventKind, FreezeSubset, Lockstep, RandomFair, Round, Scheduler, Scripted,
};
use crate::grid::{is_connected, is_contractible, Cell, Configuration};
use crate::machine::parse_binary_count;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn parse_err(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse { line, message: message.into() }
}

/// Which gathering algorithm the run uses.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MachineKind {
    Contractible,
    Connected,
    General,
}

impl MachineKind {
    pub fn parse(text: &str) -> Option<MachineKind> {
        match text {
            "contractible" => Some(MachineKind::Contractible),
            "connected" => Some(MachineKind::Connected),
            "general" => Some(MachineKind::General),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MachineKind::Contractible => "contractible",
            MachineKind::Connected => "connected",
            MachineKind::General => "general",
        }
    }
}

impl fmt::Display for MachineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Schedule strategy parameters, independent of any run.
#[derive(Clone, PartialEq, Debug)]
pub enum StrategySpec {
    Lockstep,
    RandomFair { p_look: f64, p_commit: f64, cap: u32 },
    Freeze { frozen: Vec<AgentId>, thaw: Round, inner: Box<StrategySpec> },
    Scripted,
}

impl StrategySpec {
    /// Canonical one-token-stream rendering, also valid scenario syntax.
    pub fn canonical(&self) -> String {
        match self {
            StrategySpec::Lockstep => "lockstep".to_string(),
            StrategySpec::RandomFair { p_look, p_commit, cap } => {
                format!("random-fair {p_look} {p_commit} {cap}")
            }
            StrategySpec::Freeze { frozen, thaw, inner } => {
                let ids: Vec<String> = frozen.iter().map(usize::to_string).collect();
                format!("freeze {} {thaw} {}", ids.join(","), inner.canonical())
            }
            StrategySpec::Scripted => "scripted".to_string(),
        }
    }

    fn uses_script(&self) -> bool {
        match self {
            StrategySpec::Scripted => true,
            StrategySpec::Freeze { inner, .. } => inner.uses_script(),
            _ => false,
        }
    }
}

/// Everything a single run needs, as read from a scenario file.
#[derive(Clone, PartialEq, Debug)]
pub struct Scenario {
    pub machine: MachineKind,
    /// Starting cells, sorted; agent ids are positions in this order.
    pub cells: Vec<Cell>,
    pub input: Option<String>,
    pub strategy: StrategySpec,
    pub seed: u64,
    pub max_rounds: Round,
    /// Schedule events for the `scripted` strategy; empty otherwise.
    pub script: Vec<(Round, AgentId, EventKind)>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        enum Block {
            None,
            Cells,
            Script,
        }

        let mut machine: Option<MachineKind> = None;
        let mut cells: Vec<Cell> = Vec::new();
        let mut input: Option<String> = None;
        let mut strategy: Option<StrategySpec> = None;
        let mut seed: u64 = 1;
        let mut max_rounds: Round = 100_000;
        let mut script: Vec<(Round, AgentId, EventKind)> = Vec::new();
        let mut block = Block::None;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some((key, value)) = line.split_once(':') {
                let key = key.trim();
                let value = value.trim();
                block = Block::None;
                match key {
                    "machine" => {
                        machine = Some(MachineKind::parse(value).ok_or_else(|| {
                            parse_err(line_no, format!("unknown machine `{value}`"))
                        })?);
                    }
                    "input" => {
                        if value.is_empty() {
                            return Err(parse_err(line_no, "empty input"));
                        }
                        input = Some(value.to_string());
                    }
                    "seed" => {
                        seed = value.parse().map_err(|_| {
                            parse_err(line_no, format!("bad seed `{value}`"))
                        })?;
                    }
                    "max-rounds" => {
                        max_rounds = value.parse().map_err(|_| {
                            parse_err(line_no, format!("bad max-rounds `{value}`"))
                        })?;
                    }
                    "strategy" => {
                        let tokens: Vec<&str> = value.split_whitespace().collect();
                        let (spec, used) = parse_strategy(&tokens, line_no)?;
                        if used != tokens.len() {
                            return Err(parse_err(
                                line_no,
                                format!("trailing strategy tokens `{}`", tokens[used..].join(" ")),
                            ));
                        }
                        strategy = Some(spec);
                    }
                    "cells" => {
                        if !value.is_empty() {
                            return Err(parse_err(line_no, "cells is a block; put cells on following lines"));
                        }
                        block = Block::Cells;
                    }
                    "script" => {
                        if !value.is_empty() {
                            return Err(parse_err(line_no, "script is a block; put events on following lines"));
                        }
                        block = Block::Script;
                    }
                    other => {
                        return Err(parse_err(line_no, format!("unknown key `{other}`")));
                    }
                }
                continue;
            }
            match block {
                Block::None => {
                    return Err(parse_err(line_no, format!("expected `key: value`, got `{line}`")));
                }
                Block::Cells => {
                    let mut parts = line.split_whitespace();
                    let x: i64 = parts
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err(line_no, "cell lines are `x y`"))?;
                    let y: i64 = parts
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err(line_no, "cell lines are `x y`"))?;
                    if parts.next().is_some() {
                        return Err(parse_err(line_no, "cell lines are `x y`"));
                    }
                    cells.push(Cell::new(x, y));
                }
                Block::Script => {
                    let mut parts = line.split_whitespace();
                    let round: Round = parts
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err(line_no, "script lines are `round agent look|commit`"))?;
                    let agent: AgentId = parts
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err(line_no, "script lines are `round agent look|commit`"))?;
                    let kind = match parts.next() {
                        Some("look") => EventKind::Look,
                        Some("commit") => EventKind::Commit,
                        _ => {
                            return Err(parse_err(line_no, "script lines are `round agent look|commit`"))
                        }
                    };
                    if parts.next().is_some() {
                        return Err(parse_err(line_no, "script lines are `round agent look|commit`"));
                    }
                    script.push((round, agent, kind));
                }
            }
        }

        let machine =
            machine.ok_or_else(|| ScenarioError::Invalid("missing `machine:`".to_string()))?;
        let strategy = strategy.unwrap_or(StrategySpec::Lockstep);
        let scenario = Scenario {
            machine,
            cells,
            input,
            strategy,
            seed,
            max_rounds,
            script,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |message: String| Err(ScenarioError::Invalid(message));
        if self.cells.is_empty() {
            return bad("no cells".to_string());
        }
        let mut sorted = self.cells.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return bad("starting cells must be distinct".to_string());
        }
        let config = self.configuration();
        match self.machine {
            MachineKind::Contractible => {
                if self.input.is_some() {
                    return bad("machine `contractible` takes no input".to_string());
                }
                if !is_contractible(&config).unwrap_or(false) {
                    return bad("configuration is not contractible".to_string());
                }
            }
            MachineKind::Connected => {
                if self.input.is_some() {
                    return bad("machine `connected` takes no input".to_string());
                }
                if !is_connected(&config).unwrap_or(false) {
                    return bad("configuration is not connected".to_string());
                }
            }
            MachineKind::General => {
                let Some(input) = &self.input else {
                    return bad("machine `general` requires `input:` (agent count in binary)".to_string());
                };
                let n = parse_binary_count(input)
                    .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
                if n != self.cells.len() as u64 {
                    return bad(format!(
                        "input declares {n} agents but the scenario places {}",
                        self.cells.len()
                    ));
                }
            }
        }
        match &self.strategy {
            StrategySpec::Scripted => {
                if self.script.is_empty() {
                    return bad("strategy `scripted` needs a script: block".to_string());
                }
            }
            spec => {
                if !self.script.is_empty() && !spec.uses_script() {
                    return bad("a script: block needs strategy `scripted`".to_string());
                }
                validate_strategy(spec, self.cells.len())?;
            }
        }
        Ok(())
    }

    /// The starting configuration: one agent per listed cell.
    pub fn configuration(&self) -> Configuration {
        Configuration::from_cells(self.cells.iter().copied())
    }

    /// Canonical single-line rendering: equal scenarios render equally, and
    /// anything that changes the run changes the text.
    pub fn canonical(&self) -> String {
        let mut cells = self.cells.clone();
        cells.sort();
        let cell_text: String = cells.iter().map(Cell::to_string).collect();
        let script_text: String = self
            .script
            .iter()
            .map(|(round, agent, kind)| {
                let k = match kind {
                    EventKind::Look => "l",
                    EventKind::Commit => "c",
                };
                format!("{round}.{agent}.{k}")
            })
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "machine={};input={};seed={};max-rounds={};strategy={};cells={};script={}",
            self.machine,
            self.input.as_deref().unwrap_or("-"),
            self.seed,
            self.max_rounds,
            self.strategy.canonical(),
            cell_text,
            script_text,
        )
    }

    /// Digest recorded in trace headers and checked on replay.
    pub fn digest(&self) -> u64 {
        fnv1a64(self.canonical().as_bytes())
    }

    /// Builds the scheduler this scenario asks for.
    pub fn scheduler(&self) -> Box<dyn Scheduler> {
        build_strategy(&self.strategy, &self.script)
    }
}

fn build_strategy(
    spec: &StrategySpec,
    script: &[(Round, AgentId, EventKind)],
) -> Box<dyn Scheduler> {
    match spec {
        StrategySpec::Lockstep => Box::new(Lockstep),
        StrategySpec::RandomFair { p_look, p_commit, cap } => {
            Box::new(RandomFair::new(*p_look, *p_commit, *cap))
        }
        StrategySpec::Freeze { frozen, thaw, inner } => Box::new(FreezeSubset {
            frozen: frozen.clone(),
            thaw_round: *thaw,
            inner: build_strategy(inner, script),
        }),
        StrategySpec::Scripted => Box::new(Scripted::new(script.to_vec())),
    }
}

fn validate_strategy(spec: &StrategySpec, agents: usize) -> Result<(), ScenarioError> {
    match spec {
        StrategySpec::Lockstep | StrategySpec::Scripted => Ok(()),
        StrategySpec::RandomFair { p_look, p_commit, cap } => {
            for p in [p_look, p_commit] {
                if !(*p > 0.0 && *p <= 1.0) {
                    return Err(ScenarioError::Invalid(format!(
                        "random-fair probabilities must be in (0, 1], got {p}"
                    )));
                }
            }
            if *cap == 0 {
                return Err(ScenarioError::Invalid("random-fair cap must be at least 1".to_string()));
            }
            Ok(())
        }
        StrategySpec::Freeze { frozen, thaw, inner } => {
            if frozen.is_empty() {
                return Err(ScenarioError::Invalid("freeze needs at least one agent id".to_string()));
            }
            if let Some(&id) = frozen.iter().find(|&&id| id >= agents) {
                return Err(ScenarioError::Invalid(format!(
                    "freeze names agent {id} but the scenario has {agents} agents"
                )));
            }
            if *thaw == 0 {
                return Err(ScenarioError::Invalid("freeze thaw round must be at least 1".to_string()));
            }
            validate_strategy(inner, agents)
        }
    }
}

/// Parses a strategy from whitespace tokens; returns how many were consumed
/// so `freeze` can hand the rest to its inner strategy.
fn parse_strategy(tokens: &[&str], line: usize) -> Result<(StrategySpec, usize), ScenarioError> {
    match tokens.first() {
        None => Err(parse_err(line, "empty strategy")),
        Some(&"lockstep") => Ok((StrategySpec::Lockstep, 1)),
        Some(&"scripted") => Ok((StrategySpec::Scripted, 1)),
        Some(&"random-fair") => {
            if tokens.len() < 4 {
                return Err(parse_err(line, "random-fair takes `p_look p_commit cap`"));
            }
            let p_look: f64 = tokens[1]
                .parse()
                .map_err(|_| parse_err(line, format!("bad probability `{}`", tokens[1])))?;
            let p_commit: f64 = tokens[2]
                .parse()
                .map_err(|_| parse_err(line, format!("bad probability `{}`", tokens[2])))?;
            let cap: u32 = tokens[3]
                .parse()
                .map_err(|_| parse_err(line, format!("bad cap `{}`", tokens[3])))?;
            Ok((StrategySpec::RandomFair { p_look, p_commit, cap }, 4))
        }
        Some(&"freeze") => {
            if tokens.len() < 4 {
                return Err(parse_err(line, "freeze takes `ids thaw inner-strategy`"));
            }
            let mut frozen: Vec<AgentId> = Vec::new();
            for part in tokens[1].split(',') {
                frozen.push(part.parse().map_err(|_| {
                    parse_err(line, format!("bad agent id `{part}` in freeze list"))
                })?);
            }
            frozen.sort_unstable();
            frozen.dedup();
            let thaw: Round = tokens[2]
                .parse()
                .map_err(|_| parse_err(line, format!("bad thaw round `{}`", tokens[2])))?;
            let (inner, used) = parse_strategy(&tokens[3..], line)?;
            Ok((
                StrategySpec::Freeze { frozen, thaw, inner: Box::new(inner) },
                3 + used,
            ))
        }
        Some(other) => Err(parse_err(line, format!("unknown strategy `{other}`"))),
    }
}
