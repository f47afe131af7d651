//! Gathering for connected, hole-free configurations of anonymous agents.
//!
//! The machine folds the configuration inward: north and east leaves step
//! onto their support immediately; south and west leaves ask and move only
//! once every agent on their support cell agrees (preventing two opposite
//! leaves from sliding past each other); when no leaf exists, a corner of a
//! fully occupied 2x2 block steps into the block after a question/answer
//! handshake that verifies the block's diagonal cell, which the corner
//! cannot see itself. An agent that sees no other agent at all — neither
//! in its own cell nor in the four neighbor cells — turns terminal; agents
//! that gather with company instead settle into a permanent idle cycle,
//! and the engine's quiescence rule declares the gathering.
//!
//! The module also hosts the run-time auditors for this machine's
//! invariants: moves only target cells observed occupied, the occupied set
//! never grows (modulo one completed swap per cell pair), the configuration
//! stays connected and hole-free, and the state space stays finite.

use std::collections::{BTreeSet, HashMap};

use crate::engine::{Auditor, Round, RoundView};
use crate::grid::{is_connected, is_contractible, Cell, Configuration, Dir};
use crate::machine::{AgentState, Machine, MachineError, Move, Observation, StateMultiset};

/// Which corner of a fully occupied 2x2 block a handshake probes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum BlockCorner {
    Northeast,
    Northwest,
}

impl BlockCorner {
    fn tag(self) -> &'static str {
        match self {
            BlockCorner::Northeast => "NE",
            BlockCorner::Northwest => "NW",
        }
    }
}

/// The twelve states of the folding machine.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum FoldState {
    Idle,
    /// A south or west leaf requesting permission to move onto its support.
    LeafAsking,
    /// Granting an asking leaf permission.
    LeafAgree,
    /// Committed to stepping one cell in the given direction.
    Moving(Dir),
    /// A block corner asking whether the diagonal cell is occupied.
    Question(BlockCorner),
    /// Confirming a corner's question: the diagonal cell is occupied.
    Agree(BlockCorner),
    /// Terminal: gathering declared.
    Done,
}

impl AgentState for FoldState {
    fn is_terminal(&self) -> bool {
        matches!(self, FoldState::Done)
    }

    fn canonical(&self) -> String {
        match self {
            FoldState::Idle => "idle".to_string(),
            FoldState::LeafAsking => "leaf-asking".to_string(),
            FoldState::LeafAgree => "leaf-agree".to_string(),
            FoldState::Moving(d) => format!("move-{}", d.letter()),
            FoldState::Question(c) => format!("question-{}", c.tag()),
            FoldState::Agree(c) => format!("agree-{}", c.tag()),
            FoldState::Done => "done".to_string(),
        }
    }
}

fn has(m: &StateMultiset<FoldState>, s: FoldState) -> bool {
    m.iter().any(|(_, t)| *t == s)
}

fn all(m: &StateMultiset<FoldState>, s: FoldState) -> bool {
    m.iter().all(|(_, t)| *t == s)
}

/// The deterministic finite-state machine for contractible configurations.
pub struct ContractibleMachine;

impl Machine for ContractibleMachine {
    type State = FoldState;

    fn name(&self) -> &'static str {
        "contractible"
    }

    fn randomized(&self) -> bool {
        false
    }

    fn finite_state(&self) -> bool {
        true
    }

    fn takes_input(&self) -> bool {
        false
    }

    fn initial_state(&self, input: Option<&str>) -> Result<FoldState, MachineError> {
        if input.is_some() {
            return Err(MachineError::UnexpectedInput(self.name()));
        }
        Ok(FoldState::Idle)
    }

    fn transition(
        &self,
        state: &FoldState,
        obs: &Observation<FoldState>,
        _bit: Option<bool>,
    ) -> FoldState {
        use BlockCorner::{Northeast, Northwest};
        use Dir::{East, North, South, West};

        // Terminal only when no other agent is visible anywhere, own cell
        // included. An agent that still has co-occupants must keep running:
        // a co-occupant may hold a stale committed-but-unexecuted move out
        // of this cell, and an agent frozen in the terminal state could
        // never follow it, deadlocking the run one cell short of gathering.
        if obs.neighborhood_empty() && obs.here.is_empty() {
            return FoldState::Done;
        }

        let dirs: Vec<Dir> = obs.occupied_dirs().collect();

        // Leaves: exactly one occupied neighbor cell, the support.
        match dirs.as_slice() {
            // North and east leaves fold immediately.
            [South] => return FoldState::Moving(South),
            [West] => return FoldState::Moving(West),
            // South and west leaves need unanimous consent from the support
            // cell, so they cannot slide past an opposite leaf unnoticed.
            [North] => {
                return if *state == FoldState::LeafAsking
                    && all(obs.dir(North), FoldState::LeafAgree)
                {
                    FoldState::Moving(North)
                } else {
                    FoldState::LeafAsking
                };
            }
            [East] => {
                return if *state == FoldState::LeafAsking
                    && all(obs.dir(East), FoldState::LeafAgree)
                {
                    FoldState::Moving(East)
                } else {
                    FoldState::LeafAsking
                };
            }
            _ => {}
        }

        // Non-leaves grant permission to an asking leaf below or left.
        if has(obs.dir(South), FoldState::LeafAsking) || has(obs.dir(West), FoldState::LeafAsking)
        {
            return FoldState::LeafAgree;
        }

        // Block-corner handshake. A northeast corner (occupied neighbors
        // exactly south and west) cannot see the diagonal south-west cell;
        // the agent below confirms it by checking its own west neighbor.
        if *state == FoldState::Question(Northeast) && has(obs.dir(South), FoldState::Agree(Northeast))
        {
            return FoldState::Moving(South);
        }
        if dirs == [South, West] {
            return FoldState::Question(Northeast);
        }
        if *state == FoldState::Question(Northwest) && has(obs.dir(South), FoldState::Agree(Northwest))
        {
            return FoldState::Moving(South);
        }
        if dirs == [East, South] {
            return FoldState::Question(Northwest);
        }
        if has(obs.dir(North), FoldState::Question(Northeast)) && !obs.dir(West).is_empty() {
            return FoldState::Agree(Northeast);
        }
        if has(obs.dir(North), FoldState::Question(Northwest)) && !obs.dir(East).is_empty() {
            return FoldState::Agree(Northwest);
        }

        FoldState::Idle
    }

    fn action(&self, state: &FoldState) -> Move {
        match state {
            FoldState::Moving(d) => Move::Go(*d),
            _ => Move::Stay,
        }
    }
}

/// Number of distinct states [`ContractibleMachine`] can ever emit.
pub const FOLD_STATE_COUNT: usize = 12;

/// Asserts that every move targets a cell that was occupied in the mover's
/// look snapshot — an agent never steps onto a cell it observed empty.
#[derive(Default)]
pub struct ShrinkingAuditor {
    /// Per agent: occupied-neighbor bitmask recorded at its latest look.
    look_masks: Vec<Option<u8>>,
}

impl ShrinkingAuditor {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<S: AgentState> Auditor<S> for ShrinkingAuditor {
    fn name(&self) -> &'static str {
        "shrinking"
    }

    fn check_round(&mut self, view: &RoundView<'_, S>) -> Result<(), String> {
        if self.look_masks.len() < view.positions.len() {
            self.look_masks.resize(view.positions.len(), None);
        }
        // Commits first: they stem from looks in strictly earlier rounds.
        for rec in view.commits {
            if rec.to == rec.from {
                continue;
            }
            let dir = Dir::ALL
                .into_iter()
                .find(|d| rec.from.neighbor(*d) == rec.to)
                .ok_or_else(|| {
                    format!("agent {} teleported {} -> {}", rec.agent, rec.from, rec.to)
                })?;
            let mask = self.look_masks[rec.agent]
                .ok_or_else(|| format!("agent {} committed without a recorded look", rec.agent))?;
            if mask & (1 << dir.index()) == 0 {
                return Err(format!(
                    "agent {} moved {} -> {} but that cell was empty at its look",
                    rec.agent, rec.from, rec.to
                ));
            }
        }
        // Then record this round's looks against the start-of-round snapshot.
        for &agent in view.looked {
            let p = view.positions[agent];
            let mut mask = 0u8;
            for d in Dir::ALL {
                if view.occupied_before.contains_key(&p.neighbor(d)) {
                    mask |= 1 << d.index();
                }
            }
            self.look_masks[agent] = Some(mask);
        }
        Ok(())
    }
}

/// Asserts the occupied-cell set never grows: a cell empty at a round
/// boundary may only be re-occupied as the completion of a swap (the mover
/// observed the cell occupied, and its occupant crossed over the shared
/// edge in the meantime), and no unordered cell pair hosts a second swap.
#[derive(Default)]
pub struct SupportAuditor {
    last_look: Vec<Round>,
    /// Latest commit round per directed edge (from, to).
    edge_last_commit: HashMap<(Cell, Cell), Round>,
    /// Completed swaps per unordered cell pair.
    swaps: HashMap<(Cell, Cell), u32>,
}

impl SupportAuditor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Unordered cell pairs that hosted a swap, in deterministic order.
    pub fn swapped_pairs(&self) -> Vec<(Cell, Cell)> {
        let mut pairs: Vec<(Cell, Cell)> = self.swaps.keys().copied().collect();
        pairs.sort();
        pairs
    }

    fn charge_swap(&mut self, key: (Cell, Cell)) -> Result<(), String> {
        let count = self.swaps.entry(key).or_insert(0);
        *count += 1;
        if *count > 1 {
            return Err(format!("second swap between cells {} and {}", key.0, key.1));
        }
        Ok(())
    }

    fn unordered(a: Cell, b: Cell) -> (Cell, Cell) {
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }
}

impl<S: AgentState> Auditor<S> for SupportAuditor {
    fn name(&self) -> &'static str {
        "support"
    }

    fn check_round(&mut self, view: &RoundView<'_, S>) -> Result<(), String> {
        if self.last_look.len() < view.positions.len() {
            self.last_look.resize(view.positions.len(), 0);
        }

        // A swap is one event per unordered cell pair, however many stacked
        // agents ride it: collect this round's pairs first, charge each once.
        let mut round_swaps: BTreeSet<(Cell, Cell)> = BTreeSet::new();

        // Same-round swaps: both directions of one edge in one commit batch.
        let mut same_round_edges: BTreeSet<(Cell, Cell)> = BTreeSet::new();
        for rec in view.commits {
            if rec.from != rec.to {
                same_round_edges.insert((rec.from, rec.to));
            }
        }
        for &(u, v) in &same_round_edges {
            if u < v && same_round_edges.contains(&(v, u)) {
                round_swaps.insert((u, v));
            }
        }

        // Re-occupations of cells that were empty at the round boundary.
        for rec in view.commits {
            if rec.from == rec.to || view.occupied_before.contains_key(&rec.to) {
                continue;
            }
            let look_round = self.last_look[rec.agent];
            match self.edge_last_commit.get(&(rec.to, rec.from)) {
                Some(&reverse_round) if reverse_round >= look_round => {
                    round_swaps.insert(Self::unordered(rec.from, rec.to));
                }
                _ => {
                    return Err(format!(
                        "agent {} re-occupied {} (empty at the round boundary) without a completing swap",
                        rec.agent, rec.to
                    ));
                }
            }
        }

        for key in round_swaps {
            self.charge_swap(key)?;
        }

        for rec in view.commits {
            if rec.from != rec.to {
                self.edge_last_commit.insert((rec.from, rec.to), view.round);
            }
        }
        for &agent in view.looked {
            self.last_look[agent] = view.round;
        }
        Ok(())
    }
}

/// Asserts the occupied-cell set stays connected and hole-free; the
/// geometry is re-checked only on rounds that changed the set.
#[derive(Default)]
pub struct ConnectivityAuditor;

impl ConnectivityAuditor {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<S: AgentState> Auditor<S> for ConnectivityAuditor {
    fn name(&self) -> &'static str {
        "connectivity"
    }

    fn check_round(&mut self, view: &RoundView<'_, S>) -> Result<(), String> {
        if view.commits.iter().all(|rec| rec.from == rec.to) {
            return Ok(());
        }
        let changed = view.occupied_before.len() != view.occupied_after.len()
            || view
                .occupied_before
                .keys()
                .zip(view.occupied_after.keys())
                .any(|(a, b)| a != b);
        if !changed {
            return Ok(());
        }
        let config = Configuration::from_cells(view.occupied_after.keys().copied());
        if !is_connected(&config).map_err(|e| e.to_string())? {
            return Err("occupied cells disconnected".to_string());
        }
        if !is_contractible(&config).map_err(|e| e.to_string())? {
            return Err("occupied cells enclose a hole".to_string());
        }
        Ok(())
    }
}

/// Asserts the set of distinct committed states stays under a fixed bound.
pub struct FiniteStateAuditor {
    bound: usize,
    seen: BTreeSet<String>,
}

impl FiniteStateAuditor {
    pub fn new(bound: usize) -> Self {
        FiniteStateAuditor {
            bound,
            seen: BTreeSet::new(),
        }
    }
}

impl<S: AgentState> Auditor<S> for FiniteStateAuditor {
    fn name(&self) -> &'static str {
        "finite-state"
    }

    fn check_round(&mut self, view: &RoundView<'_, S>) -> Result<(), String> {
        for rec in view.commits {
            self.seen.insert(rec.state_after.canonical());
            if self.seen.len() > self.bound {
                return Err(format!(
                    "more than {} distinct states observed (latest: {})",
                    self.bound,
                    rec.state_after.canonical()
                ));
            }
        }
        Ok(())
    }
}

/// The full auditor kit for [`ContractibleMachine`] runs.
pub fn auditors() -> Vec<Box<dyn Auditor<FoldState>>> {
    vec![
        Box::new(ShrinkingAuditor::new()),
        Box::new(SupportAuditor::new()),
        Box::new(ConnectivityAuditor::new()),
        Box::new(FiniteStateAuditor::new(FOLD_STATE_COUNT)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{
        run, EventKind, Lockstep, NullSink, Outcome, RandomFair, RunReport, RunSetup, Scripted,
        TextTrace,
    };
    use crate::grid::enumerate_polyominoes;

    fn lockstep_run(cells: &[(i64, i64)], max_rounds: Round) -> (RunReport, Vec<String>) {
        let config = Configuration::from_cells(cells.iter().map(|&(x, y)| Cell::new(x, y)));
        let setup = RunSetup {
            machine: &ContractibleMachine,
            config: &config,
            input: None,
            seed: 1,
            max_rounds,
            digest: 0,
            halt_on_false_detection: true,
        };
        let mut sink = TextTrace::new();
        let mut auditors = auditors();
        let report = run(&setup, &mut Lockstep, &mut auditors, &mut sink).unwrap();
        (report, sink.lines)
    }

    #[test]
    fn singleton_finishes_in_two_rounds() {
        let (report, _) = lockstep_run(&[(0, 0)], 100);
        assert_eq!(
            report.outcome,
            Outcome::Gathered {
                round: 2,
                cell: Cell::new(0, 0)
            }
        );
    }

    #[test]
    fn vertical_domino_gathers_at_the_bottom() {
        let (report, lines) = lockstep_run(&[(0, 0), (0, 1)], 100);
        assert_eq!(
            report.outcome,
            Outcome::Gathered {
                round: 4,
                cell: Cell::new(0, 0)
            }
        );
        // Exactly one cell is ever vacated: the north leaf's.
        let vacated: BTreeSet<&str> = lines
            .iter()
            .filter(|l| l.contains(" COMMIT "))
            .filter_map(|l| {
                let parts: Vec<&str> = l.split_whitespace().collect();
                (parts[5] != parts[6]).then_some(parts[5])
            })
            .collect();
        assert_eq!(vacated.len(), 1);
        assert!(vacated.contains("(0,1)"));
    }

    #[test]
    fn three_path_gathers_at_the_bottom() {
        let (report, _) = lockstep_run(&[(0, 0), (0, 1), (0, 2)], 100);
        assert_eq!(
            report.outcome,
            Outcome::Gathered {
                round: 6,
                cell: Cell::new(0, 0)
            }
        );
    }

    #[test]
    fn square_block_gathers_via_corner_handshake() {
        let (report, lines) = lockstep_run(&[(0, 0), (1, 0), (0, 1), (1, 1)], 100);
        assert_eq!(
            report.outcome,
            Outcome::Gathered {
                round: 10,
                cell: Cell::new(0, 0)
            }
        );
        let text = lines.join("\n");
        assert!(text.contains("question-NE"));
        assert!(text.contains("question-NW"));
        assert!(text.contains("agree-NE"));
        assert!(text.contains("agree-NW"));
    }

    #[test]
    fn all_contractible_shapes_up_to_four_gather_in_lockstep() {
        for n in 1..=4 {
            for config in enumerate_polyominoes(n, true).unwrap() {
                let setup = RunSetup {
                    machine: &ContractibleMachine,
                    config: &config,
                    input: None,
                    seed: 1,
                    max_rounds: 10_000,
                    digest: 0,
                    halt_on_false_detection: true,
                };
                let mut auditors = auditors();
                let report = run(&setup, &mut Lockstep, &mut auditors, &mut NullSink).unwrap();
                assert!(
                    report.outcome.is_gathered(),
                    "shape {}: {:?}",
                    config.format_cells(),
                    report.outcome
                );
            }
        }
    }

    #[test]
    fn random_schedules_gather_the_l_tromino() {
        let config = Configuration::from_cells([Cell::new(0, 0), Cell::new(0, 1), Cell::new(1, 1)]);
        for seed in 0..50 {
            let setup = RunSetup {
                machine: &ContractibleMachine,
                config: &config,
                input: None,
                seed,
                max_rounds: 100_000,
                digest: 0,
                halt_on_false_detection: true,
            };
            let mut auditors = auditors();
            let report = run(
                &setup,
                &mut RandomFair::default(),
                &mut auditors,
                &mut NullSink,
            )
            .unwrap();
            assert!(report.outcome.is_gathered(), "seed {seed}: {:?}", report.outcome);
        }
    }

    /// The staggered swap: an agent answers an asking leaf, becomes a leaf
    /// itself when a third agent folds onto its cell, and its stale
    /// agreement lets the asker move up while it moves down — the two
    /// commits landing in consecutive rounds. The auditors must accept this
    /// single completed swap and the run must still gather.
    #[test]
    fn staggered_swap_is_accepted_once_and_still_gathers() {
        use EventKind::{Commit, Look};
        let config = Configuration::from_cells([Cell::new(0, 0), Cell::new(0, 1), Cell::new(1, 1)]);
        // Agents by (y, x): 0 = (0,0) asker, 1 = (0,1) answerer, 2 = (1,1).
        let script = vec![
            (1, 0, Look),
            (1, 2, Look),
            (2, 0, Commit), // asker shows leaf-asking
            (3, 1, Look),   // answerer sees the ask, prepares leaf-agree
            (4, 1, Commit),
            (4, 2, Commit), // third agent folds west onto (0,1)
            (5, 1, Look),   // answerer is now a north leaf: pending move south
            (5, 2, Look),
            (6, 2, Commit), // third agent drops to (0,0)
            (7, 0, Look),   // asker sees only stale leaf-agree above: move north
            (8, 1, Commit), // answerer vacates (0,1)...
            (9, 0, Commit), // ...and the asker re-occupies it one round later
            (10, 0, Look),
            (10, 1, Look),
            (10, 2, Look),
            (11, 0, Commit),
            (11, 1, Commit),
            (11, 2, Commit),
            (12, 0, Look),
            (12, 1, Look),
            (12, 2, Look),
            (13, 0, Commit),
            (13, 1, Commit),
            (13, 2, Commit),
        ];
        let setup = RunSetup {
            machine: &ContractibleMachine,
            config: &config,
            input: None,
            seed: 1,
            max_rounds: 20,
            digest: 0,
            halt_on_false_detection: true,
        };
        let mut sink = TextTrace::new();
        let mut auditors = auditors();
        let report = run(&setup, &mut Scripted::new(script), &mut auditors, &mut sink).unwrap();
        assert_eq!(
            report.outcome,
            Outcome::Gathered {
                round: 13,
                cell: Cell::new(0, 0)
            },
            "trace:\n{}",
            sink.text()
        );
        let text = sink.text();
        assert!(text.contains("9 0 COMMIT leaf-asking move-N (0,0) (0,1)"));
    }

    /// A machine that walks onto cells it observed empty must trip both the
    /// shrinking and the support auditors.
    #[test]
    fn auditors_reject_moves_onto_observed_empty_cells() {
        struct Walker;
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
        struct W(u8);
        impl AgentState for W {
            fn is_terminal(&self) -> bool {
                self.0 == 0
            }
            fn canonical(&self) -> String {
                format!("w{}", self.0)
            }
        }
        impl Machine for Walker {
            type State = W;
            fn name(&self) -> &'static str {
                "walker"
            }
            fn randomized(&self) -> bool {
                false
            }
            fn finite_state(&self) -> bool {
                true
            }
            fn takes_input(&self) -> bool {
                false
            }
            fn initial_state(&self, _: Option<&str>) -> Result<W, MachineError> {
                Ok(W(2))
            }
            fn transition(&self, s: &W, _: &Observation<W>, _: Option<bool>) -> W {
                W(s.0.saturating_sub(1))
            }
            fn action(&self, s: &W) -> Move {
                if s.0 == 0 {
                    Move::Stay
                } else {
                    Move::Go(Dir::North)
                }
            }
        }
        let config = Configuration::from_cells([Cell::new(0, 0)]);
        let setup = RunSetup {
            machine: &Walker,
            config: &config,
            input: None,
            seed: 1,
            max_rounds: 50,
            digest: 0,
            halt_on_false_detection: true,
        };
        for auditor in [
            Box::new(ShrinkingAuditor::new()) as Box<dyn Auditor<W>>,
            Box::new(SupportAuditor::new()),
        ] {
            let mut auditors = vec![auditor];
            let report = run(&setup, &mut Lockstep, &mut auditors, &mut NullSink).unwrap();
            assert!(
                matches!(report.outcome, Outcome::Error { .. }),
                "{:?}",
                report.outcome
            );
        }
    }

    #[test]
    fn input_is_rejected() {
        assert!(ContractibleMachine.initial_state(Some("11")).is_err());
        assert_eq!(ContractibleMachine.initial_state(None), Ok(FoldState::Idle));
    }
}
