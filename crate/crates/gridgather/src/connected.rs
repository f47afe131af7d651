//! Gathering for arbitrary connected configurations of anonymous agents.
//!
//! Agents never move until they know the whole picture. In a first phase
//! every agent builds a map of the configuration purely by exchanging
//! direction sequences through the mutually visible memories: each sequence
//! codes a walk of occupied cells, forward letters extend the walk outward,
//! primed letters retreat along it, and a fully retreated sequence proves
//! that everything reachable through one neighbor has been explored. In a
//! second phase the same exchange is replayed in a separate color among
//! agents that already hold a map, which establishes that *everyone* holds
//! one. Only then does an agent walk — north, then east or west — to the
//! shared rally point (the east-most cell of the north-most occupied row of
//! its map), and it finishes once the right number of settled agents share
//! that cell.
//!
//! The module also hosts this machine's run-time auditors: no movement
//! before the walk phase, reconstructed maps equal the ground truth,
//! unanimous rally targets, and append-only boards (modulo the one audited
//! erasure the exchange performs when it wraps up a completed branch).

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use crate::engine::{Auditor, RoundView};
use crate::grid::{Cell, Configuration, Dir};
use crate::machine::{AgentState, Machine, MachineError, Move, Observation};

/// One letter of a direction sequence. A primed letter walks the opposite
/// way: it retreats over the step its plain twin took.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Letter {
    pub dir: Dir,
    pub primed: bool,
}

impl Letter {
    pub const fn plain(dir: Dir) -> Self {
        Letter { dir, primed: false }
    }

    pub const fn primed(dir: Dir) -> Self {
        Letter { dir, primed: true }
    }

    /// The same step with the prime toggled.
    pub fn flipped(self) -> Self {
        Letter {
            dir: self.dir,
            primed: !self.primed,
        }
    }

    /// Grid displacement of this letter (primed letters move opposite).
    pub fn displacement(self) -> (i64, i64) {
        if self.primed {
            self.dir.opposite().delta()
        } else {
            self.dir.delta()
        }
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.dir.letter())?;
        if self.primed {
            write!(f, "'")?;
        }
        Ok(())
    }
}

/// A sequence of direction letters; the unit of memory the agents exchange.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct DirSeq(Vec<Letter>);

impl DirSeq {
    pub fn new(letters: Vec<Letter>) -> Self {
        DirSeq(letters)
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<Letter> {
        self.0.first().copied()
    }

    pub fn last(&self) -> Option<Letter> {
        self.0.last().copied()
    }

    /// The sequence followed by one more letter.
    pub fn extended(&self, l: Letter) -> DirSeq {
        let mut v = self.0.clone();
        v.push(l);
        DirSeq(v)
    }

    /// The first `n` letters.
    pub fn prefix(&self, n: usize) -> DirSeq {
        DirSeq(self.0[..n].to_vec())
    }

    pub fn starts_with(&self, other: &DirSeq) -> bool {
        self.0.starts_with(&other.0)
    }

    /// Reversed with every prime toggled; undoing the walk step by step.
    pub fn mirror(&self) -> DirSeq {
        DirSeq(self.0.iter().rev().map(|l| l.flipped()).collect())
    }

    /// Net grid displacement of the whole walk.
    pub fn displacement(&self) -> (i64, i64) {
        let mut dx = 0;
        let mut dy = 0;
        for l in &self.0 {
            let (lx, ly) = l.displacement();
            dx += lx;
            dy += ly;
        }
        (dx, dy)
    }

    /// No primed letters: a pure forward walk.
    pub fn is_clean(&self) -> bool {
        self.0.iter().all(|l| !l.primed)
    }

    /// A completed form is a forward walk followed by its exact retreat.
    pub fn is_completed_form(&self) -> bool {
        is_balanced_excursion(&self.0)
    }

    /// The forward half of a completed form.
    pub fn forward_half(&self) -> &[Letter] {
        &self.0[..self.0.len() / 2]
    }
}

impl fmt::Display for DirSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

/// Nonempty, even length, clean first half, second half the first half's
/// mirror: a walk that went somewhere and came all the way back.
fn is_balanced_excursion(letters: &[Letter]) -> bool {
    if letters.is_empty() || letters.len() % 2 != 0 {
        return false;
    }
    let h = letters.len() / 2;
    letters[..h].iter().all(|l| !l.primed)
        && (0..h).all(|i| letters[h + i] == letters[h - 1 - i].flipped())
}

type Board = BTreeSet<DirSeq>;

/// Memory of one agent running the connected-gathering machine. The whole
/// state is mutually visible, which is exactly what the exchange exploits.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct ConnectedState {
    /// Mapping-phase sequences.
    black: Board,
    /// Confirmation-phase sequences (separate color, same rules).
    red: Board,
    /// Per-direction snapshot of the black boards seen at the previous
    /// look; new material is what drives the exchange.
    last_black: [Option<Board>; 4],
    /// Same for the red boards; tracked only once this agent participates.
    last_red: [Option<Board>; 4],
    /// Directions already red-seeded (each seed names one neighbor).
    red_seeded: [bool; 4],
    /// First look done (black seeds written).
    looked: bool,
    /// Map acquired.
    informed: bool,
    /// Reconstructed configuration, relative to this agent.
    map: Option<BTreeSet<(i64, i64)>>,
    /// Total number of agents, derived from the map.
    count: Option<u32>,
    /// Everyone provably holds a map; walking is safe.
    ready: bool,
    /// Remaining walk steps.
    plan: VecDeque<Dir>,
    /// Step to perform when the current activation commits.
    pending: Option<Dir>,
    /// Boards are frozen once the agent has left its original cell, since
    /// their geometry is anchored there.
    frozen: bool,
    /// Terminal: gathering declared.
    omega: bool,
}

impl ConnectedState {
    /// The reconstructed configuration relative to this agent, if informed.
    pub fn reconstructed_map(&self) -> Option<&BTreeSet<(i64, i64)>> {
        self.map.as_ref()
    }

    /// The agent count derived from the map, if informed.
    pub fn agent_count(&self) -> Option<u32> {
        self.count
    }

    pub fn is_informed(&self) -> bool {
        self.informed
    }

    pub fn is_ready(&self) -> bool {
        self.ready
    }

    /// Settled agents sit at their final cell and will never move again.
    fn is_settled(&self) -> bool {
        self.omega || (self.ready && self.plan.is_empty() && self.pending.is_none())
    }
}

impl AgentState for ConnectedState {
    fn is_terminal(&self) -> bool {
        self.omega
    }

    fn canonical(&self) -> String {
        let board = |b: &Board| {
            b.iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join("|")
        };
        let flag = |on: bool, c: char| if on { c } else { '-' };
        let plan: String = self.plan.iter().map(|d| d.letter()).collect();
        let pending = self.pending.map_or('-', |d| d.letter());
        let count = self
            .count
            .map_or_else(|| "-".to_string(), |n| n.to_string());
        format!(
            "cg(b:{};r:{};t:{}{}{}{};n:{};p:{};m:{})",
            board(&self.black),
            board(&self.red),
            flag(self.informed, 'i'),
            flag(self.ready, 'r'),
            flag(self.frozen, 'f'),
            flag(self.omega, 'w'),
            count,
            plan,
            pending,
        )
    }
}

/// Union of one color's boards over every agent in one neighbor cell.
fn visible_boards(
    obs: &Observation<ConnectedState>,
    color: impl Fn(&ConnectedState) -> &Board,
) -> [Board; 4] {
    let mut out: [Board; 4] = Default::default();
    for d in Dir::ALL {
        for (_, s) in obs.dir(d) {
            out[d.index()].extend(color(s).iter().cloned());
        }
    }
    out
}

/// Does extending `seq` from the neighbor at `d` re-enter this agent's own
/// cell along a walk it already hosts? True when some nonempty suffix of
/// `seq` has displacement exactly one step toward that neighbor and the
/// matching prefix is empty or already on `own`.
fn closes_loop(seq: &DirSeq, own: &Board, d: Dir) -> bool {
    let (tx, ty) = d.delta();
    let letters = seq.letters();
    let mut bx = 0;
    let mut by = 0;
    for k in 1..=letters.len() {
        let (lx, ly) = letters[letters.len() - k].displacement();
        bx += lx;
        by += ly;
        if (bx, by) == (tx, ty) {
            if k == letters.len() || own.contains(&seq.prefix(letters.len() - k)) {
                return true;
            }
        }
    }
    false
}

/// One look's worth of the sequence exchange for one color.
///
/// New clean material at a neighbor is extended onto the own board: with a
/// forward letter when the walk moves on, with a forward-and-back pair when
/// it hits a leaf or re-enters a cell it already visited. Separately, a
/// clean sequence `o` on the own board is wrapped up once its parent still
/// shows the stem and every other occupied direction shows `o` continued by
/// a balanced excursion: each such continuation gains the retreat letter and
/// `o` itself is erased. With no other occupied direction left, the bare
/// retreat is appended instead.
fn exchange(
    own: &mut Board,
    last_seen: &mut [Option<Board>; 4],
    visible: &[Board; 4],
    occupied: &[Dir],
    is_leaf: bool,
) {
    for &d in occupied {
        let prev = last_seen[d.index()].take().unwrap_or_default();
        let x = d.opposite();
        for seq in &visible[d.index()] {
            if prev.contains(seq) || !seq.is_clean() {
                continue;
            }
            // A walk whose last step leads from this cell into the neighbor
            // is this cell's own outgoing walk. Pulling it back here would
            // fake a completed excursion; the retreat over that edge belongs
            // to the wrap-up rule below.
            if seq.last() == Some(Letter::plain(d)) {
                continue;
            }
            let appended = if closes_loop(seq, own, d) || is_leaf {
                seq.extended(Letter::plain(x)).extended(Letter::primed(x))
            } else {
                seq.extended(Letter::plain(x))
            };
            own.insert(appended);
        }
    }

    let obligations: Vec<DirSeq> = own
        .iter()
        .filter(|s| !s.is_empty() && s.is_clean())
        .cloned()
        .collect();
    for o in obligations {
        let x = o.last().expect("obligations are nonempty");
        let parent = x.dir.opposite();
        if !occupied.contains(&parent) {
            continue;
        }
        let stem = o.prefix(o.len() - 1);
        if !stem.is_empty() && !visible[parent.index()].contains(&stem) {
            continue;
        }
        let mut sources: Vec<DirSeq> = Vec::new();
        let mut complete = true;
        for &e in occupied {
            if e == parent {
                continue;
            }
            // A genuine continuation into the `e` branch steps toward `e`
            // first; without this pin, same-lettered walks rooted at other
            // cells could be stitched in and fabricate phantom geometry.
            let matches: Vec<DirSeq> = visible[e.index()]
                .iter()
                .filter(|t| {
                    t.starts_with(&o)
                        && t.letters().get(o.len()) == Some(&Letter::plain(e))
                        && is_balanced_excursion(&t.letters()[o.len()..])
                })
                .cloned()
                .collect();
            if matches.is_empty() {
                complete = false;
                break;
            }
            sources.extend(matches);
        }
        if !complete {
            continue;
        }
        sources.sort();
        sources.dedup();
        if sources.is_empty() {
            sources.push(o.clone());
        }
        for t in sources {
            own.insert(t.extended(Letter::primed(x.dir)));
        }
        own.remove(&o);
    }

    for d in Dir::ALL {
        last_seen[d.index()] = Some(visible[d.index()].clone());
    }
}

/// A completed form at the neighbor in direction `d` whose walk starts with
/// the step toward that neighbor is anchored at this agent's own cell.
fn anchored_form(board: &Board, d: Dir) -> bool {
    board
        .iter()
        .any(|t| t.is_completed_form() && t.first() == Some(Letter::plain(d)))
}

/// Rally target (relative) and walk plan for a reconstructed map: the
/// east-most cell of the north-most occupied row, reached by walking north
/// first and then east or west.
fn rally_plan(map: &BTreeSet<(i64, i64)>) -> ((i64, i64), Vec<Dir>) {
    let &(tx, ty) = map
        .iter()
        .max_by_key(|&&(x, y)| (y, x))
        .expect("maps are nonempty");
    let mut plan = Vec::new();
    for _ in 0..ty {
        plan.push(Dir::North);
    }
    let (dir, steps) = if tx >= 0 {
        (Dir::East, tx)
    } else {
        (Dir::West, -tx)
    };
    for _ in 0..steps {
        plan.push(dir);
    }
    ((tx, ty), plan)
}

/// The true rally point of a configuration: east-most cell of its
/// north-most row. `None` for an empty configuration.
pub fn rally_point(config: &Configuration) -> Option<Cell> {
    config.cells().max_by_key(|c| (c.y, c.x))
}

/// The deterministic map-building gathering machine for connected
/// configurations.
pub struct ConnectedMachine;

impl Machine for ConnectedMachine {
    type State = ConnectedState;

    fn name(&self) -> &'static str {
        "connected"
    }

    fn randomized(&self) -> bool {
        false
    }

    fn finite_state(&self) -> bool {
        false
    }

    fn takes_input(&self) -> bool {
        false
    }

    fn initial_state(&self, input: Option<&str>) -> Result<ConnectedState, MachineError> {
        if input.is_some() {
            return Err(MachineError::UnexpectedInput("connected"));
        }
        Ok(ConnectedState::default())
    }

    fn transition(
        &self,
        state: &ConnectedState,
        obs: &Observation<ConnectedState>,
        _bit: Option<bool>,
    ) -> ConnectedState {
        let mut s = state.clone();
        s.pending = None;

        let occupied: Vec<Dir> = obs.occupied_dirs().collect();
        let is_leaf = occupied.len() == 1;

        if s.frozen {
            if let Some(d) = s.plan.pop_front() {
                s.pending = Some(d);
            }
        } else {
            let black = visible_boards(obs, |t| &t.black);

            if !s.looked {
                s.looked = true;
                for &d in &occupied {
                    let x = d.opposite();
                    let seed = if is_leaf {
                        DirSeq::new(vec![Letter::plain(x), Letter::primed(x)])
                    } else {
                        DirSeq::new(vec![Letter::plain(x)])
                    };
                    s.black.insert(seed);
                }
            }

            exchange(&mut s.black, &mut s.last_black, &black, &occupied, is_leaf);

            if !s.informed && occupied.iter().all(|&d| anchored_form(&black[d.index()], d)) {
                s.informed = true;
                let mut map = BTreeSet::new();
                map.insert((0, 0));
                for &d in &occupied {
                    for t in &black[d.index()] {
                        if t.is_completed_form() && t.first() == Some(Letter::plain(d)) {
                            let mut pos = (0i64, 0i64);
                            for l in t.forward_half() {
                                let (dx, dy) = l.displacement();
                                pos = (pos.0 + dx, pos.1 + dy);
                                map.insert(pos);
                            }
                        }
                    }
                }
                s.count = Some(map.len() as u32);
                s.map = Some(map);
            }

            if s.informed {
                for &d in &occupied {
                    if s.red_seeded[d.index()]
                        || !obs.dir(d).iter().any(|(_, t)| t.informed)
                    {
                        continue;
                    }
                    s.red_seeded[d.index()] = true;
                    let x = d.opposite();
                    let seed = if is_leaf {
                        DirSeq::new(vec![Letter::plain(x), Letter::primed(x)])
                    } else {
                        DirSeq::new(vec![Letter::plain(x)])
                    };
                    s.red.insert(seed);
                }

                let red = visible_boards(obs, |t| &t.red);
                exchange(&mut s.red, &mut s.last_red, &red, &occupied, is_leaf);

                if !s.ready {
                    let confirmed = occupied.iter().all(|&d| {
                        obs.dir(d).iter().all(|(_, t)| t.informed)
                            && anchored_form(&red[d.index()], d)
                    });
                    if confirmed {
                        s.ready = true;
                        let (_, plan) = rally_plan(s.map.as_ref().expect("ready implies informed"));
                        s.plan = plan.into();
                        if let Some(first) = s.plan.pop_front() {
                            s.pending = Some(first);
                            s.frozen = true;
                        }
                    }
                }
            }
        }

        if s.ready && s.pending.is_none() && s.plan.is_empty() && !s.omega {
            let n = s.count.expect("ready implies informed");
            let settled: u32 = obs
                .here
                .iter()
                .filter(|(_, t)| t.is_settled())
                .map(|(k, _)| *k)
                .sum();
            if settled == n - 1 {
                s.omega = true;
                s.pending = None;
            }
        }

        s
    }

    fn action(&self, state: &ConnectedState) -> Move {
        match state.pending {
            Some(d) => Move::Go(d),
            None => Move::Stay,
        }
    }
}

/// No agent moves before its ready flip.
pub struct MoveBarrierAuditor;

impl Auditor<ConnectedState> for MoveBarrierAuditor {
    fn name(&self) -> &'static str {
        "move-barrier"
    }

    fn check_round(&mut self, view: &RoundView<'_, ConnectedState>) -> Result<(), String> {
        for rec in view.commits {
            if rec.from != rec.to && !rec.state_after.ready {
                return Err(format!(
                    "agent {} moved {} -> {} without the ready flag",
                    rec.agent, rec.from, rec.to
                ));
            }
        }
        Ok(())
    }
}

/// Every reconstructed map equals the initial configuration, translated to
/// the reconstructing agent, and the derived count is the true agent count.
pub struct MapAuditor {
    truth: BTreeSet<Cell>,
}

impl MapAuditor {
    pub fn new(initial: &Configuration) -> Self {
        MapAuditor {
            truth: initial.cells().collect(),
        }
    }
}

impl Auditor<ConnectedState> for MapAuditor {
    fn name(&self) -> &'static str {
        "map-truth"
    }

    fn check_round(&mut self, view: &RoundView<'_, ConnectedState>) -> Result<(), String> {
        for rec in view.commits {
            if rec.state_before.informed || !rec.state_after.informed {
                continue;
            }
            if rec.from != view.starts[rec.agent] {
                return Err(format!(
                    "agent {} built its map at {} after leaving its start {}",
                    rec.agent, rec.from, view.starts[rec.agent]
                ));
            }
            let map = rec
                .state_after
                .map
                .as_ref()
                .ok_or_else(|| format!("agent {} informed without a map", rec.agent))?;
            let translated: BTreeSet<Cell> = map
                .iter()
                .map(|&(dx, dy)| Cell::new(rec.from.x + dx, rec.from.y + dy))
                .collect();
            if translated != self.truth {
                return Err(format!(
                    "agent {} reconstructed {:?}, expected {:?}",
                    rec.agent, translated, self.truth
                ));
            }
            if rec.state_after.count != Some(self.truth.len() as u32) {
                return Err(format!(
                    "agent {} counted {:?} agents, expected {}",
                    rec.agent,
                    rec.state_after.count,
                    self.truth.len()
                ));
            }
        }
        Ok(())
    }
}

/// All agents aim for the same rally cell, and it is the true one.
pub struct TargetAuditor {
    rally: Cell,
}

impl TargetAuditor {
    pub fn new(initial: &Configuration) -> Self {
        TargetAuditor {
            rally: rally_point(initial).expect("configurations are nonempty"),
        }
    }
}

impl Auditor<ConnectedState> for TargetAuditor {
    fn name(&self) -> &'static str {
        "target-unanimity"
    }

    fn check_round(&mut self, view: &RoundView<'_, ConnectedState>) -> Result<(), String> {
        for rec in view.commits {
            if rec.state_before.ready || !rec.state_after.ready {
                continue;
            }
            let mut target = rec.to;
            for &d in &rec.state_after.plan {
                target = target.neighbor(d);
            }
            if target != self.rally {
                return Err(format!(
                    "agent {} aims for {}, the rally point is {}",
                    rec.agent, target, self.rally
                ));
            }
        }
        Ok(())
    }
}

/// Boards only grow, except that wrapping up a completed branch erases the
/// stem it extended — and must leave that extension behind. Red material
/// only ever appears on informed agents.
pub struct BoardAuditor;

impl BoardAuditor {
    fn check_color(
        agent: usize,
        color: &str,
        before: &Board,
        after: &Board,
    ) -> Result<(), String> {
        for gone in before.difference(after) {
            if !gone.is_clean() {
                return Err(format!(
                    "agent {agent} erased retreat material {gone} from its {color} board"
                ));
            }
            let last = gone.last().expect("boards hold nonempty sequences");
            let survives = after
                .iter()
                .any(|t| t.starts_with(gone) && t.last() == Some(last.flipped()));
            if !survives {
                return Err(format!(
                    "agent {agent} erased {gone} from its {color} board without a retreat extension"
                ));
            }
        }
        Ok(())
    }
}

impl Auditor<ConnectedState> for BoardAuditor {
    fn name(&self) -> &'static str {
        "board-growth"
    }

    fn check_round(&mut self, view: &RoundView<'_, ConnectedState>) -> Result<(), String> {
        for rec in view.commits {
            Self::check_color(rec.agent, "black", &rec.state_before.black, &rec.state_after.black)?;
            Self::check_color(rec.agent, "red", &rec.state_before.red, &rec.state_after.red)?;
            if !rec.state_after.red.is_empty() && !rec.state_after.informed {
                return Err(format!(
                    "agent {} holds red material while uninformed",
                    rec.agent
                ));
            }
            if rec.state_after.map.is_some() != rec.state_after.informed {
                return Err(format!(
                    "agent {} has map presence inconsistent with its informed flag",
                    rec.agent
                ));
            }
        }
        Ok(())
    }
}

/// The full auditor set for one run against a given initial configuration.
pub fn auditors(initial: &Configuration) -> Vec<Box<dyn Auditor<ConnectedState>>> {
    vec![
        Box::new(MoveBarrierAuditor),
        Box::new(MapAuditor::new(initial)),
        Box::new(TargetAuditor::new(initial)),
        Box::new(BoardAuditor),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{
        run, CommitRecord, Lockstep, Outcome, RandomFair, Round, RunReport, RunSetup, TextTrace,
    };
    use crate::machine::to_multiset;
    use std::collections::BTreeMap;

    fn seq(text: &str) -> DirSeq {
        let letters = text
            .split(',')
            .filter(|p| !p.is_empty())
            .map(|p| {
                let mut chars = p.chars();
                let dir = Dir::from_letter(chars.next().unwrap()).unwrap();
                match chars.next() {
                    Some('\'') => Letter::primed(dir),
                    None => Letter::plain(dir),
                    Some(c) => panic!("bad letter suffix {c}"),
                }
            })
            .collect();
        DirSeq::new(letters)
    }

    fn run_config(
        cells: &[(i64, i64)],
        scheduler: &mut dyn crate::engine::Scheduler,
        seed: u64,
        max_rounds: Round,
    ) -> (RunReport, Vec<String>) {
        let config = Configuration::from_cells(cells.iter().map(|&(x, y)| Cell::new(x, y)));
        let setup = RunSetup {
            machine: &ConnectedMachine,
            config: &config,
            input: None,
            seed,
            max_rounds,
            digest: 0,
            halt_on_false_detection: true,
        };
        let mut sink = TextTrace::new();
        let mut auditors = auditors(&config);
        let report = run(&setup, scheduler, &mut auditors, &mut sink).unwrap();
        (report, sink.lines)
    }

    fn lockstep_run(cells: &[(i64, i64)], max_rounds: Round) -> (RunReport, Vec<String>) {
        run_config(cells, &mut Lockstep, 1, max_rounds)
    }

    #[test]
    fn mirror_reverses_and_primes() {
        assert_eq!(seq("N,E").mirror(), seq("E',N'"));
        assert_eq!(DirSeq::default().mirror(), DirSeq::default());
        for text in ["N", "N,E'", "S,S,W,N'", "E,E,E"] {
            let s = seq(text);
            assert_eq!(s.mirror().mirror(), s, "involution fails for {text}");
        }
    }

    #[test]
    fn displacement_counts_primes_as_opposite() {
        assert_eq!(seq("N,E',S").displacement(), (-1, 0));
        assert_eq!(seq("N,N'").displacement(), (0, 0));
        assert_eq!(DirSeq::default().displacement(), (0, 0));
    }

    #[test]
    fn completed_forms_are_walks_with_exact_retreats() {
        assert!(seq("N,N'").is_completed_form());
        assert!(seq("N,E,E',N'").is_completed_form());
        assert!(seq("S,S,W,W',S',S'").is_completed_form());
        assert!(!seq("N,N").is_completed_form());
        assert!(!seq("N,E'").is_completed_form());
        assert!(!seq("N,E,N',E'").is_completed_form());
        assert!(!DirSeq::default().is_completed_form());
    }

    #[test]
    fn first_look_seeds_point_back_at_the_neighbor() {
        let machine = ConnectedMachine;
        let start = machine.initial_state(None).unwrap();

        // Agent at (0,1) of a vertical domino: sole neighbor to the south.
        let mut obs = Observation::empty();
        obs.around[Dir::South.index()] = to_multiset(vec![start.clone()]);
        let upper = machine.transition(&start, &obs, None);
        assert_eq!(upper.black, Board::from([seq("N,N'")]));

        // Agent at (0,0): sole neighbor to the north.
        let mut obs = Observation::empty();
        obs.around[Dir::North.index()] = to_multiset(vec![start.clone()]);
        let lower = machine.transition(&start, &obs, None);
        assert_eq!(lower.black, Board::from([seq("S,S'")]));
    }

    #[test]
    fn rally_plans_walk_north_then_sideways() {
        let map: BTreeSet<(i64, i64)> = [(0, 0), (1, 1)].into();
        assert_eq!(rally_plan(&map), ((1, 1), vec![Dir::North, Dir::East]));

        let map: BTreeSet<(i64, i64)> = [(0, 0)].into();
        assert_eq!(rally_plan(&map), ((0, 0), vec![]));

        // An agent south-east of an L-shape's rally cell walks north, west.
        let map: BTreeSet<(i64, i64)> = [(-1, 0), (-1, 1), (0, 0)].into();
        assert_eq!(rally_plan(&map), ((-1, 1), vec![Dir::North, Dir::West]));
    }

    #[test]
    fn rally_point_picks_east_most_of_north_most_row() {
        let config =
            Configuration::from_cells([Cell::new(0, 0), Cell::new(1, 0), Cell::new(0, 1)]);
        assert_eq!(rally_point(&config), Some(Cell::new(0, 1)));
        assert_eq!(rally_point(&Configuration::new()), None);
    }

    #[test]
    fn singleton_gathers_immediately() {
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
    fn vertical_domino_gathers_at_the_upper_cell() {
        let (report, _) = lockstep_run(&[(0, 0), (0, 1)], 100);
        assert_eq!(
            report.outcome,
            Outcome::Gathered {
                round: 12,
                cell: Cell::new(0, 1)
            }
        );
    }

    #[test]
    fn three_path_gathers_at_the_top() {
        let (report, _) = lockstep_run(&[(0, 0), (0, 1), (0, 2)], 200);
        assert_eq!(
            report.outcome,
            Outcome::Gathered {
                round: 18,
                cell: Cell::new(0, 2)
            }
        );
    }

    #[test]
    fn l_shape_walker_goes_north_then_west() {
        let (report, lines) = lockstep_run(&[(0, 0), (0, 1), (1, 0)], 200);
        match report.outcome {
            Outcome::Gathered { cell, .. } => assert_eq!(cell, Cell::new(0, 1)),
            other => panic!("expected gathering, got {other:?}"),
        }
        // Ids sort by (y, x): (0,0) = 0, (1,0) = 1, (0,1) = 2. The agent at
        // (1,0) must route through (1,1) before heading west.
        let moves: Vec<&str> = lines
            .iter()
            .filter(|l| l.contains(" 1 COMMIT") && l.ends_with("(1,1)"))
            .map(String::as_str)
            .collect();
        assert!(
            moves.iter().any(|l| l.contains("(1,0) (1,1)")),
            "agent 1 never stepped north: {lines:#?}"
        );
    }

    #[test]
    fn square_block_gathers_with_truthful_maps() {
        let (report, _) = lockstep_run(&[(0, 0), (1, 0), (0, 1), (1, 1)], 400);
        match report.outcome {
            Outcome::Gathered { cell, .. } => assert_eq!(cell, Cell::new(1, 1)),
            other => panic!("expected gathering, got {other:?}"),
        }
    }

    #[test]
    fn random_schedules_gather_the_l_tromino() {
        for seed in 0..10 {
            let mut scheduler = RandomFair::default();
            let (report, _) = run_config(&[(0, 0), (0, 1), (1, 1)], &mut scheduler, seed, 100_000);
            match report.outcome {
                Outcome::Gathered { cell, .. } => assert_eq!(cell, Cell::new(1, 1)),
                other => panic!("seed {seed}: expected gathering, got {other:?}"),
            }
        }
    }

    #[test]
    fn disconnected_pair_false_detects_honestly() {
        let (report, _) = lockstep_run(&[(0, 0), (0, 2)], 1_000);
        assert_eq!(
            report.outcome,
            Outcome::FalseDetection { round: 2, agent: 0 }
        );
        assert_eq!(report.false_detection_witness, Some(1));
    }

    #[test]
    fn input_is_rejected() {
        assert_eq!(
            ConnectedMachine.initial_state(Some("11")).unwrap_err(),
            MachineError::UnexpectedInput("connected")
        );
    }

    #[test]
    fn board_auditor_rejects_unretreated_erasures() {
        let mut before = ConnectedState::default();
        before.black.insert(seq("N"));
        let mut after = ConnectedState::default();
        after.black.insert(seq("N,E"));

        let commits = vec![CommitRecord {
            agent: 0,
            from: Cell::new(0, 0),
            to: Cell::new(0, 0),
            state_before: before,
            state_after: after,
        }];
        let positions = vec![Cell::new(0, 0)];
        let states = vec![ConnectedState::default()];
        let starts = positions.clone();
        let occupied: BTreeMap<Cell, u32> = [(Cell::new(0, 0), 1)].into();
        let view = RoundView {
            round: 2,
            positions: &positions,
            states: &states,
            starts: &starts,
            commits: &commits,
            looked: &[],
            occupied_before: &occupied,
            occupied_after: &occupied,
        };
        let err = BoardAuditor.check_round(&view).unwrap_err();
        assert!(err.contains("without a retreat extension"), "{err}");
    }

    #[test]
    fn replaying_a_trace_reproduces_it() {
        let (_, lines) = lockstep_run(&[(0, 0), (0, 1), (1, 1)], 200);
        let text = lines.join("\n") + "\n";
        let config =
            Configuration::from_cells([Cell::new(0, 0), Cell::new(0, 1), Cell::new(1, 1)]);
        let setup = RunSetup {
            machine: &ConnectedMachine,
            config: &config,
            input: None,
            seed: 1,
            max_rounds: 200,
            digest: 0,
            halt_on_false_detection: true,
        };
        crate::engine::replay(&setup, &text).unwrap();
    }
}
