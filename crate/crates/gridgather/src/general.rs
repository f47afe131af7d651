//! Gathering for agents that know only how many of them there are: randomized
//! search, pairwise contests ordered by move history, capture bookkeeping, and
//! a final guided collection once one agent has accounted for everyone else.
//!
//! Each agent drags its entire committed move history along as its
//! *characteristic*. Whenever two searching agents come within one cell of
//! each other they compare characteristics; the smaller one parks itself and
//! the larger one records a path to it. An agent whose records cover all
//! `n - 1` others walks every recorded path, hands each parked agent the way
//! home (the mirror of its own history), retraces its history to its start
//! cell, and everyone declares completion there.

use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::rc::Rc;

use crate::engine::{Auditor, RoundView};
use crate::grid::{Cell, Dir};
use crate::machine::{
    parse_binary_count, AgentState, Machine, MachineError, Move, Observation,
};

// ---------------------------------------------------------------------------
// Persistent move words
// ---------------------------------------------------------------------------

/// One link of a persistent move word. Words are shared between cloned states,
/// so extending one is O(1) and never touches its other owners.
struct Node {
    mv: Dir,
    next: Option<Rc<Node>>,
}

/// Iterates the moves of a chain from its head link outward.
struct Links<'a>(Option<&'a Node>);

impl Iterator for Links<'_> {
    type Item = Dir;

    fn next(&mut self) -> Option<Dir> {
        let node = self.0?;
        self.0 = node.next.as_deref();
        Some(node.mv)
    }
}

fn links(head: &Option<Rc<Node>>) -> Links<'_> {
    Links(head.as_deref())
}

/// Structural equality with a shortcut: once the two chains share a link they
/// share everything behind it.
fn chains_equal(a: &Option<Rc<Node>>, b: &Option<Rc<Node>>) -> bool {
    let mut x = a;
    let mut y = b;
    loop {
        match (x, y) {
            (None, None) => return true,
            (Some(p), Some(q)) => {
                if Rc::ptr_eq(p, q) {
                    return true;
                }
                if p.mv != q.mv {
                    return false;
                }
                x = &p.next;
                y = &q.next;
            }
            _ => return false,
        }
    }
}

/// Unlink a chain iteratively: the default recursive drop would overflow the
/// stack on the long unique chains a finished walk leaves behind. Stops at
/// the first shared link, whose remaining owner will continue from there.
fn unlink(head: &mut Option<Rc<Node>>) {
    let mut cursor = head.take();
    while let Some(rc) = cursor {
        match Rc::try_unwrap(rc) {
            Ok(mut node) => cursor = node.next.take(),
            Err(_) => break,
        }
    }
}

fn word_string(moves: impl Iterator<Item = Dir>) -> String {
    let text: String = moves.map(Dir::letter).collect();
    if text.is_empty() {
        "-".to_string()
    } else {
        text
    }
}

/// An agent's committed move history, newest move first so that extending by
/// one move is O(1). The displacement of the whole word is cached, which keeps
/// "where am I relative to my start" checks constant-time.
#[derive(Clone)]
pub struct History {
    head: Option<Rc<Node>>,
    len: u32,
    disp: (i64, i64),
}

impl History {
    pub fn new() -> Self {
        History { head: None, len: 0, disp: (0, 0) }
    }

    pub fn push(&self, mv: Dir) -> Self {
        let (dx, dy) = mv.delta();
        History {
            head: Some(Rc::new(Node { mv, next: self.head.clone() })),
            len: self.len + 1,
            disp: (self.disp.0 + dx, self.disp.1 + dy),
        }
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn displacement(&self) -> (i64, i64) {
        self.disp
    }

    /// Most recent move, if any.
    pub fn last(&self) -> Option<Dir> {
        self.head.as_ref().map(|n| n.mv)
    }

    /// The word in the order it was walked.
    pub fn forward(&self) -> Vec<Dir> {
        let mut out: Vec<Dir> = links(&self.head).collect();
        out.reverse();
        out
    }

    /// The moves that retrace this word back to where it began: each move
    /// undone, newest first.
    pub fn mirror_moves(&self) -> VecDeque<Dir> {
        links(&self.head).map(Dir::opposite).collect()
    }

    /// First-walked-move-first lexicographic order (N < E < S < W, a prefix
    /// before its extensions). This is the order contests are decided by.
    pub fn seniority(&self, other: &History) -> Ordering {
        self.forward().cmp(&other.forward())
    }
}

impl Default for History {
    fn default() -> Self {
        History::new()
    }
}

impl Drop for History {
    fn drop(&mut self) {
        unlink(&mut self.head);
    }
}

impl PartialEq for History {
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len && self.disp == other.disp && chains_equal(&self.head, &other.head)
    }
}

impl Eq for History {}

/// Any total order works for multiset bookkeeping; comparing cached fields
/// first keeps the common all-different case cheap.
impl Ord for History {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len
            .cmp(&other.len)
            .then_with(|| self.disp.cmp(&other.disp))
            .then_with(|| links(&self.head).cmp(links(&other.head)))
    }
}

impl PartialOrd for History {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Hash for History {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.len.hash(state);
        self.disp.hash(state);
    }
}

impl fmt::Debug for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "History({})", word_string(self.forward().into_iter()))
    }
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", word_string(self.forward().into_iter()))
    }
}

/// A recorded route from its holder's current cell to a parked agent, first
/// move at the head. When the holder steps `m`, prepending `opposite(m)`
/// re-roots the route in O(1), so a full bag survives any walk unchanged.
#[derive(Clone)]
pub struct Route {
    head: Option<Rc<Node>>,
    len: u32,
    disp: (i64, i64),
}

impl Route {
    pub fn new() -> Self {
        Route { head: None, len: 0, disp: (0, 0) }
    }

    pub fn prepended(&self, mv: Dir) -> Self {
        let (dx, dy) = mv.delta();
        Route {
            head: Some(Rc::new(Node { mv, next: self.head.clone() })),
            len: self.len + 1,
            disp: (self.disp.0 + dx, self.disp.1 + dy),
        }
    }

    pub fn from_moves(moves: &[Dir]) -> Self {
        let mut route = Route::new();
        for &mv in moves.iter().rev() {
            route = route.prepended(mv);
        }
        route
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn displacement(&self) -> (i64, i64) {
        self.disp
    }

    /// The route in walking order.
    pub fn forward(&self) -> Vec<Dir> {
        links(&self.head).collect()
    }
}

impl Default for Route {
    fn default() -> Self {
        Route::new()
    }
}

impl Drop for Route {
    fn drop(&mut self) {
        unlink(&mut self.head);
    }
}

impl PartialEq for Route {
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len && self.disp == other.disp && chains_equal(&self.head, &other.head)
    }
}

impl Eq for Route {}

/// Walking-order lexicographic: N < E < S < W, prefix before extension. This
/// is also the order itinerary legs are visited in.
impl Ord for Route {
    fn cmp(&self, other: &Self) -> Ordering {
        let mut x = links(&self.head);
        let mut y = links(&other.head);
        loop {
            match (x.next(), y.next()) {
                (None, None) => return Ordering::Equal,
                (None, Some(_)) => return Ordering::Less,
                (Some(_), None) => return Ordering::Greater,
                (Some(a), Some(b)) => match a.cmp(&b) {
                    Ordering::Equal => continue,
                    done => return done,
                },
            }
        }
    }
}

impl PartialOrd for Route {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Hash for Route {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.len.hash(state);
        self.disp.hash(state);
    }
}

impl fmt::Debug for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Route({})", word_string(self.forward().into_iter()))
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", word_string(self.forward().into_iter()))
    }
}

// ---------------------------------------------------------------------------
// Relative positions
// ---------------------------------------------------------------------------

/// Where a visible agent sits relative to the observer.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Spot {
    Here,
    At(Dir),
}

impl Spot {
    /// The observer's spot as seen from an agent sitting at `self`.
    pub fn opposite(self) -> Spot {
        match self {
            Spot::Here => Spot::Here,
            Spot::At(d) => Spot::At(d.opposite()),
        }
    }

    fn letter(self) -> char {
        match self {
            Spot::Here => 'H',
            Spot::At(d) => d.letter(),
        }
    }

    /// Tie-break rank used when picking among equally senior rivals.
    fn rank(self) -> u8 {
        match self {
            Spot::Here => 0,
            Spot::At(d) => 1 + d.index() as u8,
        }
    }
}

// ---------------------------------------------------------------------------
// Agent state
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Phase {
    /// Searching for the others by lazy random walk.
    Approach,
    /// Saw a senior rival; standing still to confirm before parking.
    Contesting,
    /// Parked: inert until its captor hands over the way home.
    Waiting,
    /// Standing over parked juniors so they can see who captured them.
    Claiming,
    /// Holds a route to every other agent; walking the collection itinerary.
    Guiding,
    /// Retracing a mirror word to the gathering cell.
    FinalWalk,
    /// Done: declared that everyone is here.
    Omega,
}

impl Phase {
    fn letter(self) -> char {
        match self {
            Phase::Approach => 'a',
            Phase::Contesting => 't',
            Phase::Waiting => 'w',
            Phase::Claiming => 'c',
            Phase::Guiding => 'g',
            Phase::FinalWalk => 'f',
            Phase::Omega => 'z',
        }
    }

    fn in_search(self) -> bool {
        matches!(self, Phase::Approach | Phase::Contesting | Phase::Claiming)
    }
}

/// Leg position within the collection itinerary.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Stage {
    Outbound,
    Deliver,
    Inbound,
}

impl Stage {
    fn letter(self) -> char {
        match self {
            Stage::Outbound => 'o',
            Stage::Deliver => 'd',
            Stage::Inbound => 'i',
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Role {
    Undecided,
    Loser,
    Champion,
}

impl Role {
    fn letter(self) -> char {
        match self {
            Role::Undecided => 'u',
            Role::Loser => 'l',
            Role::Champion => 'c',
        }
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct GeneralState {
    n: u64,
    phase: Phase,
    role: Role,
    characteristic: History,
    /// Routes to every parked agent this one has captured, sorted. Stale once
    /// the holder itself parks; dropped when it turns for home.
    bag: Vec<Route>,
    /// Buffered random-walk bits: empty, `[1]`, or `[1, b]`.
    bits: Vec<bool>,
    /// For a parked or confirming agent: where its captor stood and what the
    /// captor's characteristic read.
    key: Option<(Spot, History)>,
    /// Set once the parked agent has seen its captor acknowledge it.
    claimed: bool,
    /// Captures already booked since the last actual move, so a stationary
    /// captor does not book the same parked agent twice.
    collected: Vec<(Spot, History)>,
    /// Remaining itinerary legs after the current one.
    legs: VecDeque<Vec<Dir>>,
    current_leg: Vec<Dir>,
    stage: Stage,
    /// Moves still to walk for the current leg or the final retrace.
    plan: VecDeque<Dir>,
    /// The move this transition commits, if any.
    pending: Option<Dir>,
}

impl GeneralState {
    fn fresh(n: u64) -> Self {
        GeneralState {
            n,
            phase: Phase::Approach,
            role: Role::Undecided,
            characteristic: History::new(),
            bag: Vec::new(),
            bits: Vec::new(),
            key: None,
            claimed: false,
            collected: Vec::new(),
            legs: VecDeque::new(),
            current_leg: Vec::new(),
            stage: Stage::Outbound,
            plan: VecDeque::new(),
            pending: None,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn agent_count(&self) -> u64 {
        self.n
    }

    pub fn characteristic(&self) -> &History {
        &self.characteristic
    }

    pub fn bag(&self) -> &[Route] {
        &self.bag
    }

    /// Finished walking and declared or about to: counts toward everyone
    /// else's completion check.
    fn settled(&self) -> bool {
        self.phase == Phase::Omega
            || (self.phase == Phase::FinalWalk && self.plan.is_empty() && self.pending.is_none())
    }
}

impl AgentState for GeneralState {
    fn is_terminal(&self) -> bool {
        self.phase == Phase::Omega
    }

    fn canonical(&self) -> String {
        let word = |moves: &dyn Fn() -> String| moves();
        let _ = word;
        let plan: String = word_string(self.plan.iter().copied());
        let cur = word_string(self.current_leg.iter().copied());
        let legs = if self.legs.is_empty() {
            "-".to_string()
        } else {
            self.legs
                .iter()
                .map(|l| word_string(l.iter().copied()))
                .collect::<Vec<_>>()
                .join("|")
        };
        let bag = if self.bag.is_empty() {
            "-".to_string()
        } else {
            self.bag.iter().map(Route::to_string).collect::<Vec<_>>().join("|")
        };
        let key = match &self.key {
            None => "-".to_string(),
            Some((spot, chr)) => format!("{}@{}", spot.letter(), chr),
        };
        let collected = if self.collected.is_empty() {
            "-".to_string()
        } else {
            self.collected
                .iter()
                .map(|(spot, chr)| format!("{}@{}", spot.letter(), chr))
                .collect::<Vec<_>>()
                .join("|")
        };
        let bits: String = if self.bits.is_empty() {
            "-".to_string()
        } else {
            self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
        };
        format!(
            "gg(ph:{};rl:{};n:{};c:{};b:{};k:{};cl:{};q:{};st:{};cur:{};lg:{};p:{};m:{};col:{})",
            self.phase.letter(),
            self.role.letter(),
            self.n,
            self.characteristic,
            bag,
            key,
            u8::from(self.claimed),
            bits,
            self.stage.letter(),
            cur,
            legs,
            plan,
            self.pending.map(Dir::letter).unwrap_or('-'),
            collected,
        )
    }
}

// ---------------------------------------------------------------------------
// Contest order
// ---------------------------------------------------------------------------

/// Does an agent with characteristic `a`, standing at `spot_of_a` relative to
/// one with characteristic `b`, outrank it? Ties between distinct words never
/// happen; equal words are ordered by position, with North and East winning.
fn outranks(a: &History, spot_of_a: Spot, b: &History) -> bool {
    match a.seniority(b) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match spot_of_a {
            Spot::Here => panic!(
                "two agents with identical move histories share a cell; \
                 distinct starting cells make this impossible"
            ),
            Spot::At(d) => matches!(d, Dir::North | Dir::East),
        },
    }
}

/// Every visible (spot, count, state) triple.
fn visible<'a>(obs: &'a Observation<GeneralState>) -> Vec<(Spot, u32, &'a GeneralState)> {
    let mut out = Vec::new();
    for (count, state) in &obs.here {
        out.push((Spot::Here, *count, state));
    }
    for d in Dir::ALL {
        for (count, state) in obs.dir(d) {
            out.push((Spot::At(d), *count, state));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Transition pieces
// ---------------------------------------------------------------------------

/// Commit a step: the characteristic grows by the move, every held route is
/// re-rooted through its inverse, and the capture ledger resets.
fn step(s: &mut GeneralState, mv: Dir) {
    s.pending = Some(mv);
    s.characteristic = s.characteristic.push(mv);
    let back = mv.opposite();
    for route in &mut s.bag {
        *route = route.prepended(back);
    }
    s.collected.clear();
}

/// One decision of the lazy random walk: the first bit chooses between
/// staying put and moving; a move spends two more bits on the direction.
/// Bits arrive one per look, so a decision spans up to three looks.
fn random_step(s: &mut GeneralState, bit: bool) {
    s.bits.push(bit);
    match s.bits.as_slice() {
        [false] => s.bits.clear(),
        [true] | [true, _] => {}
        [true, hi, lo] => {
            let dir = match (hi, lo) {
                (false, false) => Dir::North,
                (false, true) => Dir::East,
                (true, false) => Dir::South,
                (true, true) => Dir::West,
            };
            s.bits.clear();
            step(s, dir);
        }
        _ => unreachable!("the bit buffer never holds more than three bits"),
    }
}

/// Book one parked agent: a route to it (empty or one step) plus every route
/// it holds, re-rooted through the connecting step.
fn absorb(s: &mut GeneralState, spot: Spot, parked: &GeneralState) {
    let connector = match spot {
        Spot::Here => None,
        Spot::At(d) => Some(d),
    };
    let mut booked = vec![Route::new()];
    for route in &parked.bag {
        booked.push(route.clone());
    }
    for route in &mut booked {
        if let Some(d) = connector {
            *route = route.prepended(d);
        }
    }
    s.bag.extend(booked);
    s.bag.sort();
}

/// Flip to the collection itinerary: one leg per distinct recorded route, in
/// walking-order; with nobody to collect, turn straight for home.
fn become_champion(s: &mut GeneralState) {
    s.role = Role::Champion;
    s.key = None;
    s.claimed = false;
    s.collected.clear();
    let mut legs: Vec<Vec<Dir>> = s.bag.iter().map(Route::forward).collect();
    legs.sort();
    legs.dedup();
    s.legs = legs.into();
    if let Some(first) = s.legs.pop_front() {
        s.phase = Phase::Guiding;
        s.current_leg = first.clone();
        s.stage = Stage::Outbound;
        s.plan = first.into();
    } else {
        s.phase = Phase::FinalWalk;
        s.plan = s.characteristic.mirror_moves();
    }
}

/// Move to the next itinerary leg, or turn for home when none remain.
fn advance_leg(s: &mut GeneralState) {
    if let Some(next) = s.legs.pop_front() {
        s.current_leg = next.clone();
        s.stage = Stage::Outbound;
        s.plan = next.into();
    } else {
        s.phase = Phase::FinalWalk;
        s.current_leg.clear();
        s.plan = s.characteristic.mirror_moves();
        debug_assert!(s.bag.is_empty(), "itinerary ended with undelivered routes");
    }
}

fn search_look(s: &mut GeneralState, obs: &Observation<GeneralState>, bit: bool) {
    let seen = visible(obs);

    // Capture duties come first: agents parked against this one's
    // characteristic are acknowledged and booked before anything else, even
    // while a senior rival stands by.
    let mut awaiting_acknowledgement = false;
    for (spot, count, other) in &seen {
        if other.phase != Phase::Waiting {
            continue;
        }
        let Some((key_spot, key_word)) = &other.key else { continue };
        if *key_spot != spot.opposite() || *key_word != s.characteristic {
            continue;
        }
        if !other.claimed {
            awaiting_acknowledgement = true;
            continue;
        }
        let marker = (*spot, other.characteristic.clone());
        if s.collected.contains(&marker) {
            continue;
        }
        for _ in 0..*count {
            absorb(s, *spot, other);
        }
        s.collected.push(marker);
        s.collected.sort();
    }

    if s.bag.len() as u64 == s.n - 1 {
        become_champion(s);
        return;
    }

    if awaiting_acknowledgement {
        s.phase = Phase::Claiming;
        s.key = None;
        return;
    }
    if s.phase == Phase::Claiming {
        s.phase = Phase::Approach;
    }

    // Rivalry: any senior searcher in sight pins this agent down.
    let rivals: Vec<(Spot, &GeneralState)> = seen
        .iter()
        .filter(|(_, _, other)| other.phase.in_search())
        .map(|(spot, _, other)| (*spot, *other))
        .collect();
    let seniors: Vec<&(Spot, &GeneralState)> = rivals
        .iter()
        .filter(|(spot, other)| outranks(&other.characteristic, *spot, &s.characteristic))
        .collect();

    if let Some(best) = seniors.iter().max_by(|a, b| {
        a.1.characteristic
            .seniority(&b.1.characteristic)
            .then(a.0.rank().cmp(&b.0.rank()))
    }) {
        let aim = (best.0, best.1.characteristic.clone());
        match s.phase {
            Phase::Approach => {
                s.phase = Phase::Contesting;
                s.key = Some(aim);
            }
            Phase::Contesting => {
                let held = s.key.as_ref().expect("a confirming agent is always aimed");
                let held_still_senior = seniors
                    .iter()
                    .any(|(spot, other)| (*spot, &other.characteristic) == (held.0, &held.1));
                if held_still_senior && *held == aim {
                    // Two looks in a row at the same standing senior: park.
                    s.phase = Phase::Waiting;
                    s.role = Role::Loser;
                    s.claimed = false;
                } else {
                    s.key = Some(aim);
                }
            }
            _ => unreachable!("capture duties were handled above"),
        }
        return;
    }
    if s.phase == Phase::Contesting {
        s.phase = Phase::Approach;
        s.key = None;
    }

    // A senior stands still while any junior it has pinned is in sight, so
    // the junior's confirmation look finds it in the same place.
    let pins_junior = rivals.iter().any(|(spot, other)| {
        outranks(&s.characteristic, spot.opposite(), &other.characteristic)
    });
    if pins_junior {
        return;
    }

    random_step(s, bit);
}

fn waiting_look(s: &mut GeneralState, obs: &Observation<GeneralState>) {
    // A guide standing here in its hand-over stance supplies the way home:
    // the mirror of its history, read off its visible state.
    let guide = obs
        .here
        .iter()
        .find(|(_, other)| other.phase == Phase::Guiding && other.stage == Stage::Deliver);
    if let Some((_, guide)) = guide {
        s.phase = Phase::FinalWalk;
        s.plan = guide.characteristic.mirror_moves();
        s.bag.clear();
        s.key = None;
        s.claimed = false;
        if let Some(mv) = s.plan.pop_front() {
            step(s, mv);
        }
        return;
    }

    if s.claimed {
        return;
    }

    let (spot, word) = s.key.clone().expect("a parked agent is always keyed");
    let at_key: Vec<&GeneralState> = match spot {
        Spot::Here => obs.here.iter().map(|(_, t)| t).collect(),
        Spot::At(d) => obs.dir(d).iter().map(|(_, t)| t).collect(),
    };

    if at_key
        .iter()
        .any(|t| t.phase == Phase::Claiming && t.characteristic == word)
    {
        s.claimed = true;
        return;
    }

    // The captor must still be standing there as a live captor; anything else
    // (gone, moved on, or parked itself) orphans this agent, which rejoins
    // the search rather than wait forever.
    let captor_live = at_key.iter().any(|t| {
        matches!(t.phase, Phase::Approach | Phase::Claiming) && t.characteristic == word
    });
    if !captor_live {
        s.phase = Phase::Approach;
        s.role = Role::Undecided;
        s.key = None;
    }
}

fn guiding_look(s: &mut GeneralState, obs: &Observation<GeneralState>) {
    match s.stage {
        Stage::Outbound => {
            if let Some(mv) = s.plan.pop_front() {
                if s.plan.is_empty() {
                    s.stage = Stage::Deliver;
                }
                step(s, mv);
            } else {
                // Zero-length leg: the parked agent shares this cell.
                s.stage = Stage::Deliver;
            }
        }
        Stage::Deliver => {
            let undelivered = obs
                .here
                .iter()
                .any(|(_, other)| other.phase == Phase::Waiting && other.claimed);
            if undelivered {
                return;
            }
            // Everyone here has turned for home; their routes now loop back
            // to this very cell and can be dropped.
            s.bag.retain(|route| route.displacement() != (0, 0));
            s.stage = Stage::Inbound;
            s.plan = s.current_leg.iter().rev().map(|d| d.opposite()).collect();
            if let Some(mv) = s.plan.pop_front() {
                step(s, mv);
            } else {
                advance_leg(s);
            }
        }
        Stage::Inbound => {
            if let Some(mv) = s.plan.pop_front() {
                step(s, mv);
            } else {
                advance_leg(s);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// The machine
// ---------------------------------------------------------------------------

/// Gathering from arbitrary starting cells, given the agent count as a
/// big-endian binary input. Randomized; the characteristic grows without
/// bound, so the state space is infinite.
pub struct GeneralMachine;

impl Machine for GeneralMachine {
    type State = GeneralState;

    fn name(&self) -> &'static str {
        "general"
    }

    fn randomized(&self) -> bool {
        true
    }

    fn finite_state(&self) -> bool {
        false
    }

    fn takes_input(&self) -> bool {
        true
    }

    fn initial_state(&self, input: Option<&str>) -> Result<GeneralState, MachineError> {
        let input = input.ok_or(MachineError::MissingInput("general"))?;
        let n = parse_binary_count(input)?;
        Ok(GeneralState::fresh(n))
    }

    fn transition(
        &self,
        state: &GeneralState,
        obs: &Observation<GeneralState>,
        bit: Option<bool>,
    ) -> GeneralState {
        let bit = bit.expect("a randomized machine receives one bit per look");
        let mut s = state.clone();
        s.pending = None;
        match s.phase {
            Phase::Omega => return s,
            Phase::FinalWalk => {
                if let Some(mv) = s.plan.pop_front() {
                    step(&mut s, mv);
                }
            }
            Phase::Waiting => waiting_look(&mut s, obs),
            Phase::Guiding => guiding_look(&mut s, obs),
            Phase::Approach | Phase::Contesting | Phase::Claiming => {
                search_look(&mut s, obs, bit)
            }
        }

        // Completion: done walking and every other agent is visibly done
        // walking in this very cell.
        if s.phase == Phase::FinalWalk && s.plan.is_empty() && s.pending.is_none() {
            let settled: u64 = obs
                .here
                .iter()
                .filter(|(_, other)| other.settled())
                .map(|(count, _)| u64::from(*count))
                .sum();
            if settled == s.n - 1 {
                s.phase = Phase::Omega;
            }
        }
        s
    }

    fn action(&self, state: &GeneralState) -> Move {
        match state.pending {
            Some(d) => Move::Go(d),
            None => Move::Stay,
        }
    }
}

// ---------------------------------------------------------------------------
// Auditors
// ---------------------------------------------------------------------------

/// Every agent's characteristic must replay to its actual cell, grow by
/// exactly the move taken, and stay fixed on stationary commits.
struct CharacteristicAuditor;

impl Auditor<GeneralState> for CharacteristicAuditor {
    fn name(&self) -> &'static str {
        "characteristic"
    }

    fn check_round(&mut self, view: &RoundView<'_, GeneralState>) -> Result<(), String> {
        for (agent, state) in view.states.iter().enumerate() {
            let (dx, dy) = state.characteristic.displacement();
            let expect = view.starts[agent].offset(dx, dy);
            if expect != view.positions[agent] {
                return Err(format!(
                    "agent {agent}: characteristic replays to {expect} but it sits at {}",
                    view.positions[agent]
                ));
            }
        }
        for rec in view.commits {
            let before = rec.state_before.characteristic.len();
            let after = rec.state_after.characteristic.len();
            if rec.from == rec.to {
                if after != before {
                    return Err(format!(
                        "agent {}: stationary commit changed the characteristic",
                        rec.agent
                    ));
                }
                if rec.state_after.pending.is_some() {
                    return Err(format!(
                        "agent {}: stationary commit left a move pending",
                        rec.agent
                    ));
                }
            } else {
                if after != before + 1 {
                    return Err(format!(
                        "agent {}: move commit grew the characteristic by {}",
                        rec.agent,
                        after as i64 - before as i64
                    ));
                }
                let walked = Dir::ALL
                    .into_iter()
                    .find(|d| rec.from.neighbor(*d) == rec.to)
                    .ok_or_else(|| format!("agent {}: non-adjacent commit", rec.agent))?;
                if rec.state_after.characteristic.last() != Some(walked) {
                    return Err(format!(
                        "agent {}: characteristic does not record the move taken",
                        rec.agent
                    ));
                }
                if rec.state_after.pending != Some(walked) {
                    return Err(format!(
                        "agent {}: committed move disagrees with the pending field",
                        rec.agent
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Routes must always land on cells that hold parked agents, never more
/// routes into a cell than agents parked there, and at most one champion.
struct CaptureAuditor;

impl Auditor<GeneralState> for CaptureAuditor {
    fn name(&self) -> &'static str {
        "captures"
    }

    fn check_round(&mut self, view: &RoundView<'_, GeneralState>) -> Result<(), String> {
        let mut parked: BTreeMap<Cell, u32> = BTreeMap::new();
        for (agent, state) in view.states.iter().enumerate() {
            if state.phase == Phase::Waiting {
                *parked.entry(view.positions[agent]).or_insert(0) += 1;
            }
        }
        let mut routed: BTreeMap<Cell, u32> = BTreeMap::new();
        for (agent, state) in view.states.iter().enumerate() {
            if state.phase == Phase::Waiting {
                continue; // a parked holder's records are stale copies
            }
            let handing_over = state.phase == Phase::Guiding && state.stage == Stage::Deliver;
            for route in &state.bag {
                let (dx, dy) = route.displacement();
                // During a hand-over, routes looping back to the guide's own
                // cell cover agents that may already have left; the guide
                // drops them at its next look.
                if handing_over && (dx, dy) == (0, 0) {
                    continue;
                }
                *routed.entry(view.positions[agent].offset(dx, dy)).or_insert(0) += 1;
            }
        }
        for (cell, routes) in &routed {
            let waiting = parked.get(cell).copied().unwrap_or(0);
            if *routes > waiting {
                return Err(format!(
                    "round {}: {routes} routes land on {cell} but only {waiting} agents are parked there",
                    view.round
                ));
            }
        }
        let champions = view
            .states
            .iter()
            .filter(|s| s.role == Role::Champion)
            .count();
        if champions > 1 {
            return Err(format!("round {}: {champions} champions", view.round));
        }
        for (agent, state) in view.states.iter().enumerate() {
            let ok = match state.role {
                Role::Champion => {
                    matches!(state.phase, Phase::Guiding | Phase::FinalWalk | Phase::Omega)
                }
                Role::Loser => {
                    matches!(state.phase, Phase::Waiting | Phase::FinalWalk | Phase::Omega)
                }
                Role::Undecided => state.phase.in_search(),
            };
            if !ok {
                return Err(format!(
                    "agent {agent}: role {:?} disagrees with phase {:?}",
                    state.role, state.phase
                ));
            }
        }
        Ok(())
    }
}

/// The search never regains members: once an agent turns for home it stays
/// out of the approach family for good.
struct ProgressAuditor {
    prev: Option<usize>,
}

impl Auditor<GeneralState> for ProgressAuditor {
    fn name(&self) -> &'static str {
        "progress"
    }

    fn check_round(&mut self, view: &RoundView<'_, GeneralState>) -> Result<(), String> {
        let searching = view
            .states
            .iter()
            .filter(|s| s.phase.in_search() || s.phase == Phase::Waiting)
            .count();
        if let Some(prev) = self.prev {
            if searching > prev {
                return Err(format!(
                    "round {}: search population grew from {prev} to {searching}",
                    view.round
                ));
            }
        }
        self.prev = Some(searching);
        Ok(())
    }
}

/// Only walkers move: any commit that changes cells must land in a walking
/// phase, and a parked agent stirs only to take its delivery.
struct MovementAuditor;

impl Auditor<GeneralState> for MovementAuditor {
    fn name(&self) -> &'static str {
        "movement"
    }

    fn check_round(&mut self, view: &RoundView<'_, GeneralState>) -> Result<(), String> {
        for rec in view.commits {
            if rec.from == rec.to {
                continue;
            }
            let after = rec.state_after.phase;
            if !matches!(after, Phase::Approach | Phase::Guiding | Phase::FinalWalk) {
                return Err(format!(
                    "agent {}: moved while entering phase {after:?}",
                    rec.agent
                ));
            }
            if rec.state_before.phase == Phase::Waiting && after != Phase::FinalWalk {
                return Err(format!(
                    "agent {}: a parked agent moved without taking a delivery",
                    rec.agent
                ));
            }
        }
        Ok(())
    }
}

/// The full audit suite for this machine.
pub fn auditors() -> Vec<Box<dyn Auditor<GeneralState>>> {
    vec![
        Box::new(CharacteristicAuditor),
        Box::new(CaptureAuditor),
        Box::new(ProgressAuditor { prev: None }),
        Box::new(MovementAuditor),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{
        run, Lockstep, Outcome, RandomFair, Round, RunReport, RunSetup, TextTrace,
    };
    use crate::grid::Configuration;
    use crate::machine::to_multiset;

    fn hist(moves: &[Dir]) -> History {
        let mut h = History::new();
        for &m in moves {
            h = h.push(m);
        }
        h
    }

    fn run_general(
        cells: &[(i64, i64)],
        input: &str,
        scheduler: &mut dyn crate::engine::Scheduler,
        seed: u64,
        max_rounds: Round,
    ) -> RunReport {
        let config = Configuration::from_cells(cells.iter().map(|&(x, y)| Cell::new(x, y)));
        let setup = RunSetup {
            machine: &GeneralMachine,
            config: &config,
            input: Some(input),
            seed,
            max_rounds,
            digest: 0,
            halt_on_false_detection: true,
        };
        let mut audit = auditors();
        run(&setup, scheduler, &mut audit, &mut crate::engine::NullSink).unwrap()
    }

    #[test]
    fn history_records_and_retraces() {
        let h = hist(&[Dir::North, Dir::East]);
        assert_eq!(h.forward(), vec![Dir::North, Dir::East]);
        assert_eq!(h.displacement(), (1, 1));
        assert_eq!(h.len(), 2);
        assert_eq!(h.last(), Some(Dir::East));
        assert_eq!(
            h.mirror_moves(),
            VecDeque::from(vec![Dir::West, Dir::South])
        );
        assert_eq!(History::new().mirror_moves(), VecDeque::new());
        assert_eq!(h.to_string(), "NE");
        assert_eq!(History::new().to_string(), "-");
    }

    #[test]
    fn seniority_is_walk_order_with_prefixes_first() {
        let e = History::new();
        let n = hist(&[Dir::North]);
        let nn = hist(&[Dir::North, Dir::North]);
        let ne = hist(&[Dir::North, Dir::East]);
        let s = hist(&[Dir::South]);
        assert_eq!(e.seniority(&n), Ordering::Less);
        assert_eq!(n.seniority(&nn), Ordering::Less);
        assert_eq!(ne.seniority(&nn), Ordering::Greater);
        assert_eq!(s.seniority(&ne), Ordering::Greater);
        assert_eq!(nn.seniority(&hist(&[Dir::North, Dir::North])), Ordering::Equal);
    }

    #[test]
    fn routes_re_root_without_losing_their_target() {
        let r = Route::from_moves(&[Dir::North]);
        assert_eq!(r.forward(), vec![Dir::North]);
        assert_eq!(r.displacement(), (0, 1));
        // Holder steps East: the route grows a westward first step and the
        // target cell, in absolute terms, stays fixed.
        let moved = r.prepended(Dir::East.opposite());
        assert_eq!(moved.forward(), vec![Dir::West, Dir::North]);
        assert_eq!(moved.displacement(), (-1, 1));
    }

    #[test]
    fn route_order_is_walk_order() {
        let n = Route::from_moves(&[Dir::North]);
        let e = Route::from_moves(&[Dir::East]);
        let nn = Route::from_moves(&[Dir::North, Dir::North]);
        assert!(n < e);
        assert!(n < nn);
        assert!(Route::new() < n);
    }

    #[test]
    fn contests_prefer_longer_words_then_north_east() {
        let ne = hist(&[Dir::North, Dir::East]);
        let nn = hist(&[Dir::North, Dir::North]);
        assert!(outranks(&ne, Spot::At(Dir::South), &nn));
        assert!(!outranks(&nn, Spot::At(Dir::South), &ne));
        // Equal words: position decides, North/East outrank.
        let a = hist(&[Dir::East]);
        let b = hist(&[Dir::East]);
        assert!(outranks(&a, Spot::At(Dir::North), &b));
        assert!(outranks(&a, Spot::At(Dir::East), &b));
        assert!(!outranks(&a, Spot::At(Dir::South), &b));
        assert!(!outranks(&a, Spot::At(Dir::West), &b));
    }

    #[test]
    #[should_panic(expected = "identical move histories")]
    fn equal_words_in_one_cell_are_rejected() {
        let a = hist(&[Dir::East]);
        let b = hist(&[Dir::East]);
        outranks(&a, Spot::Here, &b);
    }

    #[test]
    fn input_is_required_and_binary() {
        let m = GeneralMachine;
        assert!(m.takes_input());
        assert!(m.randomized());
        assert!(!m.finite_state());
        assert_eq!(m.initial_state(None), Err(MachineError::MissingInput("general")));
        assert_eq!(m.initial_state(Some("11")).unwrap().agent_count(), 3);
        assert_eq!(m.initial_state(Some("1")).unwrap().agent_count(), 1);
        assert!(matches!(
            m.initial_state(Some("011")),
            Err(MachineError::MalformedInput { .. })
        ));
        assert!(matches!(
            m.initial_state(Some("2")),
            Err(MachineError::MalformedInput { .. })
        ));
    }

    /// Builds a parked agent keyed to a captor with characteristic `word`
    /// standing at `spot` (as seen from the parked agent).
    fn parked(n: u64, key_spot: Spot, word: &History, claimed: bool, bag: Vec<Route>) -> GeneralState {
        let mut s = GeneralState::fresh(n);
        s.phase = Phase::Waiting;
        s.role = Role::Loser;
        s.key = Some((key_spot, word.clone()));
        s.claimed = claimed;
        s.bag = bag;
        s
    }

    #[test]
    fn absorbing_books_the_agent_and_its_records() {
        // A parked agent one cell North, itself holding a route one further
        // North: booking it records both cells.
        let m = GeneralMachine;
        let me = GeneralState::fresh(4);
        let w = parked(
            4,
            Spot::At(Dir::South),
            &me.characteristic,
            true,
            vec![Route::from_moves(&[Dir::North])],
        );
        let mut obs = Observation::empty();
        obs.around[Dir::North.index()] = to_multiset(vec![w]);
        let after = m.transition(&me, &obs, Some(false));
        let words: Vec<Vec<Dir>> = after.bag.iter().map(Route::forward).collect();
        assert_eq!(
            words,
            vec![vec![Dir::North], vec![Dir::North, Dir::North]]
        );
        assert_eq!(after.phase, Phase::Approach);
        assert!(!after.collected.is_empty());
    }

    #[test]
    fn full_books_flip_to_the_itinerary_in_walk_order() {
        let m = GeneralMachine;
        let mut me = GeneralState::fresh(3);
        me.bag = vec![Route::from_moves(&[Dir::East])];
        let w = parked(3, Spot::At(Dir::South), &me.characteristic, true, Vec::new());
        let mut obs = Observation::empty();
        obs.around[Dir::North.index()] = to_multiset(vec![w]);
        let after = m.transition(&me, &obs, Some(false));
        assert_eq!(after.phase, Phase::Guiding);
        assert_eq!(after.role, Role::Champion);
        // North sorts before East: the new capture is visited first.
        assert_eq!(after.current_leg, vec![Dir::North]);
        assert_eq!(after.legs, VecDeque::from(vec![vec![Dir::East]]));
        assert_eq!(after.stage, Stage::Outbound);
    }

    #[test]
    fn an_unacknowledged_capture_holds_the_captor_in_place() {
        let m = GeneralMachine;
        let me = GeneralState::fresh(3);
        let w = parked(3, Spot::At(Dir::South), &me.characteristic, false, Vec::new());
        let mut obs = Observation::empty();
        obs.around[Dir::North.index()] = to_multiset(vec![w]);
        let after = m.transition(&me, &obs, Some(true));
        assert_eq!(after.phase, Phase::Claiming);
        assert!(after.bag.is_empty());
        assert_eq!(after.pending, None);
    }

    #[test]
    fn delivery_hands_over_the_mirror_of_the_guides_history() {
        let m = GeneralMachine;
        let guide_word = hist(&[Dir::North, Dir::East]);
        let mut guide = GeneralState::fresh(2);
        guide.phase = Phase::Guiding;
        guide.role = Role::Champion;
        guide.characteristic = guide_word;
        guide.stage = Stage::Deliver;
        let me = parked(2, Spot::At(Dir::South), &hist(&[Dir::North]), true, Vec::new());
        let mut obs = Observation::empty();
        obs.here = to_multiset(vec![guide]);
        let after = m.transition(&me, &obs, Some(false));
        assert_eq!(after.phase, Phase::FinalWalk);
        // Mirror of (N, E) is (W, S); the first step is already underway.
        assert_eq!(after.pending, Some(Dir::West));
        assert_eq!(after.plan, VecDeque::from(vec![Dir::South]));
        assert!(after.bag.is_empty());
    }

    #[test]
    fn an_orphaned_parked_agent_rejoins_the_search() {
        let m = GeneralMachine;
        let me = parked(3, Spot::At(Dir::North), &hist(&[Dir::East]), false, Vec::new());
        // Nobody at the keyed cell at all.
        let after = m.transition(&me, &Observation::empty(), Some(false));
        assert_eq!(after.phase, Phase::Approach);
        assert_eq!(after.role, Role::Undecided);
        assert_eq!(after.key, None);

        // The keyed agent is there but has parked itself: same outcome.
        let somebody = parked(3, Spot::At(Dir::North), &hist(&[Dir::East]), false, Vec::new());
        let mut stale = somebody.clone();
        stale.characteristic = hist(&[Dir::East]);
        let mut obs = Observation::empty();
        obs.around[Dir::North.index()] = to_multiset(vec![stale]);
        let after = m.transition(&me, &obs, Some(false));
        assert_eq!(after.phase, Phase::Approach);

        // A claimed agent never reverts.
        let me = parked(3, Spot::At(Dir::North), &hist(&[Dir::East]), true, Vec::new());
        let after = m.transition(&me, &Observation::empty(), Some(false));
        assert_eq!(after.phase, Phase::Waiting);
    }

    #[test]
    fn the_walk_spends_one_bit_to_stay_and_three_to_move() {
        let m = GeneralMachine;
        let s0 = GeneralState::fresh(2);
        let obs = Observation::empty();
        // 0: stay, buffer clear.
        let s = m.transition(&s0, &obs, Some(false));
        assert_eq!(s.pending, None);
        assert!(s.bits.is_empty());
        // 1, then 1, then 0: South.
        let s = m.transition(&s0, &obs, Some(true));
        assert_eq!(s.pending, None);
        let s = m.transition(&s, &obs, Some(true));
        assert_eq!(s.pending, None);
        let s = m.transition(&s, &obs, Some(false));
        assert_eq!(s.pending, Some(Dir::South));
        assert_eq!(s.characteristic.forward(), vec![Dir::South]);
        assert!(s.bits.is_empty());
    }

    #[test]
    fn a_singleton_declares_at_once() {
        let report = run_general(&[(0, 0)], "1", &mut Lockstep, 1, 100);
        assert_eq!(
            report.outcome,
            Outcome::Gathered { round: 2, cell: Cell::new(0, 0) }
        );
    }

    #[test]
    fn an_adjacent_pair_gathers_at_the_winners_start() {
        let report = run_general(&[(0, 0), (0, 1)], "10", &mut Lockstep, 1, 200);
        assert_eq!(
            report.outcome,
            Outcome::Gathered { round: 26, cell: Cell::new(0, 1) }
        );
    }

    #[test]
    fn a_distant_pair_gathers_under_fair_random_schedules() {
        for seed in [1, 2, 3] {
            let mut scheduler = RandomFair::default();
            let report = run_general(&[(0, 0), (0, 2)], "10", &mut scheduler, seed, 1_000_000);
            assert!(
                report.outcome.is_gathered(),
                "seed {seed}: {:?}",
                report.outcome
            );
        }
    }

    #[test]
    fn three_agents_gather_under_fair_random_schedules() {
        // Meeting times under the lazy random walk have a heavy tail; these
        // seeds finish well inside the budget (roughly 2e4 and 1e5 rounds).
        for seed in [2, 3] {
            let mut scheduler = RandomFair::default();
            let report = run_general(
                &[(0, 0), (2, 1), (0, 3)],
                "11",
                &mut scheduler,
                seed,
                1_000_000,
            );
            assert!(
                report.outcome.is_gathered(),
                "seed {seed}: {:?}",
                report.outcome
            );
        }
    }

    #[test]
    fn an_undercount_declares_early_and_is_caught() {
        // Three agents told there are two: the adjacent pair finishes its
        // private gathering and declares while the third is far away.
        let report = run_general(&[(0, 0), (0, 1), (0, 9)], "10", &mut Lockstep, 1, 400);
        match report.outcome {
            Outcome::FalseDetection { agent, .. } => {
                assert!(agent < 2, "the declaring agent is one of the pair");
                assert_eq!(report.false_detection_witness, Some(2));
            }
            other => panic!("expected a false detection, got {other:?}"),
        }
    }

    #[test]
    fn the_correct_count_never_declares_early() {
        for seed in [7, 8] {
            let mut scheduler = RandomFair::default();
            let report = run_general(
                &[(0, 0), (0, 1), (0, 6)],
                "11",
                &mut scheduler,
                seed,
                1_000_000,
            );
            assert!(
                !report.outcome.is_false_detection(),
                "seed {seed}: {:?}",
                report.outcome
            );
        }
    }

    #[test]
    fn capture_books_survive_every_step_of_a_full_run() {
        // The auditors are armed in run_general; a gathered three-agent run
        // with two captures exercises booking, re-rooting, and delivery.
        let mut scheduler = RandomFair::default();
        let report = run_general(&[(0, 0), (1, 0), (1, 2)], "11", &mut scheduler, 11, 1_000_000);
        assert!(report.outcome.is_gathered(), "{:?}", report.outcome);
        let cell = report.final_positions[0];
        assert!(report.final_positions.iter().all(|&c| c == cell));
    }

    #[test]
    fn the_capture_auditor_rejects_routes_to_nowhere() {
        let mut auditor = CaptureAuditor;
        let mut state = GeneralState::fresh(2);
        state.bag = vec![Route::from_moves(&[Dir::North])];
        let positions = [Cell::new(0, 0)];
        let starts = [Cell::new(0, 0)];
        let occupied: std::collections::BTreeMap<Cell, u32> = [(Cell::new(0, 0), 1)].into();
        let view = RoundView {
            round: 1,
            positions: &positions,
            states: std::slice::from_ref(&state),
            starts: &starts,
            commits: &[],
            looked: &[],
            occupied_before: &occupied,
            occupied_after: &occupied,
        };
        let err = auditor.check_round(&view).unwrap_err();
        assert!(err.contains("routes land"), "{err}");
    }

    #[test]
    fn the_characteristic_auditor_rejects_a_forged_history() {
        let mut auditor = CharacteristicAuditor;
        let mut state = GeneralState::fresh(2);
        state.characteristic = hist(&[Dir::North]);
        let positions = [Cell::new(0, 0)];
        let starts = [Cell::new(0, 0)];
        let occupied: std::collections::BTreeMap<Cell, u32> = [(Cell::new(0, 0), 1)].into();
        let view = RoundView {
            round: 1,
            positions: &positions,
            states: std::slice::from_ref(&state),
            starts: &starts,
            commits: &[],
            looked: &[],
            occupied_before: &occupied,
            occupied_after: &occupied,
        };
        let err = auditor.check_round(&view).unwrap_err();
        assert!(err.contains("replays to"), "{err}");
    }

    #[test]
    fn identical_runs_leave_identical_traces() {
        let config = Configuration::from_cells([Cell::new(0, 0), Cell::new(0, 2)]);
        let mut lines = Vec::new();
        for _ in 0..2 {
            let setup = RunSetup {
                machine: &GeneralMachine,
                config: &config,
                input: Some("10"),
                seed: 42,
                max_rounds: 2_000,
                digest: 7,
                halt_on_false_detection: true,
            };
            let mut sink = TextTrace::new();
            let mut scheduler = RandomFair::default();
            run(&setup, &mut scheduler, &mut [], &mut sink).unwrap();
            lines.push(sink.lines);
        }
        assert_eq!(lines[0], lines[1]);
    }
}
