//! The agent abstraction: states, observations, moves, and the machine
//! contract shared by all gathering algorithms.

use std::fmt;
use std::hash::Hash;

use thiserror::Error;

use crate::grid::Dir;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MachineError {
    #[error("machine `{0}` takes no input")]
    UnexpectedInput(&'static str),
    #[error("machine `{0}` requires an input")]
    MissingInput(&'static str),
    #[error("malformed input `{input}`: {message}")]
    MalformedInput { input: String, message: String },
    #[error("random bit presence does not match the machine contract")]
    BitMismatch,
}

/// One committed action: step to a neighbor cell or stay put.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Move {
    Go(Dir),
    Stay,
}

impl Move {
    pub fn letter(self) -> char {
        match self {
            Move::Go(d) => d.letter(),
            Move::Stay => 'P',
        }
    }
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Contract every machine state satisfies. States are fully visible to
/// neighboring agents; the total order feeds deterministic multiset encoding.
pub trait AgentState: Clone + Eq + Ord + Hash + fmt::Debug {
    /// Absorbing terminal marker: once set, the agent stays put forever.
    fn is_terminal(&self) -> bool;
    /// Deterministic canonical text, free of whitespace; used verbatim in
    /// traces and observation digests.
    fn canonical(&self) -> String;
}

/// A state multiset: each distinct state at most once with its exact count,
/// sorted by the state order.
pub type StateMultiset<S> = Vec<(u32, S)>;

/// Aggregate a plain list of states into a sorted (count, state) multiset.
pub fn to_multiset<S: Ord>(mut states: Vec<S>) -> StateMultiset<S> {
    states.sort();
    let mut out: StateMultiset<S> = Vec::new();
    for s in states {
        match out.last_mut() {
            Some((k, last)) if *last == s => *k += 1,
            _ => out.push((1, s)),
        }
    }
    out
}

/// What one agent sees at a look: the states of all agents in its own cell
/// (itself excluded) and in the four neighbor cells.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Observation<S> {
    /// Co-located agents, observer excluded.
    pub here: StateMultiset<S>,
    /// Neighbor cells in the fixed N, E, S, W order.
    pub around: [StateMultiset<S>; 4],
}

impl<S: AgentState> Observation<S> {
    pub fn empty() -> Self {
        Observation {
            here: Vec::new(),
            around: [Vec::new(), Vec::new(), Vec::new(), Vec::new()],
        }
    }

    pub fn dir(&self, d: Dir) -> &StateMultiset<S> {
        &self.around[d.index()]
    }

    /// True iff all four neighbor cells are empty (own cell not consulted).
    pub fn neighborhood_empty(&self) -> bool {
        self.around.iter().all(|m| m.is_empty())
    }

    /// Directions whose neighbor cell holds at least one agent, in N,E,S,W order.
    pub fn occupied_dirs(&self) -> impl Iterator<Item = Dir> + '_ {
        Dir::ALL
            .into_iter()
            .filter(move |d| !self.around[d.index()].is_empty())
    }

    /// Every (count, state) pair across the four neighbor cells.
    pub fn neighbor_entries(&self) -> impl Iterator<Item = &(u32, S)> {
        self.around.iter().flatten()
    }

    /// Deterministic canonical text for observation digests.
    pub fn canonical(&self) -> String {
        fn part<S: AgentState>(label: char, m: &StateMultiset<S>, out: &mut String) {
            out.push(label);
            out.push('{');
            for (i, (k, s)) in m.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{k}*{}", s.canonical()));
            }
            out.push('}');
        }
        let mut out = String::new();
        part('P', &self.here, &mut out);
        for d in Dir::ALL {
            part(d.letter(), &self.around[d.index()], &mut out);
        }
        out
    }
}

/// A gathering machine: the common program run by every (anonymous) agent.
pub trait Machine {
    type State: AgentState;

    /// Stable machine name, used in traces and the CLI.
    fn name(&self) -> &'static str;
    /// True iff transitions consume one random bit per look.
    fn randomized(&self) -> bool;
    /// True iff the reachable state set is bounded independently of the
    /// configuration (asserted by an auditor where claimed).
    fn finite_state(&self) -> bool;
    /// True iff agents start from an input string instead of a fixed state.
    fn takes_input(&self) -> bool;
    /// The starting state; `input` must be present iff [`Machine::takes_input`].
    fn initial_state(&self, input: Option<&str>) -> Result<Self::State, MachineError>;
    /// The transition function. `bit` is `Some` iff the machine is
    /// randomized. Never called on terminal states (see [`step`]).
    fn transition(
        &self,
        state: &Self::State,
        obs: &Observation<Self::State>,
        bit: Option<bool>,
    ) -> Self::State;
    /// The action function: the move performed when a state is committed.
    fn action(&self, state: &Self::State) -> Move;
}

/// One agent step: transition plus action, with the terminal-absorption and
/// bit-presence contracts enforced centrally for every machine.
pub fn step<M: Machine>(
    machine: &M,
    state: &M::State,
    obs: &Observation<M::State>,
    bit: Option<bool>,
) -> Result<(M::State, Move), MachineError> {
    if bit.is_some() != machine.randomized() {
        return Err(MachineError::BitMismatch);
    }
    if state.is_terminal() {
        return Ok((state.clone(), Move::Stay));
    }
    let next = machine.transition(state, obs, bit);
    let mv = if next.is_terminal() {
        Move::Stay
    } else {
        machine.action(&next)
    };
    Ok((next, mv))
}

/// Parse a big-endian binary agent count: nonempty, digits 0/1 only, no
/// leading zeros, value ≥ 1.
pub fn parse_binary_count(input: &str) -> Result<u64, MachineError> {
    let bad = |message: &str| MachineError::MalformedInput {
        input: input.to_string(),
        message: message.to_string(),
    };
    if input.is_empty() {
        return Err(bad("empty"));
    }
    if input.chars().any(|c| c != '0' && c != '1') {
        return Err(bad("digits must be 0 or 1"));
    }
    if input.len() > 1 && input.starts_with('0') {
        return Err(bad("leading zeros are not allowed"));
    }
    if input == "0" {
        return Err(bad("count must be at least 1"));
    }
    if input.len() > 40 {
        return Err(bad("count out of supported range"));
    }
    Ok(u64::from_str_radix(input, 2).expect("validated binary"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
    struct Tiny(u8);

    impl AgentState for Tiny {
        fn is_terminal(&self) -> bool {
            self.0 == u8::MAX
        }
        fn canonical(&self) -> String {
            format!("t{}", self.0)
        }
    }

    #[test]
    fn multiset_aggregates_and_sorts() {
        let m = to_multiset(vec![Tiny(2), Tiny(1), Tiny(2), Tiny(2)]);
        assert_eq!(m, vec![(1, Tiny(1)), (3, Tiny(2))]);
        assert!(to_multiset::<Tiny>(vec![]).is_empty());
    }

    #[test]
    fn observation_canonical_is_stable() {
        let mut obs = Observation::<Tiny>::empty();
        obs.here = to_multiset(vec![Tiny(1), Tiny(1)]);
        obs.around[Dir::South.index()] = to_multiset(vec![Tiny(7)]);
        assert_eq!(obs.canonical(), "P{2*t1}N{}E{}S{1*t7}W{}");
        assert!(!obs.neighborhood_empty());
        assert_eq!(obs.occupied_dirs().collect::<Vec<_>>(), vec![Dir::South]);
    }

    #[test]
    fn binary_count_parsing() {
        assert_eq!(parse_binary_count("1").unwrap(), 1);
        assert_eq!(parse_binary_count("10").unwrap(), 2);
        assert_eq!(parse_binary_count("11").unwrap(), 3);
        assert_eq!(parse_binary_count("101").unwrap(), 5);
        for bad in ["", "0", "01", "2", "1x"] {
            assert!(parse_binary_count(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn move_letters() {
        assert_eq!(Move::Go(Dir::North).letter(), 'N');
        assert_eq!(Move::Stay.letter(), 'P');
    }
}
