//! Deterministic, seed-reproducible simulator for asynchronous gathering of
//! anonymous mobile agents on the grid.
//!
//! Agents run identical state machines, observe only the states of agents in
//! their own and the four neighboring cells, and are activated by an
//! adversarial scheduler in look/commit pairs: a look reads a snapshot frozen
//! at the start of its round and computes the next (state, move); a later
//! commit applies them, visible from the following round. Three machines are
//! provided — a finite automaton for connected contractible configurations, a
//! mapping Turing machine for arbitrary connected configurations, and a
//! randomized machine with the agent count as input for arbitrary
//! configurations — together with schedulers, runtime invariant auditors,
//! replayable traces, geometric oracles, and a sweep/demo CLI.

pub mod connected;
pub mod contractible;
pub mod engine;
pub mod general;
pub mod harness;
pub mod grid;
pub mod machine;
pub mod scenario;
