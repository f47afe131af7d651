//! Temporary measurement harness for the randomized machine's convergence
//! under fair random schedules. Not part of the crate's public surface.

use gridgather::engine::{run, NullSink, RandomFair, RunSetup};
use gridgather::general::{auditors, GeneralMachine};
use gridgather::grid::{Cell, Configuration};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run_case(cells: &[Cell], input: &str, seed: u64, budget: u64) -> (bool, u64) {
    let config = Configuration::from_cells(cells.iter().copied());
    let setup = RunSetup {
        machine: &GeneralMachine,
        config: &config,
        input: Some(input),
        seed,
        max_rounds: budget,
        digest: 0,
        halt_on_false_detection: true,
    };
    let mut scheduler = RandomFair::default();
    let mut sink = NullSink;
    let mut auditors = auditors();
    let report = run(&setup, &mut scheduler, &mut auditors, &mut sink).expect("run");
    let gathered = report.outcome.is_gathered();
    (gathered, report.rounds_run)
}

fn ball(radius: i64) -> Vec<Cell> {
    let mut cells = Vec::new();
    for x in -radius..=radius {
        for y in -radius..=radius {
            if x.abs() + y.abs() <= radius {
                cells.push(Cell::new(x, y));
            }
        }
    }
    cells
}

fn ring(d: i64) -> Vec<Cell> {
    ball(d).into_iter().filter(|c| c.x.abs() + c.y.abs() == d).collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let budget: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1_000_000);

    // Pairs: distance uniform in 1..=6, then a uniform cell at that distance.
    let mut per_distance = vec![(0u32, 0u32); 7];
    let mut pair_rounds = Vec::new();
    for k in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9_7f4a_7c15 ^ k);
        let d = rng.random_range(1..=6i64);
        let cells_at = ring(d);
        let cell = cells_at[rng.random_range(0..cells_at.len())];
        let (ok, rounds) = run_case(&[Cell::new(0, 0), cell], "10", k + 1, budget);
        per_distance[d as usize].1 += 1;
        if ok {
            per_distance[d as usize].0 += 1;
            pair_rounds.push(rounds);
        }
        println!("pair {k}: d={d} cell=({},{}) {}", cell.x, cell.y, if ok { format!("gathered r{rounds}") } else { "EXHAUSTED".into() });
    }
    let pair_ok: u32 = per_distance.iter().map(|p| p.0).sum();
    println!("pairs: {pair_ok}/100");
    for d in 1..=6 {
        let (ok, total) = per_distance[d];
        println!("  d={d}: {ok}/{total}");
    }

    for radius in [2i64, 1] {
        let cells = ball(radius);
        let mut ok_count = 0u32;
        for k in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5851_f42d_4c95_7f2d ^ k);
            let mut picks: Vec<Cell> = Vec::new();
            while picks.len() < 3 {
                let c = cells[rng.random_range(0..cells.len())];
                if !picks.contains(&c) {
                    picks.push(c);
                }
            }
            let (ok, rounds) = run_case(&picks, "11", 1000 + k, budget);
            if ok {
                ok_count += 1;
            }
            println!("triple(r={radius}) {k}: {:?} {}", picks.iter().map(|c| (c.x, c.y)).collect::<Vec<_>>(), if ok { format!("gathered r{rounds}") } else { "EXHAUSTED".into() });
        }
        println!("triples radius {radius}: {ok_count}/50");
    }
}
