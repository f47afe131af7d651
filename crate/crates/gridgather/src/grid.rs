//! Grid geometry: cells, directions, configurations, shape predicates, and the
//! exhaustive polyomino enumerator.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;

use thiserror::Error;

/// Default cap for [`enumerate_polyominoes`]; raised via `GRIDGATHER_ENUM_LIMIT`.
pub const DEFAULT_ENUM_LIMIT: usize = 10;

/// Errors from geometry operations whose preconditions are violated.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum GridError {
    #[error("empty configuration")]
    EmptyConfiguration,
    #[error("cell {0} is not occupied")]
    NotOccupied(Cell),
    #[error("configuration is not connected")]
    NotConnected,
    #[error("configuration is not contractible")]
    NotContractible,
    #[error("configuration must have exactly one agent per cell")]
    NotInitial,
    #[error("size {size} outside supported range 1..={limit}")]
    SizeOutOfRange { size: usize, limit: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A cell of the grid: `x` grows East, `y` grows North.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Cell {
    pub x: i64,
    pub y: i64,
}

impl Cell {
    pub const ORIGIN: Cell = Cell::new(0, 0);

    pub const fn new(x: i64, y: i64) -> Self {
        Cell { x, y }
    }

    /// The adjacent cell in direction `d`.
    pub fn neighbor(self, d: Dir) -> Cell {
        let (dx, dy) = d.delta();
        Cell::new(self.x + dx, self.y + dy)
    }

    /// The four neighbors in the fixed order N, E, S, W.
    pub fn neighbors(self) -> [Cell; 4] {
        [
            self.neighbor(Dir::North),
            self.neighbor(Dir::East),
            self.neighbor(Dir::South),
            self.neighbor(Dir::West),
        ]
    }

    /// L1 distance.
    pub fn distance(self, other: Cell) -> u64 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    pub fn offset(self, dx: i64, dy: i64) -> Cell {
        Cell::new(self.x + dx, self.y + dy)
    }
}

/// Cells order by (y, then x): row-major from the South, West to East.
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// The four cardinal directions, ordered N < E < S < W.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub enum Dir {
    North,
    East,
    South,
    West,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::North, Dir::East, Dir::South, Dir::West];

    /// (dx, dy) of one step in this direction.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Dir::North => (0, 1),
            Dir::East => (1, 0),
            Dir::South => (0, -1),
            Dir::West => (-1, 0),
        }
    }

    pub fn opposite(self) -> Dir {
        match self {
            Dir::North => Dir::South,
            Dir::East => Dir::West,
            Dir::South => Dir::North,
            Dir::West => Dir::East,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Dir::North => 'N',
            Dir::East => 'E',
            Dir::South => 'S',
            Dir::West => 'W',
        }
    }

    pub fn from_letter(c: char) -> Option<Dir> {
        match c {
            'N' => Some(Dir::North),
            'E' => Some(Dir::East),
            'S' => Some(Dir::South),
            'W' => Some(Dir::West),
            _ => None,
        }
    }

    /// Position in the fixed N, E, S, W order.
    pub fn index(self) -> usize {
        match self {
            Dir::North => 0,
            Dir::East => 1,
            Dir::South => 2,
            Dir::West => 3,
        }
    }
}

impl fmt::Display for Dir {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// A finite set of occupied cells with agent multiplicities.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Configuration {
    occupancy: BTreeMap<Cell, u32>,
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    /// One agent per listed cell; listing a cell twice stacks agents on it.
    pub fn from_cells<I: IntoIterator<Item = Cell>>(cells: I) -> Self {
        let mut cfg = Self::new();
        for c in cells {
            cfg.add(c, 1);
        }
        cfg
    }

    pub fn add(&mut self, c: Cell, agents: u32) {
        if agents > 0 {
            *self.occupancy.entry(c).or_insert(0) += agents;
        }
    }

    pub fn count(&self, c: Cell) -> u32 {
        self.occupancy.get(&c).copied().unwrap_or(0)
    }

    /// The full cell → agent-count map, in (y, x) cell order.
    pub fn occupancy(&self) -> &BTreeMap<Cell, u32> {
        &self.occupancy
    }

    pub fn is_occupied(&self, c: Cell) -> bool {
        self.occupancy.contains_key(&c)
    }

    /// Occupied cells in (y, x) order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.occupancy.keys().copied()
    }

    pub fn cell_count(&self) -> usize {
        self.occupancy.len()
    }

    pub fn agent_count(&self) -> u64 {
        self.occupancy.values().map(|&k| u64::from(k)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    /// True iff every occupied cell hosts exactly one agent.
    pub fn is_initial(&self) -> bool {
        !self.is_empty() && self.occupancy.values().all(|&k| k == 1)
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Configuration {
        Configuration {
            occupancy: self
                .occupancy
                .iter()
                .map(|(c, &k)| (c.offset(dx, dy), k))
                .collect(),
        }
    }

    /// Component-wise (min, max) corners of the bounding box.
    pub fn bounding_box(&self) -> Option<(Cell, Cell)> {
        let mut cells = self.cells();
        let first = cells.next()?;
        let (mut min_x, mut max_x, mut min_y, mut max_y) = (first.x, first.x, first.y, first.y);
        for c in cells {
            min_x = min_x.min(c.x);
            max_x = max_x.max(c.x);
            min_y = min_y.min(c.y);
            max_y = max_y.max(c.y);
        }
        Some((Cell::new(min_x, min_y), Cell::new(max_x, max_y)))
    }

    /// Parse the shared cell-list text format: one `x y` pair per line, ASCII
    /// decimal integers; `#` starts a comment; blank lines ignored. Each line
    /// contributes one agent; repeating a cell is rejected (initial
    /// configurations have one agent per cell).
    pub fn parse_cells(text: &str) -> Result<Configuration, GridError> {
        let mut cfg = Configuration::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut parts = content.split_whitespace();
            let (Some(xs), Some(ys), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(GridError::Parse {
                    line,
                    message: format!("expected `x y`, got `{content}`"),
                });
            };
            let parse = |s: &str| -> Result<i64, GridError> {
                s.parse().map_err(|_| GridError::Parse {
                    line,
                    message: format!("`{s}` is not an integer"),
                })
            };
            let cell = Cell::new(parse(xs)?, parse(ys)?);
            if cfg.is_occupied(cell) {
                return Err(GridError::Parse {
                    line,
                    message: format!("cell {cell} listed twice"),
                });
            }
            cfg.add(cell, 1);
        }
        Ok(cfg)
    }

    /// Inverse of [`Configuration::parse_cells`] for one-agent-per-cell
    /// configurations; stacked cells are repeated.
    pub fn format_cells(&self) -> String {
        let mut out = String::new();
        for (c, &k) in &self.occupancy {
            for _ in 0..k {
                out.push_str(&format!("{} {}\n", c.x, c.y));
            }
        }
        out
    }
}

impl FromIterator<Cell> for Configuration {
    fn from_iter<I: IntoIterator<Item = Cell>>(iter: I) -> Self {
        Configuration::from_cells(iter)
    }
}

/// How a cell sits relative to its occupied neighbor cells.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Role {
    /// Sole occupied neighbor is South: the cell is the North tip of its limb.
    NorthLeaf,
    /// Sole occupied neighbor is West.
    EastLeaf,
    /// Sole occupied neighbor is North.
    SouthLeaf,
    /// Sole occupied neighbor is East.
    WestLeaf,
    /// Occupied neighbors exactly South and West.
    NortheastCorner,
    /// Occupied neighbors exactly South and East.
    NorthwestCorner,
    /// Any other neighbor pattern (including an isolated cell).
    Other,
}

impl Role {
    pub fn is_leaf(self) -> bool {
        matches!(
            self,
            Role::NorthLeaf | Role::EastLeaf | Role::SouthLeaf | Role::WestLeaf
        )
    }
}

/// Classification of one occupied cell: its [`Role`] plus whether it lies on a
/// fully occupied 2x2 block.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct AgentRole {
    pub role: Role,
    pub in4cycle: bool,
}

/// True iff the occupied-cell graph (edges between occupied cells at distance
/// 1) is connected. Errors on the empty configuration.
pub fn is_connected(cfg: &Configuration) -> Result<bool, GridError> {
    if cfg.is_empty() {
        return Err(GridError::EmptyConfiguration);
    }
    let cells: BTreeSet<Cell> = cfg.cells().collect();
    let start = *cells.iter().next().expect("nonempty");
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        for nb in c.neighbors() {
            if cells.contains(&nb) && seen.insert(nb) {
                queue.push_back(nb);
            }
        }
    }
    Ok(seen.len() == cells.len())
}

/// True iff `cfg` is connected and the unoccupied cells of the plane have no
/// finite connected component (no hole). Flood fill over the bounding box
/// expanded by one cell: the margin ring is provably in the infinite empty
/// component, so any empty cell it cannot reach is enclosed.
pub fn is_contractible(cfg: &Configuration) -> Result<bool, GridError> {
    if !is_connected(cfg)? {
        return Ok(false);
    }
    let (lo, hi) = cfg.bounding_box().expect("nonempty");
    let (lo, hi) = (lo.offset(-1, -1), hi.offset(1, 1));
    let inside =
        |c: Cell| -> bool { c.x >= lo.x && c.x <= hi.x && c.y >= lo.y && c.y <= hi.y };
    let start = lo;
    let mut reached = HashSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        for nb in c.neighbors() {
            if inside(nb) && !cfg.is_occupied(nb) && reached.insert(nb) {
                queue.push_back(nb);
            }
        }
    }
    let width = (hi.x - lo.x + 1) as usize;
    let height = (hi.y - lo.y + 1) as usize;
    let empty_inside = width * height - cfg.cell_count();
    Ok(reached.len() == empty_inside)
}

/// Classify one occupied cell. Errors if `c` is unoccupied.
pub fn classify(cfg: &Configuration, c: Cell) -> Result<AgentRole, GridError> {
    if !cfg.is_occupied(c) {
        return Err(GridError::NotOccupied(c));
    }
    let occ: Vec<Dir> = Dir::ALL
        .into_iter()
        .filter(|&d| cfg.is_occupied(c.neighbor(d)))
        .collect();
    let role = match occ.as_slice() {
        [Dir::South] => Role::NorthLeaf,
        [Dir::West] => Role::EastLeaf,
        [Dir::North] => Role::SouthLeaf,
        [Dir::East] => Role::WestLeaf,
        [Dir::South, Dir::West] => Role::NortheastCorner,
        [Dir::East, Dir::South] => Role::NorthwestCorner,
        _ => Role::Other,
    };
    Ok(AgentRole {
        role,
        in4cycle: in_full_block(cfg, c),
    })
}

/// True iff `c` lies on some fully occupied 2x2 block.
pub fn in_full_block(cfg: &Configuration, c: Cell) -> bool {
    [(0, 0), (-1, 0), (0, -1), (-1, -1)].into_iter().any(|(bx, by)| {
        let base = c.offset(bx, by);
        [(0, 0), (1, 0), (0, 1), (1, 1)]
            .into_iter()
            .all(|(dx, dy)| cfg.is_occupied(base.offset(dx, dy)))
    })
}

/// The occupied cells whose removal disconnects the occupied-cell graph.
/// Errors on disconnected (or empty) input.
pub fn articulation_cells(cfg: &Configuration) -> Result<BTreeSet<Cell>, GridError> {
    if !is_connected(cfg)? {
        return Err(GridError::NotConnected);
    }
    if cfg.cell_count() <= 2 {
        return Ok(BTreeSet::new());
    }
    let cells: Vec<Cell> = cfg.cells().collect();
    let mut cut = BTreeSet::new();
    for &c in &cells {
        let rest = Configuration::from_cells(cells.iter().copied().filter(|&o| o != c));
        if !is_connected(&rest)? {
            cut.insert(c);
        }
    }
    Ok(cut)
}

/// The enumeration size cap: `GRIDGATHER_ENUM_LIMIT` if set and valid, else
/// [`DEFAULT_ENUM_LIMIT`].
pub fn enumeration_limit() -> usize {
    std::env::var("GRIDGATHER_ENUM_LIMIT")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(DEFAULT_ENUM_LIMIT)
}

/// All fixed polyominoes of `n` cells, translation-canonicalized (the
/// (y,x)-minimal cell at the origin), deduplicated, in deterministic sorted
/// order; optionally filtered to contractible shapes.
pub fn enumerate_polyominoes(
    n: usize,
    contractible_only: bool,
) -> Result<Vec<Configuration>, GridError> {
    let limit = enumeration_limit();
    if n < 1 || n > limit {
        return Err(GridError::SizeOutOfRange { size: n, limit });
    }
    let mut current: HashSet<Vec<Cell>> = HashSet::from([vec![Cell::ORIGIN]]);
    for _ in 1..n {
        let mut next = HashSet::new();
        for shape in &current {
            let occupied: HashSet<Cell> = shape.iter().copied().collect();
            for cell in shape {
                for nb in cell.neighbors() {
                    if !occupied.contains(&nb) {
                        let mut grown = shape.clone();
                        grown.push(nb);
                        next.insert(canonical_shape(&grown));
                    }
                }
            }
        }
        current = next;
    }
    let mut shapes: Vec<Vec<Cell>> = current.into_iter().collect();
    shapes.sort();
    let mut out = Vec::new();
    for shape in shapes {
        let cfg = Configuration::from_cells(shape);
        if !contractible_only || is_contractible(&cfg)? {
            out.push(cfg);
        }
    }
    Ok(out)
}

/// Translate so the (y,x)-minimal cell is the origin; cells sorted.
fn canonical_shape(cells: &[Cell]) -> Vec<Cell> {
    let min = cells.iter().copied().min().expect("nonempty shape");
    let mut out: Vec<Cell> = cells
        .iter()
        .map(|c| c.offset(-min.x, -min.y))
        .collect();
    out.sort();
    out
}

/// Check the structural dichotomy on one instance: a connected contractible
/// configuration with more than one cell must contain a leaf, or a Northeast
/// corner on a fully occupied 2x2 block, or a Northwest corner on one.
/// Preconditions: connected, contractible, one agent per cell.
pub fn lemma_geo_holds(cfg: &Configuration) -> Result<bool, GridError> {
    if !cfg.is_initial() {
        return Err(GridError::NotInitial);
    }
    if !is_connected(cfg)? {
        return Err(GridError::NotConnected);
    }
    if !is_contractible(cfg)? {
        return Err(GridError::NotContractible);
    }
    if cfg.cell_count() <= 1 {
        return Ok(true);
    }
    for c in cfg.cells() {
        let AgentRole { role, in4cycle } = classify(cfg, c)?;
        let witnesses = role.is_leaf()
            || (in4cycle && matches!(role, Role::NortheastCorner | Role::NorthwestCorner));
        if witnesses {
            return Ok(true);
        }
    }
    Ok(false)
}
