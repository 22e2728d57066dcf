//! Stochastic grid maze with barriers and goal cells.

use std::path::Path;

use rand::Rng;

use super::rewards::{maze_goal, maze_step, maze_wall, TruncatedMixture};
use super::{Projection, SimRng, TabularEnv, TabularStep};
use crate::error::{FetsError, Result};

pub const UP: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;
pub const ACTION_COUNT: usize = 4;

/// Probability that an action moves in its own direction.
pub const DEFAULT_SUCCESS_PROB: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Empty,
    Barrier,
    Goal,
}

/// Grid position: `x` is the column, `y` the row (row 0 on top).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MazeState {
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MazeOutcome {
    pub next: MazeState,
    pub reward: f64,
    pub terminal: bool,
    pub hit_wall: bool,
}

const BUILTIN: [&str; 8] = [
    include_str!("../../layouts/maze1.txt"),
    include_str!("../../layouts/maze2.txt"),
    include_str!("../../layouts/maze3.txt"),
    include_str!("../../layouts/maze4.txt"),
    include_str!("../../layouts/maze5.txt"),
    include_str!("../../layouts/maze6.txt"),
    include_str!("../../layouts/maze7.txt"),
    include_str!("../../layouts/maze8.txt"),
];

#[derive(Debug, Clone)]
pub struct Maze {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    // state index of each cell; only empty cells are states
    index: Vec<Option<usize>>,
    positions: Vec<MazeState>,
    success_prob: f64,
    step_reward: TruncatedMixture,
    wall_reward: TruncatedMixture,
    goal_reward: TruncatedMixture,
}

impl Maze {
    /// Parses the text layout: one row per line, `#` barrier, `.` empty,
    /// `G` goal. Rows must be equally long and the border must be barrier.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| FetsError::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let rows: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        if rows.len() < 3 {
            return Err(parse_err(rows.len(), "a maze needs at least three rows".into()));
        }
        let width = rows[0].1.chars().count();
        let height = rows.len();
        let mut cells = Vec::with_capacity(width * height);
        for (y, (line_no, row)) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(parse_err(
                    *line_no,
                    format!("row has {} cells, expected {width}", row.chars().count()),
                ));
            }
            for (x, c) in row.chars().enumerate() {
                let cell = match c {
                    '#' => Cell::Barrier,
                    '.' => Cell::Empty,
                    'G' => Cell::Goal,
                    other => return Err(parse_err(*line_no, format!("unknown cell '{other}'"))),
                };
                let border = x == 0 || y == 0 || x + 1 == width || y + 1 == height;
                if border && cell != Cell::Barrier {
                    return Err(parse_err(*line_no, format!("border cell ({x},{y}) is not a barrier")));
                }
                cells.push(cell);
            }
        }
        if !cells.contains(&Cell::Goal) {
            return Err(parse_err(rows[height - 1].0, "layout has no goal cell".into()));
        }
        let mut index = vec![None; cells.len()];
        let mut positions = Vec::new();
        for (i, cell) in cells.iter().enumerate() {
            if *cell == Cell::Empty {
                index[i] = Some(positions.len());
                positions.push(MazeState { x: i % width, y: i / width });
            }
        }
        if positions.is_empty() {
            return Err(parse_err(rows[height - 1].0, "layout has no empty cell".into()));
        }
        Ok(Self {
            width,
            height,
            cells,
            index,
            positions,
            success_prob: DEFAULT_SUCCESS_PROB,
            step_reward: maze_step(),
            wall_reward: maze_wall(),
            goal_reward: maze_goal(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FetsError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// One of the eight shipped layouts, numbered from 1.
    pub fn builtin(number: usize) -> Result<Self> {
        match number {
            1..=8 => Self::parse(BUILTIN[number - 1], &format!("maze{number}")),
            _ => Err(FetsError::invalid(format!(
                "builtin mazes are numbered 1 to 8, got {number}"
            ))),
        }
    }

    pub fn with_success_prob(mut self, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(FetsError::invalid(format!("success probability {p} outside [0,1]")));
        }
        self.success_prob = p;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell(&self, x: usize, y: usize) -> Cell {
        if x >= self.width || y >= self.height {
            return Cell::Barrier;
        }
        self.cells[y * self.width + x]
    }

    /// Number of empty (non-goal, non-barrier) cells.
    pub fn state_count(&self) -> usize {
        self.positions.len()
    }

    pub fn state_index(&self, s: MazeState) -> Option<usize> {
        if s.x >= self.width || s.y >= self.height {
            return None;
        }
        self.index[s.y * self.width + s.x]
    }

    pub fn position(&self, index: usize) -> MazeState {
        self.positions[index]
    }

    /// Uniform over empty cells.
    pub fn start_state<R: Rng + ?Sized>(&self, rng: &mut R) -> MazeState {
        self.positions[rng.random_range(0..self.positions.len())]
    }

    fn neighbour(s: MazeState, direction: usize) -> MazeState {
        match direction {
            UP => MazeState { x: s.x, y: s.y - 1 },
            RIGHT => MazeState { x: s.x + 1, y: s.y },
            DOWN => MazeState { x: s.x, y: s.y + 1 },
            _ => MazeState { x: s.x - 1, y: s.y },
        }
    }

    /// Deterministic part of a move: where `direction` leads from `s`.
    pub fn attempt(&self, s: MazeState, direction: usize) -> (MazeState, Cell) {
        let target = Self::neighbour(s, direction);
        match self.cell(target.x, target.y) {
            Cell::Barrier => (s, Cell::Barrier),
            other => (target, other),
        }
    }

    /// One stochastic transition. The chosen direction is taken with the
    /// success probability, otherwise a uniformly random direction.
    pub fn step<R: Rng + ?Sized>(&self, s: MazeState, action: usize, rng: &mut R) -> Result<MazeOutcome> {
        if self.state_index(s).is_none() {
            return Err(FetsError::invalid(format!(
                "({}, {}) is not an empty maze cell",
                s.x, s.y
            )));
        }
        if action >= ACTION_COUNT {
            return Err(FetsError::invalid(format!("maze action {action} out of range")));
        }
        let direction = if rng.random::<f64>() < self.success_prob {
            action
        } else {
            rng.random_range(0..ACTION_COUNT)
        };
        let (next, cell) = self.attempt(s, direction);
        let mut reward = self.step_reward.sample(rng);
        let hit_wall = cell == Cell::Barrier;
        if hit_wall {
            reward += self.wall_reward.sample(rng);
        }
        let terminal = cell == Cell::Goal;
        if terminal {
            reward += self.goal_reward.sample(rng);
        }
        Ok(MazeOutcome {
            next,
            reward,
            terminal,
            hit_wall,
        })
    }

    /// Keeps only the column.
    pub fn projection_x(&self) -> Projection {
        Projection {
            name: "X".into(),
            size: self.width,
            map: self.positions.iter().map(|p| p.x).collect(),
        }
    }

    /// Keeps only the row.
    pub fn projection_y(&self) -> Projection {
        Projection {
            name: "Y".into(),
            size: self.height,
            map: self.positions.iter().map(|p| p.y).collect(),
        }
    }

    /// Extreme single-step rewards: step cost plus wall hit, and step cost
    /// plus goal.
    pub fn reward_span(&self) -> f64 {
        let (s_lo, s_hi) = self.step_reward.range();
        let (w_lo, _) = self.wall_reward.range();
        let (_, g_hi) = self.goal_reward.range();
        (s_hi + g_hi) - (s_lo + w_lo)
    }

    /// True dynamics as an explicit model: for each state and action, the
    /// list of (next state or `None` for the goal, probability, expected
    /// reward contribution beyond the step cost).
    pub fn transition_table(&self) -> Vec<Vec<Vec<(Option<usize>, f64, bool)>>> {
        let slip = (1.0 - self.success_prob) / ACTION_COUNT as f64;
        self.positions
            .iter()
            .map(|&s| {
                (0..ACTION_COUNT)
                    .map(|a| {
                        (0..ACTION_COUNT)
                            .map(|d| {
                                let p = slip + if d == a { self.success_prob } else { 0.0 };
                                let (next, cell) = self.attempt(s, d);
                                let next = match cell {
                                    Cell::Goal => None,
                                    _ => self.state_index(next),
                                };
                                (next, p, cell == Cell::Barrier)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn expected_step_reward(&self) -> f64 {
        mixture_mean_estimate(&self.step_reward)
    }

    pub fn expected_wall_reward(&self) -> f64 {
        mixture_mean_estimate(&self.wall_reward)
    }

    pub fn expected_goal_reward(&self) -> f64 {
        mixture_mean_estimate(&self.goal_reward)
    }
}

/// Mean of a truncated mixture by numerical integration of the component
/// densities over the truncation interval.
fn mixture_mean_estimate(d: &TruncatedMixture) -> f64 {
    let (lo, hi) = d.range();
    let steps = 20_000;
    let h = (hi - lo) / steps as f64;
    let mut mass = 0.0;
    let mut first = 0.0;
    for i in 0..steps {
        let x = lo + (i as f64 + 0.5) * h;
        let density: f64 = d
            .components()
            .iter()
            .map(|(w, m, v)| w * (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt())
            .sum();
        mass += density * h;
        first += x * density * h;
    }
    first / mass
}

/// A maze episode in progress.
#[derive(Debug, Clone)]
pub struct MazeEnv {
    maze: Maze,
    state: MazeState,
}

impl MazeEnv {
    pub fn new(maze: Maze) -> Self {
        let state = maze.position(0);
        Self { maze, state }
    }

    pub fn maze(&self) -> &Maze {
        &self.maze
    }

    pub fn state(&self) -> MazeState {
        self.state
    }
}

impl TabularEnv for MazeEnv {
    fn state_count(&self) -> usize {
        self.maze.state_count()
    }

    fn action_count(&self) -> usize {
        ACTION_COUNT
    }

    fn reset(&mut self, rng: &mut SimRng) -> usize {
        self.state = self.maze.start_state(rng);
        self.maze.state_index(self.state).unwrap()
    }

    fn step(&mut self, action: usize, rng: &mut SimRng) -> Result<TabularStep> {
        let out = self.maze.step(self.state, action, rng)?;
        self.state = out.next;
        Ok(TabularStep {
            next: if out.terminal {
                None
            } else {
                self.maze.state_index(out.next)
            },
            reward: out.reward,
        })
    }

    fn projections(&self) -> Vec<Projection> {
        vec![self.maze.projection_x(), self.maze.projection_y()]
    }

    fn reward_span(&self) -> f64 {
        self.maze.reward_span()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    const SMALL: &str = "#####\n#..G#\n#.#.#\n#...#\n#####\n";

    #[test]
    fn parse_and_index() {
        let m = Maze::parse(SMALL, "small").unwrap();
        assert_eq!((m.width(), m.height(), m.state_count()), (5, 5, 7));
        assert_eq!(m.cell(3, 1), Cell::Goal);
        assert_eq!(m.state_index(MazeState { x: 2, y: 2 }), None);
        let s = MazeState { x: 3, y: 3 };
        assert_eq!(m.position(m.state_index(s).unwrap()), s);
    }

    #[test]
    fn parse_errors() {
        for bad in [
            "#####\n#..G.\n#####\n",
            "#####\n#..G#\n####\n",
            "#####\n#...#\n#####\n",
            "#####\n#.xG#\n#####\n",
            "#####\n#####\n",
        ] {
            assert!(matches!(Maze::parse(bad, "bad"), Err(FetsError::Parse { .. })), "{bad:?}");
        }
    }

    #[test]
    fn builtins_parse() {
        for n in 1..=8 {
            let m = Maze::builtin(n).unwrap();
            assert!(m.state_count() > 0);
        }
        assert!(Maze::builtin(9).is_err());
    }

    #[test]
    fn barrier_hit_and_goal_rewards() {
        let m = Maze::parse(SMALL, "small").unwrap().with_success_prob(1.0).unwrap();
        let mut rng = SimRng::seed_from_u64(3);
        // (1,2) has the interior barrier (2,2) on its right
        let s = MazeState { x: 1, y: 2 };
        for _ in 0..200 {
            let out = m.step(s, RIGHT, &mut rng).unwrap();
            assert_eq!(out.next, s);
            assert!(out.hit_wall && !out.terminal);
            assert!((-14.0..=-10.0).contains(&out.reward));
        }
        let s = MazeState { x: 2, y: 1 };
        for _ in 0..200 {
            let out = m.step(s, RIGHT, &mut rng).unwrap();
            assert!(out.terminal && !out.hit_wall);
            assert!((7.5..=11.5).contains(&out.reward));
        }
        let out = m.step(MazeState { x: 1, y: 3 }, RIGHT, &mut rng).unwrap();
        assert_eq!(out.next, MazeState { x: 2, y: 3 });
        assert!((-2.0..=0.0).contains(&out.reward));
        assert!(m.step(MazeState { x: 2, y: 2 }, UP, &mut rng).is_err());
        assert!(m.step(MazeState { x: 1, y: 1 }, 4, &mut rng).is_err());
    }

    #[test]
    fn slip_frequency() {
        let m = Maze::parse(SMALL, "small").unwrap();
        let mut rng = SimRng::seed_from_u64(4);
        let s = MazeState { x: 1, y: 3 };
        let n = 100_000;
        let moved = (0..n)
            .filter(|_| m.step(s, RIGHT, &mut rng).unwrap().next == MazeState { x: 2, y: 3 })
            .count();
        // 0.9 + 0.1 / 4 of the time the move goes right
        let p = moved as f64 / n as f64;
        assert!((p - 0.925).abs() < 4.0 * (0.925 * 0.075 / n as f64).sqrt());
    }

    #[test]
    fn step_is_a_function_of_the_rng_stream() {
        let m = Maze::builtin(1).unwrap();
        let s = m.position(5);
        let a = m.step(s, DOWN, &mut SimRng::seed_from_u64(9)).unwrap();
        let b = m.step(s, DOWN, &mut SimRng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn projections() {
        let m = Maze::parse(SMALL, "small").unwrap();
        let px = m.projection_x();
        let py = m.projection_y();
        let i = m.state_index(MazeState { x: 3, y: 2 }).unwrap();
        assert_eq!((px.apply(i), py.apply(i)), (3, 2));
        let a = m.state_index(MazeState { x: 1, y: 1 }).unwrap();
        let b = m.state_index(MazeState { x: 1, y: 3 }).unwrap();
        assert_eq!(px.apply(a), px.apply(b));

        let column = Maze::parse("###\n#.#\n#.#\n#G#\n###\n", "column").unwrap();
        let px = column.projection_x();
        assert!(px.map.iter().all(|x| *x == 1));
    }

    #[test]
    fn transition_table_rows_sum_to_one() {
        let m = Maze::builtin(4).unwrap();
        for row in m.transition_table() {
            for outcomes in row {
                let total: f64 = outcomes.iter().map(|o| o.1).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
        assert!((m.expected_goal_reward() - 10.0).abs() < 1e-3);
        assert!((m.reward_span() - 25.5).abs() < 1e-12);
    }
}
