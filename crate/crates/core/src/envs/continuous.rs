//! Continuous 2-D world with wall segments, food and poison items, and
//! agents that sense through a fan of ray "eyes".

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimRng;
use crate::error::{FetsError, Result};

pub const FEATURES: usize = 3;
pub const WALL: usize = 0;
pub const FOOD: usize = 1;
pub const POISON: usize = 2;
pub const ACTION_COUNT: usize = 5;

pub const FOOD_REWARD: f64 = 5.0;
pub const POISON_REWARD: f64 = -6.0;

const BUILTIN: [&str; 4] = [
    include_str!("../../layouts/world1.txt"),
    include_str!("../../layouts/world2.txt"),
    include_str!("../../layouts/world3.txt"),
    include_str!("../../layouts/world4.txt"),
];

/// Kinematics and sensing geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Kinematics {
    pub eyes: usize,
    /// Total angle covered by the eyes, in degrees.
    pub fov_deg: f64,
    pub eye_range: f64,
    pub speed: f64,
    pub small_turn_deg: f64,
    pub large_turn_deg: f64,
    pub agent_radius: f64,
    pub item_radius: f64,
}

impl Default for Kinematics {
    fn default() -> Self {
        Self {
            eyes: 9,
            fov_deg: 120.0,
            eye_range: 85.0,
            speed: 3.0,
            small_turn_deg: 15.0,
            large_turn_deg: 45.0,
            agent_radius: 10.0,
            item_radius: 10.0,
        }
    }
}

impl Kinematics {
    pub fn observation_len(&self) -> usize {
        self.eyes * FEATURES
    }

    /// Heading change for each action: forward, small left, small right,
    /// large left, large right. Angles grow counter-clockwise.
    pub fn turn(&self, action: usize) -> f64 {
        let deg = match action {
            0 => 0.0,
            1 => self.small_turn_deg,
            2 => -self.small_turn_deg,
            3 => self.large_turn_deg,
            _ => -self.large_turn_deg,
        };
        deg.to_radians()
    }

    fn eye_offsets(&self) -> Vec<f64> {
        let fov = self.fov_deg.to_radians();
        if self.eyes == 1 {
            return vec![0.0];
        }
        (0..self.eyes)
            .map(|i| -fov / 2.0 + fov * i as f64 / (self.eyes - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    fn distance_to(&self, p: [f64; 2]) -> f64 {
        let d = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p[0] - self.a[0]) * d[0] + (p[1] - self.a[1]) * d[1]) / len2).clamp(0.0, 1.0)
        };
        let q = [self.a[0] + t * d[0], self.a[1] + t * d[1]];
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    }

    /// Distance along the unit ray `origin + t dir` to this segment.
    fn ray_hit(&self, origin: [f64; 2], dir: [f64; 2]) -> Option<f64> {
        let e = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let denom = dir[0] * e[1] - dir[1] * e[0];
        if denom.abs() < 1e-12 {
            return None;
        }
        let w = [self.a[0] - origin[0], self.a[1] - origin[1]];
        let t = (w[0] * e[1] - w[1] * e[0]) / denom;
        let u = (w[0] * dir[1] - w[1] * dir[0]) / denom;
        (t >= 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ItemKind {
    Food,
    Poison,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Item {
    pub pos: [f64; 2],
    pub kind: ItemKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub pos: [f64; 2],
    /// Radians, counter-clockwise from the +x axis.
    pub heading: f64,
}

/// Static description of a world: bounds, walls and item counts.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldLayout {
    pub width: f64,
    pub height: f64,
    pub walls: Vec<Segment>,
    pub food: usize,
    pub poison: usize,
}

impl WorldLayout {
    /// Parses lines `bounds W H`, `wall X1 Y1 X2 Y2` and
    /// `items food N poison M`; `#` starts a comment.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let err = |line: usize, message: String| FetsError::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut bounds = None;
        let mut walls = Vec::new();
        let mut items = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let nums = |from: usize, count: usize| -> Result<Vec<f64>> {
                if tokens.len() != from + count {
                    return Err(err(line_no, format!("expected {count} numbers after '{}'", tokens[0])));
                }
                tokens[from..]
                    .iter()
                    .map(|t| {
                        t.parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| err(line_no, format!("'{t}' is not a number")))
                    })
                    .collect()
            };
            match tokens[0] {
                "bounds" => {
                    let v = nums(1, 2)?;
                    if v[0] <= 0.0 || v[1] <= 0.0 {
                        return Err(err(line_no, "bounds must be positive".into()));
                    }
                    bounds = Some((v[0], v[1]));
                }
                "wall" => {
                    let v = nums(1, 4)?;
                    walls.push((line_no, Segment { a: [v[0], v[1]], b: [v[2], v[3]] }));
                }
                "items" => {
                    if tokens.len() != 5 || tokens[1] != "food" || tokens[3] != "poison" {
                        return Err(err(line_no, "expected 'items food N poison M'".into()));
                    }
                    let count = |t: &str| {
                        t.parse::<usize>()
                            .map_err(|_| err(line_no, format!("'{t}' is not a count")))
                    };
                    items = Some((count(tokens[2])?, count(tokens[4])?));
                }
                other => return Err(err(line_no, format!("unknown directive '{other}'"))),
            }
        }
        let (width, height) = bounds.ok_or_else(|| err(0, "missing 'bounds' line".into()))?;
        for (line_no, w) in &walls {
            let inside = |p: [f64; 2]| (0.0..=width).contains(&p[0]) && (0.0..=height).contains(&p[1]);
            if !inside(w.a) || !inside(w.b) {
                return Err(err(*line_no, "wall endpoint outside the bounds".into()));
            }
        }
        let (food, poison) = items.unwrap_or((50, 50));
        Ok(Self {
            width,
            height,
            walls: walls.into_iter().map(|(_, w)| w).collect(),
            food,
            poison,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FetsError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// One of the four shipped barrier configurations, numbered from 1.
    pub fn builtin(number: usize) -> Result<Self> {
        match number {
            1..=4 => Self::parse(BUILTIN[number - 1], &format!("world{number}")),
            _ => Err(FetsError::invalid(format!(
                "builtin worlds are numbered 1 to 4, got {number}"
            ))),
        }
    }
}

/// Per-agent result of one tick, with the reward split into its terms.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub r_p: f64,
    pub r_sf: f64,
    pub r_d: f64,
}

#[derive(Debug, Clone)]
pub struct World {
    kin: Kinematics,
    width: f64,
    height: f64,
    // inner walls followed by the four boundary edges
    walls: Vec<Segment>,
    items: Vec<Item>,
    agents: Vec<Body>,
    eye_offsets: Vec<f64>,
}

impl World {
    /// Places items and `agent_count` agents uniformly in free space.
    pub fn new(layout: &WorldLayout, kin: Kinematics, agent_count: usize, rng: &mut SimRng) -> Result<Self> {
        if kin.eyes == 0 || !(kin.eye_range > 0.0) || !(kin.speed >= 0.0) {
            return Err(FetsError::invalid("eyes, eye range and speed must be positive"));
        }
        let (w, h) = (layout.width, layout.height);
        let mut walls = layout.walls.clone();
        walls.extend([
            Segment { a: [0.0, 0.0], b: [w, 0.0] },
            Segment { a: [w, 0.0], b: [w, h] },
            Segment { a: [w, h], b: [0.0, h] },
            Segment { a: [0.0, h], b: [0.0, 0.0] },
        ]);
        let eye_offsets = kin.eye_offsets();
        let mut world = Self {
            kin,
            width: w,
            height: h,
            walls,
            items: Vec::new(),
            agents: Vec::new(),
            eye_offsets,
        };
        for kind in std::iter::repeat_n(ItemKind::Food, layout.food)
            .chain(std::iter::repeat_n(ItemKind::Poison, layout.poison))
        {
            let pos = world.free_point(world.kin.item_radius, rng)?;
            world.items.push(Item { pos, kind });
        }
        for _ in 0..agent_count {
            let pos = world.free_point(world.kin.agent_radius, rng)?;
            let heading = rng.random_range(-PI..PI);
            world.agents.push(Body { pos, heading });
        }
        Ok(world)
    }

    /// A world with explicit contents, for tests and tools.
    pub fn from_parts(
        width: f64,
        height: f64,
        inner_walls: Vec<Segment>,
        items: Vec<Item>,
        agents: Vec<Body>,
        kin: Kinematics,
    ) -> Self {
        let mut walls = inner_walls;
        walls.extend([
            Segment { a: [0.0, 0.0], b: [width, 0.0] },
            Segment { a: [width, 0.0], b: [width, height] },
            Segment { a: [width, height], b: [0.0, height] },
            Segment { a: [0.0, height], b: [0.0, 0.0] },
        ]);
        let eye_offsets = kin.eye_offsets();
        Self { kin, width, height, walls, items, agents, eye_offsets }
    }

    pub fn kinematics(&self) -> &Kinematics {
        &self.kin
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn agents(&self) -> &[Body] {
        &self.agents
    }

    pub fn walls(&self) -> &[Segment] {
        &self.walls
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.width, self.height)
    }

    fn clear_of_walls(&self, p: [f64; 2], radius: f64) -> bool {
        p[0] >= radius
            && p[1] >= radius
            && p[0] <= self.width - radius
            && p[1] <= self.height - radius
            && self.walls.iter().all(|w| w.distance_to(p) >= radius)
    }

    fn free_point(&self, radius: f64, rng: &mut SimRng) -> Result<[f64; 2]> {
        for _ in 0..100_000 {
            let p = [
                rng.random_range(0.0..self.width),
                rng.random_range(0.0..self.height),
            ];
            if self.clear_of_walls(p, radius) {
                return Ok(p);
            }
        }
        Err(FetsError::invalid("no free space to place an object"))
    }

    /// Proximity per eye and feature, eye-major: entry `3 e + k` is
    /// feature `k` seen by eye `e`. 1 means nothing within range, 0 touching.
    /// Walls hide items behind them; items hide nothing.
    pub fn sense(&self, agent: usize) -> Vec<f64> {
        let body = self.agents[agent];
        let range = self.kin.eye_range;
        let r_item = self.kin.item_radius;
        let mut obs = vec![1.0; self.kin.observation_len()];
        let nearby: Vec<&Item> = self
            .items
            .iter()
            .filter(|it| {
                let d = [it.pos[0] - body.pos[0], it.pos[1] - body.pos[1]];
                (d[0] * d[0] + d[1] * d[1]).sqrt() <= range + r_item
            })
            .collect();
        for (e, off) in self.eye_offsets.iter().enumerate() {
            let angle = body.heading + off;
            let dir = [angle.cos(), angle.sin()];
            let wall = self
                .walls
                .iter()
                .filter_map(|w| w.ray_hit(body.pos, dir))
                .fold(f64::INFINITY, f64::min);
            let limit = wall.min(range);
            if wall <= range {
                obs[FEATURES * e + WALL] = wall / range;
            }
            for it in &nearby {
                if let Some(t) = ray_circle(body.pos, dir, it.pos, r_item) {
                    if t <= limit {
                        let k = FEATURES * e + if it.kind == ItemKind::Food { FOOD } else { POISON };
                        obs[k] = obs[k].min(t / range);
                    }
                }
            }
        }
        obs
    }

    /// Moves one agent and resolves item collisions; items eaten respawn
    /// immediately. Returns the digestion reward.
    fn advance(&mut self, agent: usize, action: usize, rng: &mut SimRng) -> Result<f64> {
        let turn = self.kin.turn(action);
        let body = &mut self.agents[agent];
        body.heading = wrap_angle(body.heading + turn);
        let target = [
            body.pos[0] + self.kin.speed * body.heading.cos(),
            body.pos[1] + self.kin.speed * body.heading.sin(),
        ];
        if self.clear_of_walls(target, self.kin.agent_radius) {
            self.agents[agent].pos = target;
        }
        let pos = self.agents[agent].pos;
        let reach = self.kin.agent_radius + self.kin.item_radius;
        let mut r_d = 0.0;
        for i in 0..self.items.len() {
            let it = self.items[i];
            let d = ((it.pos[0] - pos[0]).powi(2) + (it.pos[1] - pos[1]).powi(2)).sqrt();
            if d < reach {
                r_d += match it.kind {
                    ItemKind::Food => FOOD_REWARD,
                    ItemKind::Poison => POISON_REWARD,
                };
                self.items[i].pos = self.free_point(self.kin.item_radius, rng)?;
            }
        }
        Ok(r_d)
    }

    /// One tick for every agent, in index order. Agents do not see or block
    /// each other; item collisions are resolved agent by agent.
    pub fn tick(&mut self, actions: &[usize], rng: &mut SimRng) -> Result<Vec<StepReport>> {
        if actions.len() != self.agents.len() {
            return Err(FetsError::invalid(format!(
                "{} actions for {} agents",
                actions.len(),
                self.agents.len()
            )));
        }
        if let Some(a) = actions.iter().find(|a| **a >= ACTION_COUNT) {
            return Err(FetsError::invalid(format!("continuous action {a} out of range")));
        }
        let mut digestion = Vec::with_capacity(actions.len());
        for (i, a) in actions.iter().enumerate() {
            digestion.push(self.advance(i, *a, rng)?);
        }
        Ok(actions
            .iter()
            .zip(digestion)
            .enumerate()
            .map(|(i, (a, r_d))| {
                let observation = self.sense(i);
                let r_p = (0..self.kin.eyes)
                    .map(|e| observation[FEATURES * e + WALL])
                    .sum::<f64>()
                    / self.kin.eyes as f64;
                let r_sf = if *a == 0 && r_p > 0.75 { 0.1 * r_p } else { 0.0 };
                StepReport {
                    observation,
                    reward: r_p + r_sf + r_d,
                    r_p,
                    r_sf,
                    r_d,
                }
            })
            .collect())
    }

    /// Single-agent step.
    pub fn step(&mut self, action: usize, rng: &mut SimRng) -> Result<StepReport> {
        if self.agents.len() != 1 {
            return Err(FetsError::invalid("single-agent step on a multi-agent world"));
        }
        Ok(self.tick(&[action], rng)?.pop().unwrap())
    }

    pub fn item_counts(&self) -> (usize, usize) {
        let food = self.items.iter().filter(|i| i.kind == ItemKind::Food).count();
        (food, self.items.len() - food)
    }

    /// True when the agent's body overlaps no wall.
    pub fn agent_clear(&self, agent: usize) -> bool {
        self.clear_of_walls(self.agents[agent].pos, self.kin.agent_radius - 1e-9)
    }
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Distance along a unit ray to the first point of a circle, if hit. A ray
/// starting inside the circle hits at distance 0.
fn ray_circle(origin: [f64; 2], dir: [f64; 2], centre: [f64; 2], radius: f64) -> Option<f64> {
    let m = [origin[0] - centre[0], origin[1] - centre[1]];
    let b = m[0] * dir[0] + m[1] * dir[1];
    let c = m[0] * m[0] + m[1] * m[1] - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    if b > 0.0 {
        return None;
    }
    let disc = b * b - c;
    (disc >= 0.0).then(|| -b - disc.sqrt())
}

/// Indices of one feature's entries in an eye-major observation.
pub fn feature_indices(feature: usize, eyes: usize) -> Vec<usize> {
    (0..eyes).map(|e| FEATURES * e + feature).collect()
}

/// The wall, food and poison sub-observations.
pub fn split_features(observation: &[f64], eyes: usize) -> [Vec<f64>; FEATURES] {
    [WALL, FOOD, POISON].map(|k| feature_indices(k, eyes).into_iter().map(|i| observation[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn kin() -> Kinematics {
        Kinematics::default()
    }

    fn lone(pos: [f64; 2], heading: f64, walls: Vec<Segment>, items: Vec<Item>) -> World {
        World::from_parts(700.0, 500.0, walls, items, vec![Body { pos, heading }], kin())
    }

    #[test]
    fn open_space_senses_nothing() {
        let w = lone([350.0, 250.0], 0.3, vec![], vec![]);
        assert_eq!(w.sense(0), vec![1.0; 27]);
    }

    #[test]
    fn wall_at_half_range() {
        // eye 4 looks straight ahead along +x
        let wall = Segment { a: [392.5, 0.0], b: [392.5, 500.0] };
        let w = lone([350.0, 250.0], 0.0, vec![wall], vec![]);
        let obs = w.sense(0);
        assert!((obs[3 * 4 + WALL] - 0.5).abs() < 1e-12);
        assert_eq!((obs[3 * 4 + FOOD], obs[3 * 4 + POISON]), (1.0, 1.0));
    }

    #[test]
    fn translation_invariance() {
        let items = vec![
            Item { pos: [380.0, 260.0], kind: ItemKind::Food },
            Item { pos: [330.0, 300.0], kind: ItemKind::Poison },
        ];
        let wall = Segment { a: [400.0, 200.0], b: [400.0, 300.0] };
        let a = lone([350.0, 250.0], 0.4, vec![wall], items.clone());
        let shift = |p: [f64; 2]| [p[0] + 40.0, p[1] - 30.0];
        let moved_items = items.iter().map(|i| Item { pos: shift(i.pos), kind: i.kind }).collect();
        let moved_wall = Segment { a: shift(wall.a), b: shift(wall.b) };
        let b = lone(shift([350.0, 250.0]), 0.4, vec![moved_wall], moved_items);
        for (x, y) in a.sense(0).iter().zip(b.sense(0)) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn wall_hides_items_behind_it() {
        let wall = Segment { a: [380.0, 0.0], b: [380.0, 500.0] };
        let food = Item { pos: [400.0, 250.0], kind: ItemKind::Food };
        let w = lone([350.0, 250.0], 0.0, vec![wall], vec![food]);
        assert_eq!(w.sense(0)[3 * 4 + FOOD], 1.0);
    }

    #[test]
    fn reward_examples() {
        let mut rng = SimRng::seed_from_u64(1);
        let mut w = lone([350.0, 250.0], 0.0, vec![], vec![]);
        let r = w.step(1, &mut rng).unwrap();
        assert_eq!((r.reward, r.r_p, r.r_sf, r.r_d), (1.0, 1.0, 0.0, 0.0));
        let r = w.step(0, &mut rng).unwrap();
        assert!((r.reward - 1.1).abs() < 1e-12);

        // food right ahead: eaten on the next move
        let food = Item { pos: [372.0, 250.0], kind: ItemKind::Food };
        let mut w = lone([350.0, 250.0], 0.0, vec![], vec![food]);
        let r = w.step(2, &mut rng).unwrap();
        assert_eq!(r.r_d, 5.0);
        assert!((r.reward - (r.r_p + r.r_sf + r.r_d)).abs() < 1e-15);
        assert_eq!(w.item_counts(), (1, 0));
    }

    #[test]
    fn straight_bonus_needs_clear_view() {
        let mut rng = SimRng::seed_from_u64(2);
        // wall ahead at proximity well below 0.75 for most eyes
        let wall = Segment { a: [370.0, 0.0], b: [370.0, 500.0] };
        let mut w = lone([340.0, 250.0], 0.0, vec![wall], vec![]);
        let r = w.step(0, &mut rng).unwrap();
        assert!(r.r_p < 0.75);
        assert_eq!(r.r_sf, 0.0);
    }

    #[test]
    fn blocked_move_stays_put() {
        let mut rng = SimRng::seed_from_u64(3);
        let wall = Segment { a: [361.0, 0.0], b: [361.0, 500.0] };
        let mut w = lone([350.0, 250.0], 0.0, vec![wall], vec![]);
        w.step(0, &mut rng).unwrap();
        assert_eq!(w.agents()[0].pos, [350.0, 250.0]);
    }

    #[test]
    fn racing_for_one_food() {
        let mut rng = SimRng::seed_from_u64(4);
        let food = Item { pos: [350.0, 250.0], kind: ItemKind::Food };
        let agents = vec![
            Body { pos: [330.0, 250.0], heading: 0.0 },
            Body { pos: [370.0, 250.0], heading: PI },
        ];
        let mut w = World::from_parts(700.0, 500.0, vec![], vec![food], agents, kin());
        let reports = w.tick(&[0, 0], &mut rng).unwrap();
        assert_eq!(reports[0].r_d, 5.0);
        let respawned = w.items()[0].pos;
        let d = ((respawned[0] - 373.0).powi(2) + (respawned[1] - 250.0).powi(2)).sqrt();
        assert_eq!(reports[1].r_d, if d < 20.0 { 5.0 } else { 0.0 });
    }

    #[test]
    fn random_walk_keeps_invariants() {
        let layout = WorldLayout::builtin(3).unwrap();
        let mut rng = SimRng::seed_from_u64(5);
        let mut w = World::new(&layout, kin(), 2, &mut rng).unwrap();
        let counts = w.item_counts();
        for _ in 0..5_000 {
            let actions = [rng.random_range(0..5), rng.random_range(0..5)];
            let reports = w.tick(&actions, &mut rng).unwrap();
            for (i, r) in reports.iter().enumerate() {
                assert!(r.observation.iter().all(|v| (0.0..=1.0).contains(v)));
                assert!(w.agent_clear(i));
            }
            assert_eq!(w.item_counts(), counts);
        }
    }

    #[test]
    fn layout_parsing() {
        for n in 1..=4 {
            let l = WorldLayout::builtin(n).unwrap();
            assert_eq!((l.width, l.height, l.food, l.poison), (700.0, 500.0, 50, 50));
        }
        let l = WorldLayout::parse("bounds 100 80\nwall 10 10 50 10 # top\nitems food 3 poison 4\n", "t").unwrap();
        assert_eq!(l.walls.len(), 1);
        assert_eq!((l.food, l.poison), (3, 4));
        for bad in ["wall 1 2 3 4\n", "bounds 100\n", "bounds 10 10\nwall 0 0 20 0\n", "bounds 1 1\nfoo\n"] {
            assert!(WorldLayout::parse(bad, "bad").is_err(), "{bad:?}");
        }
    }

    #[test]
    fn feature_split_is_a_partition() {
        let obs: Vec<f64> = (0..27).map(|i| i as f64).collect();
        let [wall, food, poison] = split_features(&obs, 9);
        assert_eq!(food, (0..9).map(|e| (3 * e + 1) as f64).collect::<Vec<_>>());
        let mut all: Vec<f64> = wall.into_iter().chain(food).chain(poison).collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, obs);
    }
}
