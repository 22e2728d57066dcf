//! Abstract combat model: one agent unit against stationary enemy units on
//! an open grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rewards::{combat_goal, combat_misfire, combat_wall, TruncatedMixture};
use super::{Projection, SimRng, TabularEnv, TabularStep};
use crate::error::{FetsError, Result};

/// Combat configuration. Hitpoints and damage are shared by the agent and
/// every enemy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombatSpec {
    #[serde(default = "default_grid")]
    pub grid: [usize; 2],
    #[serde(default = "default_enemies")]
    pub enemies: Vec<[usize; 2]>,
    #[serde(default = "default_hp")]
    pub hp: u32,
    #[serde(default = "default_damage")]
    pub damage: u32,
    /// Manhattan distance within which shots land.
    #[serde(default = "default_theta_e")]
    pub theta_e: usize,
    /// Manhattan distance within which enemies fire at the agent.
    #[serde(default = "default_range")]
    pub range: usize,
    #[serde(default = "default_start")]
    pub start: [usize; 2],
}

fn default_grid() -> [usize; 2] {
    [16, 16]
}

fn default_enemies() -> Vec<[usize; 2]> {
    vec![[12, 4], [12, 11]]
}

fn default_hp() -> u32 {
    100
}

fn default_damage() -> u32 {
    25
}

fn default_theta_e() -> usize {
    3
}

fn default_range() -> usize {
    2
}

fn default_start() -> [usize; 2] {
    [2, 8]
}

impl Default for CombatSpec {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            enemies: default_enemies(),
            hp: default_hp(),
            damage: default_damage(),
            theta_e: default_theta_e(),
            range: default_range(),
            start: default_start(),
        }
    }
}

impl CombatSpec {
    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.grid;
        let on_grid = |p: [usize; 2]| p[0] < w && p[1] < h;
        if w == 0 || h == 0 {
            return Err(FetsError::validation("combat.grid", "grid must be non-empty"));
        }
        if self.enemies.is_empty() {
            return Err(FetsError::validation("combat.enemies", "at least one enemy is required"));
        }
        if let Some(e) = self.enemies.iter().find(|e| !on_grid(**e)) {
            return Err(FetsError::validation("combat.enemies", format!("enemy {e:?} is off the grid")));
        }
        if !on_grid(self.start) || self.enemies.contains(&self.start) {
            return Err(FetsError::validation("combat.start", "start must be a free grid cell"));
        }
        if self.hp == 0 {
            return Err(FetsError::validation("combat.hp", "hitpoints must be positive"));
        }
        if self.damage == 0 {
            return Err(FetsError::validation("combat.damage", "damage must be positive"));
        }
        Ok(())
    }

    /// Distinct hitpoint values a unit can have.
    fn hp_levels(&self) -> usize {
        self.hp.div_ceil(self.damage) as usize + 1
    }

    pub fn action_count(&self) -> usize {
        1 + 2 * self.enemies.len()
    }
}

/// Actions are `0..E` move toward enemy `i`, `E` retreat, `E+1..2E+1`
/// shoot enemy `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombatAction {
    Approach(usize),
    Retreat,
    Shoot(usize),
}

impl CombatAction {
    pub fn decode(index: usize, enemies: usize) -> Result<Self> {
        match index {
            i if i < enemies => Ok(CombatAction::Approach(i)),
            i if i == enemies => Ok(CombatAction::Retreat),
            i if i <= 2 * enemies => Ok(CombatAction::Shoot(i - enemies - 1)),
            i => Err(FetsError::invalid(format!(
                "combat action {i} out of range for {enemies} enemies"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CombatState {
    pub x: usize,
    pub y: usize,
    pub hp: u32,
    pub enemy_hp: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombatOutcome {
    pub next: CombatState,
    pub reward: f64,
    pub terminal: bool,
}

fn manhattan(a: [usize; 2], b: [usize; 2]) -> usize {
    a[0].abs_diff(b[0]) + a[1].abs_diff(b[1])
}

/// One cell toward `target`, reducing x first.
fn toward(from: [usize; 2], target: [usize; 2]) -> [usize; 2] {
    let step = |a: usize, b: usize| if a < b { a + 1 } else { a - 1 };
    if from[0] != target[0] {
        [step(from[0], target[0]), from[1]]
    } else if from[1] != target[1] {
        [from[0], step(from[1], target[1])]
    } else {
        from
    }
}

#[derive(Debug, Clone)]
pub struct Combat {
    spec: CombatSpec,
    misfire: TruncatedMixture,
    wall: TruncatedMixture,
    goal: TruncatedMixture,
}

impl Combat {
    pub fn new(spec: CombatSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            misfire: combat_misfire(),
            wall: combat_wall(),
            goal: combat_goal(),
        })
    }

    pub fn spec(&self) -> &CombatSpec {
        &self.spec
    }

    pub fn initial_state(&self) -> CombatState {
        CombatState {
            x: self.spec.start[0],
            y: self.spec.start[1],
            hp: self.spec.hp,
            enemy_hp: vec![self.spec.hp; self.spec.enemies.len()],
        }
    }

    fn check_state(&self, s: &CombatState) -> Result<()> {
        let [w, h] = self.spec.grid;
        if s.x >= w || s.y >= h || s.hp > self.spec.hp || s.enemy_hp.len() != self.spec.enemies.len() {
            return Err(FetsError::invalid("combat state does not match the spec"));
        }
        if s.enemy_hp.iter().any(|hp| *hp > self.spec.hp) {
            return Err(FetsError::invalid("enemy hitpoint above the maximum"));
        }
        Ok(())
    }

    pub fn step<R: Rng + ?Sized>(&self, s: &CombatState, action: usize, rng: &mut R) -> Result<CombatOutcome> {
        self.check_state(s)?;
        let enemies = &self.spec.enemies;
        let act = CombatAction::decode(action, enemies.len())?;
        let mut next = s.clone();
        let pos = [s.x, s.y];
        let mut r_a = 0.0;
        let mut move_to = |target: [usize; 2], next: &mut CombatState| {
            let cell = toward(pos, target);
            if cell == pos {
                return;
            }
            if enemies.contains(&cell) {
                // enemy units block the cell like a wall
                r_a += self.wall.sample(rng);
            } else {
                next.x = cell[0];
                next.y = cell[1];
            }
        };
        match act {
            CombatAction::Approach(i) => move_to(enemies[i], &mut next),
            CombatAction::Retreat => move_to(self.spec.start, &mut next),
            CombatAction::Shoot(i) => {
                if s.enemy_hp[i] > 0 && manhattan(pos, enemies[i]) <= self.spec.theta_e {
                    next.enemy_hp[i] = s.enemy_hp[i].saturating_sub(self.spec.damage);
                } else {
                    r_a += self.misfire.sample(rng);
                }
            }
        }
        let all_dead = next.enemy_hp.iter().all(|hp| *hp == 0);
        if !all_dead {
            let here = [next.x, next.y];
            for (e, hp) in enemies.iter().zip(&next.enemy_hp) {
                if *hp > 0 && manhattan(here, *e) <= self.spec.range {
                    next.hp = next.hp.saturating_sub(self.spec.damage);
                }
            }
        } else {
            r_a += self.goal.sample(rng);
        }
        let dealt: f64 = s
            .enemy_hp
            .iter()
            .zip(&next.enemy_hp)
            .map(|(a, b)| f64::from(a - b))
            .sum();
        let taken = f64::from(s.hp - next.hp);
        let reward = 10.0 * (dealt - taken) + r_a - 1.0;
        let terminal = all_dead || next.hp == 0;
        Ok(CombatOutcome { next, reward, terminal })
    }

    fn level(&self, hp: u32) -> usize {
        ((self.spec.hp - hp) / self.spec.damage) as usize
    }

    fn level_hp(&self, level: usize) -> u32 {
        self.spec.hp.saturating_sub(level as u32 * self.spec.damage)
    }

    /// Size of the indexed state set (position times hitpoint levels).
    pub fn state_count(&self) -> usize {
        let [w, h] = self.spec.grid;
        w * h * self.spec.hp_levels().pow(1 + self.spec.enemies.len() as u32)
    }

    pub fn state_index(&self, s: &CombatState) -> usize {
        let levels = self.spec.hp_levels();
        let mut index = s.y * self.spec.grid[0] + s.x;
        index = index * levels + self.level(s.hp);
        for hp in &s.enemy_hp {
            index = index * levels + self.level(*hp);
        }
        index
    }

    pub fn state_at(&self, mut index: usize) -> CombatState {
        let levels = self.spec.hp_levels();
        let mut enemy_hp = vec![0; self.spec.enemies.len()];
        for hp in enemy_hp.iter_mut().rev() {
            *hp = self.level_hp(index % levels);
            index /= levels;
        }
        let hp = self.level_hp(index % levels);
        index /= levels;
        CombatState {
            x: index % self.spec.grid[0],
            y: index / self.spec.grid[0],
            hp,
            enemy_hp,
        }
    }

    pub fn projections(&self) -> Vec<Projection> {
        let n = self.state_count();
        let states: Vec<CombatState> = (0..n).map(|i| self.state_at(i)).collect();
        let [w, h] = self.spec.grid;
        let mut out = vec![
            Projection {
                name: "XY".into(),
                size: w * h,
                map: states.iter().map(|s| s.y * w + s.x).collect(),
            },
            Projection {
                name: "HP".into(),
                size: self.spec.hp as usize + 1,
                map: states.iter().map(|s| s.hp as usize).collect(),
            },
        ];
        for (i, e) in self.spec.enemies.iter().enumerate() {
            out.push(Projection {
                name: format!("dist{}", i + 1),
                size: w + h - 1,
                map: states.iter().map(|s| manhattan([s.x, s.y], *e)).collect(),
            });
        }
        out
    }

    pub fn reward_span(&self) -> f64 {
        let d = f64::from(self.spec.damage);
        let enemies = self.spec.enemies.len() as f64;
        // best: a landed shot with the goal bonus; worst: a misfire or wall
        // hit while every enemy fires
        let best = 10.0 * d + self.goal.range().1 - 1.0;
        let worst = -10.0 * d * enemies + self.misfire.range().0.min(self.wall.range().0) - 1.0;
        best - worst
    }
}

/// A combat episode in progress.
#[derive(Debug, Clone)]
pub struct CombatEnv {
    combat: Combat,
    state: CombatState,
}

impl CombatEnv {
    pub fn new(combat: Combat) -> Self {
        let state = combat.initial_state();
        Self { combat, state }
    }

    pub fn state(&self) -> &CombatState {
        &self.state
    }
}

impl TabularEnv for CombatEnv {
    fn state_count(&self) -> usize {
        self.combat.state_count()
    }

    fn action_count(&self) -> usize {
        self.combat.spec.action_count()
    }

    fn reset(&mut self, _rng: &mut SimRng) -> usize {
        self.state = self.combat.initial_state();
        self.combat.state_index(&self.state)
    }

    fn step(&mut self, action: usize, rng: &mut SimRng) -> Result<TabularStep> {
        let out = self.combat.step(&self.state, action, rng)?;
        self.state = out.next;
        Ok(TabularStep {
            next: (!out.terminal).then(|| self.combat.state_index(&self.state)),
            reward: out.reward,
        })
    }

    fn projections(&self) -> Vec<Projection> {
        self.combat.projections()
    }

    fn reward_span(&self) -> f64 {
        self.combat.reward_span()
    }
}
