//! Run configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentSettings, MbSettings, Method, MfSettings, NetSettings, Settings};
use crate::envs::combat::{Combat, CombatEnv, CombatSpec};
use crate::envs::continuous::{Kinematics, WorldLayout};
use crate::envs::maze::{Maze, MazeEnv, DEFAULT_SUCCESS_PROB};
use crate::envs::TabularEnv;
use crate::error::{FetsError, Result};

/// Environment variable adding an offset to every configured seed.
pub const SEED_OFFSET_VAR: &str = "FETS_SEED_OFFSET";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Maze,
    Combat,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Experiment name; prefixes every run id.
    pub name: String,
    pub methods: Vec<Method>,
    pub episodes: u64,
    /// Step cap per episode. In the continuous world an episode is a block
    /// of exactly this many steps.
    pub max_steps: u64,
    pub seeds: Vec<u64>,
    /// Output directory, relative to the config file.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub kind: EnvKind,
    /// Builtin layout name (`maze1`..`maze8`, `world1`..`world4`) or a
    /// layout file relative to the config file.
    #[serde(default)]
    pub layout: Option<String>,
    #[serde(default)]
    pub success_prob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub env: EnvSection,
    #[serde(default)]
    pub combat: Option<CombatSpec>,
    #[serde(default)]
    pub world: Option<Kinematics>,
    #[serde(default)]
    pub agent: AgentSettings,
    #[serde(default)]
    pub mf: MfSettings,
    #[serde(default)]
    pub mb: MbSettings,
    #[serde(default)]
    pub net: NetSettings,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// A constructed environment description, ready to instantiate per run.
#[derive(Debug, Clone)]
pub enum EnvSpec {
    Maze(Maze),
    Combat(Combat),
    Continuous(WorldLayout, Kinematics),
}

impl EnvSpec {
    pub fn action_count(&self) -> usize {
        match self {
            EnvSpec::Maze(_) => crate::envs::maze::ACTION_COUNT,
            EnvSpec::Combat(c) => c.spec().action_count(),
            EnvSpec::Continuous(..) => crate::envs::continuous::ACTION_COUNT,
        }
    }

    pub fn tabular(&self) -> Option<Box<dyn TabularEnv>> {
        match self {
            EnvSpec::Maze(m) => Some(Box::new(MazeEnv::new(m.clone()))),
            EnvSpec::Combat(c) => Some(Box::new(CombatEnv::new(c.clone()))),
            EnvSpec::Continuous(..) => None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            FetsError::validation(source.display().to_string(), e.message().to_string() + &span_note(text, e.span()))
        })?;
        cfg.base_dir = source.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FetsError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn settings(&self) -> Settings {
        Settings {
            agent: self.agent.clone(),
            mf: self.mf.clone(),
            mb: self.mb.clone(),
            net: self.net.clone(),
        }
    }

    /// Serialized form written next to the results.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Seeds after applying the environment offset.
    pub fn effective_seeds(&self) -> Result<Vec<u64>> {
        let offset = match std::env::var(SEED_OFFSET_VAR) {
            Ok(v) => v
                .trim()
                .parse::<u64>()
                .map_err(|_| FetsError::validation(SEED_OFFSET_VAR, format!("not an unsigned integer: '{v}'")))?,
            Err(_) => 0,
        };
        self.run
            .seeds
            .iter()
            .map(|s| {
                s.checked_add(offset)
                    .ok_or_else(|| FetsError::validation("run.seeds", "seed overflows with the offset"))
            })
            .collect()
    }

    pub fn out_dir(&self) -> Option<PathBuf> {
        self.run.out.as_ref().map(|p| self.base_dir.join(p))
    }

    /// Checks every field and builds the environment.
    pub fn validate(&self) -> Result<EnvSpec> {
        let r = &self.run;
        if r.name.is_empty() || r.name.contains(|c: char| c == ':' || c == '/' || c.is_whitespace()) {
            return Err(FetsError::validation("run.name", "must be non-empty without ':', '/' or spaces"));
        }
        if r.methods.is_empty() {
            return Err(FetsError::validation("run.methods", "at least one method is required"));
        }
        for (i, m) in r.methods.iter().enumerate() {
            if r.methods[..i].contains(m) {
                return Err(FetsError::validation(format!("run.methods[{i}]"), format!("duplicate method {m}")));
            }
        }
        if r.episodes == 0 {
            return Err(FetsError::validation("run.episodes", "must be at least 1"));
        }
        if r.max_steps == 0 {
            return Err(FetsError::validation("run.max_steps", "must be at least 1"));
        }
        if r.seeds.is_empty() {
            return Err(FetsError::validation("run.seeds", "at least one seed is required"));
        }
        self.effective_seeds()?;
        self.validate_settings()?;
        let env = self.build_env()?;
        let actions = env.action_count();
        if self.agent.xi >= 1.0 / actions as f64 {
            return Err(FetsError::validation("agent.xi", format!("must lie in (0, 1/{actions})")));
        }
        let tabular = !matches!(env, EnvSpec::Continuous(..));
        for (i, m) in r.methods.iter().enumerate() {
            if m.is_tabular() != tabular {
                return Err(FetsError::validation(
                    format!("run.methods[{i}]"),
                    format!("{m} does not apply to a {:?} environment", self.env.kind).to_lowercase(),
                ));
            }
        }
        Ok(env)
    }

    fn validate_settings(&self) -> Result<()> {
        let a = &self.agent;
        if !(a.alpha > 0.0 && a.alpha.is_finite()) {
            return Err(FetsError::validation("agent.alpha", "must be finite and positive"));
        }
        if !(a.beta >= 1.0 && a.beta.is_finite()) {
            return Err(FetsError::validation("agent.beta", "must be finite and at least 1"));
        }
        if !(0.0..1.0).contains(&a.gamma) {
            return Err(FetsError::validation("agent.gamma", "must lie in [0,1)"));
        }
        if !(0.0..=1.0).contains(&a.epsilon) {
            return Err(FetsError::validation("agent.epsilon", "must lie in [0,1]"));
        }
        if let Some(e) = a.epsilon_end {
            if !(0.0..=1.0).contains(&e) {
                return Err(FetsError::validation("agent.epsilon_end", "must lie in [0,1]"));
            }
        }
        if !(a.xi > 0.0 && a.xi < 1.0) {
            return Err(FetsError::validation("agent.xi", "must lie in (0, 1/|A|)"));
        }
        if a.ts_samples == 0 {
            return Err(FetsError::validation("agent.ts_samples", "must be at least 1"));
        }
        let mf = &self.mf;
        if !(mf.eta > 0.0 && mf.eta <= 1.0) {
            return Err(FetsError::validation("mf.eta", "must lie in (0,1]"));
        }
        if !(0.0..=1.0).contains(&mf.lambda) {
            return Err(FetsError::validation("mf.lambda", "must lie in [0,1]"));
        }
        if !(mf.nu > 0.0 && mf.nu < 1.0) {
            return Err(FetsError::validation("mf.nu", "must lie in (0,1)"));
        }
        let mb = &self.mb;
        if !(mb.delta > 0.0 && mb.delta < 1.0) {
            return Err(FetsError::validation("mb.delta", "must lie in (0,1)"));
        }
        if mb.z.is_some_and(|z| !(z > 0.0)) {
            return Err(FetsError::validation("mb.z", "must be positive"));
        }
        if mb.solve_every == 0 {
            return Err(FetsError::validation("mb.solve_every", "must be at least 1"));
        }
        if !(mb.tol > 0.0) || mb.max_iters == 0 {
            return Err(FetsError::validation("mb.tol", "tolerance and iteration cap must be positive"));
        }
        let n = &self.net;
        if !(0.0..1.0).contains(&n.dropout) {
            return Err(FetsError::validation("net.dropout", "must lie in [0,1)"));
        }
        if n.passes == 0 {
            return Err(FetsError::validation("net.passes", "must be at least 1"));
        }
        if !(n.learning_rate > 0.0) {
            return Err(FetsError::validation("net.learning_rate", "must be positive"));
        }
        if n.batch == 0 || n.replay < n.batch {
            return Err(FetsError::validation("net.batch", "must be at least 1 and at most net.replay"));
        }
        if n.train_every == 0 {
            return Err(FetsError::validation("net.train_every", "must be at least 1"));
        }
        if n.hidden_main.contains(&0) || n.hidden_sub.contains(&0) {
            return Err(FetsError::validation("net.hidden_main", "layer widths must be positive"));
        }
        Ok(())
    }

    fn layout_path(&self, layout: &str) -> Result<PathBuf> {
        let path = self.base_dir.join(layout);
        if !path.is_file() {
            return Err(FetsError::validation("env.layout", format!("no builtin or file named '{layout}'")));
        }
        Ok(path)
    }

    fn build_env(&self) -> Result<EnvSpec> {
        let e = &self.env;
        let wrap = |err: FetsError| match err {
            FetsError::Validation { .. } => err,
            other => FetsError::validation("env.layout", other.to_string()),
        };
        if e.kind != EnvKind::Combat && self.combat.is_some() {
            return Err(FetsError::validation("combat", "only valid with env.kind = \"combat\""));
        }
        if e.kind != EnvKind::Continuous && self.world.is_some() {
            return Err(FetsError::validation("world", "only valid with env.kind = \"continuous\""));
        }
        if e.kind != EnvKind::Maze && e.success_prob.is_some() {
            return Err(FetsError::validation("env.success_prob", "only valid with env.kind = \"maze\""));
        }
        match e.kind {
            EnvKind::Maze => {
                let layout = e
                    .layout
                    .as_deref()
                    .ok_or_else(|| FetsError::validation("env.layout", "required for mazes"))?;
                let maze = match builtin_number(layout, "maze") {
                    Some(n) => Maze::builtin(n).map_err(wrap)?,
                    None => Maze::load(&self.layout_path(layout)?).map_err(wrap)?,
                };
                let p = e.success_prob.unwrap_or(DEFAULT_SUCCESS_PROB);
                let maze = maze
                    .with_success_prob(p)
                    .map_err(|err| FetsError::validation("env.success_prob", err.to_string()))?;
                Ok(EnvSpec::Maze(maze))
            }
            EnvKind::Combat => {
                if e.layout.is_some() {
                    return Err(FetsError::validation("env.layout", "combat is configured in [combat]"));
                }
                let spec = self.combat.clone().unwrap_or_default();
                let combat = Combat::new(spec).map_err(|err| match err {
                    FetsError::Validation { .. } => err,
                    other => FetsError::validation("combat", other.to_string()),
                })?;
                Ok(EnvSpec::Combat(combat))
            }
            EnvKind::Continuous => {
                let layout = e.layout.as_deref().unwrap_or("world1");
                let world = match builtin_number(layout, "world") {
                    Some(n) => WorldLayout::builtin(n).map_err(wrap)?,
                    None => WorldLayout::load(&self.layout_path(layout)?).map_err(wrap)?,
                };
                let kin = self.world.clone().unwrap_or_default();
                if kin.eyes == 0 || !(kin.eye_range > 0.0) || !(kin.speed >= 0.0) {
                    return Err(FetsError::validation("world", "eyes, eye_range and speed must be positive"));
                }
                Ok(EnvSpec::Continuous(world, kin))
            }
        }
    }
}

fn builtin_number(layout: &str, prefix: &str) -> Option<usize> {
    layout.strip_prefix(prefix)?.parse().ok()
}

fn span_note(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => format!(" (line {})", text[..r.start.min(text.len())].lines().count().max(1)),
        None => String::new(),
    }
}
