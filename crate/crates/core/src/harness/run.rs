//! Seeded execution of configured experiments.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EnvSpec, RunConfig};
use super::records::{EpisodeRecord, EpisodeStats, RecordWriter};
use crate::agent::tabular::tabular_space_names;
use crate::agent::{Decision, Method, NetworkAgent, Settings, TabularAgent};
use crate::envs::continuous::{Kinematics, StepReport, World, WorldLayout};
use crate::envs::SimRng;
use crate::error::{FetsError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_SNAPSHOT: &str = "config.toml";

/// Random streams of one seed: the environment's and each agent's.
pub fn env_rng(seed: u64) -> SimRng {
    let mut r = SimRng::seed_from_u64(seed);
    r.set_stream(0);
    r
}

pub fn agent_rng(seed: u64, agent: usize) -> SimRng {
    let mut r = SimRng::seed_from_u64(seed);
    r.set_stream(1 + agent as u64);
    r
}

pub fn run_id(name: &str, method: Method) -> String {
    format!("{name}:{method}")
}

/// Episode loop of one tabular agent. Each finished episode is passed to
/// `sink`; the trained agent is returned.
#[allow(clippy::too_many_arguments)]
pub fn run_tabular(
    env: &EnvSpec,
    method: Method,
    settings: &Settings,
    episodes: u64,
    max_steps: u64,
    seed: u64,
    run_id: &str,
    sink: &mut dyn FnMut(EpisodeRecord) -> Result<()>,
) -> Result<TabularAgent> {
    let mut env = env
        .tabular()
        .ok_or_else(|| FetsError::invalid(format!("{method} needs a tabular environment")))?;
    let mut agent = TabularAgent::new(
        method,
        settings,
        env.state_count(),
        env.action_count(),
        env.projections(),
        env.reward_span(),
    )?;
    let spaces = agent.space_names().len();
    let mut erng = env_rng(seed);
    let mut arng = agent_rng(seed, 0);
    for episode in 0..episodes {
        let mut s = env.reset(&mut erng);
        let mut stats = EpisodeStats::new(spaces);
        let mut truncated = true;
        while stats.steps() < max_steps {
            let d = agent.act(s, &mut arng)?;
            let step = env.step(d.action, &mut erng)?;
            stats.record(&d, step.reward);
            agent.observe(s, d.action, step.reward, step.next)?;
            match step.next {
                Some(n) => s = n,
                None => {
                    truncated = false;
                    break;
                }
            }
        }
        if truncated {
            agent.end_episode()?;
        }
        sink(stats.finish(run_id, seed, episode, truncated))?;
    }
    Ok(agent)
}

/// Called after every tick of the shared continuous world.
pub type TickMonitor<'a> = dyn FnMut(&World, &[Decision], &[StepReport]) -> Result<()> + 'a;

/// Runs every method as one agent of a shared world for
/// `episodes * block` ticks, cutting the reward stream into episodes of
/// `block` steps. `sinks[i]` receives agent `i`'s episodes.
#[allow(clippy::too_many_arguments)]
pub fn run_continuous(
    layout: &WorldLayout,
    kin: &Kinematics,
    methods: &[Method],
    settings: &Settings,
    episodes: u64,
    block: u64,
    seed: u64,
    run_ids: &[String],
    sinks: &mut [&mut dyn FnMut(EpisodeRecord) -> Result<()>],
    mut monitor: Option<&mut TickMonitor<'_>>,
) -> Result<Vec<NetworkAgent>> {
    if sinks.len() != methods.len() || run_ids.len() != methods.len() {
        return Err(FetsError::invalid("one sink and run id per method"));
    }
    let mut erng = env_rng(seed);
    let mut world = World::new(layout, kin.clone(), methods.len(), &mut erng)?;
    let mut rngs: Vec<SimRng> = (0..methods.len()).map(|i| agent_rng(seed, i)).collect();
    let mut agents = methods
        .iter()
        .zip(rngs.iter_mut())
        .map(|(m, r)| NetworkAgent::new(*m, settings, kin.eyes, crate::envs::continuous::ACTION_COUNT, r))
        .collect::<Result<Vec<_>>>()?;
    let mut obs: Vec<Vec<f64>> = (0..methods.len()).map(|i| world.sense(i)).collect();
    for episode in 0..episodes {
        let mut stats: Vec<EpisodeStats> = agents.iter().map(|a| EpisodeStats::new(a.space_names().len())).collect();
        for _ in 0..block {
            let decisions = agents
                .iter()
                .zip(&obs)
                .zip(rngs.iter_mut())
                .map(|((a, o), r)| a.act(o, r))
                .collect::<Result<Vec<_>>>()?;
            let actions: Vec<usize> = decisions.iter().map(|d| d.action).collect();
            let reports = world.tick(&actions, &mut erng)?;
            for i in 0..agents.len() {
                stats[i].record(&decisions[i], reports[i].reward);
                agents[i].observe(&obs[i], actions[i], reports[i].reward, &reports[i].observation, &mut rngs[i])?;
            }
            if let Some(m) = monitor.as_mut() {
                m(&world, &decisions, &reports)?;
            }
            for (o, r) in obs.iter_mut().zip(reports) {
                *o = r.observation;
            }
        }
        for (i, st) in stats.iter().enumerate() {
            (sinks[i])(st.finish(&run_ids[i], seed, episode, false))?;
        }
    }
    Ok(agents)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub run_id: String,
    pub method: String,
    pub seed: u64,
    pub file: String,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub name: String,
    /// False when the run aborted; `runs` then lists the finished files.
    pub complete: bool,
    pub runs: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| FetsError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| FetsError::Parse {
            source_name: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| FetsError::io(&path, e))
    }
}

fn csv_name(method: Method, seed: u64) -> String {
    format!("{method}_seed{seed}.csv")
}

enum Task {
    Tabular(Method, u64),
    Continuous(u64),
}

/// Executes `config` into `out_dir` with at most `jobs` seeds in flight.
/// Writes one CSV per method and seed, a config snapshot and a manifest.
pub fn run(config: &RunConfig, out_dir: &Path, jobs: usize) -> Result<Manifest> {
    let env = config.validate()?;
    let seeds = config.effective_seeds()?;
    std::fs::create_dir_all(out_dir).map_err(|e| FetsError::io(out_dir, e))?;
    let snapshot = out_dir.join(CONFIG_SNAPSHOT);
    std::fs::write(&snapshot, config.to_toml()).map_err(|e| FetsError::io(&snapshot, e))?;

    let settings = config.settings();
    let methods = &config.run.methods;
    let tasks: Vec<Task> = match env {
        EnvSpec::Continuous(..) => seeds.iter().map(|s| Task::Continuous(*s)).collect(),
        _ => seeds
            .iter()
            .flat_map(|s| methods.iter().map(move |m| Task::Tabular(*m, *s)))
            .collect(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| FetsError::State(e.to_string()))?;
    let results: Vec<Result<Vec<ManifestEntry>>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|task| run_task(config, &env, &settings, task, out_dir))
            .collect()
    });

    let mut manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        name: config.run.name.clone(),
        complete: true,
        runs: Vec::new(),
        error: None,
    };
    let mut first_err = None;
    for r in results {
        match r {
            Ok(entries) => manifest.runs.extend(entries),
            Err(e) => {
                manifest.complete = false;
                if manifest.error.is_none() {
                    manifest.error = Some(e.to_string());
                }
                first_err.get_or_insert(e);
            }
        }
    }
    manifest.save(out_dir)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

fn run_task(config: &RunConfig, env: &EnvSpec, settings: &Settings, task: &Task, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let started = Instant::now();
    let name = &config.run.name;
    match *task {
        Task::Tabular(method, seed) => {
            let file = csv_name(method, seed);
            let path = out_dir.join(&file);
            let id = run_id(name, method);
            let spaces = space_names_for(env, method, settings)?;
            let mut writer = RecordWriter::create(&path, &spaces)?;
            run_tabular(env, method, settings, config.run.episodes, config.run.max_steps, seed, &id, &mut |r| writer.write(&r))?;
            writer.finish()?;
            Ok(vec![ManifestEntry {
                run_id: id,
                method: method.to_string(),
                seed,
                file,
                wall_clock_secs: started.elapsed().as_secs_f64(),
            }])
        }
        Task::Continuous(seed) => {
            let EnvSpec::Continuous(layout, kin) = env else {
                unreachable!("continuous task on a tabular environment")
            };
            let methods = &config.run.methods;
            let ids: Vec<String> = methods.iter().map(|m| run_id(name, *m)).collect();
            let files: Vec<String> = methods.iter().map(|m| csv_name(*m, seed)).collect();
            let mut writers = Vec::new();
            for (m, f) in methods.iter().zip(&files) {
                let probe = NetworkAgent::new(*m, settings, kin.eyes, crate::envs::continuous::ACTION_COUNT, &mut agent_rng(seed, 0))?;
                writers.push(RecordWriter::create(&out_dir.join(f), &probe.space_names())?);
            }
            {
                let mut closures: Vec<Box<dyn FnMut(EpisodeRecord) -> Result<()> + '_>> = writers
                    .iter_mut()
                    .map(|w| Box::new(move |r: EpisodeRecord| w.write(&r)) as Box<dyn FnMut(EpisodeRecord) -> Result<()>>)
                    .collect();
                let mut sinks: Vec<&mut dyn FnMut(EpisodeRecord) -> Result<()>> =
                    closures.iter_mut().map(|c| c.as_mut() as &mut dyn FnMut(EpisodeRecord) -> Result<()>).collect();
                run_continuous(layout, kin, methods, settings, config.run.episodes, config.run.max_steps, seed, &ids, &mut sinks, None)?;
            }
            for w in writers {
                w.finish()?;
            }
            let secs = started.elapsed().as_secs_f64();
            Ok(methods
                .iter()
                .zip(ids)
                .zip(files)
                .map(|((m, run_id), file)| ManifestEntry {
                    run_id,
                    method: m.to_string(),
                    seed,
                    file,
                    wall_clock_secs: secs,
                })
                .collect())
        }
    }
}

fn space_names_for(env: &EnvSpec, method: Method, settings: &Settings) -> Result<Vec<String>> {
    let e = env.tabular().expect("tabular environment");
    tabular_space_names(method, settings, e.projections())
}

/// Output directory for a config: `--out` override, the config's
/// `run.out`, or `results/<name>` next to the config.
pub fn resolve_out_dir(config: &RunConfig, overridden: Option<&Path>) -> PathBuf {
    overridden
        .map(Path::to_path_buf)
        .or_else(|| config.out_dir())
        .unwrap_or_else(|| config.base_dir.join("results").join(&config.run.name))
}
