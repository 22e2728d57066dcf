//! Tabular agents: one model-free or model-based learner per space.

use rand::Rng;

use super::{decide, epsilon_greedy_policy, Decision, LearnerKind, Method, Scoring, Settings, SpaceView};
use crate::belief::{ci_to_gaussian, floor_policy, thompson_from_beliefs, ActionPolicy, GaussianBelief};
use crate::envs::Projection;
use crate::error::{FetsError, Result};
use crate::free_energy::FeParams;
use crate::mb_learner::{extended_vi, mb_belief, solve_q, BoundParams, MdpEstimate, QBounds, QValues, ViParams};
use crate::mf_learner::{mf_interval, record_returns, QTable, ReturnStats, TdParams};
use crate::stats::normal_quantile;

/// Name of the unprojected space.
pub const MAIN_SPACE: &str = "main";

#[derive(Debug, Clone)]
struct MfLearner {
    q: QTable,
    returns: ReturnStats,
    trajectory: Vec<(usize, usize, f64)>,
    td: TdParams,
    nu: f64,
    prior_half_width: f64,
}

impl MfLearner {
    fn values(&self, x: usize) -> &[f64] {
        self.q.row(x)
    }

    fn beliefs(&self, x: usize) -> Result<Vec<GaussianBelief>> {
        (0..self.q.actions())
            .map(|a| {
                let iv = mf_interval(self.returns.pair(x, a), self.nu, self.prior_half_width)?;
                ci_to_gaussian(self.q.value(x, a), iv.half_width, iv.quantile)
            })
            .collect()
    }

    fn observe(&mut self, x: usize, a: usize, r: f64, next: Option<usize>) -> Result<()> {
        let greedy = self.q.greedy(x) == a;
        self.q.update(x, a, r, next, self.td, greedy)?;
        self.trajectory.push((x, a, r));
        Ok(())
    }

    fn end_episode(&mut self) {
        let samples = record_returns(&self.trajectory, self.td.gamma);
        self.returns.extend(samples);
        self.trajectory.clear();
        self.q.start_episode();
    }
}

#[derive(Debug, Clone)]
struct MbLearner {
    model: MdpEstimate,
    q_hat: QValues,
    bounds: QBounds,
    params: BoundParams,
    z: f64,
    solve_every: u64,
    bounds_every: u64,
    since_solve: u64,
    since_bounds: u64,
}

impl MbLearner {
    fn values(&self, x: usize) -> &[f64] {
        self.q_hat.row(x)
    }

    fn beliefs(&self, x: usize) -> Result<Vec<GaussianBelief>> {
        (0..self.model.actions())
            .map(|a| {
                let width = mb_belief(&self.bounds, x, a, self.z)?;
                GaussianBelief::new(self.q_hat.get(x, a), width.std())
            })
            .collect()
    }

    fn observe(&mut self, x: usize, a: usize, r: f64, next: Option<usize>, t: u64) -> Result<()> {
        let terminal = self.model.terminal().expect("model-based spaces carry a terminal state");
        self.model.update(x, a, next.unwrap_or(terminal), r)?;
        self.since_solve += 1;
        self.since_bounds += 1;
        if self.bounds_every > 0 && self.since_bounds >= self.bounds_every {
            self.refresh_bounds(t)?;
        } else if self.since_solve >= self.solve_every {
            self.q_hat = solve_q(&self.model, self.params.vi, Some(&self.q_hat))?;
            self.since_solve = 0;
        }
        Ok(())
    }

    fn refresh_bounds(&mut self, t: u64) -> Result<()> {
        self.bounds = extended_vi(&self.model, t.max(1), self.params, Some(&self.bounds))?;
        self.q_hat = self.bounds.q_hat.clone();
        self.since_solve = 0;
        self.since_bounds = 0;
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Learner {
    Mf(MfLearner),
    Mb(Box<MbLearner>),
}

#[derive(Debug, Clone)]
struct Space {
    projection: Projection,
    learner: Learner,
}

impl Space {
    fn values(&self, x: usize) -> &[f64] {
        match &self.learner {
            Learner::Mf(l) => l.values(x),
            Learner::Mb(l) => l.values(x),
        }
    }

    fn beliefs(&self, x: usize) -> Result<Vec<GaussianBelief>> {
        match &self.learner {
            Learner::Mf(l) => l.beliefs(x),
            Learner::Mb(l) => l.beliefs(x),
        }
    }
}

/// Agent over a finite state set, acting with one of the MB or MF methods.
#[derive(Debug, Clone)]
pub struct TabularAgent {
    method: Method,
    fe: FeParams,
    settings: Settings,
    actions: usize,
    // spaces[0] is the main space
    spaces: Vec<Space>,
    episode: u64,
    steps: u64,
}

impl TabularAgent {
    /// Builds the main space over `states` and, for FETS methods, one
    /// subspace per projection. `reward_span` sizes the prior intervals of
    /// unvisited pairs and the model-based reward radii.
    pub fn new(
        method: Method,
        settings: &Settings,
        states: usize,
        actions: usize,
        projections: Vec<Projection>,
        reward_span: f64,
    ) -> Result<Self> {
        if !method.is_tabular() {
            return Err(FetsError::invalid(format!("{method} is not a tabular method")));
        }
        if states == 0 || actions == 0 {
            return Err(FetsError::invalid("agent needs at least one state and one action"));
        }
        let a = &settings.agent;
        let fe = a.fe_params()?;
        if !(a.xi > 0.0 && a.xi < 1.0 / actions as f64) {
            return Err(FetsError::validation("agent.xi", format!("must lie in (0, 1/{actions})")));
        }
        if a.ts_samples == 0 {
            return Err(FetsError::validation("agent.ts_samples", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&a.epsilon) || a.epsilon_end.is_some_and(|e| !(0.0..=1.0).contains(&e)) {
            return Err(FetsError::validation("agent.epsilon", "must lie in [0,1]"));
        }
        let mut list = vec![Projection::identity(MAIN_SPACE, states)];
        if method.fets {
            for p in a.pick(projections, |p| p.name.as_str())? {
                if p.map.len() != states || p.map.iter().any(|x| *x >= p.size) {
                    return Err(FetsError::invalid(format!("projection '{}' does not cover the state set", p.name)));
                }
                list.push(p);
            }
        }
        let spaces = list
            .into_iter()
            .map(|projection| {
                let learner = match method.learner {
                    LearnerKind::ModelFree => Learner::Mf(mf_learner(settings, projection.size, actions, reward_span)?),
                    _ => Learner::Mb(Box::new(mb_learner(settings, projection.size, actions, reward_span)?)),
                };
                Ok(Space { projection, learner })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            method,
            fe,
            settings: settings.clone(),
            actions,
            spaces,
            episode: 0,
            steps: 0,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// Space names in declaration order, main first.
    pub fn space_names(&self) -> Vec<String> {
        self.spaces.iter().map(|s| s.projection.name.clone()).collect()
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn epsilon(&self) -> f64 {
        self.settings.agent.schedule().at(self.episode)
    }

    /// Greedy action of the main space.
    pub fn greedy(&self, state: usize) -> usize {
        crate::belief::argmax(self.spaces[0].values(state))
    }

    /// Action values of a space at its abstract image of `state`.
    pub fn values(&self, space: usize, state: usize) -> &[f64] {
        let sp = &self.spaces[space];
        sp.values(sp.projection.apply(state))
    }

    /// Gaussian value beliefs of one space at `state`.
    pub fn beliefs(&self, space: usize, state: usize) -> Result<Vec<GaussianBelief>> {
        let sp = &self.spaces[space];
        sp.beliefs(sp.projection.apply(state))
    }

    /// Floored Thompson policy of one space at `state`.
    pub fn thompson<R: Rng + ?Sized>(&self, space: usize, state: usize, rng: &mut R) -> Result<ActionPolicy> {
        let sp = &self.spaces[space];
        let beliefs = sp.beliefs(sp.projection.apply(state))?;
        let ts = thompson_from_beliefs(&beliefs, self.settings.agent.ts_samples, rng)?;
        floor_policy(&ts, self.settings.agent.xi)
    }

    pub fn act<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> Result<Decision> {
        if state >= self.spaces[0].projection.size {
            return Err(FetsError::State(format!("state {state} outside the main space")));
        }
        let eps = self.epsilon();
        let scores = self.method.scores_spaces();
        let mut views = Vec::with_capacity(self.spaces.len());
        for (i, sp) in self.spaces.iter().enumerate() {
            let x = sp.projection.apply(state);
            let pi_b = epsilon_greedy_policy(sp.values(x), eps)?;
            let pi_ts = if scores { Some(self.thompson(i, state, rng)?) } else { None };
            views.push(SpaceView { pi_ts, pi_b });
        }
        decide(self.method, Scoring::General(self.fe), &views, 0, rng)
    }

    /// Passes the transition, projected, to every space. `next = None`
    /// ends the episode.
    pub fn observe(&mut self, state: usize, action: usize, reward: f64, next: Option<usize>) -> Result<()> {
        if action >= self.actions {
            return Err(FetsError::invalid(format!("action {action} out of range")));
        }
        self.steps += 1;
        let t = self.steps;
        for sp in &mut self.spaces {
            let x = sp.projection.apply(state);
            let nx = next.map(|n| sp.projection.apply(n));
            match &mut sp.learner {
                Learner::Mf(l) => l.observe(x, action, reward, nx)?,
                Learner::Mb(l) => l.observe(x, action, reward, nx, t)?,
            }
        }
        if next.is_none() {
            self.end_episode()?;
        }
        Ok(())
    }

    /// Closes the current episode; called automatically on terminal
    /// transitions and by the runner when the step cap truncates one.
    pub fn end_episode(&mut self) -> Result<()> {
        for sp in &mut self.spaces {
            match &mut sp.learner {
                Learner::Mf(l) => l.end_episode(),
                Learner::Mb(l) => l.refresh_bounds(self.steps)?,
            }
        }
        self.episode += 1;
        Ok(())
    }
}

/// Names of the spaces a tabular agent for `method` would hold.
pub fn tabular_space_names(method: Method, settings: &Settings, projections: Vec<Projection>) -> Result<Vec<String>> {
    let mut names = vec![MAIN_SPACE.to_string()];
    if method.fets {
        names.extend(settings.agent.pick(projections, |p| p.name.as_str())?.into_iter().map(|p| p.name));
    }
    Ok(names)
}

fn mf_learner(settings: &Settings, states: usize, actions: usize, reward_span: f64) -> Result<MfLearner> {
    let gamma = settings.agent.gamma;
    let td = TdParams::new(gamma, settings.mf.eta, settings.mf.lambda)?;
    if !(settings.mf.nu > 0.0 && settings.mf.nu < 1.0) {
        return Err(FetsError::validation("mf.nu", "must lie in (0,1)"));
    }
    Ok(MfLearner {
        q: QTable::new(states, actions),
        returns: ReturnStats::new(states, actions),
        trajectory: Vec::new(),
        td,
        nu: settings.mf.nu,
        prior_half_width: reward_span / (1.0 - gamma),
    })
}

fn mb_learner(settings: &Settings, states: usize, actions: usize, reward_span: f64) -> Result<MbLearner> {
    let mb = &settings.mb;
    if !(mb.delta > 0.0 && mb.delta < 1.0) {
        return Err(FetsError::validation("mb.delta", "must lie in (0,1)"));
    }
    if mb.solve_every == 0 {
        return Err(FetsError::validation("mb.solve_every", "must be at least 1"));
    }
    let z = match mb.z {
        Some(z) if z > 0.0 => z,
        Some(_) => return Err(FetsError::validation("mb.z", "must be positive")),
        None => normal_quantile(1.0 - mb.delta / 2.0)?,
    };
    let params = BoundParams {
        vi: ViParams {
            gamma: settings.agent.gamma,
            tol: mb.tol,
            max_iters: mb.max_iters,
        },
        delta: mb.delta,
        reward_span,
        rule: mb.radius,
    };
    let model = MdpEstimate::with_terminal(states, actions);
    let bounds = extended_vi(&model, 1, params, None)?;
    Ok(MbLearner {
        q_hat: bounds.q_hat.clone(),
        model,
        bounds,
        params,
        z,
        solve_every: mb.solve_every,
        bounds_every: mb.bounds_every,
        since_solve: 0,
        since_bounds: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::maze::{Maze, MazeEnv};
    use crate::envs::{SimRng, TabularEnv};
    use rand::SeedableRng;

    const SMALL: &str = "#####\n#...#\n#.#G#\n#...#\n#####\n";

    fn agent(method: &str, env: &MazeEnv, subspaces: bool) -> TabularAgent {
        let mut settings = Settings::default();
        settings.agent.ts_samples = 256;
        let projections = if subspaces { env.projections() } else { Vec::new() };
        TabularAgent::new(
            method.parse().unwrap(),
            &settings,
            env.state_count(),
            env.action_count(),
            projections,
            env.reward_span(),
        )
        .unwrap()
    }

    fn trajectory(method: &str, subspaces: bool, episodes: usize) -> Vec<(usize, usize)> {
        let mut env = MazeEnv::new(Maze::parse(SMALL, "small").unwrap());
        let mut ag = agent(method, &env, subspaces);
        let mut env_rng = SimRng::seed_from_u64(5);
        let mut rng = SimRng::seed_from_u64(6);
        let mut out = Vec::new();
        for _ in 0..episodes {
            let mut s = env.reset(&mut env_rng);
            for _ in 0..200 {
                let d = ag.act(s, &mut rng).unwrap();
                out.push((s, d.action));
                let st = env.step(d.action, &mut env_rng).unwrap();
                ag.observe(s, d.action, st.reward, st.next).unwrap();
                match st.next {
                    Some(n) => s = n,
                    None => break,
                }
            }
        }
        out
    }

    #[test]
    fn fets_without_subspaces_matches_main_only_method() {
        assert_eq!(trajectory("MB-FETS-FE", false, 5), trajectory("MB-FE", false, 5));
        assert_eq!(trajectory("MF-FETS-FE", false, 5), trajectory("MF-FE", false, 5));
    }

    #[test]
    fn baselines_ignore_subspaces() {
        let env = MazeEnv::new(Maze::parse(SMALL, "small").unwrap());
        assert_eq!(agent("MB", &env, true).space_names(), vec!["main"]);
        assert_eq!(agent("MB-FETS-B", &env, true).space_names(), vec!["main", "X", "Y"]);
        assert_eq!(trajectory("MF", true, 3), trajectory("MF", false, 3));
    }

    #[test]
    fn projected_transitions() {
        let maze = Maze::parse(SMALL, "small").unwrap();
        let env = MazeEnv::new(maze.clone());
        let mut ag = agent("MF-FETS-B", &env, true);
        // (x:1,y:1) -> (x:1,y:2), moving down
        let s = maze.state_index(crate::envs::maze::MazeState { x: 1, y: 1 }).unwrap();
        let n = maze.state_index(crate::envs::maze::MazeState { x: 1, y: 2 }).unwrap();
        let down = crate::envs::maze::DOWN;
        ag.observe(s, down, -1.0, Some(n)).unwrap();
        let px = maze.projection_x();
        let py = maze.projection_y();
        assert_eq!(px.apply(s), px.apply(n));
        assert_ne!(py.apply(s), py.apply(n));
        for (i, _) in ag.space_names().iter().enumerate() {
            assert!(ag.values(i, s)[down] < 0.0);
        }
        // the X space sees a self-loop, so bootstrapping used its own row
        assert_eq!(ag.values(1, n)[down], ag.values(1, s)[down]);
    }

    #[test]
    fn baseline_policy_is_epsilon_greedy() {
        let env = MazeEnv::new(Maze::parse(SMALL, "small").unwrap());
        let mut ag = agent("MF", &env, false);
        ag.observe(0, 2, 5.0, Some(1)).unwrap();
        let d = ag.act(0, &mut SimRng::seed_from_u64(1)).unwrap();
        assert_eq!(d.policy.probs(), &[0.025, 0.025, 0.925, 0.025]);
        assert_eq!(d.free_energies, None);
    }

    #[test]
    fn terminal_transition_records_returns() {
        let env = MazeEnv::new(Maze::parse(SMALL, "small").unwrap());
        let mut ag = agent("MF-FE", &env, false);
        ag.observe(0, 1, -1.0, Some(1)).unwrap();
        ag.observe(1, 1, 10.0, None).unwrap();
        assert_eq!(ag.episode(), 1);
        let Learner::Mf(l) = &ag.spaces[0].learner else { panic!() };
        assert_eq!(l.returns.pair(1, 1).n, 1);
        assert_eq!(l.returns.pair(0, 1).sum, -1.0 + 0.95 * 10.0);
        assert!(l.trajectory.is_empty());
    }

    #[test]
    fn every_action_stays_reachable() {
        let env = MazeEnv::new(Maze::parse(SMALL, "small").unwrap());
        let mut ag = agent("MB-FETS-FE", &env, true);
        for _ in 0..20 {
            ag.observe(0, 0, 5.0, Some(0)).unwrap();
        }
        let mut rng = SimRng::seed_from_u64(9);
        let d = ag.act(0, &mut rng).unwrap();
        let mut seen = [0usize; 4];
        for _ in 0..100_000 {
            seen[d.policy.sample(&mut rng)] += 1;
        }
        assert!(seen.iter().all(|c| *c > 0), "{seen:?}");
    }

    #[test]
    fn rejects_network_method() {
        let env = MazeEnv::new(Maze::parse(SMALL, "small").unwrap());
        let r = TabularAgent::new("TS".parse().unwrap(), &Settings::default(), env.state_count(), 4, vec![], 1.0);
        assert!(r.is_err());
    }
}
