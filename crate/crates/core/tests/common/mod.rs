//! Shared oracles for the integration tests: a central finite-difference
//! gradient checker, an independent reward model, and random-state helpers.

#![allow(dead_code)]

pub mod grad_suites;

use gmrl::ad::{Graph, Var};
use gmrl::config::{NetworkConfig, ScenarioConfig};
use gmrl::nets::PolicyNet;
use gmrl::sim::{ActionIndex, Flag, GlobalState, Intersection, PreferenceSampler, N_ACTIONS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small but complete network shape, so gradient checks stay fast.
pub fn small_network() -> NetworkConfig {
    NetworkConfig { embed_width: 6, pooled_width: 6, recurrent_width: 5, head_hidden: 6, ..NetworkConfig::default() }
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    /// `|a − n| / max(|a|, |n|, floor)`; the floor keeps vanishing
    /// gradients from turning round-off into large relative errors.
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(1e-7);
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Compares backward-pass gradients of `loss` against central differences
/// on `per_param` random coordinates of every parameter whose name starts
/// with `prefix`.
pub fn check_gradients(
    net: &mut PolicyNet<f64>,
    prefix: &str,
    per_param: usize,
    seed: u64,
    loss: &dyn Fn(&PolicyNet<f64>, &mut Graph<f64>) -> Var,
) -> Vec<GradCheck> {
    let mut g = Graph::new();
    let root = loss(net, &mut g);
    let grads = g.backward(root).expect("backward pass");
    let mut analytic: Vec<Option<Vec<f64>>> = vec![None; net.store.len()];
    let ids: Vec<_> = net.store.ids().collect();
    for (id, t) in grads.params() {
        let k = ids.iter().position(|&i| i == id).expect("known parameter");
        let slot = analytic[k].get_or_insert_with(|| vec![0.0; t.len()]);
        for (s, v) in slot.iter_mut().zip(t.data()) {
            *s += *v;
        }
    }

    let eval = |net: &PolicyNet<f64>| {
        let mut g = Graph::new();
        let r = loss(net, &mut g);
        g.value(r).item()
    };
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (k, &id) in ids.iter().enumerate() {
        let name = net.store.name(id).to_string();
        if !name.starts_with(prefix) {
            continue;
        }
        let n = net.store.value(id).len();
        for _ in 0..per_param.min(n) {
            let i = rng.gen_range(0..n);
            let orig = net.store.value(id).data()[i];
            net.store.value_mut(id).data_mut()[i] = orig + h;
            let up = eval(net);
            net.store.value_mut(id).data_mut()[i] = orig - h;
            let down = eval(net);
            net.store.value_mut(id).data_mut()[i] = orig;
            let a = analytic[k].as_ref().map_or(0.0, |g| g[i]);
            out.push(GradCheck { name: name.clone(), index: i, analytic: a, numeric: (up - down) / (2.0 * h) });
        }
    }
    out
}

/// Asserts at least `min_checks` coordinates were checked and all pass.
pub fn assert_gradients_match(checks: &[GradCheck], min_checks: usize, tol: f64) {
    assert!(checks.len() >= min_checks, "only {} coordinates checked", checks.len());
    let worst = checks
        .iter()
        .max_by(|a, b| a.relative_error().total_cmp(&b.relative_error()))
        .expect("non-empty");
    assert!(worst.relative_error() < tol, "worst gradient mismatch {worst:?} (rel {:.2e})", worst.relative_error());
}

/// Base reward written directly from its definition: goal and fail
/// constants, otherwise the speed bonus.
pub fn oracle_base_reward(cfg: &ScenarioConfig, state: &GlobalState, agent: usize) -> f64 {
    let v = state.vehicle(agent);
    let speed = v.velocity_x.hypot(v.velocity_y);
    match state.flags[agent] {
        Flag::Goal => cfg.r_goal,
        Flag::Fail => cfg.r_fail,
        Flag::Running => cfg.r_speed * speed,
    }
}

/// Final reward: the ego keeps its base reward; a social vehicle adds the
/// ego's base reward scaled by its own preference.
pub fn oracle_final_reward(cfg: &ScenarioConfig, state: &GlobalState, agent: usize) -> f64 {
    let ego = oracle_base_reward(cfg, state, 0);
    if agent == 0 {
        ego
    } else {
        oracle_base_reward(cfg, state, agent) + state.social[agent - 1].1 .0 * ego
    }
}

pub fn random_action(rng: &mut impl Rng) -> ActionIndex {
    ActionIndex::new(rng.gen_range(0..N_ACTIONS)).expect("valid index")
}

/// States visited by random-action rollouts, with the joint action taken
/// from each.
pub fn random_transitions(cfg: &ScenarioConfig, count: usize, seed: u64) -> Vec<(GlobalState, Vec<ActionIndex>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut episode = 0;
    while out.len() < count {
        let sampler = PreferenceSampler::Uniform { lo: -3.0, hi: 3.0 };
        let mut env = Intersection::spawn_seeded(cfg, sampler, seed.wrapping_add(episode)).expect("spawn");
        episode += 1;
        while !env.is_done() && out.len() < count {
            let actions: Vec<ActionIndex> = (0..env.n_agents()).map(|_| random_action(&mut rng)).collect();
            out.push((env.state().clone(), actions.clone()));
            env.step(&actions).expect("step");
        }
    }
    out
}

/// A spawned scene with random speeds (tangent to each track), flags and
/// preferences, a tenth of them exactly zero.
pub fn random_reward_state(cfg: &ScenarioConfig, rng: &mut impl Rng) -> GlobalState {
    let env = Intersection::spawn_seeded(cfg, PreferenceSampler::Fixed(0.0), rng.gen()).expect("spawn");
    let mut s = env.state().clone();
    for a in 0..s.n_agents() {
        let v = s.vehicle_mut(a);
        let speed = rng.gen_range(0.0..=3.0);
        let norm = v.velocity_x.hypot(v.velocity_y);
        let (tx, ty) = if norm > 0.0 { (v.velocity_x / norm, v.velocity_y / norm) } else { (0.0, 1.0) };
        v.velocity_x = speed * tx;
        v.velocity_y = speed * ty;
        s.flags[a] = match rng.gen_range(0..3) {
            0 => Flag::Goal,
            1 => Flag::Fail,
            _ => Flag::Running,
        };
    }
    for (_, beta) in s.social.iter_mut() {
        beta.0 = if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(-3.0..=3.0) };
    }
    s
}

/// Worst deviations of the simulator's transition from the kinematic rule
/// `p' = p + v·dt` and the rate-limited speed controller.
#[derive(Debug, Default, Clone, Copy)]
pub struct TransitionAudit {
    pub checked: usize,
    pub max_position_error: f64,
    /// Largest `|Δspeed| − max_accel·dt`; positive means the limit was exceeded.
    pub max_rate_excess: f64,
    pub max_speed_error: f64,
}

pub fn audit_transitions(cfg: &ScenarioConfig, count: usize, seed: u64) -> TransitionAudit {
    let dv = cfg.max_accel * cfg.dt;
    let mut audit = TransitionAudit { max_rate_excess: f64::NEG_INFINITY, ..TransitionAudit::default() };
    for (state, actions) in random_transitions(cfg, count, seed) {
        let mut env = Intersection::from_state(cfg, PreferenceSampler::Fixed(0.0), state.clone()).expect("valid state");
        let out = env.step(&actions).expect("step");
        for (a, action) in actions.iter().enumerate() {
            if out.respawned[a] {
                continue;
            }
            let (before, after) = (state.vehicle(a), out.next_state.vehicle(a));
            let ex = (before.position_x + before.velocity_x * cfg.dt - after.position_x).abs();
            let ey = (before.position_y + before.velocity_y * cfg.dt - after.position_y).abs();
            audit.max_position_error = audit.max_position_error.max(ex).max(ey);
            let (s0, s1) = (before.velocity_x.hypot(before.velocity_y), after.velocity_x.hypot(after.velocity_y));
            audit.max_rate_excess = audit.max_rate_excess.max((s1 - s0).abs() - dv);
            let want = action.desired_speed();
            let expected = if want > s0 { (s0 + dv).min(want) } else { (s0 - dv).max(want) };
            audit.max_speed_error = audit.max_speed_error.max((s1 - expected).abs());
            audit.checked += 1;
        }
    }
    audit
}

/// Number of (state, agent) pairs where the simulator's final reward
/// differs from the oracle, over `count` random states.
pub fn reward_mismatches(cfg: &ScenarioConfig, count: usize, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut bad) = (0, 0);
    for _ in 0..count {
        let s = random_reward_state(cfg, &mut rng);
        for a in 0..s.n_agents() {
            checked += 1;
            if gmrl::sim::final_reward(cfg, &s, a).to_bits() != oracle_final_reward(cfg, &s, a).to_bits() {
                bad += 1;
            }
        }
    }
    (checked, bad)
}

/// Episodes of rule-based traffic with the ego parked at its start line,
/// each vehicle drawing its driving style on every spawn. Returns the
/// number of steps with any failed vehicle.
pub fn idm_failures(cfg: &gmrl::config::Config, episodes: u64, seed: u64) -> usize {
    use gmrl::idm::idm_policy;
    let conservative = cfg.idm.preset(gmrl::config::IDM_CONSERVATIVE).expect("preset");
    let aggressive = cfg.idm.preset(gmrl::config::IDM_AGGRESSIVE).expect("preset");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for e in 0..episodes {
        let mut env =
            Intersection::spawn_seeded(&cfg.scenario, PreferenceSampler::Fixed(0.0), seed.wrapping_mul(1_000_003).wrapping_add(e))
                .expect("spawn");
        let draw = |rng: &mut ChaCha8Rng| {
            if rng.gen_bool(cfg.idm.conservative_fraction) {
                *conservative
            } else {
                *aggressive
            }
        };
        let mut styles: Vec<_> = (0..env.n_agents()).map(|_| draw(&mut rng)).collect();
        while !env.is_done() {
            let mut actions = vec![ActionIndex::STOP];
            for (a, style) in styles.iter().enumerate().skip(1) {
                let obs = env.observe(a).expect("observe");
                actions.push(idm_policy(&obs, &cfg.scenario, env.geometry(), style).expect("idm"));
            }
            let out = env.step(&actions).expect("step");
            if out.flags.contains(&Flag::Fail) {
                failures += 1;
            }
            for (a, style) in styles.iter_mut().enumerate() {
                if out.respawned[a] {
                    *style = draw(&mut rng);
                }
            }
        }
    }
    failures
}

/// Fraction of spawned social vehicles whose preference lies within the
/// guide distance of an anchor, over at least `vehicles` spawns.
pub fn guided_fraction(cfg: &gmrl::config::Config, vehicles: usize, seed: u64) -> (f64, usize) {
    let anchors = gmrl::train::PreferenceAnchors::from_config(&cfg.preferences).expect("anchors");
    let [lo, hi] = cfg.preferences.meta_range;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = PreferenceSampler::Uniform { lo, hi };
    let (mut seen, mut matched) = (0usize, 0usize);
    while seen < vehicles {
        let env = Intersection::spawn_seeded(&cfg.scenario, sampler.clone(), rng.gen()).expect("spawn");
        for (_, beta) in &env.state().social {
            seen += 1;
            matched += usize::from(anchors.matched(beta.0).is_some());
        }
    }
    (matched as f64 / seen as f64, seen)
}

/// A configuration whose whole pipeline trains in seconds: small networks,
/// short budgets and light evaluation settings.
#[allow(clippy::field_reassign_with_default)]
pub fn tiny_config() -> gmrl::config::Config {
    let mut cfg = gmrl::config::Config::default();
    cfg.network = small_network();
    cfg.ppo.n_envs = 2;
    cfg.ppo.records_per_iteration = 128;
    cfg.ppo.minibatch = 64;
    cfg.ppo.epochs = 2;
    for s in [&mut cfg.stages.ego_initial, &mut cfg.stages.guiding, &mut cfg.stages.meta, &mut cfg.stages.ego_final] {
        s.budget = 384;
    }
    cfg.stages.inference.windows = 64;
    cfg.stages.inference.epochs = 2;
    cfg.eval.kl_samples = 200;
    cfg.eval.kl_min_samples = 20;
    cfg.eval.sweep_steps = 400;
    cfg.eval.cross_episodes = 3;
    cfg.eval.cross_seeds = vec![0, 1];
    cfg
}

/// Metrics CSV with the given columns dropped.
pub fn without_columns(csv: &str, drop: &[&str]) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let keep: Vec<usize> = (0..header.len()).filter(|&i| !drop.contains(&header[i])).collect();
    std::iter::once(keep.iter().map(|&i| header[i]).collect::<Vec<_>>().join(","))
        .chain(lines.map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            keep.iter().map(|&i| f[i]).collect::<Vec<_>>().join(",")
        }))
        .map(|l| l + "\n")
        .collect()
}
