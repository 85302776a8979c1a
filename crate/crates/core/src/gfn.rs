//! Trajectory sampling, trajectory-balance training and the
//! proportional-sampling check against exact enumeration.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Grads, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::ligand::{CanonicalForm, LigandAction, LigandEnv, LigandState, ENUMERATION_MAX_FRAGMENTS, ENUMERATION_MAX_NODES};
use crate::pocket::Pocket;
use crate::policy::{sample_action, sample_categorical, ActionDistribution, PolicyNet};
use crate::reward::{pocket_targets, PocketTargets, RewardFn};

/// Independent generator for a named sub-stream of `seed`.
pub fn rng_stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &t in tags {
        for b in t.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    rng.set_stream(h);
    rng
}

pub const STREAM_TRAIN: u64 = 1;
pub const STREAM_SAMPLE: u64 = 2;
pub const STREAM_CHECK: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub pocket_id: String,
    pub states: Vec<LigandState>,
    pub actions: Vec<LigandAction>,
    /// `log P_F(s_{t+1} | s_t)`, summed over actions reaching an isomorphic child.
    pub log_pf: Vec<f64>,
    /// `log P_B(s_t | s_{t+1})`.
    pub log_pb: Vec<f64>,
    pub reward: f64,
}

impl Trajectory {
    pub fn terminal(&self) -> &LigandState {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Checks the transition chain against the environment.
    pub fn validate(&self, env: &LigandEnv) -> Result<()> {
        let n = self.actions.len();
        if self.states.len() != n + 1 || self.log_pf.len() != n || self.log_pb.len() != n {
            return Err(Error::State("trajectory lengths are inconsistent".into()));
        }
        for (t, a) in self.actions.iter().enumerate() {
            if env.apply(&self.states[t], a)? != self.states[t + 1] {
                return Err(Error::State(format!("step {t} does not follow from its action")));
            }
        }
        if !self.terminal().terminal {
            return Err(Error::State("trajectory does not end in a terminal state".into()));
        }
        Ok(())
    }
}

/// `(log Z + Σ log P_F − log R − Σ log P_B)²`.
pub fn trajectory_balance_loss(traj: &Trajectory, log_z: f64) -> Result<f64> {
    if !(traj.reward > 0.0) {
        return Err(Error::Invalid(format!("reward must be positive, got {}", traj.reward)));
    }
    let d = log_z + traj.log_pf.iter().sum::<f64>() - traj.reward.ln() - traj.log_pb.iter().sum::<f64>();
    Ok(d * d)
}

/// Differentiable form of [`trajectory_balance_loss`].
pub fn tb_loss<'t>(log_z: Var<'t>, sum_log_pf: Var<'t>, reward: f64, sum_log_pb: f64) -> Result<Var<'t>> {
    if !(reward > 0.0) {
        return Err(Error::Invalid(format!("reward must be positive, got {reward}")));
    }
    log_z.add(sum_log_pf)?.add_scalar(-reward.ln() - sum_log_pb).square()
}

fn child_key(s: &LigandState) -> (bool, CanonicalForm) {
    (s.terminal, s.canonical())
}

/// Grid entries whose child is isomorphic to the child of entry `chosen`.
fn isomorphic_group(env: &LigandEnv, s: &LigandState, dist: &ActionDistribution<'_>, chosen: usize) -> Result<(LigandState, Vec<bool>)> {
    let child = env.apply(s, &dist.actions[chosen])?;
    let key = child_key(&child);
    let mut group = vec![false; dist.actions.len()];
    for (i, a) in dist.actions.iter().enumerate() {
        if dist.legal[i] {
            group[i] = i == chosen || child_key(&env.apply(s, a)?) == key;
        }
    }
    Ok((child, group))
}

/// Rolls out one trajectory on `tape`, returning it with `Σ log P_F` as a graph node.
pub fn rollout<'t>(
    tape: &'t Tape,
    policy: &PolicyNet,
    store: &ParamStore,
    env: &LigandEnv,
    pocket: &Pocket,
    reward: &RewardFn,
    targets: PocketTargets,
    rng: &mut ChaCha8Rng,
) -> Result<(Trajectory, Var<'t>)> {
    let mut s = env.initial_state();
    let mut traj = Trajectory {
        pocket_id: pocket.id.clone(),
        states: vec![s.clone()],
        actions: vec![],
        log_pf: vec![],
        log_pb: vec![],
        reward: 0.0,
    };
    let mut sum: Option<Var<'t>> = None;
    while !s.terminal {
        let dist = policy.action_distribution(tape, store, env, pocket, &s)?;
        let (i, a, _) = sample_action(&dist, rng)?;
        let (child, group) = isomorphic_group(env, &s, &dist, i)?;
        let lp = dist.log_prob_of_group(&group)?;
        traj.log_pf.push(lp.item());
        traj.log_pb.push(env.backward_log_prob(&s, &child)?);
        sum = Some(match sum {
            Some(acc) => acc.add(lp)?,
            None => lp,
        });
        traj.actions.push(a);
        traj.states.push(child.clone());
        s = child;
    }
    traj.reward = reward.reward(targets, &env.library, &s)?;
    Ok((traj, sum.expect("every trajectory has at least one step")))
}

/// Samples a trajectory without keeping gradients.
pub fn sample_trajectory(
    policy: &PolicyNet,
    store: &ParamStore,
    env: &LigandEnv,
    pocket: &Pocket,
    reward: &RewardFn,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let tape = Tape::new();
    let targets = pocket_targets(&reward.config, pocket.residues());
    Ok(rollout(&tape, policy, store, env, pocket, reward, targets, rng)?.0)
}

/// Samples only the terminal state, without log-probability bookkeeping.
pub fn sample_terminal(
    policy: &PolicyNet,
    store: &ParamStore,
    env: &LigandEnv,
    pocket: &Pocket,
    rng: &mut ChaCha8Rng,
) -> Result<LigandState> {
    let mut s = env.initial_state();
    while !s.terminal {
        let tape = Tape::new();
        let dist = policy.action_distribution(&tape, store, env, pocket, &s)?;
        let (_, a, _) = sample_action(&dist, rng)?;
        s = env.apply(&s, &a)?;
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub log_z_learning_rate: f64,
    pub max_nodes: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            steps: 10_000,
            batch_size: 16,
            learning_rate: 1e-3,
            log_z_learning_rate: 1e-2,
            max_nodes: crate::ligand::DEFAULT_MAX_NODES,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(self.log_z_learning_rate > 0.0 && self.log_z_learning_rate.is_finite()) {
            return Err(Error::config("log_z_learning_rate", "must be positive"));
        }
        if self.max_nodes == 0 {
            return Err(Error::config("max_nodes", "must be at least 1"));
        }
        Ok(())
    }
}

/// One metrics-log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub mean_reward: f64,
    #[serde(rename = "log_Z_mean")]
    pub log_z_mean: f64,
}

/// Runs `config.steps` Adam updates on the trajectory-balance loss. Pockets are
/// visited round-robin across the batch. `on_step` sees every metrics line.
pub fn train(
    config: &TrainerConfig,
    policy: &PolicyNet,
    store: &mut ParamStore,
    env: &LigandEnv,
    pockets: &[Pocket],
    reward: &RewardFn,
    mut on_step: impl FnMut(&StepMetrics) -> Result<()>,
) -> Result<Vec<StepMetrics>> {
    config.validate()?;
    reward.validate()?;
    if pockets.is_empty() {
        return Err(Error::config("pockets", "at least one pocket is required"));
    }
    let targets: Vec<PocketTargets> = pockets
        .iter()
        .map(|p| pocket_targets(&reward.config, p.residues()))
        .collect();
    let mut adam = Adam::new(store, config.learning_rate);
    for id in policy.log_z_params() {
        adam.set_lr(id, config.log_z_learning_rate);
    }
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut grads = Grads::zeros_like(store);
        let (mut loss_sum, mut reward_sum, mut log_z_sum) = (0.0, 0.0, 0.0);
        for b in 0..config.batch_size {
            let k = (step * config.batch_size + b) % pockets.len();
            let mut rng = rng_stream(config.seed, &[STREAM_TRAIN, step as u64, b as u64]);
            let tape = Tape::new();
            let (traj, sum_pf) = rollout(&tape, policy, store, env, &pockets[k], reward, targets[k], &mut rng)?;
            let log_z = policy.log_z(&tape, store, &pockets[k])?;
            let loss = tb_loss(log_z, sum_pf, traj.reward, traj.log_pb.iter().sum())?;
            let l = loss.item();
            if !l.is_finite() {
                return Err(Error::Diverged { step, loss: l });
            }
            tape.backward(loss.scale(1.0 / config.batch_size as f64))?;
            grads.accumulate(&tape.param_grads(store));
            loss_sum += l;
            reward_sum += traj.reward;
            log_z_sum += log_z.item();
        }
        adam.step(store, &grads);
        let n = config.batch_size as f64;
        let m = StepMetrics {
            step,
            loss: loss_sum / n,
            mean_reward: reward_sum / n,
            log_z_mean: log_z_sum / n,
        };
        on_step(&m)?;
        log.push(m);
    }
    Ok(log)
}

fn enumeration_guard(env: &LigandEnv) -> Result<()> {
    if env.library.len() > ENUMERATION_MAX_FRAGMENTS || env.max_nodes > ENUMERATION_MAX_NODES {
        return Err(Error::Guard(format!(
            "exact enumeration needs ≤ {ENUMERATION_MAX_FRAGMENTS} fragments and max_nodes ≤ {ENUMERATION_MAX_NODES}"
        )));
    }
    Ok(())
}

/// Exact terminal distribution of the policy, computed by propagating
/// probability mass over isomorphism classes in order of size.
pub fn terminal_distribution(
    policy: &PolicyNet,
    store: &ParamStore,
    env: &LigandEnv,
    pocket: &Pocket,
) -> Result<BTreeMap<CanonicalForm, f64>> {
    enumeration_guard(env)?;
    let mut frontier: BTreeMap<CanonicalForm, (LigandState, f64)> = BTreeMap::new();
    frontier.insert(CanonicalForm::default(), (env.initial_state(), 1.0));
    let mut out: BTreeMap<CanonicalForm, f64> = BTreeMap::new();
    while !frontier.is_empty() {
        let mut next: BTreeMap<CanonicalForm, (LigandState, f64)> = BTreeMap::new();
        for (_, (s, mass)) in frontier {
            let tape = Tape::new();
            let dist = policy.action_distribution(&tape, store, env, pocket, &s)?;
            for (i, a) in dist.actions.iter().enumerate() {
                if !dist.legal[i] || dist.probs[i] == 0.0 {
                    continue;
                }
                let child = env.apply(&s, a)?;
                let p = mass * dist.probs[i];
                if child.terminal {
                    *out.entry(child.canonical()).or_default() += p;
                } else {
                    next.entry(child.canonical()).or_insert((child, 0.0)).1 += p;
                }
            }
        }
        frontier = next;
    }
    Ok(out)
}

/// `R(x) / Z` over every terminal state.
pub fn target_distribution(
    env: &LigandEnv,
    pocket: &Pocket,
    reward: &RewardFn,
) -> Result<BTreeMap<CanonicalForm, f64>> {
    let targets = pocket_targets(&reward.config, pocket.residues());
    let states = env.enumerate_terminal_states()?;
    let mut rewards = BTreeMap::new();
    for (k, s) in states {
        rewards.insert(k, reward.reward(targets, &env.library, &s)?);
    }
    let z: f64 = rewards.values().sum();
    Ok(rewards.into_iter().map(|(k, r)| (k, r / z)).collect())
}

/// Half the L1 distance between two distributions over canonical forms.
pub fn total_variation(p: &BTreeMap<CanonicalForm, f64>, q: &BTreeMap<CanonicalForm, f64>) -> f64 {
    let mut keys: Vec<&CanonicalForm> = p.keys().chain(q.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// Terminal-state sampler that evaluates the policy once per visited state
/// class and reuses the resulting transition table.
pub struct CachedSampler<'a> {
    policy: &'a PolicyNet,
    store: &'a ParamStore,
    env: &'a LigandEnv,
    pocket: &'a Pocket,
    cache: HashMap<(bool, CanonicalForm), Vec<(f64, LigandState)>>,
}

impl<'a> CachedSampler<'a> {
    pub fn new(policy: &'a PolicyNet, store: &'a ParamStore, env: &'a LigandEnv, pocket: &'a Pocket) -> Self {
        CachedSampler {
            policy,
            store,
            env,
            pocket,
            cache: HashMap::new(),
        }
    }

    fn transitions(&mut self, s: &LigandState) -> Result<&[(f64, LigandState)]> {
        let key = child_key(s);
        if !self.cache.contains_key(&key) {
            let tape = Tape::new();
            let dist = self
                .policy
                .action_distribution(&tape, self.store, self.env, self.pocket, s)?;
            let mut row = Vec::new();
            for (i, a) in dist.actions.iter().enumerate() {
                if dist.legal[i] {
                    row.push((dist.probs[i], self.env.apply(s, a)?));
                }
            }
            self.cache.insert(key.clone(), row);
        }
        Ok(&self.cache[&key])
    }

    pub fn sample(&mut self, rng: &mut ChaCha8Rng) -> Result<LigandState> {
        let mut s = self.env.initial_state();
        while !s.terminal {
            let row = self.transitions(&s)?;
            let probs: Vec<f64> = row.iter().map(|(p, _)| *p).collect();
            let i = sample_categorical(&probs, rng)?;
            s = row[i].1.clone();
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingCheck {
    pub samples: usize,
    pub tv: f64,
    pub empirical: BTreeMap<CanonicalForm, f64>,
    pub target: BTreeMap<CanonicalForm, f64>,
}

/// Empirical terminal frequencies from `n_samples` rollouts versus `R/Z`.
pub fn proportional_sampling_check(
    policy: &PolicyNet,
    store: &ParamStore,
    env: &LigandEnv,
    pocket: &Pocket,
    reward: &RewardFn,
    n_samples: usize,
    seed: u64,
) -> Result<SamplingCheck> {
    enumeration_guard(env)?;
    if n_samples == 0 {
        return Err(Error::Invalid("need at least one sample".into()));
    }
    let target = target_distribution(env, pocket, reward)?;
    let mut rng = rng_stream(seed, &[STREAM_CHECK]);
    let mut sampler = CachedSampler::new(policy, store, env, pocket);
    let mut counts: BTreeMap<CanonicalForm, usize> = BTreeMap::new();
    for _ in 0..n_samples {
        *counts.entry(sampler.sample(&mut rng)?.canonical()).or_default() += 1;
    }
    let empirical: BTreeMap<CanonicalForm, f64> = counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / n_samples as f64))
        .collect();
    Ok(SamplingCheck {
        samples: n_samples,
        tv: total_variation(&empirical, &target),
        empirical,
        target,
    })
}
