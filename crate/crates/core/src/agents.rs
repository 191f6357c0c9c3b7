//! The two levels of the feudal hierarchy.
//!
//! [`HighLevelAgent`] is a tabular SMDP Q-learner over goal regions.
//! [`DqnAgent`] is a double-network DQN over the four acceleration actions;
//! conditioned on a goal encoding it is the low-level worker, without one it
//! is the flat baseline.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;
use core::marker::PhantomData;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::IntervalBox;
use crate::maze::Action;
use crate::mlp::{AdamConfig, AdamState, Gradients, Mlp, Tape};
use crate::partition::{RefinementReport, RegionId};
use crate::reward::{EnvReward, IntrinsicReward, RewardSignal};

/// Linear decay from `start` to `end` over the first `fraction` of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    pub fraction: f64,
}

impl LinearSchedule {
    pub fn value(&self, step: u64, total_steps: u64) -> f64 {
        let horizon = self.fraction * total_steps as f64;
        if horizon <= 0.0 {
            return self.end;
        }
        let t = (step as f64 / horizon).min(1.0);
        self.start + t * (self.end - self.start)
    }
}

/// 1 if `s_next` lies in the (closed) target box, else 0.
pub fn intrinsic_reward(s_next: &[f64], target: &IntervalBox) -> IntrinsicReward {
    IntrinsicReward(if target.contains_point(s_next) { 1.0 } else { 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HighLevelConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: LinearSchedule,
}

impl Default for HighLevelConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.99,
            epsilon: LinearSchedule {
                start: 1.0,
                end: 0.1,
                fraction: 0.3,
            },
        }
    }
}

/// Tabular goal selector. Unseen pairs have value 0.
#[derive(Clone, Debug, PartialEq)]
pub struct HighLevelAgent {
    q: BTreeMap<(RegionId, RegionId), f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl HighLevelAgent {
    pub fn new(alpha: f64, gamma: f64, epsilon: f64) -> Self {
        Self {
            q: BTreeMap::new(),
            alpha,
            gamma,
            epsilon,
        }
    }

    pub fn q(&self, source: RegionId, target: RegionId) -> f64 {
        self.q.get(&(source, target)).copied().unwrap_or(0.0)
    }

    pub fn set_q(&mut self, source: RegionId, target: RegionId, value: f64) {
        self.q.insert((source, target), value);
    }

    pub fn table(&self) -> &BTreeMap<(RegionId, RegionId), f64> {
        &self.q
    }

    /// Every region but `current`; just `current` when it is the only one.
    pub fn candidates(current: RegionId, regions: &[RegionId]) -> Vec<RegionId> {
        let c: Vec<_> = regions.iter().copied().filter(|&r| r != current).collect();
        if c.is_empty() {
            alloc::vec![current]
        } else {
            c
        }
    }

    /// Greedy target among `candidates`; ties go to the lowest id.
    pub fn argmax(&self, source: RegionId, candidates: &[RegionId]) -> RegionId {
        let mut best = candidates[0];
        let mut best_q = self.q(source, best);
        for &c in &candidates[1..] {
            let v = self.q(source, c);
            if v > best_q || (v == best_q && c < best) {
                best = c;
                best_q = v;
            }
        }
        best
    }

    pub fn max_q(&self, source: RegionId, regions: &[RegionId]) -> f64 {
        Self::candidates(source, regions)
            .into_iter()
            .map(|c| self.q(source, c))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Epsilon-greedy goal choice over all regions except the current one.
    pub fn select_goal<R: Rng + ?Sized>(&self, current: RegionId, regions: &[RegionId], rng: &mut R) -> RegionId {
        let candidates = Self::candidates(current, regions);
        if rng.random::<f64>() < self.epsilon {
            candidates[rng.random_range(0..candidates.len())]
        } else {
            self.argmax(current, &candidates)
        }
    }

    /// SMDP Q-learning update. `reward` is the discounted environment return
    /// collected during the `elapsed_steps`-long option.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &mut self,
        source: RegionId,
        target: RegionId,
        reward: EnvReward,
        next_region: RegionId,
        regions: &[RegionId],
        elapsed_steps: u32,
        terminal: bool,
    ) -> Result<()> {
        if !reward.0.is_finite() {
            return Err(Error::NonFinite("high-level reward"));
        }
        let bootstrap = if terminal {
            0.0
        } else {
            libm::pow(self.gamma, f64::from(elapsed_steps)) * self.max_q(next_region, regions)
        };
        let old = self.q(source, target);
        let new = old + self.alpha * (reward.0 + bootstrap - old);
        if !new.is_finite() {
            return Err(Error::NonFinite("high-level q value"));
        }
        self.q.insert((source, target), new);
        Ok(())
    }

    /// Children of a split region inherit its row and column; the parent's
    /// entries are dropped.
    pub fn on_partition_refined(&mut self, report: &RefinementReport) -> Result<()> {
        if !report.committed {
            return Ok(());
        }
        let parent = report.source;
        let children: Vec<RegionId> = report.new_ids().collect();
        let mut inherited = Vec::new();
        self.q.retain(|&(s, t), &mut v| {
            if s == parent || t == parent {
                inherited.push((s, t, v));
                false
            } else {
                true
            }
        });
        for (s, t, v) in inherited {
            match (s == parent, t == parent) {
                (true, true) => {}
                (true, false) => children.iter().for_each(|&c| {
                    self.q.insert((c, t), v);
                }),
                (false, true) => children.iter().for_each(|&c| {
                    self.q.insert((s, c), v);
                }),
                (false, false) => unreachable!(),
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_size: usize,
    /// Gradient updates between hard target-network syncs.
    pub sync_period: u64,
    pub replay_capacity: usize,
    /// Environment steps per gradient update.
    pub train_every: u64,
    /// Transitions collected before the first update.
    pub learning_starts: usize,
    pub epsilon: LinearSchedule,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: alloc::vec![64, 64],
            learning_rate: 1e-3,
            gamma: 0.99,
            batch_size: 32,
            sync_period: 1000,
            replay_capacity: 100_000,
            train_every: 1,
            learning_starts: 1000,
            epsilon: LinearSchedule {
                start: 1.0,
                end: 0.05,
                fraction: 0.2,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition<R> {
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: R,
    pub next_obs: Vec<f64>,
    /// No bootstrapping past this transition.
    pub done: bool,
}

/// Greedy action for a Q-vector; ties go to the earliest action.
pub fn argmax_action(q: &[f64]) -> Action {
    let mut best = 0;
    for (i, v) in q.iter().enumerate().skip(1) {
        if *v > q[best] {
            best = i;
        }
    }
    Action::from_index(best).expect("four action values")
}

#[derive(Clone, Debug)]
pub struct DqnAgent<R> {
    q_net: Mlp,
    target_net: Mlp,
    adam: AdamState,
    config: DqnConfig,
    replay: VecDeque<Transition<R>>,
    pub epsilon: f64,
    updates: u64,
    tape: Tape,
    target_tape: Tape,
    grads: Gradients,
    _reward: PhantomData<R>,
}

/// Goal-conditioned worker trained on goal attainment.
pub type LowLevelAgent = DqnAgent<IntrinsicReward>;
/// Non-hierarchical baseline trained on the environment reward.
pub type FlatAgent = DqnAgent<EnvReward>;

impl<R: RewardSignal> DqnAgent<R> {
    pub fn new(obs_dim: usize, config: DqnConfig, seed: u64) -> Result<Self> {
        let mut sizes = Vec::with_capacity(config.hidden.len() + 2);
        sizes.push(obs_dim);
        sizes.extend_from_slice(&config.hidden);
        sizes.push(Action::ALL.len());
        let net = Mlp::init_random(&sizes, seed)?;
        Self::with_net(net, config)
    }

    pub fn with_net(q_net: Mlp, config: DqnConfig) -> Result<Self> {
        if q_net.output_dim() != Action::ALL.len() {
            return Err(Error::DimensionMismatch {
                context: "q-network output",
                expected: Action::ALL.len(),
                found: q_net.output_dim(),
            });
        }
        if config.batch_size == 0 || config.replay_capacity == 0 || config.sync_period == 0 || config.train_every == 0 {
            return Err(Error::InvalidConfig(
                "dqn batch_size, replay_capacity, sync_period and train_every must be positive".into(),
            ));
        }
        Ok(Self {
            target_net: q_net.clone(),
            adam: AdamState::new(&q_net, AdamConfig::with_learning_rate(config.learning_rate)),
            grads: Gradients::zeros_like(&q_net),
            q_net,
            config,
            replay: VecDeque::new(),
            epsilon: 1.0,
            updates: 0,
            tape: Tape::default(),
            target_tape: Tape::default(),
            _reward: PhantomData,
        })
    }

    pub fn q_net(&self) -> &Mlp {
        &self.q_net
    }

    pub fn target_net(&self) -> &Mlp {
        &self.target_net
    }

    pub fn config(&self) -> &DqnConfig {
        &self.config
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn q_values(&mut self, obs: &[f64]) -> [f64; 4] {
        let out = self.q_net.forward_tape(obs, &mut self.tape);
        [out[0], out[1], out[2], out[3]]
    }

    /// Epsilon-greedy over the Q-network's outputs.
    pub fn select_action<G: Rng + ?Sized>(&mut self, obs: &[f64], rng: &mut G) -> Action {
        if rng.random::<f64>() < self.epsilon {
            Action::ALL[rng.random_range(0..Action::ALL.len())]
        } else {
            argmax_action(&self.q_values(obs))
        }
    }

    pub fn remember(&mut self, transition: Transition<R>) {
        if self.replay.len() == self.config.replay_capacity {
            self.replay.pop_front();
        }
        self.replay.push_back(transition);
    }

    /// Samples a minibatch and applies [`DqnAgent::low_update`]. Returns
    /// `None` while the buffer holds fewer than `batch_size` transitions.
    pub fn train_step<G: Rng + ?Sized>(&mut self, rng: &mut G) -> Result<Option<f64>> {
        let n = self.replay.len();
        if n < self.config.batch_size {
            return Ok(None);
        }
        let idx: Vec<usize> = (0..self.config.batch_size).map(|_| rng.random_range(0..n)).collect();
        self.update_indices(&idx).map(Some)
    }

    /// One Adam step on the mean squared TD error of `batch`, with targets
    /// `r + gamma * max_a target_net(s') * (1 - done)`.
    pub fn low_update(&mut self, batch: &[Transition<R>]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut grads = core::mem::replace(&mut self.grads, Gradients { layers: Vec::new() });
        let result = self.accumulate(batch.iter(), batch.len(), &mut grads);
        self.grads = grads;
        result
    }

    fn update_indices(&mut self, idx: &[usize]) -> Result<f64> {
        let mut grads = core::mem::replace(&mut self.grads, Gradients { layers: Vec::new() });
        let replay = core::mem::take(&mut self.replay);
        let result = self.accumulate(idx.iter().map(|&i| &replay[i]), idx.len(), &mut grads);
        self.replay = replay;
        self.grads = grads;
        result
    }

    fn accumulate<'a, I>(&mut self, batch: I, len: usize, grads: &mut Gradients) -> Result<f64>
    where
        I: Iterator<Item = &'a Transition<R>>,
        R: 'a,
    {
        grads.fill_zero();
        let gamma = self.config.gamma;
        let scale = 2.0 / len as f64;
        let mut loss = 0.0;
        for t in batch {
            let next_max = if t.done {
                0.0
            } else {
                self.target_net
                    .forward_tape(&t.next_obs, &mut self.target_tape)
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            let target = t.reward.value() + gamma * next_max;
            let q = self.q_net.forward_tape(&t.obs, &mut self.tape)[t.action.index()];
            let err = q - target;
            loss += err * err;
            let mut grad_out = [0.0; 4];
            grad_out[t.action.index()] = scale * err;
            self.q_net.backward_tape(&mut self.tape, &grad_out, grads);
        }
        self.adam.step(&mut self.q_net, grads)?;
        self.updates += 1;
        if self.updates % self.config.sync_period == 0 {
            self.sync_target();
        }
        Ok(loss / len as f64)
    }

    pub fn sync_target(&mut self) {
        self.target_net
            .copy_from(&self.q_net)
            .expect("target network mirrors q-network shape");
    }
}
