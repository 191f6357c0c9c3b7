//! Training and evaluation loops for the hierarchical agents and the flat
//! baseline.
//!
//! A run is strictly sequential: episodes of interleaved goal selection and
//! low-level control, forward-model training after each episode, and a
//! refinement phase every `refinement_period` episodes. Every stochastic
//! choice draws from one seeded generator, so a run is reproducible bit for
//! bit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    argmax_action, intrinsic_reward, DqnAgent, DqnConfig, FlatAgent, HighLevelAgent, HighLevelConfig, LowLevelAgent,
    Transition,
};
use crate::encoding::{encode_goal, Normalizer};
use crate::error::{Error, Result};
use crate::forward_model::{ForwardModel, ForwardModelConfig, TransitionRecord};
use crate::interval::IntervalBox;
use crate::maze::{MazeConfig, MazeState};
use crate::mlp::{Mlp, Tape};
use crate::partition::{GoalSpace, RefineParams, RefinementReport, RegionId};
use crate::reward::{EnvReward, IntrinsicReward};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    /// Hierarchical agent with a learned, refined partition.
    Gara,
    /// Hierarchical agent on a fixed hand-designed partition.
    Handcrafted,
    /// Non-hierarchical DQN on raw states.
    FlatDqn,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Gara => "gara",
            AgentKind::Handcrafted => "handcrafted",
            AgentKind::FlatDqn => "flat-dqn",
        }
    }

    pub fn is_hierarchical(self) -> bool {
        self != AgentKind::FlatDqn
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    /// Low-level steps per high-level decision.
    pub k: u32,
    /// End a sub-episode as soon as the goal box is entered. When off, the
    /// worker keeps acting for the full `k` steps and entering the goal is
    /// still a terminal, rewarded transition for its value targets.
    pub goal_termination: bool,
    /// Episodes between refinement phases.
    pub refinement_period: u32,
    /// Records a pair needs before it may be refined.
    pub min_records: usize,
    /// Held-out MSE (normalized units) a pair's model must beat.
    pub fm_gate: f64,
    /// Required share of buffered end states inside the inflated reach box.
    pub coverage_gate: f64,
    /// Minimum region width as a fraction of the domain width.
    pub min_width_fraction: f64,
    pub max_depth: u32,
    /// Input bisection depth for reachability analysis.
    pub split_depth: u32,
    /// Refinement stops once the partition has this many regions.
    pub max_regions: usize,
    pub total_steps: u64,
    pub eval_period: u64,
    pub eval_episodes: u32,
    pub eval_epsilon: f64,
    pub snapshot_steps: Vec<u64>,
    /// Set per run from the seed list; not part of the config document.
    #[serde(skip)]
    pub seed: u64,
    pub high: HighLevelConfig,
    pub low: DqnConfig,
    pub forward_model: ForwardModelConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            k: 20,
            goal_termination: true,
            refinement_period: 10,
            min_records: 50,
            fm_gate: 5e-3,
            coverage_gate: 0.9,
            min_width_fraction: 1.0 / 16.0,
            max_depth: 6,
            split_depth: 2,
            max_regions: 100,
            total_steps: 200_000,
            eval_period: 5_000,
            eval_episodes: 10,
            eval_epsilon: 0.0,
            snapshot_steps: vec![0, 1_000, 30_000],
            seed: 0,
            high: HighLevelConfig::default(),
            low: DqnConfig::default(),
            forward_model: ForwardModelConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self, maze: &MazeConfig) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("trainer: {msg}")));
        if self.k == 0 || self.k > maze.max_episode_steps {
            return bad("k must be in 1..=max_episode_steps");
        }
        if self.refinement_period == 0 || self.eval_period == 0 || self.eval_episodes == 0 || self.total_steps == 0 {
            return bad("refinement_period, eval_period, eval_episodes and total_steps must be positive");
        }
        if self.fm_gate.is_nan() || self.fm_gate <= 0.0 || !(0.0..=1.0).contains(&self.coverage_gate) {
            return bad("fm_gate must be positive and coverage_gate in [0, 1]");
        }
        if !(self.min_width_fraction > 0.0 && self.min_width_fraction <= 1.0) {
            return bad("min_width_fraction must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.eval_epsilon) {
            return bad("eval_epsilon must be in [0, 1]");
        }
        if !(self.high.alpha > 0.0 && self.high.alpha <= 1.0) || !(0.0..=1.0).contains(&self.high.gamma) {
            return bad("high.alpha must be in (0, 1] and high.gamma in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.low.gamma) || self.low.learning_rate.is_nan() || self.low.learning_rate <= 0.0 {
            return bad("low.gamma must be in [0, 1] and low.learning_rate positive");
        }
        if self.low.hidden.contains(&0) || self.forward_model.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        Ok(())
    }

    pub fn refine_params(&self, domain: &IntervalBox) -> RefineParams {
        RefineParams::relative(domain, 1.0 / self.min_width_fraction, self.max_depth)
    }
}

/// Initial goal space for each agent kind.
pub fn initial_partition(kind: AgentKind, maze: &MazeConfig) -> Result<GoalSpace> {
    let domain = maze.state_domain();
    match kind {
        AgentKind::Gara => GoalSpace::halves(domain, 0, 0.5),
        AgentKind::Handcrafted => handcrafted_partition(maze),
        AgentKind::FlatDqn => Ok(GoalSpace::single(domain)),
    }
}

/// Four regions following the maze layout: the left half, the right half
/// below the exit, the strip left of the exit, and the exit corner itself.
pub fn handcrafted_partition(maze: &MazeConfig) -> Result<GoalSpace> {
    let split = maze.walls.first().map_or(0.5, |w| 0.5 * (w.x.0 + w.x.1));
    let (ex, ey) = (maze.exit.x.0, maze.exit.y.0);
    if !(split < ex && ex < 1.0 && 0.0 < ey && ey < 1.0 && maze.exit.x.1 == 1.0 && maze.exit.y.1 == 1.0) {
        return Err(Error::InvalidConfig(
            "handcrafted partition needs the exit in the top-right corner, right of the wall".into(),
        ));
    }
    let v = maze.v_max;
    let b = |x: (f64, f64), y: (f64, f64)| IntervalBox::from_bounds(&[x, y, (-v, v), (-v, v)]);
    GoalSpace::from_boxes(
        maze.state_domain(),
        vec![
            b((0.0, split), (0.0, 1.0))?,
            b((split, 1.0), (0.0, ey))?,
            b((split, ex), (ey, 1.0))?,
            b((ex, 1.0), (ey, 1.0))?,
        ],
    )
}

/// One row of the run's learning curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    pub eval_success_rate: f64,
    pub eval_mean_steps: Option<f64>,
    pub n_regions: usize,
    pub fm_loss: Option<f64>,
    pub refinements_committed: u64,
}

/// Receives the run's outputs as they are produced.
pub trait RunObserver {
    fn on_metrics(&mut self, row: &MetricsRow) -> Result<()>;

    fn on_snapshot(&mut self, step: u64, partition: &GoalSpace) -> Result<()>;

    /// Called after every refinement attempt, committed or not.
    fn on_refinement(&mut self, _step: u64, _report: &RefinementReport) -> Result<()> {
        Ok(())
    }

    fn on_gate(&mut self, _step: u64, _check: &GateCheck) -> Result<()> {
        Ok(())
    }
}

/// Outcome of the trust gate for one (source, target) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct GateCheck {
    pub source: RegionId,
    pub target: RegionId,
    pub records: usize,
    pub held_out_mse: Option<f64>,
    /// Only computed when the MSE gate passes.
    pub coverage: Option<f64>,
    pub passed: bool,
}

/// Observer that keeps everything in memory.
#[derive(Clone, Debug, Default)]
pub struct RecordingObserver {
    pub metrics: Vec<MetricsRow>,
    pub snapshots: Vec<(u64, GoalSpace)>,
    pub refinements: Vec<(u64, RefinementReport)>,
}

impl RunObserver for RecordingObserver {
    fn on_metrics(&mut self, row: &MetricsRow) -> Result<()> {
        self.metrics.push(row.clone());
        Ok(())
    }

    fn on_snapshot(&mut self, step: u64, partition: &GoalSpace) -> Result<()> {
        self.snapshots.push((step, partition.clone()));
        Ok(())
    }

    fn on_refinement(&mut self, step: u64, report: &RefinementReport) -> Result<()> {
        self.refinements.push((step, report.clone()));
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub success_rate: f64,
    /// Mean episode length over successful episodes.
    pub mean_steps_to_exit: Option<f64>,
}

/// Read-only view of a trained policy.
#[derive(Clone, Copy, Debug)]
pub enum PolicyRef<'a> {
    Hierarchical {
        partition: &'a GoalSpace,
        high: &'a HighLevelAgent,
        low_net: &'a Mlp,
        k: u32,
    },
    Flat {
        net: &'a Mlp,
    },
}

/// Runs `episodes` evaluation episodes with exploration rate `epsilon` at
/// every level (0 for greedy).
pub fn evaluate<R: Rng + ?Sized>(
    policy: PolicyRef<'_>,
    maze: &MazeConfig,
    episodes: u32,
    epsilon: f64,
    rng: &mut R,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::InvalidConfig("evaluation needs at least one episode".into()));
    }
    let normalizer = Normalizer::new(&maze.state_domain());
    let mut tape = Tape::default();
    let mut obs = Vec::new();
    let (mut successes, mut steps_total) = (0u32, 0u64);
    for _ in 0..episodes {
        let mut s = maze.reset(rng);
        let reached = match policy {
            PolicyRef::Flat { net } => loop {
                obs.clear();
                normalizer.push_state(&s.to_array(), &mut obs);
                let a = epsilon_greedy(net, &obs, epsilon, &mut tape, rng);
                let out = maze.step(&s, a);
                s = out.state;
                if out.done {
                    break out.at_exit;
                }
            },
            PolicyRef::Hierarchical {
                partition,
                high,
                low_net,
                k,
            } => {
                let ids = partition.ids();
                'episode: loop {
                    let src = partition.locate(&s.to_array());
                    let candidates = HighLevelAgent::candidates(src, &ids);
                    let tgt = if rng.random::<f64>() < epsilon {
                        candidates[rng.random_range(0..candidates.len())]
                    } else {
                        high.argmax(src, &candidates)
                    };
                    let tgt_box = &partition.region(tgt).expect("candidate exists").bbox;
                    let goal = normalizer.goal(&encode_goal(tgt_box));
                    for _ in 0..k {
                        normalizer.observation(&s.to_array(), &goal, &mut obs);
                        let a = epsilon_greedy(low_net, &obs, epsilon, &mut tape, rng);
                        let out = maze.step(&s, a);
                        s = out.state;
                        if out.done {
                            break 'episode out.at_exit;
                        }
                        if tgt_box.contains_point(&s.to_array()) {
                            break;
                        }
                    }
                }
            }
        };
        if reached {
            successes += 1;
            steps_total += u64::from(s.t);
        }
    }
    Ok(EvalResult {
        success_rate: f64::from(successes) / f64::from(episodes),
        mean_steps_to_exit: (successes > 0).then(|| steps_total as f64 / f64::from(successes)),
    })
}

fn epsilon_greedy<R: Rng + ?Sized>(
    net: &Mlp,
    obs: &[f64],
    epsilon: f64,
    tape: &mut Tape,
    rng: &mut R,
) -> crate::maze::Action {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        crate::maze::Action::ALL[rng.random_range(0..4)]
    } else {
        argmax_action(net.forward_tape(obs, tape))
    }
}

/// Everything a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct TrainedAgent {
    pub kind: AgentKind,
    pub partition: GoalSpace,
    pub high: Option<HighLevelAgent>,
    pub low: Option<LowLevelAgent>,
    pub flat: Option<FlatAgent>,
    pub forward_model: Option<ForwardModel>,
    pub k: u32,
    pub steps: u64,
    pub episodes: u64,
    pub refinements_committed: u64,
}

impl TrainedAgent {
    pub fn policy(&self) -> PolicyRef<'_> {
        match (&self.high, &self.low, &self.flat) {
            (Some(high), Some(low), _) => PolicyRef::Hierarchical {
                partition: &self.partition,
                high,
                low_net: low.q_net(),
                k: self.k,
            },
            (_, _, Some(flat)) => PolicyRef::Flat { net: flat.q_net() },
            _ => unreachable!("trained agents carry a policy"),
        }
    }
}

/// Trains one agent from scratch and reports progress to `observer`.
pub fn run_training<O: RunObserver + ?Sized>(
    kind: AgentKind,
    cfg: &TrainerConfig,
    maze: &MazeConfig,
    initial: GoalSpace,
    observer: &mut O,
) -> Result<TrainedAgent> {
    maze.validate()?;
    cfg.validate(maze)?;
    if initial.state_domain() != &maze.state_domain() {
        return Err(Error::InvalidConfig(
            "initial partition domain differs from the maze state domain".into(),
        ));
    }
    let mut run = Run::new(kind, cfg, maze, initial)?;
    run.train(observer)?;
    Ok(run.finish())
}

struct Run<'a> {
    kind: AgentKind,
    cfg: &'a TrainerConfig,
    maze: &'a MazeConfig,
    rng: ChaCha8Rng,
    normalizer: Normalizer,
    partition: GoalSpace,
    high: HighLevelAgent,
    low: Option<LowLevelAgent>,
    flat: Option<FlatAgent>,
    fm: Option<ForwardModel>,
    refine_params: RefineParams,
    step: u64,
    episode: u64,
    refinements: u64,
    fm_loss: Option<f64>,
    snapshot_steps: Vec<u64>,
    obs: Vec<f64>,
    next_obs: Vec<f64>,
}

impl<'a> Run<'a> {
    fn new(kind: AgentKind, cfg: &'a TrainerConfig, maze: &'a MazeConfig, partition: GoalSpace) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let domain = maze.state_domain();
        let normalizer = Normalizer::new(&domain);
        let d = domain.dim();
        let (low, flat) = if kind.is_hierarchical() {
            (Some(DqnAgent::new(3 * d, cfg.low.clone(), rng.random())?), None)
        } else {
            (None, Some(DqnAgent::new(d, cfg.low.clone(), rng.random())?))
        };
        let fm = if kind == AgentKind::Gara {
            Some(ForwardModel::new(
                domain.clone(),
                cfg.k,
                cfg.forward_model.clone(),
                rng.random(),
            )?)
        } else {
            None
        };
        let mut snapshot_steps: Vec<u64> = cfg
            .snapshot_steps
            .iter()
            .copied()
            .filter(|&s| s <= cfg.total_steps)
            .chain([cfg.total_steps])
            .collect();
        snapshot_steps.sort_unstable();
        snapshot_steps.dedup();
        Ok(Self {
            kind,
            cfg,
            maze,
            rng,
            refine_params: cfg.refine_params(&domain),
            normalizer,
            partition,
            high: HighLevelAgent::new(cfg.high.alpha, cfg.high.gamma, cfg.high.epsilon.start),
            low,
            flat,
            fm,
            step: 0,
            episode: 0,
            refinements: 0,
            fm_loss: None,
            snapshot_steps,
            obs: Vec::new(),
            next_obs: Vec::new(),
        })
    }

    fn finish(self) -> TrainedAgent {
        let hierarchical = self.kind.is_hierarchical();
        TrainedAgent {
            kind: self.kind,
            partition: self.partition,
            high: hierarchical.then_some(self.high),
            low: self.low,
            flat: self.flat,
            forward_model: self.fm,
            k: self.cfg.k,
            steps: self.step,
            episodes: self.episode,
            refinements_committed: self.refinements,
        }
    }

    fn done(&self) -> bool {
        self.step >= self.cfg.total_steps
    }

    fn train<O: RunObserver + ?Sized>(&mut self, observer: &mut O) -> Result<()> {
        self.after_step(observer)?;
        while !self.done() {
            self.episode += 1;
            if self.kind.is_hierarchical() {
                self.hierarchical_episode(observer)?;
                self.between_episodes(observer)?;
            } else {
                self.flat_episode(observer)?;
            }
        }
        if self.cfg.total_steps % self.cfg.eval_period != 0 {
            self.evaluate_now(observer)?;
        }
        Ok(())
    }

    /// Evaluation and snapshot hooks, run at step 0 and after every env step.
    fn after_step<O: RunObserver + ?Sized>(&mut self, observer: &mut O) -> Result<()> {
        if self.step % self.cfg.eval_period == 0 {
            self.evaluate_now(observer)?;
        }
        if self.snapshot_steps.first() == Some(&self.step) {
            self.snapshot_steps.remove(0);
            observer.on_snapshot(self.step, &self.partition)?;
        }
        Ok(())
    }

    fn evaluate_now<O: RunObserver + ?Sized>(&mut self, observer: &mut O) -> Result<()> {
        let policy = match (&self.low, &self.flat) {
            (Some(low), _) => PolicyRef::Hierarchical {
                partition: &self.partition,
                high: &self.high,
                low_net: low.q_net(),
                k: self.cfg.k,
            },
            (None, Some(flat)) => PolicyRef::Flat { net: flat.q_net() },
            (None, None) => unreachable!(),
        };
        let result = evaluate(
            policy,
            self.maze,
            self.cfg.eval_episodes,
            self.cfg.eval_epsilon,
            &mut self.rng,
        )?;
        observer.on_metrics(&MetricsRow {
            step: self.step,
            episode: self.episode,
            eval_success_rate: result.success_rate,
            eval_mean_steps: result.mean_steps_to_exit,
            n_regions: self.partition.len(),
            fm_loss: self.fm_loss,
            refinements_committed: self.refinements,
        })
    }

    fn update_epsilons(&mut self) {
        let total = self.cfg.total_steps;
        self.high.epsilon = self.cfg.high.epsilon.value(self.step, total);
        let eps = self.cfg.low.epsilon.value(self.step, total);
        if let Some(low) = &mut self.low {
            low.epsilon = eps;
        }
        if let Some(flat) = &mut self.flat {
            flat.epsilon = eps;
        }
    }

    fn hierarchical_episode<O: RunObserver + ?Sized>(&mut self, observer: &mut O) -> Result<()> {
        let mut s = self.maze.reset(&mut self.rng);
        let gamma_high = self.cfg.high.gamma;
        loop {
            let ids = self.partition.ids();
            let start = s.to_array();
            let src = self.partition.locate(&start);
            self.update_epsilons();
            let tgt = self.high.select_goal(src, &ids, &mut self.rng);
            let tgt_box = self.partition.region(tgt).expect("goal exists").bbox.clone();
            let encoding = encode_goal(&tgt_box);
            let goal = self.normalizer.goal(&encoding);

            let (mut ret, mut discount, mut elapsed) = (0.0, 1.0, 0u32);
            let mut episode_over = false;
            let mut at_exit = false;
            while elapsed < self.cfg.k {
                let (next, env_reward, done, exit, reached) = self.low_level_step(&s, &goal, &tgt_box)?;
                ret += discount * env_reward.0;
                discount *= gamma_high;
                elapsed += 1;
                s = next;
                self.after_step(observer)?;
                if done {
                    episode_over = true;
                    at_exit = exit;
                    break;
                }
                if (reached && self.cfg.goal_termination) || self.done() {
                    break;
                }
            }
            let end = s.to_array();
            if let Some(fm) = &mut self.fm {
                let record = TransitionRecord {
                    start_state: start.to_vec(),
                    target_encoding: encoding,
                    end_state: end.to_vec(),
                };
                fm.record(record, src, tgt)?;
            }
            let next_region = self.partition.locate(&end);
            self.high
                .update(src, tgt, EnvReward(ret), next_region, &ids, elapsed, at_exit)?;
            if episode_over || self.done() {
                return Ok(());
            }
        }
    }

    /// One primitive step of the low-level worker towards `tgt_box`.
    fn low_level_step(
        &mut self,
        s: &MazeState,
        goal: &[f64],
        tgt_box: &IntervalBox,
    ) -> Result<(MazeState, EnvReward, bool, bool, bool)> {
        let low = self.low.as_mut().expect("hierarchical run");
        self.normalizer.observation(&s.to_array(), goal, &mut self.obs);
        let action = low.select_action(&self.obs, &mut self.rng);
        let out = self.maze.step(s, action);
        let next = out.state.to_array();
        let r_int: IntrinsicReward = intrinsic_reward(&next, tgt_box);
        let reached = r_int.0 > 0.0;
        self.normalizer.observation(&next, goal, &mut self.next_obs);
        low.remember(Transition {
            obs: self.obs.clone(),
            action,
            reward: r_int,
            next_obs: self.next_obs.clone(),
            done: reached || out.at_exit,
        });
        self.step += 1;
        if self.step % self.cfg.low.train_every == 0 && low.replay_len() >= self.cfg.low.learning_starts {
            low.train_step(&mut self.rng)?;
        }
        Ok((out.state, out.reward, out.done, out.at_exit, reached))
    }

    fn flat_episode<O: RunObserver + ?Sized>(&mut self, observer: &mut O) -> Result<()> {
        let mut s = self.maze.reset(&mut self.rng);
        loop {
            self.update_epsilons();
            let flat = self.flat.as_mut().expect("flat run");
            self.obs.clear();
            self.normalizer.push_state(&s.to_array(), &mut self.obs);
            let action = flat.select_action(&self.obs, &mut self.rng);
            let out = self.maze.step(&s, action);
            self.next_obs.clear();
            self.normalizer.push_state(&out.state.to_array(), &mut self.next_obs);
            flat.remember(Transition {
                obs: self.obs.clone(),
                action,
                reward: out.reward,
                next_obs: self.next_obs.clone(),
                done: out.at_exit,
            });
            self.step += 1;
            if self.step % self.cfg.low.train_every == 0 && flat.replay_len() >= self.cfg.low.learning_starts {
                flat.train_step(&mut self.rng)?;
            }
            s = out.state;
            self.after_step(observer)?;
            if out.done || self.done() {
                return Ok(());
            }
        }
    }

    fn between_episodes<O: RunObserver + ?Sized>(&mut self, observer: &mut O) -> Result<()> {
        let Some(fm) = &mut self.fm else {
            return Ok(());
        };
        let fc = &self.cfg.forward_model;
        if let Some(loss) = fm.train_batches(fc.batches_per_episode, fc.batch_size, &mut self.rng)? {
            self.fm_loss = Some(loss);
        }
        if self.episode % u64::from(self.cfg.refinement_period) == 0 {
            self.refinement_phase(observer)?;
        }
        Ok(())
    }

    /// Runs refinement on every pair whose forward model passes the trust
    /// gate: enough records, low held-out error, and buffered outcomes
    /// covered by the (error-inflated) reach box.
    fn refinement_phase<O: RunObserver + ?Sized>(&mut self, observer: &mut O) -> Result<()> {
        let fm = self.fm.as_mut().expect("gara run");
        let pairs: Vec<(RegionId, RegionId)> = fm
            .pair_counts()
            .into_iter()
            .filter(|&(_, n)| n >= self.cfg.min_records)
            .map(|(pair, _)| pair)
            .collect();
        for (src, tgt) in pairs {
            if self.partition.len() >= self.cfg.max_regions {
                break;
            }
            let (Some(source), Some(target)) = (self.partition.region(src), self.partition.region(tgt)) else {
                continue;
            };
            let mut check = GateCheck {
                source: src,
                target: tgt,
                records: fm.records_for(src, tgt).count(),
                held_out_mse: fm.held_out_mse(src, tgt),
                coverage: None,
                passed: false,
            };
            if let Some(mse) = check.held_out_mse.filter(|&m| m < self.cfg.fm_gate) {
                check.coverage = fm.reach_coverage(source, target, self.cfg.split_depth, libm::sqrt(mse))?;
                check.passed = check.coverage.is_some_and(|c| c >= self.cfg.coverage_gate);
            }
            observer.on_gate(self.step, &check)?;
            if !check.passed {
                continue;
            }
            let encoding = encode_goal(&target.bbox);
            let depth = self.cfg.split_depth;
            let fm_ref: &ForwardModel = fm;
            let report = self.partition.refine(
                src,
                tgt,
                |b| fm_ref.reach_from_box(b, &encoding, depth),
                &self.refine_params,
            )?;
            if report.committed {
                self.high.on_partition_refined(&report)?;
                fm.on_region_split(src, &self.partition);
                self.refinements += 1;
            }
            observer.on_refinement(self.step, &report)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(total_steps: u64) -> TrainerConfig {
        TrainerConfig {
            total_steps,
            eval_period: 500,
            eval_episodes: 2,
            snapshot_steps: vec![0, 1_000],
            low: DqnConfig {
                hidden: vec![16],
                learning_starts: 100,
                ..DqnConfig::default()
            },
            forward_model: ForwardModelConfig {
                hidden: vec![16],
                ..ForwardModelConfig::default()
            },
            ..TrainerConfig::default()
        }
    }

    #[test]
    fn handcrafted_layout_is_a_partition() {
        let maze = MazeConfig::default();
        let gs = handcrafted_partition(&maze).unwrap();
        assert_eq!(gs.len(), 4);
        assert_eq!(gs.locate(&[0.9, 0.9, 0.0, 0.0]), 3);
        assert_eq!(gs.locate(&[0.1, 0.9, 0.0, 0.0]), 0);
        assert_eq!(gs.locate(&[0.9, 0.1, 0.0, 0.0]), 1);
    }

    #[test]
    fn evaluation_needs_episodes() {
        let maze = MazeConfig::default();
        let net = Mlp::zeros(&[4, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(evaluate(PolicyRef::Flat { net: &net }, &maze, 0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn config_validation() {
        let maze = MazeConfig::default();
        TrainerConfig::default().validate(&maze).unwrap();
        let bad = TrainerConfig {
            k: 500,
            ..TrainerConfig::default()
        };
        assert!(bad.validate(&maze).is_err());
        let bad = TrainerConfig {
            eval_episodes: 0,
            ..TrainerConfig::default()
        };
        assert!(bad.validate(&maze).is_err());
    }

    #[test]
    fn single_region_partition_still_runs() {
        let maze = MazeConfig::default();
        let cfg = tiny(600);
        let mut obs = RecordingObserver::default();
        let agent = run_training(
            AgentKind::Handcrafted,
            &cfg,
            &maze,
            GoalSpace::single(maze.state_domain()),
            &mut obs,
        )
        .unwrap();
        assert_eq!(agent.steps, 600);
        assert_eq!(obs.metrics.len(), 3);
    }

    #[test]
    fn goal_termination_controls_window_length() {
        let maze = MazeConfig::default();
        let windows = |goal_termination| {
            let cfg = TrainerConfig {
                goal_termination,
                ..tiny(600)
            };
            let single = GoalSpace::single(maze.state_domain());
            let agent = run_training(AgentKind::Gara, &cfg, &maze, single, &mut RecordingObserver::default()).unwrap();
            agent.forward_model.unwrap().len()
        };
        // A self-targeting window starts inside its goal.
        assert_eq!(windows(true), 600);
        assert!(windows(false) <= 600 / 20 + 2);
    }

    #[test]
    fn metrics_steps_increase_and_snapshots_follow_schedule() {
        let maze = MazeConfig::default();
        let cfg = tiny(1_200);
        let mut obs = RecordingObserver::default();
        run_training(
            AgentKind::Gara,
            &cfg,
            &maze,
            initial_partition(AgentKind::Gara, &maze).unwrap(),
            &mut obs,
        )
        .unwrap();
        let steps: Vec<u64> = obs.metrics.iter().map(|m| m.step).collect();
        assert_eq!(steps, vec![0, 500, 1_000, 1_200]);
        let snaps: Vec<u64> = obs.snapshots.iter().map(|s| s.0).collect();
        assert_eq!(snaps, vec![0, 1_000, 1_200]);
        assert!(obs.metrics.iter().all(|m| (0.0..=1.0).contains(&m.eval_success_rate)));
    }

    #[test]
    fn runs_are_reproducible() {
        let maze = MazeConfig::default();
        let cfg = tiny(800);
        let run = || {
            let mut obs = RecordingObserver::default();
            run_training(
                AgentKind::Gara,
                &cfg,
                &maze,
                initial_partition(AgentKind::Gara, &maze).unwrap(),
                &mut obs,
            )
            .unwrap();
            obs.metrics
        };
        assert_eq!(run(), run());
    }
}
