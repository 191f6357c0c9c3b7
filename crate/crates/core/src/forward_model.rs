//! Learned k-step forward model `F_k(s, G') -> s'` and its set-based reach map.
//!
//! The network works on normalized coordinates: the input is the rescaled
//! start state followed by the rescaled goal encoding, the output is the
//! rescaled end state. Every fifth record (by insertion order) is held out
//! of training and used for the per-pair validation error.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{encode_goal, Normalizer};
use crate::error::{check_dim, Error, Result};
use crate::interval::{reach_box, IntervalBox};
use crate::mlp::{AdamConfig, AdamState, Gradients, Mlp, Tape};
use crate::partition::{GoalRegion, GoalSpace, RegionId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardModelConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Total records kept across all pairs.
    pub capacity: usize,
    /// Minibatches drawn after every training episode.
    pub batches_per_episode: usize,
    pub batch_size: usize,
    /// Every n-th record is held out for validation.
    pub holdout_every: u64,
}

impl Default for ForwardModelConfig {
    fn default() -> Self {
        Self {
            hidden: alloc::vec![64, 64],
            learning_rate: 1e-3,
            capacity: 20_000,
            batches_per_episode: 20,
            batch_size: 64,
            holdout_every: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub start_state: Vec<f64>,
    pub target_encoding: Vec<f64>,
    pub end_state: Vec<f64>,
}

impl TransitionRecord {
    fn is_finite(&self) -> bool {
        self.start_state
            .iter()
            .chain(&self.target_encoding)
            .chain(&self.end_state)
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug)]
struct Stored {
    seq: u64,
    source: RegionId,
    /// `None` once the target region has been split away.
    target: Option<RegionId>,
    record: TransitionRecord,
}

#[derive(Clone, Debug)]
pub struct ForwardModel {
    net: Mlp,
    adam: AdamState,
    config: ForwardModelConfig,
    k: u32,
    domain: IntervalBox,
    normalizer: Normalizer,
    records: VecDeque<Stored>,
    next_seq: u64,
    tape: Tape,
    grads: Gradients,
    input: Vec<f64>,
    target: Vec<f64>,
}

impl ForwardModel {
    pub fn new(domain: IntervalBox, k: u32, config: ForwardModelConfig, seed: u64) -> Result<Self> {
        let d = domain.dim();
        let mut sizes = Vec::with_capacity(config.hidden.len() + 2);
        sizes.push(3 * d);
        sizes.extend_from_slice(&config.hidden);
        sizes.push(d);
        let net = Mlp::init_random(&sizes, seed)?;
        Self::with_net(domain, k, config, net)
    }

    /// Wraps an existing network; its input must be `3 * state_dim` wide.
    pub fn with_net(domain: IntervalBox, k: u32, config: ForwardModelConfig, net: Mlp) -> Result<Self> {
        let d = domain.dim();
        check_dim("forward model input", 3 * d, net.input_dim())?;
        check_dim("forward model output", d, net.output_dim())?;
        if k == 0 || config.capacity == 0 || config.batch_size == 0 || config.holdout_every < 2 {
            return Err(Error::InvalidConfig(
                "forward model needs k, capacity and batch_size > 0 and holdout_every >= 2".into(),
            ));
        }
        let adam = AdamState::new(&net, AdamConfig::with_learning_rate(config.learning_rate));
        let grads = Gradients::zeros_like(&net);
        Ok(Self {
            normalizer: Normalizer::new(&domain),
            net,
            adam,
            config,
            k,
            domain,
            records: VecDeque::new(),
            next_seq: 0,
            tape: Tape::default(),
            grads,
            input: Vec::new(),
            target: Vec::new(),
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn config(&self) -> &ForwardModelConfig {
        &self.config
    }

    pub fn goal_encoding_dim(&self) -> usize {
        2 * self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends a record for the `(source, target)` pair, evicting the oldest
    /// record once the buffer is full.
    pub fn record(&mut self, record: TransitionRecord, source: RegionId, target: RegionId) -> Result<()> {
        let d = self.domain.dim();
        check_dim("record start_state", d, record.start_state.len())?;
        check_dim("record target_encoding", 2 * d, record.target_encoding.len())?;
        check_dim("record end_state", d, record.end_state.len())?;
        if !record.is_finite() {
            return Err(Error::NonFinite("transition record"));
        }
        if self.records.len() == self.config.capacity {
            self.records.pop_front();
        }
        self.records.push_back(Stored {
            seq: self.next_seq,
            source,
            target: Some(target),
            record,
        });
        self.next_seq += 1;
        Ok(())
    }

    pub fn records_for(&self, source: RegionId, target: RegionId) -> impl Iterator<Item = &TransitionRecord> {
        self.records
            .iter()
            .filter(move |r| r.source == source && r.target == Some(target))
            .map(|r| &r.record)
    }

    /// Record counts per live `(source, target)` pair, in key order.
    pub fn pair_counts(&self) -> BTreeMap<(RegionId, RegionId), usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            if let Some(t) = r.target {
                *counts.entry((r.source, t)).or_insert(0) += 1;
            }
        }
        counts
    }

    fn is_holdout(&self, seq: u64) -> bool {
        seq % self.config.holdout_every == 0
    }

    fn fill_input(&mut self, idx: usize) {
        let stored = &self.records[idx].record;
        self.input.clear();
        self.normalizer.push_state(&stored.start_state, &mut self.input);
        self.normalizer.push_goal(&stored.target_encoding, &mut self.input);
        self.target.clear();
        self.normalizer.push_state(&stored.end_state, &mut self.target);
    }

    /// One Adam step on the mean squared error over `batch`; returns that loss.
    fn train_on(&mut self, batch: &[usize]) -> Result<f64> {
        self.grads.fill_zero();
        let d = self.domain.dim();
        let scale = 2.0 / (batch.len() * d) as f64;
        let mut loss = 0.0;
        let mut grad_out = Vec::with_capacity(d);
        for &idx in batch {
            self.fill_input(idx);
            let pred = self.net.forward_tape(&self.input, &mut self.tape);
            grad_out.clear();
            for (p, t) in pred.iter().zip(&self.target) {
                loss += (p - t) * (p - t);
                grad_out.push(scale * (p - t));
            }
            self.net.backward_tape(&mut self.tape, &grad_out, &mut self.grads);
        }
        self.adam.step(&mut self.net, &self.grads)?;
        Ok(loss / (batch.len() * d) as f64)
    }

    fn training_indices(&self) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| !self.is_holdout(r.seq))
            .map(|(i, _)| i)
            .collect()
    }

    /// Full passes over the training records in shuffled minibatches.
    /// Returns the mean batch loss of the last epoch, or `None` when there is
    /// nothing to train on.
    pub fn train<R: Rng + ?Sized>(&mut self, epochs: usize, batch_size: usize, rng: &mut R) -> Result<Option<f64>> {
        let mut indices = self.training_indices();
        if indices.is_empty() || epochs == 0 || batch_size == 0 {
            return Ok(None);
        }
        let mut last = 0.0;
        for _ in 0..epochs {
            indices.shuffle(rng);
            let (mut total, mut batches) = (0.0, 0);
            for chunk in indices.chunks(batch_size) {
                total += self.train_on(chunk)?;
                batches += 1;
            }
            last = total / batches as f64;
        }
        Ok(Some(last))
    }

    /// `n_batches` minibatches sampled uniformly with replacement. Returns the
    /// mean batch loss, or `None` when there is nothing to train on.
    pub fn train_batches<R: Rng + ?Sized>(
        &mut self,
        n_batches: usize,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Option<f64>> {
        let indices = self.training_indices();
        if indices.is_empty() || n_batches == 0 || batch_size == 0 {
            return Ok(None);
        }
        let mut batch = Vec::with_capacity(batch_size);
        let mut total = 0.0;
        for _ in 0..n_batches {
            batch.clear();
            batch.extend((0..batch_size).map(|_| indices[rng.random_range(0..indices.len())]));
            total += self.train_on(&batch)?;
        }
        Ok(Some(total / n_batches as f64))
    }

    /// Mean squared error (normalized units) over the held-out records of a pair.
    pub fn held_out_mse(&self, source: RegionId, target: RegionId) -> Option<f64> {
        let mut tape = Tape::default();
        let mut input = Vec::new();
        let (mut total, mut n) = (0.0, 0usize);
        for r in self
            .records
            .iter()
            .filter(|r| r.source == source && r.target == Some(target) && self.is_holdout(r.seq))
        {
            input.clear();
            self.normalizer.push_state(&r.record.start_state, &mut input);
            self.normalizer.push_goal(&r.record.target_encoding, &mut input);
            let end = self.normalizer.state(&r.record.end_state);
            let pred = self.net.forward_tape(&input, &mut tape);
            total += pred.iter().zip(&end).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
            n += end.len();
        }
        (n > 0).then(|| total / n as f64)
    }

    /// Pointwise prediction in state units.
    pub fn predict(&self, start_state: &[f64], target_encoding: &[f64]) -> Result<Vec<f64>> {
        let mut input = self.normalizer.state(start_state);
        self.normalizer.push_goal(target_encoding, &mut input);
        let out = self.net.forward(&input)?;
        Ok(self.normalizer.denormalize_state(&out))
    }

    /// Over-approximation of the end states reached from any state in
    /// `start` when the low-level policy targets the goal with encoding
    /// `target_encoding`, clamped to the state domain.
    pub fn reach_from_box(
        &self,
        start: &IntervalBox,
        target_encoding: &[f64],
        split_depth: u32,
    ) -> Result<IntervalBox> {
        check_dim("reach start box", self.domain.dim(), start.dim())?;
        check_dim("reach target encoding", self.goal_encoding_dim(), target_encoding.len())?;
        let goal = IntervalBox::point(&self.normalizer.goal(target_encoding))?;
        let input = self.normalizer.normalize_box(start)?.concat(&goal);
        let out = reach_box(&self.net, &input, split_depth)?;
        self.normalizer.denormalize_box(&out)?.clamp_to(&self.domain)
    }

    pub fn reach_region(&self, source: &GoalRegion, target: &GoalRegion, split_depth: u32) -> Result<IntervalBox> {
        self.reach_from_box(&source.bbox, &encode_goal(&target.bbox), split_depth)
    }

    /// Fraction of a pair's buffered end states that fall inside the reach
    /// box inflated by `inflate` (normalized units) on every side.
    pub fn reach_coverage(
        &self,
        source: &GoalRegion,
        target: &GoalRegion,
        split_depth: u32,
        inflate: f64,
    ) -> Result<Option<f64>> {
        let reach = self.reach_region(source, target, split_depth)?;
        let widths = self.normalizer.widths();
        let (mut inside, mut n) = (0usize, 0usize);
        for rec in self.records_for(source.id, target.id) {
            n += 1;
            let ok = rec.end_state.iter().enumerate().all(|(i, v)| {
                let slack = inflate * widths[i];
                reach.lo()[i] - slack <= *v && *v <= reach.hi()[i] + slack
            });
            inside += usize::from(ok);
        }
        Ok((n > 0).then(|| inside as f64 / n as f64))
    }

    /// Re-keys records after `parent` was split: records that started in it
    /// are re-assigned by location, records that targeted it are retired from
    /// pair bookkeeping (they still train the network).
    pub fn on_region_split(&mut self, parent: RegionId, partition: &GoalSpace) {
        for r in &mut self.records {
            if r.source == parent {
                r.source = partition.locate(&r.record.start_state);
            }
            if r.target == Some(parent) {
                r.target = None;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::Layer;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line_domain() -> IntervalBox {
        IntervalBox::from_bounds(&[(0.0, 1.0)]).unwrap()
    }

    fn rec(s: f64, g: [f64; 2], e: f64) -> TransitionRecord {
        TransitionRecord {
            start_state: vec![s],
            target_encoding: g.to_vec(),
            end_state: vec![e],
        }
    }

    fn small_config(capacity: usize) -> ForwardModelConfig {
        ForwardModelConfig {
            hidden: vec![16],
            capacity,
            ..ForwardModelConfig::default()
        }
    }

    #[test]
    fn record_appends_and_evicts_oldest() {
        let mut fm = ForwardModel::new(line_domain(), 5, small_config(3), 0).unwrap();
        fm.record(rec(0.1, [0.5, 0.5], 0.2), 0, 1).unwrap();
        fm.record(rec(0.2, [0.5, 0.5], 0.3), 0, 1).unwrap();
        assert_eq!(fm.len(), 2);
        fm.record(rec(0.3, [0.5, 0.5], 0.4), 1, 0).unwrap();
        fm.record(rec(0.4, [0.5, 0.5], 0.5), 0, 1).unwrap();
        assert_eq!(fm.len(), 3);
        let starts: Vec<f64> = fm.records_for(0, 1).map(|r| r.start_state[0]).collect();
        assert_eq!(starts, vec![0.2, 0.4]);
        assert_eq!(fm.pair_counts().get(&(1, 0)), Some(&1));
    }

    #[test]
    fn record_rejects_bad_input() {
        let mut fm = ForwardModel::new(line_domain(), 5, small_config(3), 0).unwrap();
        assert!(fm.record(rec(f64::NAN, [0.5, 0.5], 0.2), 0, 1).is_err());
        let bad = TransitionRecord {
            start_state: vec![0.1, 0.2],
            target_encoding: vec![0.5, 0.5],
            end_state: vec![0.1],
        };
        assert!(fm.record(bad, 0, 1).is_err());
        assert!(fm.is_empty());
    }

    #[test]
    fn empty_buffer_training_is_a_no_op() {
        let mut fm = ForwardModel::new(line_domain(), 5, small_config(10), 0).unwrap();
        let before = fm.net().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(fm.train(3, 8, &mut rng).unwrap(), None);
        assert_eq!(fm.train_batches(3, 8, &mut rng).unwrap(), None);
        assert_eq!(fm.net(), &before);
    }

    #[test]
    fn fits_a_constant_target() {
        let mut fm = ForwardModel::new(line_domain(), 5, small_config(100), 1).unwrap();
        for _ in 0..20 {
            fm.record(rec(0.3, [0.75, 0.25], 0.6), 0, 1).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut loss = f64::INFINITY;
        for _ in 0..500 {
            loss = fm.train_batches(1, 8, &mut rng).unwrap().unwrap();
        }
        assert!(loss < 1e-4, "loss {loss}");
        assert!(fm.net().is_finite());
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let run = || {
            let mut fm = ForwardModel::new(line_domain(), 5, small_config(100), 3).unwrap();
            for i in 0..40 {
                let s = i as f64 / 40.0;
                fm.record(rec(s, [0.75, 0.25], (s + 0.1).min(1.0)), 0, 1).unwrap();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            fm.train(5, 8, &mut rng).unwrap().unwrap()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    /// `net(s, c, h) = s + 0.3` in a 1-D unit domain.
    fn shift_model() -> ForwardModel {
        let layer = Layer::from_rows(&[vec![1.0, 0.0, 0.0]], vec![0.3]).unwrap();
        let net = Mlp::from_layers(vec![layer]).unwrap();
        ForwardModel::with_net(line_domain(), 5, small_config(10), net).unwrap()
    }

    #[test]
    fn reach_of_affine_model() {
        let fm = shift_model();
        let source = GoalRegion {
            id: 0,
            bbox: IntervalBox::from_bounds(&[(0.0, 0.5)]).unwrap(),
            parent_id: None,
        };
        let target = GoalRegion {
            id: 1,
            bbox: IntervalBox::from_bounds(&[(0.5, 1.0)]).unwrap(),
            parent_id: None,
        };
        let r = fm.reach_region(&source, &target, 0).unwrap();
        assert!((r.lo()[0] - 0.3).abs() < 1e-15 && (r.hi()[0] - 0.8).abs() < 1e-15);
        // [0.5, 1] + 0.3 is clamped back into the domain
        let r = fm.reach_region(&target, &source, 2).unwrap();
        assert!(line_domain().contains(&r).unwrap());
        assert_eq!(r.hi()[0], 1.0);
    }

    #[test]
    fn identity_model_reaches_the_source_box() {
        let domain = IntervalBox::from_bounds(&[(0.0, 1.0), (0.0, 1.0), (-0.05, 0.05), (-0.05, 0.05)]).unwrap();
        let mut rows = vec![vec![0.0; 12]; 4];
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let net = Mlp::from_layers(vec![Layer::from_rows(&rows, vec![0.0; 4]).unwrap()]).unwrap();
        let fm = ForwardModel::with_net(domain, 20, ForwardModelConfig::default(), net).unwrap();
        let source = IntervalBox::from_bounds(&[(0.1, 0.3), (0.5, 0.9), (-0.05, 0.0), (0.01, 0.02)]).unwrap();
        let enc =
            encode_goal(&IntervalBox::from_bounds(&[(0.5, 1.0), (0.0, 1.0), (-0.05, 0.05), (-0.05, 0.05)]).unwrap());
        let r = fm.reach_from_box(&source, &enc, 2).unwrap();
        for i in 0..4 {
            assert!((r.lo()[i] - source.lo()[i]).abs() < 1e-15);
            assert!((r.hi()[i] - source.hi()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn split_rekeys_sources_and_retires_targets() {
        let mut fm = shift_model();
        fm.record(rec(0.1, [0.75, 0.25], 0.4), 0, 1).unwrap();
        fm.record(rec(0.4, [0.75, 0.25], 0.7), 0, 1).unwrap();
        fm.record(rec(0.8, [0.25, 0.25], 0.9), 1, 0).unwrap();
        let gs = GoalSpace::from_boxes(
            line_domain(),
            vec![
                IntervalBox::from_bounds(&[(0.0, 0.25)]).unwrap(),
                IntervalBox::from_bounds(&[(0.5, 1.0)]).unwrap(),
                IntervalBox::from_bounds(&[(0.25, 0.5)]).unwrap(),
            ],
        )
        .unwrap();
        fm.on_region_split(0, &gs);
        let counts = fm.pair_counts();
        assert_eq!(counts.get(&(0, 1)), Some(&1));
        assert_eq!(counts.get(&(2, 1)), Some(&1));
        assert_eq!(counts.get(&(1, 0)), None);
        assert_eq!(fm.len(), 3);
    }
}
