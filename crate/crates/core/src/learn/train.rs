//! Training loop and seeded evaluation.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Entry;
use crate::isa::Isa;
use crate::mcmc::{metropolis_run, SearchConfig, SearchError, Trace};
use crate::proposal::{uniform_params, ProposalParams};
use crate::seed;

use super::adam::{adam_step, AdamState};
use super::model::{featurize, Model, ModelKind, DEFAULT_HIDDEN};
use super::reinforce::{reinforce_grad, ReinforceError, ReinforceOptions};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("entry {id}: {source}")]
    Search { id: String, source: SearchError },
    #[error(transparent)]
    Reinforce(#[from] ReinforceError),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("minibatch size and rollout count must be positive")]
    ZeroBatch,
}

/// Where a rollout's proposal distribution comes from.
#[derive(Debug, Clone, Copy)]
pub enum Proposal<'a> {
    Uniform,
    Model(&'a Model),
}

impl Proposal<'_> {
    /// Evaluated once per run, before sampling starts.
    pub fn params(&self, isa: &Isa, entry: &Entry) -> ProposalParams {
        match self {
            Proposal::Uniform => uniform_params(isa),
            Proposal::Model(m) => m.forward(isa, &featurize(isa, &entry.start)),
        }
    }
}

fn rollout(
    isa: &Isa,
    entry: &Entry,
    params: &ProposalParams,
    search: &SearchConfig,
    seed: u64,
) -> Result<Trace, LearnError> {
    let mut rng = seed::rng(seed, &[]);
    metropolis_run(isa, &entry.start, &entry.start, params, &entry.tests, search, &mut rng).map_err(|source| {
        LearnError::Search {
            id: entry.id.clone(),
            source,
        }
    })
}

/// Scores of `runs` seeded rollouts per entry at each snapshot budget:
/// `out[entry][run][snapshot]`. Every run lasts the largest snapshot (or
/// `search.budget` if larger); a snapshot's score is the score the same run
/// would have had with that budget. Seeds depend only on `(seed, entry, run)`.
pub fn evaluate(
    isa: &Isa,
    entries: &[Entry],
    proposal: Proposal<'_>,
    search: &SearchConfig,
    runs: usize,
    seed: u64,
    snapshots: &[usize],
) -> Result<Vec<Vec<Vec<f64>>>, LearnError> {
    let budget = snapshots
        .iter()
        .copied()
        .chain([search.budget])
        .max()
        .unwrap_or(search.budget);
    let config = SearchConfig { budget, ..*search };
    let jobs: Vec<(usize, usize)> = (0..entries.len())
        .flat_map(|e| (0..runs).map(move |r| (e, r)))
        .collect();
    let scores: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(e, r)| {
            let entry = &entries[e];
            let params = proposal.params(isa, entry);
            let trace = rollout(isa, entry, &params, &config, seed::derive(seed, &[e as u64, r as u64]))?;
            Ok(snapshots.iter().map(|&s| trace.score_at(s)).collect())
        })
        .collect::<Result<_, LearnError>>()?;
    let mut it = scores.into_iter();
    Ok(entries.iter().map(|_| it.by_ref().take(runs).collect()).collect())
}

/// Mean final score (budget `search.budget`) over entries and runs.
pub fn mean_score(
    isa: &Isa,
    entries: &[Entry],
    proposal: Proposal<'_>,
    search: &SearchConfig,
    runs: usize,
    seed: u64,
) -> Result<f64, LearnError> {
    if entries.is_empty() || runs == 0 {
        return Ok(f64::NAN);
    }
    let scores = evaluate(isa, entries, proposal, search, runs, seed, &[search.budget])?;
    let total: f64 = scores.iter().flatten().map(|s| s[0]).sum();
    Ok(total / (entries.len() * runs) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    pub hidden: Vec<usize>,
    /// Base learning rate; the effective rate is this over `minibatch`.
    pub lr: f64,
    pub minibatch: usize,
    /// Rollouts per program per gradient estimate.
    pub rollouts: usize,
    pub epochs: usize,
    /// Minibatches per epoch; `None` means one pass over the training set.
    pub steps_per_epoch: Option<usize>,
    pub search: SearchConfig,
    pub reinforce: ReinforceOptions,
    pub seed: u64,
    /// Seeded rollouts per entry when recording learning curves.
    pub eval_runs: usize,
}

impl TrainConfig {
    pub fn new(model_kind: ModelKind, lr: f64) -> Self {
        TrainConfig {
            model_kind,
            hidden: DEFAULT_HIDDEN.to_vec(),
            lr,
            minibatch: 32,
            rollouts: 100,
            epochs: 10,
            steps_per_epoch: None,
            search: SearchConfig::default(),
            reinforce: ReinforceOptions::default(),
            seed: 0,
            eval_runs: 5,
        }
    }
}

/// Default base learning rates by model and corpus.
pub fn default_lr(kind: ModelKind, synthetic: bool) -> f64 {
    match (kind, synthetic) {
        (ModelKind::Bias, false) => 1.0,
        (ModelKind::Bias, true) => 10.0,
        (ModelKind::Mlp, false) => 0.01,
        (ModelKind::Mlp, true) => 0.1,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub adam: AdamState,
    /// Epochs completed so far.
    pub epoch: usize,
}

impl TrainState {
    pub fn init(isa: &Isa, config: &TrainConfig) -> Self {
        let mut rng = seed::rng(config.seed, &[0xA11C]);
        let model = Model::init(isa, config.model_kind, &config.hidden, &mut rng);
        let adam = AdamState::new(model.num_params(), config.lr, config.minibatch);
        TrainState { model, adam, epoch: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_mean: f64,
    pub test_mean: f64,
}

pub fn write_curves<W: Write>(points: &[CurvePoint], mut w: W) -> io::Result<()> {
    writeln!(w, "epoch,train_mean_score,test_mean_score")?;
    for p in points {
        writeln!(w, "{},{},{}", p.epoch, p.train_mean, p.test_mean)?;
    }
    Ok(())
}

const TRAIN_STREAM: u64 = 1;
const CURVE_TRAIN_STREAM: u64 = 2;
const CURVE_TEST_STREAM: u64 = 3;
const SHUFFLE_STREAM: u64 = 4;

fn curve_point(
    isa: &Isa,
    model: &Model,
    train: &[Entry],
    test: &[Entry],
    config: &TrainConfig,
    epoch: usize,
) -> Result<CurvePoint, LearnError> {
    let proposal = Proposal::Model(model);
    let run = |entries, stream| {
        mean_score(
            isa,
            entries,
            proposal,
            &config.search,
            config.eval_runs,
            seed::derive(config.seed, &[stream]),
        )
    };
    Ok(CurvePoint {
        epoch,
        train_mean: run(train, CURVE_TRAIN_STREAM)?,
        test_mean: run(test, CURVE_TEST_STREAM)?,
    })
}

/// One minibatch gradient estimate and Adam update.
fn train_step(
    isa: &Isa,
    state: &mut TrainState,
    batch: &[&Entry],
    config: &TrainConfig,
    step_seed: u64,
) -> Result<(), LearnError> {
    let mut grad = vec![0.0; state.model.num_params()];
    for (b, entry) in batch.iter().enumerate() {
        let feat = featurize(isa, &entry.start);
        let params = state.model.forward(isa, &feat);
        let traces: Vec<Trace> = (0..config.rollouts)
            .into_par_iter()
            .map(|r| {
                rollout(
                    isa,
                    entry,
                    &params,
                    &config.search,
                    seed::derive(step_seed, &[b as u64, r as u64]),
                )
            })
            .collect::<Result<_, _>>()?;
        let g = reinforce_grad(isa, &state.model, &[(feat, traces.as_slice())], &config.reinforce)?;
        grad.iter_mut().zip(&g.grad).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    adam_step(state.model.params_mut(), &grad, &mut state.adam);
    Ok(())
}

/// Runs epochs `state.epoch + 1 ..= config.epochs`. Returns the learning
/// curve, starting with the evaluation of the incoming state. `on_epoch` is
/// called after every curve point.
pub fn train(
    isa: &Isa,
    train_set: &[Entry],
    test_set: &[Entry],
    state: &mut TrainState,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&CurvePoint, &TrainState),
) -> Result<Vec<CurvePoint>, LearnError> {
    if train_set.is_empty() {
        return Err(LearnError::EmptyTrainSet);
    }
    if config.minibatch == 0 || config.rollouts == 0 {
        return Err(LearnError::ZeroBatch);
    }
    let n = train_set.len();
    let batch_size = config.minibatch.min(n);
    let steps = config.steps_per_epoch.unwrap_or(n.div_ceil(batch_size));
    let mut curve = vec![curve_point(
        isa,
        &state.model,
        train_set,
        test_set,
        config,
        state.epoch,
    )?];
    on_epoch(&curve[0], state);
    while state.epoch < config.epochs {
        let epoch = state.epoch + 1;
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(
            order.as_mut_slice(),
            &mut seed::rng(config.seed, &[SHUFFLE_STREAM, epoch as u64]),
        );
        for step in 0..steps {
            let batch: Vec<&Entry> = (0..batch_size)
                .map(|b| &train_set[order[(step * batch_size + b) % n]])
                .collect();
            let step_seed = seed::derive(config.seed, &[TRAIN_STREAM, epoch as u64, step as u64]);
            train_step(isa, state, &batch, config, step_seed)?;
        }
        state.epoch = epoch;
        let point = curve_point(isa, &state.model, train_set, test_set, config, epoch)?;
        on_epoch(&point, state);
        curve.push(point);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{hd_tasks, synth_generate};

    fn small_config(kind: ModelKind, lr: f64) -> TrainConfig {
        TrainConfig {
            hidden: vec![8, 8],
            minibatch: 4,
            rollouts: 3,
            epochs: 2,
            steps_per_epoch: Some(2),
            search: SearchConfig {
                budget: 30,
                ..SearchConfig::default()
            },
            eval_runs: 1,
            ..TrainConfig::new(kind, lr)
        }
    }

    #[test]
    fn zero_rate_leaves_model_unchanged() {
        let isa = Isa::standard();
        let ds = synth_generate(&isa, 8, 4, 50, 1).unwrap();
        for kind in [ModelKind::Bias, ModelKind::Mlp] {
            let config = small_config(kind, 0.0);
            let mut state = TrainState::init(&isa, &config);
            let initial = state.model.clone();
            let curve = train(&isa, &ds.train, &ds.test, &mut state, &config, |_, _| {}).unwrap();
            assert_eq!(state.model, initial);
            assert_eq!(curve.len(), 3);
            assert!(curve
                .windows(2)
                .all(|w| w[0].train_mean == w[1].train_mean && w[0].test_mean == w[1].test_mean));
        }
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let isa = Isa::standard();
        let ds = synth_generate(&isa, 8, 4, 50, 2).unwrap();
        let config = small_config(ModelKind::Bias, 1.0);
        let mut a = TrainState::init(&isa, &config);
        let curve_a = train(&isa, &ds.train, &ds.test, &mut a, &config, |_, _| {}).unwrap();
        assert_ne!(a.model, TrainState::init(&isa, &config).model);

        let mut b = TrainState::init(&isa, &config);
        let first = TrainConfig {
            epochs: 1,
            ..config.clone()
        };
        train(&isa, &ds.train, &ds.test, &mut b, &first, |_, _| {}).unwrap();
        let curve_b = train(&isa, &ds.train, &ds.test, &mut b, &config, |_, _| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(curve_a[1..], curve_b[..]);
    }

    #[test]
    fn evaluation_snapshots_are_monotone() {
        let isa = Isa::standard();
        let tasks = hd_tasks(&isa);
        let entries: Vec<Entry> = tasks[..3]
            .iter()
            .map(|t| Entry {
                id: format!("t{}", t.id),
                task: Some(t.id),
                start: t.reference,
                tests: t.tests(0),
            })
            .collect();
        let scores = evaluate(
            &isa,
            &entries,
            Proposal::Uniform,
            &SearchConfig::default(),
            2,
            5,
            &[10, 100, 200],
        )
        .unwrap();
        assert_eq!(scores.len(), 3);
        for runs in &scores {
            assert_eq!(runs.len(), 2);
            for s in runs {
                assert!(s.windows(2).all(|w| w[1] <= w[0]));
                assert!(s.iter().all(|&x| x > 0.0 && x <= 1.0));
            }
        }
        let model = Model::zeros(&isa, ModelKind::Bias, &[]);
        let again = evaluate(
            &isa,
            &entries,
            Proposal::Model(&model),
            &SearchConfig::default(),
            2,
            5,
            &[10, 100, 200],
        )
        .unwrap();
        assert_eq!(again, scores);
    }
}
