//! Metropolis search over programs, with full trace recording.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostFn, CostReport, CostWeights, TestCase};
use crate::isa::{Isa, Program};
use crate::proposal::{apply_move, sample_move, MoveRecord, ProposalParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub budget: usize,
    pub weights: CostWeights,
    pub beta: f64,
    pub seed: u64,
    /// Track the best *correct* program instead of the lowest total cost.
    pub require_correct_best: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            budget: 200,
            weights: CostWeights::default(),
            beta: 1.0,
            seed: 0,
            require_correct_best: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("search budget must be at least one iteration")]
    ZeroBudget,
    #[error("inverse temperature must be positive and finite, got {0}")]
    BadBeta(f64),
    #[error("start program costs zero; a relative score is undefined")]
    ZeroInitialCost,
    #[error("start program is invalid: {0}")]
    InvalidStart(#[from] crate::isa::IsaError),
}

/// One Metropolis iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub record: MoveRecord,
    /// Total cost of the proposed rewrite; the current cost for inapplicable
    /// moves.
    pub proposed_cost: f64,
    pub accepted: bool,
    /// Normalized improvement of the best-so-far cost made by this step (≤ 0).
    pub cost_node: f64,
    /// Best tracked cost after this step.
    pub running_best: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub reference: Program,
    pub initial: Program,
    /// Proposal distribution the run sampled from.
    pub params: ProposalParams,
    pub steps: Vec<Step>,
    pub best: Program,
    pub best_cost: f64,
    pub initial_cost: f64,
    pub score: f64,
}

impl Trace {
    /// Relative score the run would have had with a budget of `iterations`.
    pub fn score_at(&self, iterations: usize) -> f64 {
        let best = match iterations {
            0 => self.initial_cost,
            n => self.steps[n.min(self.steps.len()) - 1].running_best,
        };
        best / self.initial_cost
    }

    pub fn cost_node_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.cost_node).sum()
    }

    pub fn acceptance_rate(&self) -> f64 {
        let accepted = self.steps.iter().filter(|s| s.accepted).count();
        accepted as f64 / self.steps.len().max(1) as f64
    }

    /// Programs visited after each step, replayed from the recorded moves.
    /// Entry `i` is the state the move of step `i` was proposed from.
    pub fn states_before_steps(&self, isa: &Isa) -> Vec<Program> {
        let mut current = self.initial;
        let mut out = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            out.push(current);
            if step.accepted {
                current = apply_move(isa, &current, &step.record.mv).expect("recorded move replays");
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "iteration,kind,logprob,proposed_cost,accepted,cost_node,running_best"
        )?;
        for (i, s) in self.steps.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                i + 1,
                s.record.kind().name(),
                s.record.logprob,
                s.proposed_cost,
                u8::from(s.accepted),
                s.cost_node,
                s.running_best
            )?;
        }
        Ok(())
    }
}

/// Metropolis acceptance probability `min(1, exp(-beta * (new - old)))`.
pub fn acceptance(cost_new: f64, cost_old: f64, beta: f64) -> f64 {
    let delta = cost_new - cost_old;
    if delta <= 0.0 {
        1.0
    } else {
        (-beta * delta).exp()
    }
}

/// Bernoulli accept/reject. Always consumes exactly one uniform draw.
pub fn metropolis_accept<R: Rng + ?Sized>(rng: &mut R, cost_new: f64, cost_old: f64, beta: f64) -> bool {
    let u: f64 = rng.gen();
    u < acceptance(cost_new, cost_old, beta)
}

/// Outcome of a single chain step.
#[derive(Debug, Clone, Copy)]
pub struct ChainStep {
    pub record: MoveRecord,
    /// Cost of the proposal, `None` for inapplicable moves.
    pub proposed: Option<CostReport>,
    pub accepted: bool,
}

/// A Metropolis chain: the current state plus everything needed to advance
/// it. The proposal distribution stays fixed for the chain's lifetime.
pub struct Chain<'a> {
    isa: &'a Isa,
    params: &'a ProposalParams,
    cost: CostFn<'a>,
    beta: f64,
    current: Program,
    current_cost: CostReport,
}

impl<'a> Chain<'a> {
    pub fn new(isa: &'a Isa, params: &'a ProposalParams, cost: CostFn<'a>, beta: f64, start: Program) -> Self {
        let current_cost = cost.evaluate(&start);
        Chain {
            isa,
            params,
            cost,
            beta,
            current: start,
            current_cost,
        }
    }

    pub fn current(&self) -> &Program {
        &self.current
    }

    pub fn current_cost(&self) -> &CostReport {
        &self.current_cost
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> ChainStep {
        let record = sample_move(self.isa, self.params, &self.current, rng);
        if !record.mv.is_applicable() {
            return ChainStep {
                record,
                proposed: None,
                accepted: false,
            };
        }
        let candidate = apply_move(self.isa, &self.current, &record.mv).expect("sampled moves apply");
        let report = self.cost.evaluate(&candidate);
        let accepted = metropolis_accept(rng, report.total, self.current_cost.total, self.beta);
        if accepted {
            self.current = candidate;
            self.current_cost = report;
        }
        ChainStep {
            record,
            proposed: Some(report),
            accepted,
        }
    }
}

fn validate_config(config: &SearchConfig) -> Result<(), SearchError> {
    if config.budget == 0 {
        return Err(SearchError::ZeroBudget);
    }
    if !(config.beta > 0.0 && config.beta.is_finite()) {
        return Err(SearchError::BadBeta(config.beta));
    }
    Ok(())
}

/// Runs `config.budget` Metropolis iterations from `start` and records the
/// trace. `params` is used as given for the whole run.
pub fn metropolis_run<R: Rng + ?Sized>(
    isa: &Isa,
    reference: &Program,
    start: &Program,
    params: &ProposalParams,
    tests: &[TestCase],
    config: &SearchConfig,
    rng: &mut R,
) -> Result<Trace, SearchError> {
    validate_config(config)?;
    isa.validate(start)?;
    let cost = CostFn::new(isa, tests, config.weights);
    let mut chain = Chain::new(isa, params, cost, config.beta, *start);
    let initial_cost = chain.current_cost().total;
    if initial_cost <= 0.0 {
        return Err(SearchError::ZeroInitialCost);
    }

    // The start program always counts as visited, so the best cost never
    // exceeds the initial cost even when correctness is required.
    let mut best = *start;
    let mut best_cost = initial_cost;
    let mut steps = Vec::with_capacity(config.budget);
    for _ in 0..config.budget {
        let out = chain.step(rng);
        let state_cost = *chain.current_cost();
        let eligible = out.accepted && (!config.require_correct_best || state_cost.correct);
        let cost_node = if eligible {
            ((state_cost.total - best_cost) / initial_cost).min(0.0)
        } else {
            0.0
        };
        if eligible && state_cost.total < best_cost {
            best_cost = state_cost.total;
            best = *chain.current();
        }
        steps.push(Step {
            record: out.record,
            proposed_cost: out.proposed.map_or(state_cost.total, |r| r.total),
            accepted: out.accepted,
            cost_node,
            running_best: best_cost,
        });
    }
    Ok(Trace {
        reference: *reference,
        initial: *start,
        params: params.clone(),
        steps,
        best,
        best_cost,
        initial_cost,
        score: best_cost / initial_cost,
    })
}

/// [`metropolis_run`] with a fresh generator seeded from `config.seed`.
pub fn metropolis_run_seeded(
    isa: &Isa,
    reference: &Program,
    start: &Program,
    params: &ProposalParams,
    tests: &[TestCase],
    config: &SearchConfig,
) -> Result<Trace, SearchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    metropolis_run(isa, reference, start, params, tests, config, &mut rng)
}

pub fn score(trace: &Trace) -> f64 {
    trace.best_cost / trace.initial_cost
}

/// Cost nodes for a sequence of post-decision costs `costs[0..]`, where
/// `costs[0]` is the start. Shared by tests that check the telescoping sum.
pub fn cost_nodes(costs: &[f64]) -> Vec<f64> {
    let Some((&c0, rest)) = costs.split_first() else {
        return Vec::new();
    };
    let mut best = c0;
    rest.iter()
        .map(|&c| {
            let node = ((c - best) / c0).min(0.0);
            best = best.min(c);
            node
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse;
    use crate::cost::tests_from_reference;
    use crate::isa::MachineState;
    use crate::proposal::{uniform_params, MoveKind, NUM_MOVE_KINDS};

    fn hd1(isa: &Isa) -> (Program, Vec<TestCase>) {
        let reference = parse(isa, "mov r1, r0\ndec r1\nand r0, r1").unwrap();
        let inputs: Vec<_> = (0..16u32)
            .map(|i| MachineState::new([i.wrapping_mul(0x9e37_79b9) ^ 0x55, 7, 1, 2, 3, 4, 5, 6]))
            .collect();
        let tests = tests_from_reference(isa, &reference, &inputs, 1).unwrap();
        (reference, tests)
    }

    #[test]
    fn acceptance_rule() {
        assert_eq!(acceptance(5.0, 5.0, 1.0), 1.0);
        assert_eq!(acceptance(3.0, 5.0, 1.0), 1.0);
        assert!((acceptance(1.0 + std::f64::consts::LN_2, 1.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hand_telescoping() {
        let nodes = cost_nodes(&[10.0, 8.0, 9.0, 7.0]);
        let expected = [-0.2, 0.0, -0.1];
        for (a, b) in nodes.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let sum: f64 = nodes.iter().sum();
        assert!((sum - (0.7 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn inapplicable_only_run_scores_one() {
        let isa = Isa::standard();
        let (reference, tests) = hd1(&isa);
        // Delete-only proposal on an empty start: every move is inapplicable.
        let mut kinds = [0.0; NUM_MOVE_KINDS];
        kinds[MoveKind::Delete.index()] = 1.0;
        let v = isa.proposable_size();
        let params = ProposalParams::new(&isa, kinds, vec![1.0 / v as f64; v]).unwrap();
        let config = SearchConfig {
            budget: 50,
            ..Default::default()
        };
        let trace = metropolis_run_seeded(&isa, &reference, &isa.empty_program(), &params, &tests, &config).unwrap();
        assert_eq!(trace.score, 1.0);
        assert!(trace.steps.iter().all(|s| s.cost_node == 0.0 && !s.accepted));
    }

    #[test]
    fn deterministic_given_seed() {
        let isa = Isa::standard();
        let (reference, tests) = hd1(&isa);
        let start = parse(&isa, "mov r1, r0\nmov r2, r1\ndec r1\nand r0, r1\ninc r3").unwrap();
        let params = uniform_params(&isa);
        let config = SearchConfig {
            budget: 300,
            seed: 99,
            ..Default::default()
        };
        let a = metropolis_run_seeded(&isa, &reference, &start, &params, &tests, &config).unwrap();
        let b = metropolis_run_seeded(&isa, &reference, &start, &params, &tests, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps.len(), 300);
        assert!(a.best_cost <= a.initial_cost);
        assert!((a.cost_node_sum() - (a.score - 1.0)).abs() < 1e-9);
        assert_eq!(score(&a), a.score);
    }

    #[test]
    fn replay_matches_chain() {
        let isa = Isa::standard();
        let (reference, tests) = hd1(&isa);
        let start = parse(&isa, "mov r1, r0\nmov r2, r1\ndec r1\nand r0, r1\ninc r3").unwrap();
        let params = uniform_params(&isa);
        let config = SearchConfig {
            budget: 200,
            seed: 5,
            ..Default::default()
        };
        let trace = metropolis_run_seeded(&isa, &reference, &start, &params, &tests, &config).unwrap();
        let states = trace.states_before_steps(&isa);
        for (state, step) in states.iter().zip(&trace.steps) {
            let lp = crate::proposal::log_prob(&isa, &params, state, &step.record.mv).unwrap();
            assert_eq!(lp.to_bits(), step.record.logprob.to_bits());
        }
    }

    #[test]
    fn require_correct_best_tracks_only_correct_states() {
        let isa = Isa::standard();
        let (reference, tests) = hd1(&isa);
        let start = parse(&isa, "mov r1, r0\nmov r2, r1\ndec r1\nand r0, r1\ninc r3").unwrap();
        let params = uniform_params(&isa);
        for seed in 0..20 {
            let config = SearchConfig {
                budget: 200,
                seed,
                require_correct_best: true,
                ..Default::default()
            };
            let trace = metropolis_run_seeded(&isa, &reference, &start, &params, &tests, &config).unwrap();
            let report = crate::cost::total_cost(&isa, &trace.best, &tests, &config.weights);
            assert!(report.correct);
            assert_eq!(report.total, trace.best_cost);
            assert!((trace.cost_node_sum() - (trace.score - 1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn config_errors() {
        let isa = Isa::standard();
        let (reference, tests) = hd1(&isa);
        let params = uniform_params(&isa);
        let zero = SearchConfig {
            budget: 0,
            ..Default::default()
        };
        assert_eq!(
            metropolis_run_seeded(&isa, &reference, &reference, &params, &tests, &zero),
            Err(SearchError::ZeroBudget)
        );
        let eq_only = SearchConfig {
            weights: CostWeights::eq_only(),
            ..Default::default()
        };
        assert_eq!(
            metropolis_run_seeded(&isa, &reference, &reference, &params, &tests, &eq_only),
            Err(SearchError::ZeroInitialCost)
        );
        let hot = SearchConfig {
            beta: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            metropolis_run_seeded(&isa, &reference, &reference, &params, &tests, &hot),
            Err(SearchError::BadBeta(_))
        ));
    }

    #[test]
    fn csv_export() {
        let isa = Isa::standard();
        let (reference, tests) = hd1(&isa);
        let params = uniform_params(&isa);
        let config = SearchConfig {
            budget: 3,
            ..Default::default()
        };
        let trace = metropolis_run_seeded(&isa, &reference, &reference, &params, &tests, &config).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(
            lines[0],
            "iteration,kind,logprob,proposed_cost,accepted,cost_node,running_best"
        );
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("1,"));
    }
}
