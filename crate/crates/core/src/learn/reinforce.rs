//! Score-function (REINFORCE) gradient of the expected relative score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::Isa;
use crate::mcmc::Trace;
use crate::proposal::{ProposalParams, NORMALIZATION_TOL};

use super::model::{BowFeature, Logits, Model};

/// Which cost nodes are credited to the move of step `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Credit {
    /// `G_i = Σ_{t ≥ i} c_t`: a move is credited with its own cost node.
    #[default]
    TGeI,
    /// `G_i = Σ_{t > i} c_t`: strictly later cost nodes only.
    TGtI,
}

impl std::str::FromStr for Credit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "t-ge-i" => Ok(Credit::TGeI),
            "t-gt-i" => Ok(Credit::TGtI),
            other => Err(format!("unknown credit window `{other}` (expected t-ge-i or t-gt-i)")),
        }
    }
}

impl std::fmt::Display for Credit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Credit::TGeI => "t-ge-i",
            Credit::TGtI => "t-gt-i",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReinforceOptions {
    pub credit: Credit,
    /// Subtract the leave-one-out mean return of the other rollouts of the
    /// same program.
    pub baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReinforceError {
    #[error("trace {index} was sampled from a different proposal than the model produces (max diff {diff:e})")]
    ParamsMismatch { index: usize, diff: f64 },
}

/// Gradient of the expected relative score with respect to the model
/// parameters (descent direction is its negation).
#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub grad: Vec<f64>,
    /// Number of traces averaged over.
    pub samples: usize,
}

/// Per-step returns `G_i` of a trace.
pub fn returns(trace: &Trace, credit: Credit) -> Vec<f64> {
    let mut out = vec![0.0; trace.steps.len()];
    let mut acc = 0.0;
    for (i, step) in trace.steps.iter().enumerate().rev() {
        match credit {
            Credit::TGeI => {
                acc += step.cost_node;
                out[i] = acc;
            }
            Credit::TGtI => {
                out[i] = acc;
                acc += step.cost_node;
            }
        }
    }
    out
}

/// `Σ_i w_i ∇_logits ln q(move_i)` for the moves of `trace` under `params`.
///
/// Uses `∂ ln softmax(z)_k / ∂z = e_k − p`; an opcode drawn from a signature
/// class `C` contributes `e_k − p·1_C / p(C)`.
pub fn weighted_logit_grad(isa: &Isa, params: &ProposalParams, trace: &Trace, weights: &[f64]) -> Logits {
    let n_ops = params.opcode_probs().len();
    let mut kind_w = [0.0; crate::proposal::NUM_MOVE_KINDS];
    let mut op_w = vec![0.0; n_ops];
    let mut full_w = 0.0;
    let mut class_w = [0.0; 4];
    let mut total_w = 0.0;
    for (step, &w) in trace.steps.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        total_w += w;
        kind_w[step.record.kind().index()] += w;
        if let Some(choice) = step.record.opcode {
            op_w[choice.proposable as usize] += w;
            match choice.class {
                None => full_w += w,
                Some(sig) => class_w[sig.index()] += w,
            }
        }
    }
    let mut out = Logits::zeros(n_ops);
    for (k, p) in params.kind_probs().iter().enumerate() {
        out.kind[k] = kind_w[k] - p * total_w;
    }
    let probs = params.opcode_probs();
    for j in 0..n_ops {
        let sig = isa.opcode(isa.proposable_opcode(j)).signature;
        let mass = params.class_mass(sig);
        let class_term = if mass > 0.0 { class_w[sig.index()] / mass } else { 0.0 };
        out.opcode[j] = op_w[j] - probs[j] * (full_w + class_term);
    }
    out
}

/// Per-trace pieces of the estimator: `A = Σ ∇ln q_i·G_i`, `S = Σ ∇ln q_i`
/// (only with a baseline) and the total return `R = Σ c_t`.
struct TraceTerms {
    weighted: Logits,
    score: Option<Logits>,
    ret: f64,
}

fn trace_terms(isa: &Isa, params: &ProposalParams, trace: &Trace, opts: &ReinforceOptions) -> TraceTerms {
    let g = returns(trace, opts.credit);
    let weighted = weighted_logit_grad(isa, params, trace, &g);
    let score = opts
        .baseline
        .then(|| weighted_logit_grad(isa, params, trace, &vec![1.0; trace.steps.len()]));
    TraceTerms {
        weighted,
        score,
        ret: trace.cost_node_sum(),
    }
}

/// The logit-space gradient summed over one program's rollouts.
pub fn program_logit_grad(isa: &Isa, params: &ProposalParams, traces: &[Trace], opts: &ReinforceOptions) -> Logits {
    let terms: Vec<TraceTerms> = traces.iter().map(|t| trace_terms(isa, params, t, opts)).collect();
    let mut sum = Logits::zeros(params.opcode_probs().len());
    let total_ret: f64 = terms.iter().map(|t| t.ret).sum();
    let k = terms.len();
    for t in &terms {
        sum.add_scaled(&t.weighted, 1.0);
        if let (Some(score), true) = (&t.score, k > 1) {
            let b = (total_ret - t.ret) / (k - 1) as f64;
            sum.add_scaled(score, -b);
        }
    }
    sum
}

/// Averages the estimator over all traces. Each group pairs a program's
/// features with the rollouts sampled for it under `model.forward(feat)`.
pub fn reinforce_grad(
    isa: &Isa,
    model: &Model,
    groups: &[(BowFeature, &[Trace])],
    opts: &ReinforceOptions,
) -> Result<GradEstimate, ReinforceError> {
    let mut grad = vec![0.0; model.num_params()];
    let mut samples = 0;
    for (feat, traces) in groups {
        let params = model.forward(isa, feat);
        for (i, t) in traces.iter().enumerate() {
            let diff = t.params.max_abs_diff(&params);
            if diff.is_nan() || diff > NORMALIZATION_TOL {
                return Err(ReinforceError::ParamsMismatch {
                    index: samples + i,
                    diff,
                });
            }
        }
        let dlogits = program_logit_grad(isa, &params, traces, opts);
        model.backward(feat, &dlogits, &mut grad);
        samples += traces.len();
    }
    if samples > 0 {
        let inv = 1.0 / samples as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
    }
    Ok(GradEstimate { grad, samples })
}

/// Surrogate whose parameter gradient equals the estimator for fixed traces:
/// `J = (1/N) Σ_traces Σ_i ln q(move_i)·G_i`. Used to check backprop.
pub fn surrogate(isa: &Isa, model: &Model, groups: &[(BowFeature, &[Trace])], credit: Credit) -> f64 {
    let mut total = 0.0;
    let mut samples = 0;
    for (feat, traces) in groups {
        let params = model.forward(isa, feat);
        for t in traces.iter() {
            let g = returns(t, credit);
            let states = t.states_before_steps(isa);
            for ((step, state), gi) in t.steps.iter().zip(&states).zip(&g) {
                let lp = crate::proposal::log_prob(isa, &params, state, &step.record.mv).expect("recorded move");
                total += (lp - step.record.uniform_logprob) * gi;
            }
        }
        samples += traces.len();
    }
    total / samples.max(1) as f64
}
