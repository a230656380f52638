//! Hierarchical move proposal.
//!
//! A move is sampled in stages: first its kind from a learnable categorical,
//! then kind-specific choices. Positions and operand values are always
//! uniform; opcodes come from a second learnable categorical, renormalized
//! to the signature-compatible subset for opcode-replacement moves. The
//! probability of a move is the product of the probabilities of every stage.

use std::cell::Cell;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{Instruction, Isa, Program, Signature, MAX_SLOTS};

pub const NUM_MOVE_KINDS: usize = 9;

/// Tolerance on the normalization of probability vectors.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MoveKind {
    /// Replace the opcode of a live instruction by one with the same signature.
    OpcodeSameSignature,
    /// Resample one operand of a live instruction.
    Operand,
    /// Overwrite any slot with a freshly sampled instruction.
    FullInstruction,
    /// Exchange two arbitrary slots.
    SwapAny,
    /// Exchange two adjacent slots.
    SwapLocal,
    /// Cyclically shift a range of slots by one.
    Rotate,
    /// Turn a live slot into `unused`.
    Delete,
    /// Fill an `unused` slot with a freshly sampled instruction.
    Insert,
    /// Exchange the two register operands of an instruction.
    OperandSwap,
}

impl MoveKind {
    pub const ALL: [MoveKind; NUM_MOVE_KINDS] = [
        MoveKind::OpcodeSameSignature,
        MoveKind::Operand,
        MoveKind::FullInstruction,
        MoveKind::SwapAny,
        MoveKind::SwapLocal,
        MoveKind::Rotate,
        MoveKind::Delete,
        MoveKind::Insert,
        MoveKind::OperandSwap,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::OpcodeSameSignature => "opcode",
            MoveKind::Operand => "operand",
            MoveKind::FullInstruction => "instruction",
            MoveKind::SwapAny => "swap",
            MoveKind::SwapLocal => "swap_local",
            MoveKind::Rotate => "rotate",
            MoveKind::Delete => "delete",
            MoveKind::Insert => "insert",
            MoveKind::OperandSwap => "operand_swap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Move {
    Opcode {
        slot: u8,
        opcode: u8,
    },
    Operand {
        slot: u8,
        operand: u8,
        value: u32,
    },
    Instruction {
        slot: u8,
        insn: Instruction,
    },
    SwapAny {
        a: u8,
        b: u8,
    },
    /// Swaps `slot` and `slot + 1`.
    SwapLocal {
        slot: u8,
    },
    /// `from < to` rotates the range right by one, `from > to` rotates
    /// `to..=from` left by one.
    Rotate {
        from: u8,
        to: u8,
    },
    Delete {
        slot: u8,
    },
    Insert {
        slot: u8,
        insn: Instruction,
    },
    OperandSwap {
        slot: u8,
    },
    /// The sampled kind had nothing to act on in the current program.
    Inapplicable(MoveKind),
}

impl Move {
    pub fn kind(&self) -> MoveKind {
        match self {
            Move::Opcode { .. } => MoveKind::OpcodeSameSignature,
            Move::Operand { .. } => MoveKind::Operand,
            Move::Instruction { .. } => MoveKind::FullInstruction,
            Move::SwapAny { .. } => MoveKind::SwapAny,
            Move::SwapLocal { .. } => MoveKind::SwapLocal,
            Move::Rotate { .. } => MoveKind::Rotate,
            Move::Delete { .. } => MoveKind::Delete,
            Move::Insert { .. } => MoveKind::Insert,
            Move::OperandSwap { .. } => MoveKind::OperandSwap,
            Move::Inapplicable(kind) => *kind,
        }
    }

    pub fn is_applicable(&self) -> bool {
        !matches!(self, Move::Inapplicable(_))
    }
}

/// The opcode draw inside a move, as needed for the gradient of its
/// log-probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpcodeChoice {
    /// Index into the proposable vocabulary.
    pub proposable: u16,
    /// Signature class the draw was renormalized over, or `None` for a draw
    /// from the full proposable vocabulary.
    pub class: Option<Signature>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveRecord {
    pub mv: Move,
    /// `ln q(move | program)` of the whole hierarchical sample.
    pub logprob: f64,
    pub opcode: Option<OpcodeChoice>,
    /// Part of `logprob` contributed by the parameter-free uniform stages.
    pub uniform_logprob: f64,
}

impl MoveRecord {
    pub fn kind(&self) -> MoveKind {
        self.mv.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProposalError {
    #[error("expected {expected} opcode probabilities, got {found}")]
    Length { expected: usize, found: usize },
    #[error("{0} probabilities must be finite and non-negative")]
    BadEntry(&'static str),
    #[error("{what} probabilities sum to {sum}, not 1")]
    NotNormalized { what: &'static str, sum: f64 },
    #[error("move {mv:?} is not valid for this program: {reason}")]
    InvalidMove { mv: Move, reason: &'static str },
    #[error("cannot apply an inapplicable {0:?} move")]
    Inapplicable(MoveKind),
}

thread_local! {
    static CONSTRUCTIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`ProposalParams`] built on the calling thread so far.
pub fn params_constructed_on_thread() -> u64 {
    CONSTRUCTIONS.with(Cell::get)
}

#[derive(Debug, Clone, PartialEq)]
struct SignatureClass {
    members: Vec<u16>,
    /// Unnormalized cumulative mass over `members`.
    cdf: Vec<f64>,
    total: f64,
}

/// The learnable part of the proposal: one categorical over move kinds and
/// one over the proposable opcodes, with sampling tables precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalParams {
    kind_probs: [f64; NUM_MOVE_KINDS],
    opcode_probs: Vec<f64>,
    kind_cdf: [f64; NUM_MOVE_KINDS],
    opcode_cdf: Vec<f64>,
    classes: Vec<SignatureClass>,
}

fn check_vector(what: &'static str, probs: &[f64]) -> Result<(), ProposalError> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(ProposalError::BadEntry(what));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(ProposalError::NotNormalized { what, sum });
    }
    Ok(())
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}

/// Index of the interval of `cdf` containing `u`, skipping zero-mass entries.
fn pick(cdf: &[f64], u: f64) -> usize {
    let i = cdf.partition_point(|&c| c <= u);
    if i < cdf.len() {
        return i;
    }
    // Rounding left `u` past the final cumulative value: take the last entry
    // that carries mass.
    let last = *cdf.last().expect("non-empty distribution");
    cdf.iter().position(|&c| c == last).unwrap_or(cdf.len() - 1)
}

impl ProposalParams {
    /// Validates and indexes a pair of distributions. Zero entries are
    /// allowed (they are never sampled), which restricted analysis chains use.
    pub fn new(isa: &Isa, kind_probs: [f64; NUM_MOVE_KINDS], opcode_probs: Vec<f64>) -> Result<Self, ProposalError> {
        if opcode_probs.len() != isa.proposable_size() {
            return Err(ProposalError::Length {
                expected: isa.proposable_size(),
                found: opcode_probs.len(),
            });
        }
        check_vector("move-kind", &kind_probs)?;
        check_vector("opcode", &opcode_probs)?;

        let mut kind_cdf = [0.0; NUM_MOVE_KINDS];
        kind_cdf.copy_from_slice(&cumulative(&kind_probs));
        let opcode_cdf = cumulative(&opcode_probs);

        let classes = Signature::ALL
            .iter()
            .map(|&sig| {
                let members: Vec<u16> = (0..isa.proposable_size())
                    .filter(|&k| isa.opcode(isa.proposable_opcode(k)).signature == sig)
                    .map(|k| k as u16)
                    .collect();
                let mass: Vec<f64> = members.iter().map(|&k| opcode_probs[k as usize]).collect();
                let cdf = cumulative(&mass);
                let total = cdf.last().copied().unwrap_or(0.0);
                SignatureClass { members, cdf, total }
            })
            .collect();

        CONSTRUCTIONS.with(|c| c.set(c.get() + 1));
        Ok(ProposalParams {
            kind_probs,
            opcode_probs,
            kind_cdf,
            opcode_cdf,
            classes,
        })
    }

    pub fn kind_probs(&self) -> &[f64; NUM_MOVE_KINDS] {
        &self.kind_probs
    }

    pub fn opcode_probs(&self) -> &[f64] {
        &self.opcode_probs
    }

    /// Probability mass of the proposable opcodes sharing `sig`.
    pub fn class_mass(&self, sig: Signature) -> f64 {
        self.classes[sig.index()].total
    }

    pub fn class_members(&self, sig: Signature) -> &[u16] {
        &self.classes[sig.index()].members
    }

    /// Largest absolute difference between the probability vectors.
    pub fn max_abs_diff(&self, other: &ProposalParams) -> f64 {
        let kinds = self.kind_probs.iter().zip(&other.kind_probs);
        let ops = self.opcode_probs.iter().zip(&other.opcode_probs);
        if self.opcode_probs.len() != other.opcode_probs.len() {
            return f64::INFINITY;
        }
        kinds.chain(ops).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// The parameter-free baseline: every elementary distribution uniform.
pub fn uniform_params(isa: &Isa) -> ProposalParams {
    let v = isa.proposable_size();
    ProposalParams::new(
        isa,
        [1.0 / NUM_MOVE_KINDS as f64; NUM_MOVE_KINDS],
        vec![1.0 / v as f64; v],
    )
    .expect("uniform distribution is valid")
}

struct SlotSet {
    slots: [u8; MAX_SLOTS],
    len: usize,
}

impl SlotSet {
    fn collect(p: &Program, pred: impl Fn(&Instruction) -> bool) -> Self {
        let mut set = SlotSet {
            slots: [0; MAX_SLOTS],
            len: 0,
        };
        for (i, insn) in p.slots().iter().enumerate() {
            if pred(insn) {
                set.slots[set.len] = i as u8;
                set.len += 1;
            }
        }
        set
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> u8 {
        self.slots[rng.gen_range(0..self.len)]
    }
}

fn is_live(insn: &Instruction) -> bool {
    !insn.is_unused()
}

fn has_two_registers(isa: &Isa, insn: &Instruction) -> bool {
    isa.opcode(insn.opcode).signature == Signature::DstSrc
}

/// Whether a move of `kind` has anything to act on in `p`.
pub fn is_applicable(isa: &Isa, kind: MoveKind, p: &Program) -> bool {
    let live = p.live_len();
    match kind {
        MoveKind::OpcodeSameSignature | MoveKind::Operand | MoveKind::Delete => live > 0,
        MoveKind::Insert => live < p.capacity(),
        MoveKind::SwapLocal => p.capacity() >= 2,
        MoveKind::OperandSwap => p.slots().iter().any(|i| has_two_registers(isa, i)),
        MoveKind::FullInstruction | MoveKind::SwapAny | MoveKind::Rotate => true,
    }
}

fn sample_operands<R: Rng + ?Sized>(isa: &Isa, opcode: u8, rng: &mut R) -> [u32; 2] {
    let mut ops = [0u32; 2];
    for (i, &kind) in isa.opcode(opcode).signature.kinds().iter().enumerate() {
        ops[i] = isa.domain_value(kind, rng.gen_range(0..isa.domain_size(kind)));
    }
    ops
}

fn sample_full_opcode<R: Rng + ?Sized>(isa: &Isa, params: &ProposalParams, rng: &mut R) -> u8 {
    isa.proposable_opcode(pick(&params.opcode_cdf, rng.gen::<f64>()))
}

/// Draws one move for `current`.
pub fn sample_move<R: Rng + ?Sized>(isa: &Isa, params: &ProposalParams, current: &Program, rng: &mut R) -> MoveRecord {
    let kind = MoveKind::ALL[pick(&params.kind_cdf, rng.gen::<f64>())];
    let len = current.capacity();
    let mv = match kind {
        MoveKind::OpcodeSameSignature => {
            let live = SlotSet::collect(current, is_live);
            if live.len == 0 {
                Move::Inapplicable(kind)
            } else {
                let slot = live.pick(rng);
                let sig = isa.opcode(current.get(slot as usize).opcode).signature;
                let class = &params.classes[sig.index()];
                let k = class.members[pick(&class.cdf, rng.gen::<f64>() * class.total)];
                Move::Opcode {
                    slot,
                    opcode: isa.proposable_opcode(k as usize),
                }
            }
        }
        MoveKind::Operand => {
            let live = SlotSet::collect(current, is_live);
            if live.len == 0 {
                Move::Inapplicable(kind)
            } else {
                let slot = live.pick(rng);
                let kinds = isa.opcode(current.get(slot as usize).opcode).signature.kinds();
                let operand = rng.gen_range(0..kinds.len());
                let okind = kinds[operand];
                let value = isa.domain_value(okind, rng.gen_range(0..isa.domain_size(okind)));
                Move::Operand {
                    slot,
                    operand: operand as u8,
                    value,
                }
            }
        }
        MoveKind::FullInstruction => {
            let slot = rng.gen_range(0..len) as u8;
            let opcode = sample_full_opcode(isa, params, rng);
            let operands = sample_operands(isa, opcode, rng);
            Move::Instruction {
                slot,
                insn: Instruction::new(opcode, operands),
            }
        }
        MoveKind::SwapAny => Move::SwapAny {
            a: rng.gen_range(0..len) as u8,
            b: rng.gen_range(0..len) as u8,
        },
        MoveKind::SwapLocal => {
            if len < 2 {
                Move::Inapplicable(kind)
            } else {
                Move::SwapLocal {
                    slot: rng.gen_range(0..len - 1) as u8,
                }
            }
        }
        MoveKind::Rotate => Move::Rotate {
            from: rng.gen_range(0..len) as u8,
            to: rng.gen_range(0..len) as u8,
        },
        MoveKind::Delete => {
            let live = SlotSet::collect(current, is_live);
            if live.len == 0 {
                Move::Inapplicable(kind)
            } else {
                Move::Delete { slot: live.pick(rng) }
            }
        }
        MoveKind::Insert => {
            let free = SlotSet::collect(current, Instruction::is_unused);
            if free.len == 0 {
                Move::Inapplicable(kind)
            } else {
                let slot = free.pick(rng);
                let opcode = sample_full_opcode(isa, params, rng);
                let operands = sample_operands(isa, opcode, rng);
                Move::Insert {
                    slot,
                    insn: Instruction::new(opcode, operands),
                }
            }
        }
        MoveKind::OperandSwap => {
            let regs = SlotSet::collect(current, |i| has_two_registers(isa, i));
            if regs.len == 0 {
                Move::Inapplicable(kind)
            } else {
                Move::OperandSwap { slot: regs.pick(rng) }
            }
        }
    };
    record(isa, params, current, mv).expect("sampled move is valid for its program")
}

/// Log-probability of `mv` being proposed from `current`.
pub fn log_prob(isa: &Isa, params: &ProposalParams, current: &Program, mv: &Move) -> Result<f64, ProposalError> {
    record(isa, params, current, *mv).map(|r| r.logprob)
}

fn invalid(mv: Move, reason: &'static str) -> ProposalError {
    ProposalError::InvalidMove { mv, reason }
}

fn operand_domain_logprob(isa: &Isa, mv: Move, insn: &Instruction) -> Result<f64, ProposalError> {
    if insn.is_unused() {
        return Err(invalid(mv, "instruction must not be unused"));
    }
    isa.validate_instruction(0, insn)
        .map_err(|_| invalid(mv, "instruction operands invalid"))?;
    let mut lp = 0.0;
    for (i, &kind) in isa.opcode(insn.opcode).signature.kinds().iter().enumerate() {
        if !isa.in_domain(kind, insn.operands[i]) {
            return Err(invalid(mv, "operand outside the proposal domain"));
        }
        lp -= (isa.domain_size(kind) as f64).ln();
    }
    Ok(lp)
}

/// Builds the full record (log-probability and gradient slots) of `mv`.
pub fn record(isa: &Isa, params: &ProposalParams, current: &Program, mv: Move) -> Result<MoveRecord, ProposalError> {
    let len = current.capacity();
    let kind = mv.kind();
    let kind_lp = params.kind_probs[kind.index()].ln();
    let n_live = current.live_len();
    let live_slot = |slot: u8| -> Result<Instruction, ProposalError> {
        let insn = current
            .slots()
            .get(slot as usize)
            .ok_or_else(|| invalid(mv, "slot out of range"))?;
        if insn.is_unused() {
            return Err(invalid(mv, "slot is unused"));
        }
        Ok(*insn)
    };
    let in_range = |slot: u8, bound: usize| -> Result<(), ProposalError> {
        if (slot as usize) < bound {
            Ok(())
        } else {
            Err(invalid(mv, "slot out of range"))
        }
    };
    let full_opcode = |opcode: u8| -> (f64, Option<OpcodeChoice>) {
        let k = opcode as usize - 1;
        (
            params.opcode_probs[k].ln(),
            Some(OpcodeChoice {
                proposable: k as u16,
                class: None,
            }),
        )
    };

    let (opcode_lp, opcode, uniform_lp) = match mv {
        Move::Inapplicable(k) => {
            if is_applicable(isa, k, current) {
                return Err(invalid(mv, "move kind is applicable"));
            }
            (0.0, None, 0.0)
        }
        Move::Opcode { slot, opcode } => {
            let insn = live_slot(slot)?;
            if opcode == crate::isa::UNUSED || opcode as usize >= isa.vocab_size() {
                return Err(invalid(mv, "opcode not proposable"));
            }
            let sig = isa.opcode(insn.opcode).signature;
            if isa.opcode(opcode).signature != sig {
                return Err(invalid(mv, "signature differs"));
            }
            let k = opcode as usize - 1;
            let lp = params.opcode_probs[k].ln() - params.classes[sig.index()].total.ln();
            let choice = OpcodeChoice {
                proposable: k as u16,
                class: Some(sig),
            };
            (lp, Some(choice), -(n_live as f64).ln())
        }
        Move::Operand { slot, operand, value } => {
            let insn = live_slot(slot)?;
            let kinds = isa.opcode(insn.opcode).signature.kinds();
            let okind = *kinds
                .get(operand as usize)
                .ok_or_else(|| invalid(mv, "operand index beyond arity"))?;
            if !isa.in_domain(okind, value) {
                return Err(invalid(mv, "operand outside the proposal domain"));
            }
            let lp = -(n_live as f64).ln() - (kinds.len() as f64).ln() - (isa.domain_size(okind) as f64).ln();
            (0.0, None, lp)
        }
        Move::Instruction { slot, insn } => {
            in_range(slot, len)?;
            let operands_lp = operand_domain_logprob(isa, mv, &insn)?;
            let (lp, choice) = full_opcode(insn.opcode);
            (lp, choice, -(len as f64).ln() + operands_lp)
        }
        Move::SwapAny { a, b } => {
            in_range(a, len)?;
            in_range(b, len)?;
            (0.0, None, -2.0 * (len as f64).ln())
        }
        Move::SwapLocal { slot } => {
            if len < 2 {
                return Err(invalid(mv, "program too short"));
            }
            in_range(slot, len - 1)?;
            (0.0, None, -((len - 1) as f64).ln())
        }
        Move::Rotate { from, to } => {
            in_range(from, len)?;
            in_range(to, len)?;
            (0.0, None, -2.0 * (len as f64).ln())
        }
        Move::Delete { slot } => {
            live_slot(slot)?;
            (0.0, None, -(n_live as f64).ln())
        }
        Move::Insert { slot, insn } => {
            in_range(slot, len)?;
            if !current.get(slot as usize).is_unused() {
                return Err(invalid(mv, "insert target is live"));
            }
            let operands_lp = operand_domain_logprob(isa, mv, &insn)?;
            let (lp, choice) = full_opcode(insn.opcode);
            let n_free = (len - n_live) as f64;
            (lp, choice, -n_free.ln() + operands_lp)
        }
        Move::OperandSwap { slot } => {
            let insn = live_slot(slot)?;
            if !has_two_registers(isa, &insn) {
                return Err(invalid(mv, "instruction lacks two register operands"));
            }
            let n = current.slots().iter().filter(|i| has_two_registers(isa, i)).count();
            (0.0, None, -(n as f64).ln())
        }
    };
    Ok(MoveRecord {
        mv,
        logprob: kind_lp + opcode_lp + uniform_lp,
        opcode,
        uniform_logprob: uniform_lp,
    })
}

/// Applies `mv` to a copy of `current`.
pub fn apply_move(isa: &Isa, current: &Program, mv: &Move) -> Result<Program, ProposalError> {
    let mut p = *current;
    let len = p.capacity();
    let bad = |reason| invalid(*mv, reason);
    let check = |slot: u8, bound: usize| {
        if (slot as usize) < bound {
            Ok(slot as usize)
        } else {
            Err(bad("slot out of range"))
        }
    };
    match *mv {
        Move::Inapplicable(kind) => return Err(ProposalError::Inapplicable(kind)),
        Move::Opcode { slot, opcode } => {
            let s = check(slot, len)?;
            let insn = p.get(s);
            if insn.is_unused() || isa.opcode(opcode).signature != isa.opcode(insn.opcode).signature {
                return Err(bad("opcode move must keep the signature of a live slot"));
            }
            p.set(s, Instruction::new(opcode, insn.operands));
        }
        Move::Operand { slot, operand, value } => {
            let s = check(slot, len)?;
            let mut insn = p.get(s);
            if operand as usize >= isa.opcode(insn.opcode).signature.arity() {
                return Err(bad("operand index beyond arity"));
            }
            insn.operands[operand as usize] = value;
            p.set(s, insn);
        }
        Move::Instruction { slot, insn } => {
            let s = check(slot, len)?;
            p.set(s, insn);
        }
        Move::SwapAny { a, b } => {
            let (a, b) = (check(a, len)?, check(b, len)?);
            p.slots_mut().swap(a, b);
        }
        Move::SwapLocal { slot } => {
            let s = check(slot, len.saturating_sub(1))?;
            p.slots_mut().swap(s, s + 1);
        }
        Move::Rotate { from, to } => {
            let (from, to) = (check(from, len)?, check(to, len)?);
            if from < to {
                p.slots_mut()[from..=to].rotate_right(1);
            } else if to < from {
                p.slots_mut()[to..=from].rotate_left(1);
            }
        }
        Move::Delete { slot } => {
            let s = check(slot, len)?;
            if p.get(s).is_unused() {
                return Err(bad("nothing to delete"));
            }
            p.set(s, Instruction::UNUSED);
        }
        Move::Insert { slot, insn } => {
            let s = check(slot, len)?;
            if !p.get(s).is_unused() {
                return Err(bad("insert target is live"));
            }
            p.set(s, insn);
        }
        Move::OperandSwap { slot } => {
            let s = check(slot, len)?;
            let mut insn = p.get(s);
            if !has_two_registers(isa, &insn) {
                return Err(bad("instruction lacks two register operands"));
            }
            insn.operands.swap(0, 1);
            p.set(s, insn);
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn forced_kind(isa: &Isa, kind: MoveKind) -> ProposalParams {
        let mut kinds = [0.0; NUM_MOVE_KINDS];
        kinds[kind.index()] = 1.0;
        let v = isa.proposable_size();
        ProposalParams::new(isa, kinds, vec![1.0 / v as f64; v]).unwrap()
    }

    #[test]
    fn uniform_baseline() {
        let isa = Isa::standard();
        let a = uniform_params(&isa);
        assert!(a.kind_probs().iter().all(|&p| p == 1.0 / 9.0));
        let sum: f64 = a.opcode_probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert_eq!(a.opcode_probs().len(), isa.vocab_size() - 1);
        assert_eq!(a, uniform_params(&isa));
    }

    #[test]
    fn rejects_bad_vectors() {
        let isa = Isa::mini();
        let k = [1.0 / 9.0; 9];
        assert!(matches!(
            ProposalParams::new(&isa, k, vec![0.5, 0.5]),
            Err(ProposalError::Length { .. })
        ));
        assert!(matches!(
            ProposalParams::new(&isa, k, vec![0.5, 0.5, 0.5]),
            Err(ProposalError::NotNormalized { .. })
        ));
        assert!(matches!(
            ProposalParams::new(&isa, k, vec![1.5, -0.5, 0.0]),
            Err(ProposalError::BadEntry(_))
        ));
    }

    #[test]
    fn swap_any_logprob_is_product_of_uniforms() {
        let isa = Isa::standard();
        let p = parse(&isa, "inc r0").unwrap();
        let params = uniform_params(&isa);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut found = false;
        for _ in 0..200 {
            let rec = sample_move(&isa, &params, &p, &mut rng);
            if rec.kind() == MoveKind::SwapAny {
                let expected = (1.0f64 / 9.0).ln() + 2.0 * (1.0f64 / 12.0).ln();
                assert!((rec.logprob - expected).abs() < 1e-12);
                found = true;
            }
        }
        assert!(found);
    }

    #[test]
    fn delete_on_empty_program_is_inapplicable() {
        let isa = Isa::standard();
        let params = forced_kind(&isa, MoveKind::Delete);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rec = sample_move(&isa, &params, &isa.empty_program(), &mut rng);
        assert_eq!(rec.mv, Move::Inapplicable(MoveKind::Delete));
        assert_eq!(rec.logprob, 0.0);
        assert!(apply_move(&isa, &isa.empty_program(), &rec.mv).is_err());
    }

    #[test]
    fn opcode_move_renormalizes_over_signature() {
        let isa = Isa::standard();
        let p = parse(&isa, "and r0, r1").unwrap();
        let v = isa.proposable_size();
        let raw: Vec<f64> = (1..=v).map(|i| i as f64).collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let params = ProposalParams::new(&isa, [1.0 / 9.0; 9], probs.clone()).unwrap();
        let xor = isa.lookup("xor").unwrap();
        let subset: Vec<usize> = (0..v)
            .filter(|&k| isa.opcode(isa.proposable_opcode(k)).signature == Signature::DstSrc)
            .collect();
        let subset_mass: f64 = subset.iter().map(|&k| probs[k]).sum();
        let mv = Move::Opcode { slot: 0, opcode: xor };
        let rec = record(&isa, &params, &p, mv).unwrap();
        let expected_opcode_lp = (probs[xor as usize - 1] / subset_mass).ln();
        assert!((rec.logprob - rec.uniform_logprob - (1.0f64 / 9.0).ln() - expected_opcode_lp).abs() < 1e-12);
        assert_eq!(rec.uniform_logprob, 0.0); // one live slot
        assert_eq!(
            rec.opcode,
            Some(OpcodeChoice {
                proposable: xor as u16 - 1,
                class: Some(Signature::DstSrc)
            })
        );
        assert!(record(
            &isa,
            &params,
            &p,
            Move::Opcode {
                slot: 0,
                opcode: isa.lookup("not").unwrap()
            }
        )
        .is_err());
    }

    #[test]
    fn full_instruction_logprob() {
        let isa = Isa::standard();
        let p = parse(&isa, "inc r0").unwrap();
        let params = uniform_params(&isa);
        let insn = Instruction::new(isa.lookup("addi").unwrap(), [3, 7]);
        let lp = log_prob(&isa, &params, &p, &Move::Instruction { slot: 5, insn }).unwrap();
        let expected = (1.0f64 / 9.0).ln()
            + (1.0f64 / 12.0).ln()
            + (1.0 / isa.proposable_size() as f64).ln()
            + (1.0f64 / 8.0).ln()
            + (1.0 / isa.imm_pool().len() as f64).ln();
        assert!((lp - expected).abs() < 1e-12);
    }

    #[test]
    fn move_algebra() {
        let isa = Isa::standard();
        let p = parse(&isa, "inc r0\nnot r1\nneg r2\ndec r3").unwrap();
        assert_eq!(apply_move(&isa, &p, &Move::SwapAny { a: 2, b: 2 }).unwrap(), p);

        let deleted = apply_move(&isa, &p, &Move::Delete { slot: 1 }).unwrap();
        assert!(deleted.get(1).is_unused());
        let back = apply_move(
            &isa,
            &deleted,
            &Move::Insert {
                slot: 1,
                insn: p.get(1),
            },
        )
        .unwrap();
        assert_eq!(back, p);

        let rotated = apply_move(&isa, &p, &Move::Rotate { from: 0, to: 2 }).unwrap();
        assert_eq!(&rotated.slots()[..4], &[p.get(2), p.get(0), p.get(1), p.get(3)]);
        let undone = apply_move(&isa, &rotated, &Move::Rotate { from: 2, to: 0 }).unwrap();
        assert_eq!(undone, p);

        let q = parse(&isa, "sub r4, r5").unwrap();
        let swapped = apply_move(&isa, &q, &Move::OperandSwap { slot: 0 }).unwrap();
        assert_eq!(swapped.get(0).operands, [5, 4]);
        assert!(apply_move(&isa, &p, &Move::OperandSwap { slot: 0 }).is_err());
        assert!(apply_move(
            &isa,
            &p,
            &Move::Insert {
                slot: 0,
                insn: p.get(1)
            }
        )
        .is_err());
    }

    #[test]
    fn logprob_matches_recorded_value() {
        let isa = Isa::standard();
        let v = isa.proposable_size();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let kinds: Vec<f64> = (0..9).map(|_| rng.gen_range(0.1..1.0)).collect();
        let ks: f64 = kinds.iter().sum();
        let ops: Vec<f64> = (0..v).map(|_| rng.gen_range(0.01..1.0)).collect();
        let os: f64 = ops.iter().sum();
        let mut kind_probs = [0.0; 9];
        for (d, k) in kind_probs.iter_mut().zip(&kinds) {
            *d = k / ks;
        }
        let params = ProposalParams::new(&isa, kind_probs, ops.iter().map(|o| o / os).collect()).unwrap();
        let mut p = parse(&isa, "mov r1, r0\ndec r1\nand r0, r1").unwrap();
        for _ in 0..10_000 {
            let rec = sample_move(&isa, &params, &p, &mut rng);
            assert!(rec.logprob.is_finite() && rec.logprob <= 0.0);
            let again = log_prob(&isa, &params, &p, &rec.mv).unwrap();
            assert_eq!(again.to_bits(), rec.logprob.to_bits());
            if rec.mv.is_applicable() {
                p = apply_move(&isa, &p, &rec.mv).unwrap();
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn moves_preserve_validity(seed in any::<u64>()) {
            let isa = Isa::standard();
            let params = uniform_params(&isa);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = isa.empty_program();
            for _ in 0..2_000 {
                let rec = sample_move(&isa, &params, &p, &mut rng);
                if !rec.mv.is_applicable() {
                    prop_assert!(!is_applicable(&isa, rec.kind(), &p));
                    continue;
                }
                let next = apply_move(&isa, &p, &rec.mv).unwrap();
                prop_assert!(isa.validate(&next).is_ok());
                if let Move::Opcode { slot, .. } = rec.mv {
                    let before = isa.opcode(p.get(slot as usize).opcode).signature;
                    let after = isa.opcode(next.get(slot as usize).opcode).signature;
                    prop_assert_eq!(before, after);
                }
                p = next;
            }
        }
    }
}
