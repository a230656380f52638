//! Corpora: the 25 Hacker's Delight tasks (with equivalence-preserving
//! augmentation) and a synthetic random-walk corpus, plus their on-disk form.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::{self, ParseError};
use crate::cost::{tests_from_reference, CostFn, CostWeights, TestCase};
use crate::isa::{Instruction, Isa, MachineState, Program};
use crate::mcmc::Chain;
use crate::proposal::uniform_params;
use crate::seed;

/// HD tasks read their arguments from r0 (and r1) and leave the result in r0.
pub const HD_OUTPUT_MASK: u8 = 1;
pub const HD_TESTS_PER_TASK: usize = 16;
/// Task 21 cycles `A -> B -> C -> A`.
pub const CYCLE_A: u32 = 3;
pub const CYCLE_B: u32 = 5;
pub const CYCLE_C: u32 = 6;

type Oracle = fn(u32, u32) -> u32;
type Sampler = fn(&mut dyn RngCore, usize) -> [u32; 2];

pub struct Task {
    pub id: u32,
    pub description: &'static str,
    /// Number of argument registers (r0, r1).
    pub arity: usize,
    pub reference: Program,
    oracle: Oracle,
    sampler: Sampler,
}

impl std::fmt::Debug for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Task")
            .field("id", &self.id)
            .field("description", &self.description)
            .finish_non_exhaustive()
    }
}

fn flag(b: bool) -> u32 {
    u32::from(b)
}

fn nlz(x: u32) -> u32 {
    x.leading_zeros()
}

/// Random word whose magnitude is spread over all bit widths half the time.
fn word(rng: &mut dyn RngCore) -> u32 {
    let w = rng.next_u32();
    if rng.gen_bool(0.5) {
        w >> rng.gen_range(0..32)
    } else {
        w
    }
}

fn sample_plain(rng: &mut dyn RngCore, _: usize) -> [u32; 2] {
    [word(rng), word(rng)]
}

fn sample_ones(rng: &mut dyn RngCore, i: usize) -> [u32; 2] {
    let x = if i.is_multiple_of(2) {
        u32::MAX.checked_shr(rng.gen_range(0..33)).unwrap_or(0)
    } else {
        word(rng)
    };
    [x, word(rng)]
}

fn sample_pow2(rng: &mut dyn RngCore, i: usize) -> [u32; 2] {
    let x = if i.is_multiple_of(2) {
        1 << rng.gen_range(0..32)
    } else {
        word(rng)
    };
    [x, word(rng)]
}

fn sample_same_nlz(rng: &mut dyn RngCore, i: usize) -> [u32; 2] {
    let x = word(rng);
    let y = if i.is_multiple_of(2) {
        match nlz(x) {
            32 => 0,
            n => (rng.next_u32() >> n) | (0x8000_0000 >> n),
        }
    } else {
        word(rng)
    };
    [x, y]
}

fn sample_cycle(rng: &mut dyn RngCore, i: usize) -> [u32; 2] {
    let x = match i % 4 {
        0 => CYCLE_A,
        1 => CYCLE_B,
        2 => CYCLE_C,
        _ => word(rng),
    };
    [x, word(rng)]
}

fn snoob(x: u32) -> u32 {
    let s = x & x.wrapping_neg();
    if s == 0 {
        return 0;
    }
    let r = x.wrapping_add(s);
    let ones = ((x ^ r) >> 2) / s;
    r | ones
}

fn clp2(x: u32) -> u32 {
    let mut x = x.wrapping_sub(1);
    x |= x >> 1;
    x |= x >> 2;
    x |= x >> 4;
    x |= x >> 8;
    x |= x >> 16;
    x.wrapping_add(1)
}

fn cycle(x: u32) -> u32 {
    let mask = |b: bool| if b { u32::MAX } else { 0 };
    (mask(x == CYCLE_C) & (CYCLE_A ^ CYCLE_C)) ^ (mask(x == CYCLE_A) & (CYCLE_B ^ CYCLE_C)) ^ CYCLE_C
}

struct Spec {
    description: &'static str,
    arity: usize,
    reference: &'static str,
    oracle: Oracle,
    sampler: Sampler,
}

fn specs() -> [Spec; 25] {
    [
        Spec {
            description: "turn off the right-most one bit",
            arity: 1,
            reference: "mov r1, r0\ndec r1\nand r0, r1",
            oracle: |x, _| x & x.wrapping_sub(1),
            sampler: sample_plain,
        },
        Spec {
            description: "test whether an unsigned integer is of the form 2^n - 1",
            arity: 1,
            reference: "mov r1, r0\ninc r1\nand r0, r1\nmovi r2, 1\ncmovnz r0, r2\nxori r0, 1",
            oracle: |x, _| flag(x.wrapping_add(1).is_power_of_two() || x == u32::MAX),
            sampler: sample_ones,
        },
        Spec {
            description: "isolate the right-most one bit",
            arity: 1,
            reference: "mov r1, r0\nneg r1\nand r0, r1",
            oracle: |x, _| if x == 0 { 0 } else { 1 << x.trailing_zeros() },
            sampler: sample_plain,
        },
        Spec {
            description: "mask the right-most one bit and the trailing zeros",
            arity: 1,
            reference: "mov r1, r0\ndec r1\nxor r0, r1",
            oracle: |x, _| match x {
                0 => u32::MAX,
                _ => u32::MAX >> (31 - x.trailing_zeros()),
            },
            sampler: sample_plain,
        },
        Spec {
            description: "right-propagate the right-most one bit",
            arity: 1,
            reference: "mov r1, r0\ndec r1\nor r0, r1",
            oracle: |x, _| match x {
                0 => u32::MAX,
                _ => x | ((1u32 << x.trailing_zeros()) - 1),
            },
            sampler: sample_plain,
        },
        Spec {
            description: "turn on the right-most zero bit",
            arity: 1,
            reference: "mov r1, r0\ninc r1\nor r0, r1",
            oracle: |x, _| match x {
                u32::MAX => u32::MAX,
                _ => x | (1 << x.trailing_ones()),
            },
            sampler: sample_ones,
        },
        Spec {
            description: "isolate the right-most zero bit",
            arity: 1,
            reference: "mov r1, r0\ninc r1\nnot r0\nand r0, r1",
            oracle: |x, _| match x {
                u32::MAX => 0,
                _ => 1 << x.trailing_ones(),
            },
            sampler: sample_ones,
        },
        Spec {
            description: "mask the trailing zeros",
            arity: 1,
            reference: "mov r1, r0\ndec r1\nnot r0\nand r0, r1",
            oracle: |x, _| match x {
                0 => u32::MAX,
                _ => (1u32 << x.trailing_zeros()) - 1,
            },
            sampler: sample_plain,
        },
        Spec {
            description: "absolute value",
            arity: 1,
            reference: "mov r1, r0\nsari r1, 31\nxor r0, r1\nsub r0, r1",
            oracle: |x, _| (x as i32).unsigned_abs(),
            sampler: sample_plain,
        },
        Spec {
            description: "test whether nlz(x) == nlz(y)",
            arity: 2,
            reference: "mov r2, r0\nxor r2, r1\nand r0, r1\nmin r0, r2\nxor r0, r2\nmovi r3, 1\ncmovnz r0, r3\nxori r0, 1",
            oracle: |x, y| flag(nlz(x) == nlz(y)),
            sampler: sample_same_nlz,
        },
        Spec {
            description: "test whether nlz(x) < nlz(y)",
            arity: 2,
            reference: "mov r2, r1\nnot r2\nand r2, r0\nmov r0, r1\nmin r0, r2\nxor r0, r2\nmovi r3, 1\ncmovnz r0, r3",
            oracle: |x, y| flag(nlz(x) < nlz(y)),
            sampler: sample_same_nlz,
        },
        Spec {
            description: "test whether nlz(x) <= nlz(y)",
            arity: 2,
            reference: "mov r2, r0\nnot r2\nand r2, r1\nmin r0, r2\nxor r0, r2\nmovi r3, 1\ncmovnz r0, r3\nxori r0, 1",
            oracle: |x, y| flag(nlz(x) <= nlz(y)),
            sampler: sample_same_nlz,
        },
        Spec {
            description: "sign function",
            arity: 1,
            reference: "mov r1, r0\nsari r1, 31\nneg r0\nshri r0, 31\nor r0, r1",
            oracle: |x, _| (x as i32).signum() as u32,
            sampler: sample_plain,
        },
        Spec {
            description: "floor of the average of two unsigned integers",
            arity: 2,
            reference: "mov r2, r0\nand r2, r1\nxor r0, r1\nshri r0, 1\nadd r0, r2",
            oracle: |x, y| ((u64::from(x) + u64::from(y)) / 2) as u32,
            sampler: sample_plain,
        },
        Spec {
            description: "ceiling of the average of two unsigned integers",
            arity: 2,
            reference: "mov r2, r0\nor r2, r1\nxor r0, r1\nshri r0, 1\nsub r2, r0\nmov r0, r2",
            oracle: |x, y| (u64::from(x) + u64::from(y)).div_ceil(2) as u32,
            sampler: sample_plain,
        },
        Spec {
            description: "maximum of two signed integers",
            arity: 2,
            reference: "maxs r0, r1",
            oracle: |x, y| (x as i32).max(y as i32) as u32,
            sampler: sample_plain,
        },
        Spec {
            description: "turn off the right-most contiguous string of one bits",
            arity: 1,
            reference: "mov r1, r0\ndec r1\nor r1, r0\ninc r1\nand r0, r1",
            oracle: |x, _| match x {
                0 => 0,
                _ => {
                    let run = (x >> x.trailing_zeros()).trailing_ones();
                    let ones = match run + x.trailing_zeros() {
                        32 => u32::MAX,
                        top => (1u32 << top) - 1,
                    } & !((1u32 << x.trailing_zeros()) - 1);
                    x & !ones
                }
            },
            sampler: sample_ones,
        },
        Spec {
            description: "test whether an integer is a power of two",
            arity: 1,
            reference: "mov r1, r0\ndec r1\nand r1, r0\nmovi r2, 1\ncmovnz r1, r2\nxori r1, 1\ncmovnz r0, r2\nand r0, r1",
            oracle: |x, _| flag(x.count_ones() == 1),
            sampler: sample_pow2,
        },
        Spec {
            description: "exchange bits 0-7 with bits 16-23",
            arity: 1,
            reference: "mov r1, r0\nshri r1, 16\nxor r1, r0\nandi r1, 255\nxor r0, r1\nshli r1, 16\nxor r0, r1",
            oracle: |x, _| (x & 0xff00_ff00) | ((x & 0xff) << 16) | ((x >> 16) & 0xff),
            sampler: sample_plain,
        },
        Spec {
            description: "next higher unsigned number with the same number of one bits",
            arity: 1,
            reference: "mov r1, r0\nneg r1\nand r1, r0\nmov r2, r0\nadd r2, r1\nxor r0, r2\nshri r0, 2\ndec r1\npopcnt r1, r1\nshr r0, r1\nor r0, r2",
            oracle: |x, _| snoob(x),
            sampler: sample_plain,
        },
        Spec {
            description: "cycle through three values",
            arity: 1,
            reference: "mov r1, r0\nxori r1, 6\nmovi r2, 1\ncmovnz r1, r2\ndec r1\nandi r1, 5\nxori r0, 3\ncmovnz r0, r2\ndec r0\nandi r0, 3\nxor r0, r1\nxori r0, 6",
            oracle: |x, _| cycle(x),
            sampler: sample_cycle,
        },
        Spec {
            description: "parity",
            arity: 1,
            reference: "popcnt r0, r0\nandi r0, 1",
            oracle: |x, _| x.count_ones() & 1,
            sampler: sample_plain,
        },
        Spec {
            description: "count the one bits",
            arity: 1,
            reference: "popcnt r0, r0",
            oracle: |x, _| x.count_ones(),
            sampler: sample_plain,
        },
        Spec {
            description: "round up to the next power of two",
            arity: 1,
            reference: "dec r0\nlzcnt r1, r0\nmovi r2, 0xffffffff\nshr r2, r1\ncmovnz r0, r2\ninc r0",
            oracle: |x, _| clp2(x),
            sampler: sample_plain,
        },
        Spec {
            description: "high word of the unsigned product",
            arity: 2,
            reference: "mulhu r0, r1",
            oracle: |x, y| ((u64::from(x) * u64::from(y)) >> 32) as u32,
            sampler: sample_plain,
        },
    ]
}

/// The 25 Hacker's Delight tasks with toy-ISA references and direct oracles.
pub fn hd_tasks(isa: &Isa) -> Vec<Task> {
    specs()
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let reference = asm::parse(isa, s.reference).expect("built-in reference parses");
            isa.validate(&reference).expect("built-in reference is valid");
            Task {
                id: i as u32 + 1,
                description: s.description,
                arity: s.arity,
                reference,
                oracle: s.oracle,
                sampler: s.sampler,
            }
        })
        .collect()
}

impl Task {
    pub fn oracle(&self, x: u32, y: u32) -> u32 {
        (self.oracle)(x, y)
    }

    /// The state the oracle prescribes: `input` with r0 replaced by the result.
    pub fn expected(&self, input: &MachineState) -> MachineState {
        input.with(0, self.oracle(input.regs[0], input.regs[1]))
    }

    pub fn test_case(&self, input: MachineState) -> TestCase {
        TestCase::new(input, self.expected(&input), HD_OUTPUT_MASK).expect("non-empty mask")
    }

    /// Fully random machine state with the task's arguments in r0/r1.
    pub fn sample_input<R: RngCore>(&self, rng: &mut R, i: usize) -> MachineState {
        let mut regs = [0u32; crate::isa::MAX_REGS];
        regs.iter_mut().for_each(|r| *r = rng.next_u32());
        let args = (self.sampler)(rng, i);
        regs[..self.arity].copy_from_slice(&args[..self.arity]);
        MachineState::new(regs)
    }

    /// Random tests followed by edge values of the first argument.
    pub fn tests(&self, seed: u64) -> Vec<TestCase> {
        let mut rng = seed::rng(seed, &[u64::from(self.id)]);
        let edges = [0, 1, u32::MAX, 1 << rng.gen_range(1..31)];
        let random = HD_TESTS_PER_TASK - edges.len();
        let mut out: Vec<TestCase> = (0..random)
            .map(|i| self.test_case(self.sample_input(&mut rng, i)))
            .collect();
        for e in edges {
            let input = self.sample_input(&mut rng, random).with(0, e);
            out.push(self.test_case(input));
        }
        out
    }

    /// First input on which the reference disagrees with the oracle.
    pub fn check_reference(&self, isa: &Isa, inputs: impl IntoIterator<Item = MachineState>) -> Option<MachineState> {
        inputs
            .into_iter()
            .find(|input| match isa.execute(&self.reference, input) {
                Ok(out) => out.regs[0] != self.oracle(input.regs[0], input.regs[1]),
                Err(_) => true,
            })
    }
}

/// Edge inputs: 0, 1, 2^31, 2^32 - 1 and every power of two.
pub fn edge_values() -> Vec<u32> {
    let mut v = vec![0, 1, 1 << 31, u32::MAX];
    v.extend((1..31).map(|k| 1u32 << k));
    v.extend((1..32).map(|k| (1u32 << k) - 1));
    v
}

pub struct Augmented {
    pub programs: Vec<Program>,
    /// Fewer than the requested number of distinct programs were found.
    pub short: bool,
}

/// Harvests up to `n` distinct programs equivalent to `reference` on `tests`.
///
/// Each walk starts at the reference and runs `walk_budget` Metropolis steps
/// under a correctness-only cost (ω_p = 0), so correct rewrites of any
/// length are free to drift; the last correct program of each walk is kept.
pub fn augment_hd(
    isa: &Isa,
    reference: &Program,
    tests: &[TestCase],
    n: usize,
    walk_budget: usize,
    seed: u64,
) -> Augmented {
    assert!(n >= 1, "augment_hd needs n >= 1");
    let params = uniform_params(isa);
    let cost = CostFn::new(isa, tests, CostWeights::eq_only());
    let canonical = reference.compact();
    let mut seen: HashSet<Program> = HashSet::from([canonical]);
    let mut programs = vec![canonical];
    let max_walks = 10 * n;
    let mut walk = 0;
    while programs.len() < n && walk < max_walks {
        let mut rng = seed::rng(seed, &[walk as u64]);
        let mut chain = Chain::new(isa, &params, cost, 1.0, *reference);
        let mut last_correct = *reference;
        for _ in 0..walk_budget {
            chain.step(&mut rng);
            if chain.current_cost().correct {
                last_correct = *chain.current();
            }
        }
        let candidate = last_correct.compact();
        if seen.insert(candidate) {
            programs.push(candidate);
        }
        walk += 1;
    }
    Augmented {
        short: programs.len() < n,
        programs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub id: String,
    /// Hacker's Delight task id, `None` for synthetic programs.
    pub task: Option<u32>,
    /// Program handed to the optimizer; also its own reference.
    pub start: Program,
    pub tests: Vec<TestCase>,
}

/// Even task ids go to train, odd ones to test.
pub fn split_even_odd(entries: Vec<Entry>) -> (Vec<Entry>, Vec<Entry>) {
    entries.into_iter().partition(|e| e.task.is_some_and(|t| t % 2 == 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum GenParams {
    HdAugment {
        variants: usize,
        walk_budget: usize,
    },
    Synthetic {
        count: usize,
        live_length: usize,
        walk_iters: usize,
    },
}

impl GenParams {
    pub fn hd_default() -> Self {
        GenParams::HdAugment {
            variants: 20,
            walk_budget: 1000,
        }
    }

    pub fn synthetic_default() -> Self {
        GenParams::Synthetic {
            count: 600,
            live_length: 6,
            walk_iters: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub params: GenParams,
    pub train: Vec<Entry>,
    pub test: Vec<Entry>,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("synthetic count must be even and positive, got {0}")]
    OddCount(usize),
    #[error("live length must be between 1 and {max}, got {found}")]
    LiveLength { found: usize, max: usize },
    #[error("at least one variant per task is required")]
    NoVariants,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Manifest { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Program { path: PathBuf, source: ParseError },
    #[error("{path}: line {line}: {message}")]
    Tests {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate start program `{0}` in dataset")]
    Duplicate(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Builds the augmented HD dataset, split by task parity.
pub fn hd_dataset(isa: &Isa, variants: usize, walk_budget: usize, seed: u64) -> Result<Dataset, DataError> {
    if variants == 0 {
        return Err(DataError::NoVariants);
    }
    let tasks = hd_tasks(isa);
    let per_task: Vec<(Vec<Entry>, bool)> = tasks
        .par_iter()
        .map(|task| {
            let tests = task.tests(seed);
            let aug = augment_hd(
                isa,
                &task.reference,
                &tests,
                variants,
                walk_budget,
                seed::derive(seed, &[1, u64::from(task.id)]),
            );
            let entries = aug
                .programs
                .into_iter()
                .enumerate()
                .map(|(k, start)| Entry {
                    id: format!("hd{:02}-{:02}", task.id, k),
                    task: Some(task.id),
                    start,
                    tests: tests.clone(),
                })
                .collect();
            (entries, aug.short)
        })
        .collect();
    let entries = per_task.into_iter().flat_map(|(e, _)| e).collect();
    let (train, test) = split_even_odd(entries);
    Ok(Dataset {
        seed,
        params: GenParams::HdAugment { variants, walk_budget },
        train,
        test,
    })
}

/// Number of HD tasks that produced fewer variants than requested.
pub fn short_tasks(ds: &Dataset) -> Vec<u32> {
    let GenParams::HdAugment { variants, .. } = ds.params else {
        return Vec::new();
    };
    (1..=25u32)
        .filter(|&t| ds.train.iter().chain(&ds.test).filter(|e| e.task == Some(t)).count() < variants)
        .collect()
}

fn random_instruction<R: Rng + ?Sized>(isa: &Isa, rng: &mut R) -> Instruction {
    let opcode = isa.proposable_opcode(rng.gen_range(0..isa.proposable_size()));
    let mut operands = [0u32; 2];
    for (o, &kind) in operands.iter_mut().zip(isa.opcode(opcode).signature.kinds()) {
        *o = isa.domain_value(kind, rng.gen_range(0..isa.domain_size(kind)));
    }
    Instruction::new(opcode, operands)
}

/// One synthetic reference: a random `live_length` program random-walked for
/// `walk_iters` steps under a constant cost. Retries walks that end empty.
pub fn synth_program(
    isa: &Isa,
    live_length: usize,
    walk_iters: usize,
    seed: u64,
    index: u64,
    attempt: &mut u64,
) -> Program {
    let params = uniform_params(isa);
    let cost = CostFn::new(isa, &[], CostWeights::constant());
    loop {
        let mut rng = seed::rng(seed, &[2, index, *attempt]);
        *attempt += 1;
        let insns: Vec<Instruction> = (0..live_length).map(|_| random_instruction(isa, &mut rng)).collect();
        let start = Program::from_instructions(isa.slots(), &insns);
        let mut chain = Chain::new(isa, &params, cost, 1.0, start);
        for _ in 0..walk_iters {
            chain.step(&mut rng);
        }
        let end = chain.current().compact();
        if end.live_len() > 0 {
            return end;
        }
    }
}

/// Fraction of proposals accepted over `walks` constant-cost walks, counting
/// inapplicable moves as rejections. Reported by generation, not asserted.
pub fn synth_acceptance_rate(isa: &Isa, live_length: usize, walk_iters: usize, seed: u64, walks: u64) -> f64 {
    let params = uniform_params(isa);
    let (accepted, total) = (0..walks)
        .into_par_iter()
        .map(|w| {
            let mut rng = seed::rng(seed, &[4, w]);
            let insns: Vec<Instruction> = (0..live_length).map(|_| random_instruction(isa, &mut rng)).collect();
            let start = Program::from_instructions(isa.slots(), &insns);
            let cost = CostFn::new(isa, &[], CostWeights::constant());
            let mut chain = Chain::new(isa, &params, cost, 1.0, start);
            let accepted = (0..walk_iters).filter(|_| chain.step(&mut rng).accepted).count();
            (accepted, walk_iters)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    accepted as f64 / total.max(1) as f64
}

/// Self-specifying tests: random inputs, outputs of `p` on the registers it writes.
pub fn synth_tests(isa: &Isa, p: &Program, n: usize, seed: u64) -> Vec<TestCase> {
    let mut rng = seed::rng(seed, &[]);
    let inputs: Vec<MachineState> = (0..n)
        .map(|_| {
            let mut regs = [0u32; crate::isa::MAX_REGS];
            regs.iter_mut().for_each(|r| *r = rng.next_u32());
            MachineState::new(regs)
        })
        .collect();
    tests_from_reference(isa, p, &inputs, isa.written_registers(p)).expect("live programs write a register")
}

pub fn synth_generate(
    isa: &Isa,
    count: usize,
    live_length: usize,
    walk_iters: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    if count == 0 || !count.is_multiple_of(2) {
        return Err(DataError::OddCount(count));
    }
    if live_length == 0 || live_length > isa.slots() {
        return Err(DataError::LiveLength {
            found: live_length,
            max: isa.slots(),
        });
    }
    let firsts: Vec<(Program, u64)> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut attempt = 0;
            let p = synth_program(isa, live_length, walk_iters, seed, i, &mut attempt);
            (p, attempt)
        })
        .collect();
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(count);
    for (i, (mut p, mut attempt)) in firsts.into_iter().enumerate() {
        while !seen.insert(p) {
            p = synth_program(isa, live_length, walk_iters, seed, i as u64, &mut attempt);
        }
        entries.push(Entry {
            id: format!("syn{i:04}"),
            task: None,
            start: p,
            tests: synth_tests(isa, &p, HD_TESTS_PER_TASK, seed::derive(seed, &[3, i as u64])),
        });
    }
    let test = entries.split_off(count / 2);
    Ok(Dataset {
        seed,
        params: GenParams::Synthetic {
            count,
            live_length,
            walk_iters,
        },
        train: entries,
        test,
    })
}

/// Regenerates a dataset from its parameters.
pub fn generate(isa: &Isa, params: GenParams, seed: u64) -> Result<Dataset, DataError> {
    match params {
        GenParams::HdAugment { variants, walk_budget } => hd_dataset(isa, variants, walk_budget, seed),
        GenParams::Synthetic {
            count,
            live_length,
            walk_iters,
        } => synth_generate(isa, count, live_length, walk_iters, seed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub seed: u64,
    #[serde(flatten)]
    pub params: GenParams,
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn render_tests(isa: &Isa, tests: &[TestCase]) -> String {
    let mut out = String::new();
    for tc in tests {
        out.push_str("in");
        for r in 0..isa.num_regs() {
            let _ = write!(out, " r{r}={:#010x}", tc.input.regs[r]);
        }
        out.push_str(" ; out");
        for r in tc.masked_registers() {
            let _ = write!(out, " r{r}={:#010x}", tc.expected.regs[r]);
        }
        out.push('\n');
    }
    out
}

pub fn parse_tests(isa: &Isa, text: &str) -> Result<Vec<TestCase>, (usize, String)> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (inp, outp) = line
            .split_once(';')
            .ok_or_else(|| (line_no, "expected `in ... ; out ...`".to_string()))?;
        let assignments = |part: &str, tag: &str| -> Result<Vec<(usize, u32)>, (usize, String)> {
            let mut toks = part.split_whitespace();
            if toks.next() != Some(tag) {
                return Err((line_no, format!("expected `{tag}`")));
            }
            toks.map(|t| {
                let (reg, val) = t
                    .split_once('=')
                    .ok_or_else(|| (line_no, format!("bad assignment `{t}`")))?;
                let r: usize = reg
                    .strip_prefix('r')
                    .and_then(|n| n.parse().ok())
                    .filter(|&r| r < isa.num_regs())
                    .ok_or_else(|| (line_no, format!("bad register `{reg}`")))?;
                let v = match val.strip_prefix("0x") {
                    Some(h) => u32::from_str_radix(h, 16),
                    None => val.parse(),
                }
                .map_err(|_| (line_no, format!("bad value `{val}`")))?;
                Ok((r, v))
            })
            .collect()
        };
        let mut input = MachineState::default();
        for (r, v) in assignments(inp, "in")? {
            input.regs[r] = v;
        }
        let mut expected = input;
        let mut mask = 0u8;
        for (r, v) in assignments(outp, "out")? {
            expected.regs[r] = v;
            mask |= 1 << r;
        }
        out.push(TestCase::new(input, expected, mask).map_err(|e| (line_no, e.to_string()))?);
    }
    Ok(out)
}

fn write_file(path: &Path, contents: &str) -> Result<(), DataError> {
    fs::write(path, contents).map_err(io_err(path))
}

impl Dataset {
    pub fn manifest(&self) -> Manifest {
        let list = |es: &[Entry]| {
            es.iter()
                .map(|e| ManifestEntry {
                    id: e.id.clone(),
                    task: e.task,
                })
                .collect()
        };
        Manifest {
            format: 1,
            seed: self.seed,
            params: self.params,
            train: list(&self.train),
            test: list(&self.test),
        }
    }

    pub fn split(&self, split: Split) -> &[Entry] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Writes `manifest.json` and `<split>/<id>.prog` / `<split>/<id>.tests`.
    pub fn write(&self, isa: &Isa, dir: &Path) -> Result<(), DataError> {
        for split in [Split::Train, Split::Test] {
            let sub = dir.join(split.dir_name());
            fs::create_dir_all(&sub).map_err(io_err(&sub))?;
            for e in self.split(split) {
                write_file(&sub.join(format!("{}.prog", e.id)), &asm::render(isa, &e.start))?;
                write_file(&sub.join(format!("{}.tests", e.id)), &render_tests(isa, &e.tests))?;
            }
        }
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        write_file(&path, &(json + "\n"))
    }

    pub fn read(isa: &Isa, dir: &Path) -> Result<Dataset, DataError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|source| DataError::Manifest { path, source })?;
        let mut seen = HashSet::new();
        let mut load = |split: Split, list: &[ManifestEntry]| -> Result<Vec<Entry>, DataError> {
            list.iter()
                .map(|m| {
                    let sub = dir.join(split.dir_name());
                    let prog_path = sub.join(format!("{}.prog", m.id));
                    let text = fs::read_to_string(&prog_path).map_err(io_err(&prog_path))?;
                    let start = asm::parse(isa, &text).map_err(|source| DataError::Program {
                        path: prog_path.clone(),
                        source,
                    })?;
                    if !seen.insert(start) {
                        return Err(DataError::Duplicate(m.id.clone()));
                    }
                    let tests_path = sub.join(format!("{}.tests", m.id));
                    let text = fs::read_to_string(&tests_path).map_err(io_err(&tests_path))?;
                    let tests = parse_tests(isa, &text).map_err(|(line, message)| DataError::Tests {
                        path: tests_path.clone(),
                        line,
                        message,
                    })?;
                    Ok(Entry {
                        id: m.id.clone(),
                        task: m.task,
                        start,
                        tests,
                    })
                })
                .collect()
        };
        let train = load(Split::Train, &manifest.train)?;
        let test = load(Split::Test, &manifest.test)?;
        Ok(Dataset {
            seed: manifest.seed,
            params: manifest.params,
            train,
            test,
        })
    }
}

/// Reads just the manifest of a dataset directory.
pub fn read_manifest(dir: &Path) -> Result<Manifest, DataError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| DataError::Manifest { path, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::eq_cost;

    #[test]
    fn constant_cost_walks_reject_only_inapplicable_moves() {
        let isa = Isa::standard();
        let rate = synth_acceptance_rate(&isa, 6, 500, 1, 4);
        assert!(rate > 0.5 && rate < 1.0, "{rate}");
        assert_eq!(rate, synth_acceptance_rate(&isa, 6, 500, 1, 4));
    }

    #[test]
    fn oracle_examples() {
        let isa = Isa::standard();
        let tasks = hd_tasks(&isa);
        assert_eq!(tasks.len(), 25);
        assert_eq!(tasks[0].oracle(88, 0), 80);
        assert_eq!(tasks[17].oracle(64, 0), 1);
        assert_eq!(tasks[17].oracle(96, 0), 0);
        assert_eq!(tasks[8].oracle(u32::MAX - 4, 0), 5);
        assert_eq!(tasks[20].oracle(CYCLE_A, 0), CYCLE_B);
        assert_eq!(tasks[20].oracle(CYCLE_B, 0), CYCLE_C);
        assert_eq!(tasks[20].oracle(CYCLE_C, 0), CYCLE_A);
        assert_eq!(tasks[19].oracle(0b0111, 0), 0b1011);
        assert_eq!(tasks[23].oracle(5, 0), 8);
        assert_eq!(tasks[23].oracle(8, 0), 8);
        assert_eq!(tasks[16].oracle(0b0101_1100, 0), 0b0100_0000);
    }

    #[test]
    fn oracles_agree_with_bit_tricks() {
        // Classic formulas from the book, checked against the direct oracles.
        let tasks = hd_tasks(&Isa::standard());
        let mut rng = seed::rng(11, &[]);
        let inputs: Vec<u32> = edge_values()
            .into_iter()
            .chain((0..4000).map(|_| word(&mut rng)))
            .collect();
        for &x in &inputs {
            let y = word(&mut rng);
            assert_eq!(tasks[1].oracle(x, 0), flag(x & x.wrapping_add(1) == 0));
            assert_eq!(tasks[3].oracle(x, 0), x ^ x.wrapping_sub(1));
            assert_eq!(tasks[4].oracle(x, 0), x | x.wrapping_sub(1));
            assert_eq!(tasks[5].oracle(x, 0), x | x.wrapping_add(1));
            assert_eq!(tasks[6].oracle(x, 0), !x & x.wrapping_add(1));
            assert_eq!(tasks[7].oracle(x, 0), !x & x.wrapping_sub(1));
            assert_eq!(tasks[16].oracle(x, 0), ((x | x.wrapping_sub(1)).wrapping_add(1)) & x);
            assert_eq!(tasks[9].oracle(x, y), flag((x ^ y) <= (x & y)));
            assert_eq!(tasks[10].oracle(x, y), flag((x & !y) > y));
            assert_eq!(tasks[11].oracle(x, y), flag((y & !x) <= x));
        }
    }

    #[test]
    fn references_match_oracles_on_samples() {
        let isa = Isa::standard();
        let mut rng = seed::rng(12, &[]);
        for task in hd_tasks(&isa) {
            let mut inputs: Vec<MachineState> = (0..256).map(|i| task.sample_input(&mut rng, i)).collect();
            for e in edge_values() {
                inputs.push(task.sample_input(&mut rng, 0).with(0, e));
            }
            assert_eq!(task.check_reference(&isa, inputs), None, "task {}", task.id);
        }
    }

    #[test]
    fn task_tests_are_satisfied_by_references() {
        let isa = Isa::standard();
        for task in hd_tasks(&isa) {
            let tests = task.tests(3);
            assert_eq!(tests.len(), HD_TESTS_PER_TASK);
            assert_eq!(eq_cost(&isa, &task.reference, &tests), 0.0, "task {}", task.id);
        }
    }

    #[test]
    fn augmentation() {
        let isa = Isa::standard();
        let task = &hd_tasks(&isa)[0];
        let tests = task.tests(1);
        let one = augment_hd(&isa, &task.reference, &tests, 1, 100, 5);
        assert_eq!(one.programs, vec![task.reference.compact()]);
        let many = augment_hd(&isa, &task.reference, &tests, 20, 200, 5);
        assert!(many.programs.len() > 1);
        assert!(many.programs.iter().all(|p| eq_cost(&isa, p, &tests) == 0.0));
        let distinct: HashSet<_> = many.programs.iter().collect();
        assert_eq!(distinct.len(), many.programs.len());
        let ref_perf = isa.perf(&task.reference);
        assert!(many.programs.iter().any(|p| isa.perf(p) > ref_perf));
    }

    #[test]
    fn split_by_parity() {
        let isa = Isa::standard();
        let e = |task| Entry {
            id: format!("t{task}"),
            task: Some(task),
            start: isa.empty_program(),
            tests: Vec::new(),
        };
        let (train, test) = split_even_odd(vec![e(1), e(2), e(3), e(4)]);
        assert_eq!(train.iter().map(|e| e.task.unwrap()).collect::<Vec<_>>(), vec![2, 4]);
        assert_eq!(test.iter().map(|e| e.task.unwrap()).collect::<Vec<_>>(), vec![1, 3]);
    }

    #[test]
    fn synthetic_corpus() {
        let isa = Isa::standard();
        let ds = synth_generate(&isa, 20, 6, 300, 7).unwrap();
        assert_eq!((ds.train.len(), ds.test.len()), (10, 10));
        for e in ds.train.iter().chain(&ds.test) {
            assert!(e.start.live_len() > 0);
            assert_eq!(eq_cost(&isa, &e.start, &e.tests), 0.0);
            assert_eq!(e.tests[0].mask, isa.written_registers(&e.start));
        }
        assert_eq!(synth_generate(&isa, 20, 6, 300, 7).unwrap(), ds);
        assert!(matches!(synth_generate(&isa, 3, 6, 10, 7), Err(DataError::OddCount(3))));
    }

    #[test]
    fn tests_text_round_trip() {
        let isa = Isa::standard();
        let tests = hd_tasks(&isa)[9].tests(4);
        let text = render_tests(&isa, &tests);
        assert_eq!(parse_tests(&isa, &text).unwrap(), tests);
        assert!(parse_tests(&isa, "in r0=1").is_err());
        assert!(parse_tests(&isa, "in r0=1 ; out").is_err());
    }

    #[test]
    fn dataset_directory_round_trip() {
        let isa = Isa::standard();
        let ds = synth_generate(&isa, 4, 4, 100, 8).unwrap();
        let dir = std::env::temp_dir().join(format!("superopt-data-{}", std::process::id()));
        ds.write(&isa, &dir).unwrap();
        let back = Dataset::read(&isa, &dir).unwrap();
        assert_eq!(back, ds);
        assert_eq!(read_manifest(&dir).unwrap(), ds.manifest());
        fs::remove_dir_all(&dir).unwrap();
    }
}
