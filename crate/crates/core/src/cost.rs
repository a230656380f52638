//! Cost of a rewrite: weighted sum of an equivalence term (Hamming distance
//! on test cases) and a performance term (static latency).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{Isa, MachineState, Program, MAX_REGS};

/// Hamming penalty charged per masked register when a test case faults.
pub const FAULT_PENALTY_BITS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TestCase {
    pub input: MachineState,
    pub expected: MachineState,
    /// Bit `r` set means register `r` is compared.
    pub mask: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TestCaseError {
    #[error("test case output mask is empty")]
    EmptyMask,
}

impl TestCase {
    pub fn new(input: MachineState, expected: MachineState, mask: u8) -> Result<Self, TestCaseError> {
        if mask == 0 {
            return Err(TestCaseError::EmptyMask);
        }
        Ok(TestCase { input, expected, mask })
    }

    pub fn masked_registers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..MAX_REGS).filter(move |r| self.mask & (1 << r) != 0)
    }

    /// Hamming distance between `actual` and the expected masked registers.
    pub fn distance(&self, actual: &MachineState) -> u32 {
        self.masked_registers()
            .map(|r| (actual.regs[r] ^ self.expected.regs[r]).count_ones())
            .sum()
    }
}

/// Builds test cases by running a reference program on the given inputs.
pub fn tests_from_reference(
    isa: &Isa,
    reference: &Program,
    inputs: &[MachineState],
    mask: u8,
) -> Result<Vec<TestCase>, TestCaseError> {
    inputs
        .iter()
        .map(|input| {
            // References used as specifications never fault under masked shifts.
            let expected = isa.execute(reference, input).unwrap_or(*input);
            TestCase::new(*input, expected, mask)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub omega_e: f64,
    pub omega_p: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightsError {
    #[error("cost weights must be finite and non-negative (got {0}, {1})")]
    Invalid(f64, f64),
    #[error("cost weights are both zero; use CostWeights::constant() for a flat landscape")]
    BothZero,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            omega_e: 4.0,
            omega_p: 1.0,
        }
    }
}

impl CostWeights {
    pub fn new(omega_e: f64, omega_p: f64) -> Result<Self, WeightsError> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if !ok(omega_e) || !ok(omega_p) {
            return Err(WeightsError::Invalid(omega_e, omega_p));
        }
        if omega_e == 0.0 && omega_p == 0.0 {
            return Err(WeightsError::BothZero);
        }
        Ok(CostWeights { omega_e, omega_p })
    }

    /// Correctness only; used to harvest equivalent programs.
    pub fn eq_only() -> Self {
        CostWeights {
            omega_e: 4.0,
            omega_p: 0.0,
        }
    }

    /// Every program costs zero; the sampler performs a random walk.
    pub fn constant() -> Self {
        CostWeights {
            omega_e: 0.0,
            omega_p: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub eq: f64,
    pub perf: f64,
    pub total: f64,
    pub correct: bool,
}

pub fn eq_cost(isa: &Isa, rewrite: &Program, tests: &[TestCase]) -> f64 {
    let mut bits = 0u32;
    for tc in tests {
        let mut state = tc.input;
        bits += match isa.execute_in_place(rewrite, &mut state) {
            Ok(()) => tc.distance(&state),
            Err(_) => FAULT_PENALTY_BITS * tc.mask.count_ones(),
        };
    }
    f64::from(bits)
}

pub fn combine(eq: f64, perf: f64, weights: &CostWeights) -> CostReport {
    CostReport {
        eq,
        perf,
        total: weights.omega_e * eq + weights.omega_p * perf,
        correct: eq == 0.0,
    }
}

pub fn total_cost(isa: &Isa, rewrite: &Program, tests: &[TestCase], weights: &CostWeights) -> CostReport {
    let eq = eq_cost(isa, rewrite, tests);
    let perf = f64::from(isa.perf(rewrite));
    combine(eq, perf, weights)
}

/// A cost function bound to one ISA, test suite and weighting.
#[derive(Debug, Clone, Copy)]
pub struct CostFn<'a> {
    pub isa: &'a Isa,
    pub tests: &'a [TestCase],
    pub weights: CostWeights,
}

impl<'a> CostFn<'a> {
    pub fn new(isa: &'a Isa, tests: &'a [TestCase], weights: CostWeights) -> Self {
        CostFn { isa, tests, weights }
    }

    pub fn evaluate(&self, p: &Program) -> CostReport {
        total_cost(self.isa, p, self.tests, &self.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse;
    use proptest::prelude::*;

    fn single_test(expected_r0: u32) -> TestCase {
        TestCase::new(MachineState::default(), MachineState::default().with(0, expected_r0), 1).unwrap()
    }

    #[test]
    fn reference_has_zero_eq_cost() {
        let isa = Isa::standard();
        let p = parse(&isa, "mov r1, r0\ndec r1\nand r0, r1").unwrap();
        let inputs: Vec<_> = (0..16u32)
            .map(|i| MachineState::default().with(0, i.wrapping_mul(0x9e37_79b9)))
            .collect();
        let tests = tests_from_reference(&isa, &p, &inputs, 1).unwrap();
        assert_eq!(eq_cost(&isa, &p, &tests), 0.0);
    }

    #[test]
    fn hamming_distance_on_masked_register() {
        let isa = Isa::standard();
        let p = parse(&isa, "movi r0, 3").unwrap();
        let oracle = (0b1010u32 ^ 0b0011).count_ones();
        assert_eq!(oracle, 2);
        assert_eq!(eq_cost(&isa, &p, &[single_test(0b1010)]), f64::from(oracle));
    }

    #[test]
    fn faults_cost_full_width() {
        let isa = Isa::standard().with_strict_shifts(true);
        let p = parse(&isa, "movi r1, 40\nshl r0, r1").unwrap();
        let tests = [single_test(0), single_test(0)];
        assert_eq!(eq_cost(&isa, &p, &tests), 64.0);
    }

    #[test]
    fn empty_mask_rejected() {
        assert_eq!(
            TestCase::new(MachineState::default(), MachineState::default(), 0),
            Err(super::TestCaseError::EmptyMask)
        );
    }

    #[test]
    fn weighted_total() {
        let w = CostWeights::new(1.0, 1.0).unwrap();
        let r = combine(0.0, 5.0, &w);
        assert_eq!(r.total, 5.0);
        assert!(r.correct);

        let r = combine(0.0, 7.0, &CostWeights::eq_only());
        assert_eq!(r.total, 0.0);

        let r = combine(3.0, 4.0, &CostWeights::new(2.0, 1.0).unwrap());
        assert_eq!(r.total, 10.0);
        assert!(!r.correct);
    }

    #[test]
    fn weight_validation() {
        assert!(CostWeights::new(0.0, 0.0).is_err());
        assert!(CostWeights::new(-1.0, 1.0).is_err());
        assert!(CostWeights::new(f64::NAN, 1.0).is_err());
        assert_eq!(CostWeights::default(), CostWeights::new(4.0, 1.0).unwrap());
    }

    proptest! {
        #[test]
        fn total_is_monotone(eq in 0u32..500, perf in 0u32..40, d in 1u32..20,
                             we in 0.0f64..10.0, wp in 0.01f64..10.0) {
            let w = CostWeights::new(we, wp).unwrap();
            let base = combine(eq.into(), perf.into(), &w).total;
            prop_assert!(combine((eq + d).into(), perf.into(), &w).total >= base);
            prop_assert!(combine(eq.into(), (perf + d).into(), &w).total > base);
        }

        #[test]
        fn correct_rewrites_ordered_by_perf(a in 0u32..40, b in 0u32..40, wp in 0.01f64..10.0) {
            let w = CostWeights::new(4.0, wp).unwrap();
            let ca = combine(0.0, a.into(), &w).total;
            let cb = combine(0.0, b.into(), &w).total;
            prop_assert_eq!(ca.partial_cmp(&cb), a.partial_cmp(&b));
        }
    }
}
