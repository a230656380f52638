//! Toy register ISA: opcode table, programs, interpreter and latency model.
//!
//! Programs are fixed-capacity slot arrays. Empty slots hold the `unused`
//! opcode, which executes as a no-op and costs nothing. Two-operand
//! instructions are destructive (`add r0, r1` computes `r0 = r0 + r1`).

use std::fmt;
use std::hash::{Hash, Hasher};

use thiserror::Error;

/// Hard upper bound on program capacity.
pub const MAX_SLOTS: usize = 12;
/// Hard upper bound on the register file size.
pub const MAX_REGS: usize = 8;

/// Index of the `unused` opcode in every opcode table.
pub const UNUSED: u8 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OperandKind {
    /// Register that is written (and possibly read).
    Dst,
    /// Register that is only read.
    Src,
    /// 32-bit immediate.
    Imm,
}

/// Operand layout of an opcode. Opcodes sharing a signature are
/// interchangeable by the opcode move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Signature {
    Empty,
    Dst,
    DstSrc,
    DstImm,
}

impl Signature {
    pub const ALL: [Signature; 4] = [Signature::Empty, Signature::Dst, Signature::DstSrc, Signature::DstImm];

    pub fn kinds(self) -> &'static [OperandKind] {
        match self {
            Signature::Empty => &[],
            Signature::Dst => &[OperandKind::Dst],
            Signature::DstSrc => &[OperandKind::Dst, OperandKind::Src],
            Signature::DstImm => &[OperandKind::Dst, OperandKind::Imm],
        }
    }

    pub fn arity(self) -> usize {
        self.kinds().len()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Pure transition applied by an opcode. Binary operations combine the
/// destination with the second operand, which is a register or an immediate
/// depending on the opcode's signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Semantics {
    Unused,
    Mov,
    Add,
    Sub,
    And,
    Andn,
    Or,
    Xor,
    Not,
    Neg,
    Inc,
    Dec,
    Shl,
    Shr,
    Sar,
    Rol,
    Ror,
    Mul,
    MulHu,
    Popcnt,
    Lzcnt,
    Tzcnt,
    MinU,
    MaxU,
    MinS,
    MaxS,
    /// `d = s` when `d == 0`.
    CmovZ,
    /// `d = s` when `d != 0`.
    CmovNz,
}

impl Semantics {
    fn is_shift(self) -> bool {
        matches!(self, Semantics::Shl | Semantics::Shr | Semantics::Sar)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Opcode {
    pub mnemonic: &'static str,
    pub signature: Signature,
    pub latency: u32,
    pub semantics: Semantics,
}

impl Opcode {
    const fn new(mnemonic: &'static str, signature: Signature, latency: u32, semantics: Semantics) -> Self {
        Opcode {
            mnemonic,
            signature,
            latency,
            semantics,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Instruction {
    pub opcode: u8,
    pub operands: [u32; 2],
}

impl Instruction {
    pub const UNUSED: Instruction = Instruction {
        opcode: UNUSED,
        operands: [0, 0],
    };

    pub fn new(opcode: u8, operands: [u32; 2]) -> Self {
        Instruction { opcode, operands }
    }

    pub fn is_unused(&self) -> bool {
        self.opcode == UNUSED
    }
}

/// Fixed-capacity program. Slots at index `>= len` are never touched and
/// always hold [`Instruction::UNUSED`].
#[derive(Clone, Copy)]
pub struct Program {
    slots: [Instruction; MAX_SLOTS],
    len: u8,
}

impl Program {
    pub fn empty(slots: usize) -> Self {
        assert!(
            (1..=MAX_SLOTS).contains(&slots),
            "program capacity {slots} outside 1..={MAX_SLOTS}"
        );
        Program {
            slots: [Instruction::UNUSED; MAX_SLOTS],
            len: slots as u8,
        }
    }

    /// Builds a program from live instructions placed in the leading slots.
    pub fn from_instructions(slots: usize, insns: &[Instruction]) -> Self {
        assert!(insns.len() <= slots, "too many instructions for capacity");
        let mut p = Program::empty(slots);
        p.slots[..insns.len()].copy_from_slice(insns);
        p
    }

    pub fn capacity(&self) -> usize {
        self.len as usize
    }

    pub fn slots(&self) -> &[Instruction] {
        &self.slots[..self.len as usize]
    }

    pub fn slots_mut(&mut self) -> &mut [Instruction] {
        &mut self.slots[..self.len as usize]
    }

    pub fn get(&self, i: usize) -> Instruction {
        self.slots()[i]
    }

    pub fn set(&mut self, i: usize, insn: Instruction) {
        self.slots_mut()[i] = insn;
    }

    pub fn live(&self) -> impl Iterator<Item = &Instruction> {
        self.slots().iter().filter(|i| !i.is_unused())
    }

    pub fn live_len(&self) -> usize {
        self.live().count()
    }

    /// Same program with live instructions moved to the front, in order.
    pub fn compact(&self) -> Program {
        let mut out = Program::empty(self.capacity());
        for (dst, insn) in self.live().enumerate() {
            out.slots[dst] = *insn;
        }
        out
    }
}

impl PartialEq for Program {
    fn eq(&self, other: &Self) -> bool {
        self.slots() == other.slots()
    }
}

impl Eq for Program {}

impl Hash for Program {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.slots().hash(state);
    }
}

impl fmt::Debug for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.slots().iter().map(|i| (i.opcode, i.operands)))
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MachineState {
    pub regs: [u32; MAX_REGS],
}

impl MachineState {
    pub fn new(regs: [u32; MAX_REGS]) -> Self {
        MachineState { regs }
    }

    pub fn with(mut self, reg: usize, value: u32) -> Self {
        self.regs[reg] = value;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("undefined instruction behaviour at slot {slot}")]
pub struct Fault {
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsaError {
    #[error("slot {slot}: opcode index {opcode} outside the opcode table")]
    UnknownOpcode { slot: usize, opcode: u8 },
    #[error("slot {slot}: register r{reg} out of range (r0..r{max})")]
    RegisterOutOfRange { slot: usize, reg: u32, max: usize },
    #[error("slot {slot}: unused slot carries operands")]
    DirtyUnused { slot: usize },
    #[error("slot {slot}: operand {operand} must be zero for this signature")]
    StrayOperand { slot: usize, operand: usize },
    #[error("program has {found} slots, ISA expects {expected}")]
    Capacity { found: usize, expected: usize },
}

/// Instruction-set configuration: the opcode vocabulary plus machine
/// geometry.
///
/// Opcode index 0 is always `unused`; the remaining indices form the
/// proposable vocabulary. Proposable index `k` is opcode index `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Isa {
    opcodes: Vec<Opcode>,
    num_regs: usize,
    slots: usize,
    imm_pool: Vec<u32>,
    strict_shifts: bool,
}

const STANDARD_OPCODES: &[Opcode] = {
    use Semantics as S;
    use Signature::*;
    &[
        Opcode::new("unused", Empty, 0, S::Unused),
        Opcode::new("mov", DstSrc, 1, S::Mov),
        Opcode::new("movi", DstImm, 1, S::Mov),
        Opcode::new("add", DstSrc, 1, S::Add),
        Opcode::new("addi", DstImm, 1, S::Add),
        Opcode::new("sub", DstSrc, 1, S::Sub),
        Opcode::new("subi", DstImm, 1, S::Sub),
        Opcode::new("and", DstSrc, 1, S::And),
        Opcode::new("andi", DstImm, 1, S::And),
        Opcode::new("andn", DstSrc, 1, S::Andn),
        Opcode::new("or", DstSrc, 1, S::Or),
        Opcode::new("ori", DstImm, 1, S::Or),
        Opcode::new("xor", DstSrc, 1, S::Xor),
        Opcode::new("xori", DstImm, 1, S::Xor),
        Opcode::new("not", Dst, 1, S::Not),
        Opcode::new("neg", Dst, 1, S::Neg),
        Opcode::new("inc", Dst, 1, S::Inc),
        Opcode::new("dec", Dst, 1, S::Dec),
        Opcode::new("shl", DstSrc, 1, S::Shl),
        Opcode::new("shli", DstImm, 1, S::Shl),
        Opcode::new("shr", DstSrc, 1, S::Shr),
        Opcode::new("shri", DstImm, 1, S::Shr),
        Opcode::new("sar", DstSrc, 1, S::Sar),
        Opcode::new("sari", DstImm, 1, S::Sar),
        Opcode::new("rol", DstSrc, 1, S::Rol),
        Opcode::new("roli", DstImm, 1, S::Rol),
        Opcode::new("ror", DstSrc, 1, S::Ror),
        Opcode::new("rori", DstImm, 1, S::Ror),
        Opcode::new("mul", DstSrc, 3, S::Mul),
        Opcode::new("muli", DstImm, 3, S::Mul),
        Opcode::new("mulhu", DstSrc, 3, S::MulHu),
        Opcode::new("popcnt", DstSrc, 3, S::Popcnt),
        Opcode::new("lzcnt", DstSrc, 3, S::Lzcnt),
        Opcode::new("tzcnt", DstSrc, 3, S::Tzcnt),
        Opcode::new("min", DstSrc, 3, S::MinU),
        Opcode::new("max", DstSrc, 3, S::MaxU),
        Opcode::new("mins", DstSrc, 3, S::MinS),
        Opcode::new("maxs", DstSrc, 3, S::MaxS),
        Opcode::new("cmovz", DstSrc, 3, S::CmovZ),
        Opcode::new("cmovnz", DstSrc, 3, S::CmovNz),
    ]
};

/// Immediates the proposal draws from: every shift amount plus common masks.
fn standard_imm_pool() -> Vec<u32> {
    let mut pool: Vec<u32> = (0..32).collect();
    pool.extend_from_slice(&[
        0xffff_ffff,
        0x8000_0000,
        0x7fff_ffff,
        0x0000_00ff,
        0x0000_ffff,
        0xffff_0000,
        0x0f0f_0f0f,
        0x3333_3333,
        0x5555_5555,
        0xaaaa_aaaa,
    ]);
    pool
}

impl Default for Isa {
    fn default() -> Self {
        Isa::standard()
    }
}

impl Isa {
    /// The full 40-opcode ISA: 8 registers, 12 slots, masked shifts.
    pub fn standard() -> Self {
        Isa {
            opcodes: STANDARD_OPCODES.to_vec(),
            num_regs: MAX_REGS,
            slots: MAX_SLOTS,
            imm_pool: standard_imm_pool(),
            strict_shifts: false,
        }
    }

    /// Two slots, two registers and three proposable opcodes (`mov`, `xor`,
    /// `not`): small enough to enumerate every move and every short trace.
    pub fn mini() -> Self {
        use Semantics as S;
        use Signature::*;
        Isa {
            opcodes: vec![
                Opcode::new("unused", Empty, 0, S::Unused),
                Opcode::new("mov", DstSrc, 1, S::Mov),
                Opcode::new("xor", DstSrc, 1, S::Xor),
                Opcode::new("not", Dst, 1, S::Not),
            ],
            num_regs: 2,
            slots: 2,
            imm_pool: vec![0, 1],
            strict_shifts: false,
        }
    }

    pub fn with_slots(mut self, slots: usize) -> Self {
        assert!((1..=MAX_SLOTS).contains(&slots));
        self.slots = slots;
        self
    }

    pub fn with_strict_shifts(mut self, strict: bool) -> Self {
        self.strict_shifts = strict;
        self
    }

    pub fn opcodes(&self) -> &[Opcode] {
        &self.opcodes
    }

    pub fn opcode(&self, index: u8) -> &Opcode {
        &self.opcodes[index as usize]
    }

    /// Vocabulary size V (including `unused`).
    pub fn vocab_size(&self) -> usize {
        self.opcodes.len()
    }

    /// Proposable vocabulary size V' (excluding `unused`).
    pub fn proposable_size(&self) -> usize {
        self.opcodes.len() - 1
    }

    pub fn proposable_opcode(&self, k: usize) -> u8 {
        (k + 1) as u8
    }

    pub fn num_regs(&self) -> usize {
        self.num_regs
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn imm_pool(&self) -> &[u32] {
        &self.imm_pool
    }

    pub fn strict_shifts(&self) -> bool {
        self.strict_shifts
    }

    pub fn empty_program(&self) -> Program {
        Program::empty(self.slots)
    }

    pub fn lookup(&self, mnemonic: &str) -> Option<u8> {
        self.opcodes
            .iter()
            .position(|o| o.mnemonic == mnemonic)
            .map(|i| i as u8)
    }

    /// Number of values an operand of `kind` may take under the proposal.
    pub fn domain_size(&self, kind: OperandKind) -> usize {
        match kind {
            OperandKind::Dst | OperandKind::Src => self.num_regs,
            OperandKind::Imm => self.imm_pool.len(),
        }
    }

    /// The `i`-th value of an operand domain.
    pub fn domain_value(&self, kind: OperandKind, i: usize) -> u32 {
        match kind {
            OperandKind::Dst | OperandKind::Src => i as u32,
            OperandKind::Imm => self.imm_pool[i],
        }
    }

    pub fn in_domain(&self, kind: OperandKind, value: u32) -> bool {
        match kind {
            OperandKind::Dst | OperandKind::Src => (value as usize) < self.num_regs,
            OperandKind::Imm => self.imm_pool.contains(&value),
        }
    }

    pub fn validate_instruction(&self, slot: usize, insn: &Instruction) -> Result<(), IsaError> {
        let Some(op) = self.opcodes.get(insn.opcode as usize) else {
            return Err(IsaError::UnknownOpcode {
                slot,
                opcode: insn.opcode,
            });
        };
        if op.signature == Signature::Empty && insn.operands != [0, 0] {
            return Err(IsaError::DirtyUnused { slot });
        }
        let kinds = op.signature.kinds();
        for (i, &value) in insn.operands.iter().enumerate() {
            match kinds.get(i) {
                Some(OperandKind::Dst | OperandKind::Src) => {
                    if value as usize >= self.num_regs {
                        return Err(IsaError::RegisterOutOfRange {
                            slot,
                            reg: value,
                            max: self.num_regs - 1,
                        });
                    }
                }
                Some(OperandKind::Imm) => {}
                None if value != 0 => {
                    return Err(IsaError::StrayOperand { slot, operand: i });
                }
                None => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self, p: &Program) -> Result<(), IsaError> {
        if p.capacity() != self.slots {
            return Err(IsaError::Capacity {
                found: p.capacity(),
                expected: self.slots,
            });
        }
        p.slots()
            .iter()
            .enumerate()
            .try_for_each(|(slot, insn)| self.validate_instruction(slot, insn))
    }

    /// Sum of latencies of live slots.
    pub fn perf(&self, p: &Program) -> u32 {
        p.slots().iter().map(|i| self.opcodes[i.opcode as usize].latency).sum()
    }

    pub fn execute(&self, p: &Program, input: &MachineState) -> Result<MachineState, Fault> {
        let mut state = *input;
        self.execute_in_place(p, &mut state)?;
        Ok(state)
    }

    /// Runs `p` over `state`. On a fault the state is left partially updated.
    pub fn execute_in_place(&self, p: &Program, state: &mut MachineState) -> Result<(), Fault> {
        let regs = &mut state.regs;
        for (slot, insn) in p.slots().iter().enumerate() {
            let op = &self.opcodes[insn.opcode as usize];
            let d = insn.operands[0] as usize;
            let s = match op.signature {
                Signature::DstSrc => regs[insn.operands[1] as usize],
                Signature::DstImm => insn.operands[1],
                Signature::Dst | Signature::Empty => 0,
            };
            if self.strict_shifts && op.semantics.is_shift() && s >= 32 {
                return Err(Fault { slot });
            }
            let x = regs[d];
            regs[d] = match op.semantics {
                Semantics::Unused => continue,
                Semantics::Mov => s,
                Semantics::Add => x.wrapping_add(s),
                Semantics::Sub => x.wrapping_sub(s),
                Semantics::And => x & s,
                Semantics::Andn => x & !s,
                Semantics::Or => x | s,
                Semantics::Xor => x ^ s,
                Semantics::Not => !x,
                Semantics::Neg => x.wrapping_neg(),
                Semantics::Inc => x.wrapping_add(1),
                Semantics::Dec => x.wrapping_sub(1),
                Semantics::Shl => x << (s & 31),
                Semantics::Shr => x >> (s & 31),
                Semantics::Sar => ((x as i32) >> (s & 31)) as u32,
                Semantics::Rol => x.rotate_left(s & 31),
                Semantics::Ror => x.rotate_right(s & 31),
                Semantics::Mul => x.wrapping_mul(s),
                Semantics::MulHu => ((x as u64 * s as u64) >> 32) as u32,
                Semantics::Popcnt => s.count_ones(),
                Semantics::Lzcnt => s.leading_zeros(),
                Semantics::Tzcnt => s.trailing_zeros(),
                Semantics::MinU => x.min(s),
                Semantics::MaxU => x.max(s),
                Semantics::MinS => (x as i32).min(s as i32) as u32,
                Semantics::MaxS => (x as i32).max(s as i32) as u32,
                Semantics::CmovZ => {
                    if x == 0 {
                        s
                    } else {
                        x
                    }
                }
                Semantics::CmovNz => {
                    if x != 0 {
                        s
                    } else {
                        x
                    }
                }
            };
        }
        Ok(())
    }

    /// Bitmask of registers written by live instructions.
    pub fn written_registers(&self, p: &Program) -> u8 {
        p.live().fold(0u8, |mask, insn| mask | 1 << insn.operands[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prog(isa: &Isa, text: &str) -> Program {
        crate::asm::parse(isa, text).unwrap()
    }

    #[test]
    fn empty_program_is_identity() {
        let isa = Isa::standard();
        let input = MachineState::default().with(0, 7);
        let out = isa.execute(&isa.empty_program(), &input).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn clear_lowest_set_bit() {
        let isa = Isa::standard();
        let p = prog(&isa, "mov r1, r0\ndec r1\nand r0, r1");
        for x in [88u32, 1, 0, 0x8000_0000, 0xffff_ffff, 12345] {
            let out = isa.execute(&p, &MachineState::default().with(0, x)).unwrap();
            assert_eq!(out.regs[0], x & x.wrapping_sub(1), "x = {x}");
        }
        let out = isa.execute(&p, &MachineState::default().with(0, 88)).unwrap();
        assert_eq!(out.regs[0], 80);
    }

    #[test]
    fn self_xor_clears_only_target() {
        let isa = Isa::standard();
        let p = prog(&isa, "xor r0, r0");
        let input = MachineState::new([9, 8, 7, 6, 5, 4, 3, 2]);
        let out = isa.execute(&p, &input).unwrap();
        assert_eq!(out.regs, [0, 8, 7, 6, 5, 4, 3, 2]);
    }

    #[test]
    fn perf_sums_latencies() {
        let isa = Isa::standard();
        assert_eq!(isa.perf(&isa.empty_program()), 0);
        assert_eq!(isa.perf(&prog(&isa, "inc r0")), 1);
        assert_eq!(isa.perf(&prog(&isa, "mov r1, r0\nmul r1, r2\nand r0, r1")), 5);
    }

    #[test]
    fn latency_table() {
        let isa = Isa::standard();
        for op in isa.opcodes() {
            match op.semantics {
                Semantics::Unused => assert_eq!(op.latency, 0),
                Semantics::Popcnt
                | Semantics::Lzcnt
                | Semantics::Tzcnt
                | Semantics::MinU
                | Semantics::MaxU
                | Semantics::MinS
                | Semantics::MaxS
                | Semantics::CmovZ
                | Semantics::CmovNz
                | Semantics::Mul
                | Semantics::MulHu => assert_eq!(op.latency, 3, "{}", op.mnemonic),
                _ => assert_eq!(op.latency, 1, "{}", op.mnemonic),
            }
            assert!(op.signature.arity() <= 2);
        }
        assert_eq!(isa.opcode(UNUSED).mnemonic, "unused");
    }

    #[test]
    fn shifts_mask_or_fault() {
        let isa = Isa::standard();
        let p = prog(&isa, "shl r0, r1");
        let input = MachineState::default().with(0, 1).with(1, 33);
        assert_eq!(isa.execute(&p, &input).unwrap().regs[0], 2);

        let strict = Isa::standard().with_strict_shifts(true);
        let p = prog(&strict, "inc r2\nshl r0, r1");
        assert_eq!(strict.execute(&p, &input), Err(Fault { slot: 1 }));
        let ok = input.with(1, 31);
        assert_eq!(strict.execute(&p, &ok).unwrap().regs[0], 1 << 31);
    }

    #[test]
    fn conditional_moves_test_destination() {
        let isa = Isa::standard();
        let p = prog(&isa, "cmovnz r0, r1\ncmovz r2, r1");
        let out = isa
            .execute(&p, &MachineState::default().with(0, 5).with(1, 1).with(2, 0))
            .unwrap();
        assert_eq!(out.regs[0], 1);
        assert_eq!(out.regs[2], 1);
        let out = isa
            .execute(&p, &MachineState::default().with(0, 0).with(1, 1).with(2, 4))
            .unwrap();
        assert_eq!(out.regs[0], 0);
        assert_eq!(out.regs[2], 4);
    }

    #[test]
    fn validation_rejects_bad_registers() {
        let isa = Isa::mini();
        let mut p = isa.empty_program();
        p.set(0, Instruction::new(1, [0, 2]));
        assert!(matches!(
            isa.validate(&p),
            Err(IsaError::RegisterOutOfRange { slot: 0, reg: 2, .. })
        ));
        p.set(0, Instruction::new(9, [0, 0]));
        assert!(matches!(isa.validate(&p), Err(IsaError::UnknownOpcode { .. })));
    }

    #[test]
    fn compact_preserves_semantics() {
        let isa = Isa::standard();
        let mut p = isa.empty_program();
        p.set(3, Instruction::new(isa.lookup("inc").unwrap(), [0, 0]));
        p.set(7, Instruction::new(isa.lookup("shli").unwrap(), [0, 4]));
        let c = p.compact();
        assert_eq!(c.get(0).opcode, isa.lookup("inc").unwrap());
        let input = MachineState::default().with(0, 3);
        assert_eq!(isa.execute(&p, &input), isa.execute(&c, &input));
        assert_eq!(isa.perf(&p), isa.perf(&c));
    }
}
