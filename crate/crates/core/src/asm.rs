//! Assembly-like text format for programs.
//!
//! ```text
//! .slots 12 .regs 8
//! # clear the lowest set bit
//! mov r1, r0
//! dec r1
//! and r0, r1
//! ```
//!
//! Unused slots are not written; parsing places instructions in the leading
//! slots, so `parse(render(p)) == p.compact()`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::isa::{Instruction, Isa, OperandKind, Program};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("`{mnemonic}` takes {expected} operand(s), found {found}")]
    Arity {
        mnemonic: String,
        expected: usize,
        found: usize,
    },
    #[error("register `{0}` out of range r0..r{1}")]
    RegisterRange(String, usize),
    #[error("expected a register, found `{0}`")]
    ExpectedRegister(String),
    #[error("invalid immediate `{0}`")]
    BadImmediate(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("header declares {found} {what}, ISA has {expected}")]
    HeaderMismatch {
        what: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("more than {0} instructions")]
    TooLong(usize),
}

fn err(line: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { line, kind }
}

pub fn header(isa: &Isa) -> String {
    format!(".slots {} .regs {}", isa.slots(), isa.num_regs())
}

fn parse_header(isa: &Isa, line_no: usize, body: &str) -> Result<(), ParseError> {
    let toks: Vec<&str> = body.split_whitespace().collect();
    let mut i = 0;
    while i < toks.len() {
        let (what, expected) = match toks[i] {
            ".slots" => ("slots", isa.slots()),
            ".regs" => ("regs", isa.num_regs()),
            other => {
                return Err(err(
                    line_no,
                    ParseErrorKind::Header(format!("unknown directive `{other}`")),
                ))
            }
        };
        let value: usize = toks
            .get(i + 1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(line_no, ParseErrorKind::Header(format!("missing value for {what}"))))?;
        if value != expected {
            return Err(err(
                line_no,
                ParseErrorKind::HeaderMismatch {
                    what,
                    found: value,
                    expected,
                },
            ));
        }
        i += 2;
    }
    Ok(())
}

fn parse_register(isa: &Isa, line: usize, tok: &str) -> Result<u32, ParseError> {
    let idx = tok
        .strip_prefix('r')
        .and_then(|n| n.parse::<u32>().ok())
        .ok_or_else(|| err(line, ParseErrorKind::ExpectedRegister(tok.to_string())))?;
    if idx as usize >= isa.num_regs() {
        return Err(err(
            line,
            ParseErrorKind::RegisterRange(tok.to_string(), isa.num_regs() - 1),
        ));
    }
    Ok(idx)
}

fn parse_immediate(line: usize, tok: &str) -> Result<u32, ParseError> {
    let bad = || err(line, ParseErrorKind::BadImmediate(tok.to_string()));
    if let Some(hex) = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
        u32::from_str_radix(hex, 16).map_err(|_| bad())
    } else if let Some(neg) = tok.strip_prefix('-') {
        let v: u32 = neg.parse().map_err(|_| bad())?;
        if v > 1 << 31 {
            return Err(bad());
        }
        Ok(v.wrapping_neg())
    } else {
        tok.parse().map_err(|_| bad())
    }
}

pub fn parse(isa: &Isa, text: &str) -> Result<Program, ParseError> {
    let mut program = isa.empty_program();
    let mut next = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('.') {
            parse_header(isa, line_no, line)?;
            continue;
        }
        let (mnemonic, rest) = match line.split_once(char::is_whitespace) {
            Some((m, r)) => (m, r.trim()),
            None => (line, ""),
        };
        let mnemonic = mnemonic.to_ascii_lowercase();
        let opcode = isa
            .lookup(&mnemonic)
            .filter(|&op| op != crate::isa::UNUSED)
            .ok_or_else(|| err(line_no, ParseErrorKind::UnknownMnemonic(mnemonic.clone())))?;
        let operands: Vec<&str> = if rest.is_empty() {
            Vec::new()
        } else {
            rest.split(',').map(str::trim).collect()
        };
        let kinds = isa.opcode(opcode).signature.kinds();
        if operands.len() != kinds.len() {
            return Err(err(
                line_no,
                ParseErrorKind::Arity {
                    mnemonic,
                    expected: kinds.len(),
                    found: operands.len(),
                },
            ));
        }
        let mut values = [0u32; 2];
        for (slot, (&kind, tok)) in kinds.iter().zip(&operands).enumerate() {
            values[slot] = match kind {
                OperandKind::Dst | OperandKind::Src => parse_register(isa, line_no, tok)?,
                OperandKind::Imm => parse_immediate(line_no, tok)?,
            };
        }
        if next >= isa.slots() {
            return Err(err(line_no, ParseErrorKind::TooLong(isa.slots())));
        }
        program.set(next, Instruction::new(opcode, values));
        next += 1;
    }
    Ok(program)
}

fn render_imm(v: u32) -> String {
    if v < 0x100 {
        v.to_string()
    } else {
        format!("{v:#x}")
    }
}

pub fn render_instruction(isa: &Isa, insn: &Instruction) -> String {
    let op = isa.opcode(insn.opcode);
    let mut out = op.mnemonic.to_string();
    for (i, &kind) in op.signature.kinds().iter().enumerate() {
        out.push_str(if i == 0 { " " } else { ", " });
        match kind {
            OperandKind::Dst | OperandKind::Src => {
                let _ = write!(out, "r{}", insn.operands[i]);
            }
            OperandKind::Imm => out.push_str(&render_imm(insn.operands[i])),
        }
    }
    out
}

/// Canonical text: header line, then one live instruction per line.
pub fn render(isa: &Isa, p: &Program) -> String {
    let mut out = header(isa);
    out.push('\n');
    for insn in p.live() {
        out.push_str(&render_instruction(isa, insn));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::Signature;

    #[test]
    fn empty_body_is_all_unused() {
        let isa = Isa::standard();
        assert_eq!(parse(&isa, "").unwrap(), isa.empty_program());
        assert_eq!(
            parse(&isa, ".slots 12 .regs 8\n# nothing\n\n").unwrap(),
            isa.empty_program()
        );
    }

    #[test]
    fn rejects_out_of_range_register() {
        let isa = Isa::standard();
        let e = parse(&isa, "and r0, r9").unwrap_err();
        assert_eq!(e.line, 1);
        assert!(matches!(e.kind, ParseErrorKind::RegisterRange(ref r, 7) if r == "r9"));
        assert!(e.to_string().contains("r0..r7"));
    }

    #[test]
    fn reports_line_numbers() {
        let isa = Isa::standard();
        let e = parse(&isa, "inc r0\n\nfrob r1").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(matches!(e.kind, ParseErrorKind::UnknownMnemonic(_)));
        let e = parse(&isa, "inc r0, r1").unwrap_err();
        assert!(matches!(
            e.kind,
            ParseErrorKind::Arity {
                expected: 1,
                found: 2,
                ..
            }
        ));
        let e = parse(&isa, "unused").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::UnknownMnemonic(_)));
        let e = parse(&isa, ".slots 4 .regs 8").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::HeaderMismatch { what: "slots", .. }));
    }

    #[test]
    fn too_many_instructions() {
        let isa = Isa::standard().with_slots(2);
        let e = parse(&isa, "inc r0\ninc r0\ninc r0").unwrap_err();
        assert_eq!(e.line, 3);
    }

    #[test]
    fn immediates() {
        let isa = Isa::standard();
        let p = parse(&isa, "movi r0, -1\naddi r1, 0x10\nandi r2, 255\nori r3, 256").unwrap();
        assert_eq!(p.get(0).operands[1], u32::MAX);
        assert_eq!(p.get(1).operands[1], 16);
        assert_eq!(p.get(2).operands[1], 255);
        assert_eq!(
            render(&isa, &p),
            ".slots 12 .regs 8\nmovi r0, 0xffffffff\naddi r1, 16\nandi r2, 255\nori r3, 0x100\n"
        );
    }

    #[test]
    fn canonical_form_of_every_opcode() {
        // One line per opcode, written sloppily, must render canonically and
        // re-parse to the same program.
        let isa = Isa::standard();
        for chunk in isa.opcodes()[1..].chunks(isa.slots()) {
            let mut sloppy = String::new();
            let mut canonical = header(&isa) + "\n";
            for (i, op) in chunk.iter().enumerate() {
                let reg = i % isa.num_regs();
                let (s, c) = match op.signature {
                    Signature::Dst => (
                        format!("{}   r{reg}", op.mnemonic.to_uppercase()),
                        format!("{} r{reg}", op.mnemonic),
                    ),
                    Signature::DstSrc => (
                        format!("{} r{reg},r{}", op.mnemonic, 7 - reg),
                        format!("{} r{reg}, r{}", op.mnemonic, 7 - reg),
                    ),
                    Signature::DstImm => (
                        format!("{} r{reg} ,  0x1F # comment", op.mnemonic),
                        format!("{} r{reg}, 31", op.mnemonic),
                    ),
                    Signature::Empty => unreachable!(),
                };
                sloppy.push_str(&s);
                sloppy.push('\n');
                canonical.push_str(&c);
                canonical.push('\n');
            }
            let p = parse(&isa, &sloppy).unwrap();
            assert_eq!(render(&isa, &p), canonical);
            assert_eq!(parse(&isa, &canonical).unwrap(), p);
        }
    }
}
