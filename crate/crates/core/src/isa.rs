//! Instruction encoding for the reduced load/store core and a small
//! label-resolving assembler used to build workloads.
//!
//! Layout: `op[31:26] a[25:22] b[21:18] c[17:14]`, with an 18-bit signed
//! immediate in `[17:0]` (22-bit for `LUI`/`JAL`, taken from `[21:0]`).

use std::collections::HashMap;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    Addi = 0x01,
    Andi = 0x02,
    Ori = 0x03,
    Xori = 0x04,
    Slli = 0x05,
    Srli = 0x06,
    Lui = 0x07,
    Alu = 0x08,
    Lw = 0x09,
    Sw = 0x0A,
    Sb = 0x0B,
    Beq = 0x0C,
    Bne = 0x0D,
    Bltu = 0x0E,
    Jal = 0x0F,
    Jalr = 0x10,
    Sys = 0x11,
}

impl Opcode {
    pub fn from_bits(op: u32) -> Option<Opcode> {
        use Opcode::*;
        Some(match op {
            0x01 => Addi,
            0x02 => Andi,
            0x03 => Ori,
            0x04 => Xori,
            0x05 => Slli,
            0x06 => Srli,
            0x07 => Lui,
            0x08 => Alu,
            0x09 => Lw,
            0x0A => Sw,
            0x0B => Sb,
            0x0C => Beq,
            0x0D => Bne,
            0x0E => Bltu,
            0x0F => Jal,
            0x10 => Jalr,
            0x11 => Sys,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum AluFunct {
    Add = 0,
    Sub = 1,
    And = 2,
    Or = 3,
    Xor = 4,
    Sll = 5,
    Srl = 6,
    Sltu = 7,
    Mul = 8,
}

impl AluFunct {
    pub fn from_bits(f: u32) -> Option<AluFunct> {
        use AluFunct::*;
        Some(match f {
            0 => Add,
            1 => Sub,
            2 => And,
            3 => Or,
            4 => Xor,
            5 => Sll,
            6 => Srl,
            7 => Sltu,
            8 => Mul,
            _ => return None,
        })
    }

    pub fn apply(self, a: u32, b: u32) -> u32 {
        match self {
            AluFunct::Add => a.wrapping_add(b),
            AluFunct::Sub => a.wrapping_sub(b),
            AluFunct::And => a & b,
            AluFunct::Or => a | b,
            AluFunct::Xor => a ^ b,
            AluFunct::Sll => a.wrapping_shl(b & 31),
            AluFunct::Srl => a.wrapping_shr(b & 31),
            AluFunct::Sltu => (a < b) as u32,
            AluFunct::Mul => a.wrapping_mul(b),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum SysFunct {
    Wfi = 0,
    Mret = 1,
    Halt = 2,
    IrqEnable = 3,
}

impl SysFunct {
    pub fn from_bits(f: u32) -> Option<SysFunct> {
        Some(match f {
            0 => SysFunct::Wfi,
            1 => SysFunct::Mret,
            2 => SysFunct::Halt,
            3 => SysFunct::IrqEnable,
            _ => return None,
        })
    }
}

/// Decoded instruction fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fields {
    pub op: u32,
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub imm18: i32,
    pub imm22: i32,
    pub funct: u32,
}

pub fn fields(word: u32) -> Fields {
    Fields {
        op: word >> 26,
        a: ((word >> 22) & 0xf) as usize,
        b: ((word >> 18) & 0xf) as usize,
        c: ((word >> 14) & 0xf) as usize,
        imm18: ((word << 14) as i32) >> 14,
        imm22: ((word << 10) as i32) >> 10,
        funct: word & 0xf,
    }
}

/// Register index newtype, r0 reads as zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Reg(pub u8);

pub const R0: Reg = Reg(0);

fn enc_i(op: Opcode, a: u8, b: u8, imm: i32) -> u32 {
    ((op as u32) << 26) | ((a as u32 & 0xf) << 22) | ((b as u32 & 0xf) << 18) | (imm as u32 & 0x3_ffff)
}

fn enc_r(op: Opcode, a: u8, b: u8, c: u8, funct: u32) -> u32 {
    ((op as u32) << 26)
        | ((a as u32 & 0xf) << 22)
        | ((b as u32 & 0xf) << 18)
        | ((c as u32 & 0xf) << 14)
        | (funct & 0xf)
}

fn enc_u(op: Opcode, a: u8, imm: i32) -> u32 {
    ((op as u32) << 26) | ((a as u32 & 0xf) << 22) | (imm as u32 & 0x3f_ffff)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AsmError {
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("immediate {value} out of range for {what}")]
    ImmediateRange { what: &'static str, value: i64 },
    #[error("cannot move location counter backwards to {0:#x}")]
    Backwards(u32),
}

enum Fixup {
    Branch { at: usize, label: String },
    Jal { at: usize, label: String },
    Addr { at_lui: usize, label: String },
}

/// A minimal two-pass assembler: instructions are appended in order, labels
/// are resolved by `finish`.
pub struct Assembler {
    words: Vec<u32>,
    labels: HashMap<String, u32>,
    fixups: Vec<Fixup>,
    errors: Vec<AsmError>,
}

impl Default for Assembler {
    fn default() -> Self {
        Self::new()
    }
}

impl Assembler {
    pub fn new() -> Self {
        Assembler { words: Vec::new(), labels: HashMap::new(), fixups: Vec::new(), errors: Vec::new() }
    }

    pub fn here(&self) -> u32 {
        (self.words.len() * 4) as u32
    }

    pub fn label(&mut self, name: &str) -> &mut Self {
        if self.labels.insert(name.to_string(), self.here()).is_some() {
            self.errors.push(AsmError::DuplicateLabel(name.to_string()));
        }
        self
    }

    /// Pads with zero words up to byte address `addr`.
    pub fn org(&mut self, addr: u32) -> &mut Self {
        if addr < self.here() {
            self.errors.push(AsmError::Backwards(addr));
        }
        while self.here() < addr {
            self.words.push(0);
        }
        self
    }

    pub fn word(&mut self, w: u32) -> &mut Self {
        self.words.push(w);
        self
    }

    fn check(&mut self, what: &'static str, v: i64, bits: u32) -> i32 {
        let lim = 1i64 << (bits - 1);
        if v < -lim || v >= lim {
            self.errors.push(AsmError::ImmediateRange { what, value: v });
        }
        v as i32
    }

    fn imm_op(&mut self, op: Opcode, rd: Reg, rs: Reg, imm: i32) -> &mut Self {
        let imm = self.check("imm18", imm as i64, 18);
        self.word(enc_i(op, rd.0, rs.0, imm))
    }

    pub fn addi(&mut self, rd: Reg, rs: Reg, imm: i32) -> &mut Self {
        self.imm_op(Opcode::Addi, rd, rs, imm)
    }
    pub fn andi(&mut self, rd: Reg, rs: Reg, imm: i32) -> &mut Self {
        self.imm_op(Opcode::Andi, rd, rs, imm)
    }
    pub fn ori(&mut self, rd: Reg, rs: Reg, imm: i32) -> &mut Self {
        self.imm_op(Opcode::Ori, rd, rs, imm)
    }
    pub fn xori(&mut self, rd: Reg, rs: Reg, imm: i32) -> &mut Self {
        self.imm_op(Opcode::Xori, rd, rs, imm)
    }
    pub fn slli(&mut self, rd: Reg, rs: Reg, sh: u32) -> &mut Self {
        self.imm_op(Opcode::Slli, rd, rs, (sh & 31) as i32)
    }
    pub fn srli(&mut self, rd: Reg, rs: Reg, sh: u32) -> &mut Self {
        self.imm_op(Opcode::Srli, rd, rs, (sh & 31) as i32)
    }
    /// rd = imm22 << 10
    pub fn lui(&mut self, rd: Reg, imm22: u32) -> &mut Self {
        self.word(enc_u(Opcode::Lui, rd.0, imm22 as i32))
    }

    /// Loads an arbitrary 32-bit constant (two instructions).
    pub fn li(&mut self, rd: Reg, value: u32) -> &mut Self {
        self.lui(rd, value >> 10);
        self.ori(rd, rd, (value & 0x3ff) as i32)
    }

    /// Loads the address of `label` (two instructions).
    pub fn la(&mut self, rd: Reg, label: &str) -> &mut Self {
        let at_lui = self.words.len();
        self.fixups.push(Fixup::Addr { at_lui, label: label.to_string() });
        self.lui(rd, 0);
        self.ori(rd, rd, 0)
    }

    pub fn alu(&mut self, f: AluFunct, rd: Reg, rs1: Reg, rs2: Reg) -> &mut Self {
        self.word(enc_r(Opcode::Alu, rd.0, rs1.0, rs2.0, f as u32))
    }
    pub fn add(&mut self, rd: Reg, a: Reg, b: Reg) -> &mut Self {
        self.alu(AluFunct::Add, rd, a, b)
    }
    pub fn sub(&mut self, rd: Reg, a: Reg, b: Reg) -> &mut Self {
        self.alu(AluFunct::Sub, rd, a, b)
    }
    pub fn xor(&mut self, rd: Reg, a: Reg, b: Reg) -> &mut Self {
        self.alu(AluFunct::Xor, rd, a, b)
    }
    pub fn mul(&mut self, rd: Reg, a: Reg, b: Reg) -> &mut Self {
        self.alu(AluFunct::Mul, rd, a, b)
    }

    pub fn lw(&mut self, rd: Reg, off: i32, base: Reg) -> &mut Self {
        self.imm_op(Opcode::Lw, rd, base, off)
    }
    pub fn sw(&mut self, src: Reg, off: i32, base: Reg) -> &mut Self {
        self.imm_op(Opcode::Sw, src, base, off)
    }
    pub fn sb(&mut self, src: Reg, off: i32, base: Reg) -> &mut Self {
        self.imm_op(Opcode::Sb, src, base, off)
    }

    fn branch(&mut self, op: Opcode, a: Reg, b: Reg, label: &str) -> &mut Self {
        let at = self.words.len();
        self.fixups.push(Fixup::Branch { at, label: label.to_string() });
        self.word(enc_i(op, a.0, b.0, 0))
    }
    pub fn beq(&mut self, a: Reg, b: Reg, label: &str) -> &mut Self {
        self.branch(Opcode::Beq, a, b, label)
    }
    pub fn bne(&mut self, a: Reg, b: Reg, label: &str) -> &mut Self {
        self.branch(Opcode::Bne, a, b, label)
    }
    pub fn bltu(&mut self, a: Reg, b: Reg, label: &str) -> &mut Self {
        self.branch(Opcode::Bltu, a, b, label)
    }

    pub fn jal(&mut self, rd: Reg, label: &str) -> &mut Self {
        let at = self.words.len();
        self.fixups.push(Fixup::Jal { at, label: label.to_string() });
        self.word(enc_u(Opcode::Jal, rd.0, 0))
    }
    pub fn j(&mut self, label: &str) -> &mut Self {
        self.jal(R0, label)
    }
    pub fn jalr(&mut self, rd: Reg, rs: Reg, off: i32) -> &mut Self {
        self.imm_op(Opcode::Jalr, rd, rs, off)
    }

    fn sys(&mut self, f: SysFunct, rs: Reg) -> &mut Self {
        self.word(enc_r(Opcode::Sys, 0, rs.0, 0, f as u32))
    }
    pub fn wfi(&mut self) -> &mut Self {
        self.sys(SysFunct::Wfi, R0)
    }
    pub fn mret(&mut self) -> &mut Self {
        self.sys(SysFunct::Mret, R0)
    }
    pub fn halt(&mut self) -> &mut Self {
        self.sys(SysFunct::Halt, R0)
    }
    pub fn irq_enable(&mut self, rs: Reg) -> &mut Self {
        self.sys(SysFunct::IrqEnable, rs)
    }

    pub fn finish(mut self) -> Result<Vec<u32>, AsmError> {
        for fix in std::mem::take(&mut self.fixups) {
            match fix {
                Fixup::Branch { at, label } => {
                    let target = self.resolve(&label)?;
                    let off = (target as i64 - (at as i64 * 4)) / 4;
                    let off = self.check("branch offset", off, 18);
                    self.words[at] |= off as u32 & 0x3_ffff;
                }
                Fixup::Jal { at, label } => {
                    let target = self.resolve(&label)?;
                    let off = (target as i64 - (at as i64 * 4)) / 4;
                    let off = self.check("jump offset", off, 22);
                    self.words[at] |= off as u32 & 0x3f_ffff;
                }
                Fixup::Addr { at_lui, label } => {
                    let target = self.resolve(&label)?;
                    self.words[at_lui] |= (target >> 10) & 0x3f_ffff;
                    self.words[at_lui + 1] |= target & 0x3ff;
                }
            }
        }
        if let Some(e) = self.errors.into_iter().next() {
            return Err(e);
        }
        Ok(self.words)
    }

    fn resolve(&self, label: &str) -> Result<u32, AsmError> {
        self.labels.get(label).copied().ok_or_else(|| AsmError::UndefinedLabel(label.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_extraction() {
        let w = enc_i(Opcode::Addi, 1, 2, -5);
        let f = fields(w);
        assert_eq!(f.op, Opcode::Addi as u32);
        assert_eq!((f.a, f.b, f.imm18), (1, 2, -5));
    }

    #[test]
    fn branch_fixup_backwards() {
        let mut a = Assembler::new();
        a.label("top").addi(Reg(1), Reg(1), 1).bne(Reg(1), R0, "top");
        let w = a.finish().unwrap();
        assert_eq!(fields(w[1]).imm18, -1);
    }

    #[test]
    fn undefined_label_is_error() {
        let mut a = Assembler::new();
        a.j("nowhere");
        assert_eq!(a.finish(), Err(AsmError::UndefinedLabel("nowhere".into())));
    }

    #[test]
    fn immediate_range_checked() {
        let mut a = Assembler::new();
        a.addi(Reg(1), R0, 1 << 20);
        assert!(matches!(a.finish(), Err(AsmError::ImmediateRange { .. })));
    }

    #[test]
    fn illegal_all_ones() {
        assert_eq!(Opcode::from_bits(fields(0xFFFF_FFFF).op), None);
        assert_eq!(Opcode::from_bits(0), None);
    }
}
