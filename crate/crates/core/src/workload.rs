//! The benchmark program and its binary image format.
//!
//! The program has a setup phase (clear the data bank, reset the fault
//! counters, enable scrubbing) that ends with a write to the start marker,
//! followed by the measured application: a UART message, a data kernel mixing
//! multiplies, byte stores and loads, GPIO activity and an interrupt-driven
//! timer delay. It finishes by writing `DONE | error_count` to the return
//! value register and halting.

use std::path::Path;

use thiserror::Error;

use crate::cpu::IRQ_VECTOR;
use crate::interconnect::{BANK1_BASE, BANK_BYTES, PERIPH_BASE};
use crate::isa::{AluFunct, AsmError, Assembler, Reg, R0};
use crate::memory::BANK_WORDS;
use crate::peripherals::*;

/// Set in the return value when the program has finished.
pub const DONE: u32 = 0x8000_0000;

const MAGIC: &[u8; 4] = b"FTWL";

/// Words in the kernel's data array (in the data bank).
pub const KERNEL_WORDS: u32 = 32;
pub const KERNEL_BASE: u32 = BANK1_BASE + 0x100;
pub const KERNEL_SEED: u32 = 0x1234_5678;
const LCG_MUL: u32 = 1_103_515_245;
const LCG_ADD: i32 = 12_345;
const CRC_POLY: u32 = 0xEDB8_8320;
/// CRC rounds per word.
const CRC_ROUNDS: i32 = 8;
/// Timer delay in cycles.
pub const TIMER_DELAY: u32 = 800;
pub const MESSAGE: &str = "ftsoc ok\n";
pub const GPIO_PATTERN: u32 = 0xA5A5_5A5A;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Workload {
    pub entry: u32,
    /// Image loaded at address 0.
    pub words: Vec<u32>,
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("bad magic, not a workload image")]
    BadMagic,
    #[error("image truncated: header says {expected} words, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image has trailing bytes")]
    Trailing,
    #[error("image of {0} words does not fit the instruction bank")]
    TooLarge(usize),
    #[error("entry point {0:#x} is misaligned or outside the image")]
    BadEntry(u32),
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reference results of the data kernel, computed directly.
pub fn kernel_reference() -> (u32, u32) {
    let mut a = [0u32; KERNEL_WORDS as usize];
    let mut x = KERNEL_SEED;
    for w in a.iter_mut() {
        x = x.wrapping_mul(LCG_MUL).wrapping_add(LCG_ADD as u32);
        *w = x;
    }
    for (i, w) in a.iter_mut().enumerate() {
        let lane = i % 4;
        let byte = (i as u32).wrapping_mul(7) & 0xff;
        *w = (*w & !(0xff << (lane * 8))) | (byte << (lane * 8));
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &w in &a {
        crc ^= w;
        for _ in 0..CRC_ROUNDS {
            let m = 0u32.wrapping_sub(crc & 1) & CRC_POLY;
            crc = (crc >> 1) ^ m;
        }
    }
    // 4x4 product of the first two 4x4 blocks, summed.
    let mut sum = 0u32;
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = 0u32;
            for k in 0..4 {
                acc = acc.wrapping_add(a[4 * i + k].wrapping_mul(a[16 + 4 * k + j]));
            }
            sum = sum.wrapping_add(acc);
        }
    }
    (crc, sum)
}

fn r(i: u8) -> Reg {
    Reg(i)
}

/// Assembles the benchmark.
///
/// Register use: r1 peripheral base, r13 interrupt flag, r15 link,
/// everything else scratch.
pub fn build() -> Result<Workload, WorkloadError> {
    let (crc_ref, sum_ref) = kernel_reference();
    let p = |o: u32| o as i32;
    let mut a = Assembler::new();
    a.j("main");

    a.org(IRQ_VECTOR).label("isr");
    a.sw(R0, p(TIMER_ACK), r(1)).sw(R0, p(TIMER_CTRL), r(1)).addi(r(13), R0, 1).mret();

    // putc(r7): wait for the transmitter, then send.
    a.label("putc").lw(r(8), p(UART_STATUS), r(1)).bne(r(8), R0, "putc");
    a.sw(r(7), p(UART_TX), r(1)).jalr(R0, r(15), 0);

    // puts(r5): packed little-endian string, NUL terminated.
    a.label("puts").addi(r(12), r(15), 0);
    a.label("puts_w").lw(r(6), 0, r(5)).addi(r(9), R0, 4);
    a.label("puts_b").andi(r(7), r(6), 0xff).beq(r(7), R0, "puts_end");
    a.jal(r(15), "putc").srli(r(6), r(6), 8).addi(r(9), r(9), -1).bne(r(9), R0, "puts_b");
    a.addi(r(5), r(5), 4).j("puts_w");
    a.label("puts_end").jalr(R0, r(12), 0);

    // Setup.
    a.label("main").li(r(1), PERIPH_BASE);
    a.li(r(2), BANK1_BASE).li(r(3), BANK1_BASE + BANK_BYTES);
    a.label("clear").sw(R0, 0, r(2)).addi(r(2), r(2), 4).bne(r(2), r(3), "clear");
    a.sw(R0, p(MON_CLEAR), r(1));
    a.addi(r(4), R0, 1).sw(r(4), p(CTRL_SCRUB), r(1)).sw(r(4), p(CTRL_START), r(1));

    // Message.
    a.la(r(5), "msg").jal(r(15), "puts");

    // Kernel: fill.
    a.li(r(2), KERNEL_BASE).addi(r(3), R0, KERNEL_WORDS as i32);
    a.li(r(4), KERNEL_SEED).li(r(5), LCG_MUL);
    a.label("fill").mul(r(4), r(4), r(5)).addi(r(4), r(4), LCG_ADD).sw(r(4), 0, r(2));
    a.addi(r(2), r(2), 4).addi(r(3), r(3), -1).bne(r(3), R0, "fill");

    // Kernel: byte patch, one lane per word.
    a.li(r(2), KERNEL_BASE).addi(r(3), R0, 0).addi(r(10), R0, KERNEL_WORDS as i32);
    a.label("patch").andi(r(7), r(3), 3).add(r(8), r(2), r(7));
    a.slli(r(9), r(3), 3).alu(AluFunct::Sub, r(9), r(9), r(3)).sb(r(9), 0, r(8));
    a.addi(r(2), r(2), 4).addi(r(3), r(3), 1).bne(r(3), r(10), "patch");

    // Kernel: CRC.
    a.li(r(2), KERNEL_BASE).addi(r(3), R0, KERNEL_WORDS as i32);
    a.li(r(4), 0xFFFF_FFFF).li(r(5), CRC_POLY);
    a.label("crc_w").lw(r(6), 0, r(2)).xor(r(4), r(4), r(6)).addi(r(7), R0, CRC_ROUNDS);
    a.label("crc_b").andi(r(8), r(4), 1).sub(r(8), R0, r(8)).alu(AluFunct::And, r(8), r(8), r(5));
    a.srli(r(4), r(4), 1).xor(r(4), r(4), r(8)).addi(r(7), r(7), -1).bne(r(7), R0, "crc_b");
    a.addi(r(2), r(2), 4).addi(r(3), r(3), -1).bne(r(3), R0, "crc_w");
    a.addi(r(14), r(4), 0);

    // Kernel: 4x4 matrix product, summed. r2 = &A[4i], r3 = j, r6 = sum.
    a.li(r(2), KERNEL_BASE).addi(r(6), R0, 0).addi(r(11), R0, 4);
    a.label("mi").addi(r(3), R0, 0);
    a.label("mj").addi(r(5), R0, 0).addi(r(4), R0, 0);
    // r7 = &A[4i + k], r8 = &A[16 + 4k + j]
    a.addi(r(7), r(2), 0).slli(r(8), r(3), 2).li(r(9), KERNEL_BASE + 64).add(r(8), r(8), r(9));
    a.label("mk").lw(r(9), 0, r(7)).lw(r(10), 0, r(8)).mul(r(9), r(9), r(10)).add(r(5), r(5), r(9));
    a.addi(r(7), r(7), 4).addi(r(8), r(8), 16).addi(r(4), r(4), 1).bne(r(4), r(11), "mk");
    a.add(r(6), r(6), r(5)).addi(r(3), r(3), 1).bne(r(3), r(11), "mj");
    a.addi(r(2), r(2), 16).li(r(9), KERNEL_BASE + 64).bne(r(2), r(9), "mi");

    // Check results; r12 = error count.
    a.addi(r(12), R0, 0).li(r(9), crc_ref).beq(r(14), r(9), "crc_ok").addi(r(12), r(12), 1);
    a.label("crc_ok").li(r(9), sum_ref).beq(r(6), r(9), "sum_ok").addi(r(12), r(12), 1);
    a.label("sum_ok");

    // GPIO activity.
    a.li(r(8), GPIO_PATTERN).sw(r(8), p(GPIO_OUT), r(1));
    a.xori(r(8), r(8), -1).sw(r(8), p(GPIO_OUT), r(1));
    a.sw(r(12), p(GPIO_OUT), r(1));

    // Timer delay, woken by interrupt.
    a.sw(R0, p(TIMER_CNT), r(1)).li(r(10), TIMER_DELAY).sw(r(10), p(TIMER_CMP), r(1));
    a.addi(r(13), R0, 0).addi(r(11), R0, 1).irq_enable(r(11));
    a.addi(r(11), R0, 3).sw(r(11), p(TIMER_CTRL), r(1));
    a.label("wait").wfi().beq(r(13), R0, "wait");
    a.irq_enable(R0);

    // Report and stop.
    a.li(r(9), DONE).alu(AluFunct::Or, r(12), r(12), r(9)).sw(r(12), p(CTRL_RETVAL), r(1));
    a.halt();

    a.label("msg");
    let bytes: Vec<u8> = MESSAGE.bytes().chain(std::iter::once(0)).collect();
    for chunk in bytes.chunks(4) {
        let mut w = [0u8; 4];
        w[..chunk.len()].copy_from_slice(chunk);
        a.word(u32::from_le_bytes(w));
    }
    let words = a.finish()?;
    let wl = Workload { entry: 0, words };
    wl.validate()?;
    Ok(wl)
}

impl Workload {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.words.len() > BANK_WORDS {
            return Err(WorkloadError::TooLarge(self.words.len()));
        }
        if self.entry & 3 != 0 || self.entry as usize / 4 >= self.words.len() {
            return Err(WorkloadError::BadEntry(self.entry));
        }
        Ok(())
    }

    /// `FTWL`, entry (u32 LE), word count (u32 LE), words (u32 LE).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.words.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.entry.to_le_bytes());
        out.extend_from_slice(&(self.words.len() as u32).to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WorkloadError> {
        if b.len() < 12 || &b[..4] != MAGIC {
            return Err(WorkloadError::BadMagic);
        }
        let entry = u32::from_le_bytes(b[4..8].try_into().unwrap());
        let n = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        let body = &b[12..];
        if body.len() < n * 4 {
            return Err(WorkloadError::Truncated { expected: n, found: body.len() / 4 });
        }
        if body.len() > n * 4 {
            return Err(WorkloadError::Trailing);
        }
        let words = body.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        let wl = Workload { entry, words };
        wl.validate()?;
        Ok(wl)
    }

    pub fn load(path: &Path) -> Result<Self, WorkloadError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), WorkloadError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_and_fits() {
        let w = build().unwrap();
        assert!(w.words.len() < 400, "{}", w.words.len());
    }

    #[test]
    fn binary_round_trip() {
        let w = build().unwrap();
        assert_eq!(Workload::from_bytes(&w.to_bytes()).unwrap(), w);
    }

    #[test]
    fn rejects_bad_images() {
        let w = build().unwrap();
        let mut b = w.to_bytes();
        b[0] = b'X';
        assert!(matches!(Workload::from_bytes(&b), Err(WorkloadError::BadMagic)));
        let b = w.to_bytes();
        assert!(matches!(Workload::from_bytes(&b[..b.len() - 4]), Err(WorkloadError::Truncated { .. })));
        let mut b = w.to_bytes();
        b.push(0);
        assert!(matches!(Workload::from_bytes(&b), Err(WorkloadError::Trailing)));
        let bad = Workload { entry: 2, words: vec![0; 4] };
        assert!(matches!(bad.validate(), Err(WorkloadError::BadEntry(2))));
    }

    #[test]
    fn reference_is_stable() {
        assert_eq!(kernel_reference(), kernel_reference());
    }
}
