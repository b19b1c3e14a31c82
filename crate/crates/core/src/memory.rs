//! SRAM banks, byte-wise read-modify-write, read monitoring and scrubbing.

use std::fmt::Write as _;

use crate::ecc::{self, Codeword39, DecodeStatus};
use crate::redundancy::vote3;
use crate::register_bank;
use crate::signals::{Signal, Taps};

pub const BANK_WORDS: usize = 2048;
pub const INDEX_BITS: u32 = 11;
/// Depth of the queue of corrected-read write-backs.
pub const FIX_QUEUE_DEPTH: usize = 2;

/// What a bank stores per word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StorageMode {
    /// Plain 32-bit words.
    Raw,
    /// 39-bit codewords, encoded and decoded at the bank.
    Ecc,
    /// 39-bit codewords exchanged verbatim with the bus.
    Overlap,
    /// Three 32-bit replicas, voted on read.
    Triplicated,
}

impl StorageMode {
    pub fn has_ecc(self) -> bool {
        matches!(self, StorageMode::Ecc | StorageMode::Overlap)
    }

    pub fn replicas(self) -> usize {
        if self == StorageMode::Triplicated {
            3
        } else {
            1
        }
    }

    pub fn cell_bits(self) -> u32 {
        if self.has_ecc() {
            ecc::CODEWORD_BITS
        } else {
            32
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SramBank {
    pub mode: StorageMode,
    /// `BANK_WORDS * replicas` cells; replica `r` of word `i` is at `r * BANK_WORDS + i`.
    pub cells: Vec<u64>,
}

register_bank! {
    /// Per-bank control state: RMW stall, read-fix queue and scrubber.
    pub struct BankCtl {
        stall: 1, fix0: 12, fix1: 12, scrub_idx: 11, scrub_ctr: 16,
    }
}

const FIX_VALID: u64 = 1 << INDEX_BITS;

impl BankCtl {
    fn push_fix(&mut self, idx: u32, dropped: &mut u64) {
        let entry = FIX_VALID | idx as u64;
        if self.fix0() & FIX_VALID == 0 {
            self.set_fix0(entry);
        } else if self.fix1() & FIX_VALID == 0 {
            self.set_fix1(entry);
        } else {
            // Full: drop the oldest.
            *dropped += 1;
            self.set_fix0(self.fix1());
            self.set_fix1(entry);
        }
    }

    fn pop_fix(&mut self) -> Option<u32> {
        let head = self.fix0();
        if head & FIX_VALID == 0 {
            return None;
        }
        self.set_fix0(self.fix1());
        self.set_fix1(0);
        Some((head & (BANK_WORDS as u64 - 1)) as u32)
    }

    pub fn pending_fixes(&self) -> usize {
        (self.fix0() & FIX_VALID != 0) as usize + (self.fix1() & FIX_VALID != 0) as usize
    }
}

/// Payload on the bank's write port.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WritePayload {
    Raw(u32),
    Code(Codeword39),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MemEvents {
    pub corrected: bool,
    pub uncorrectable: bool,
    pub tmr_mismatch: bool,
    pub dropped_fixes: u64,
}

impl MemEvents {
    pub fn merge(&mut self, o: MemEvents) {
        self.corrected |= o.corrected;
        self.uncorrectable |= o.uncorrectable;
        self.tmr_mismatch |= o.tmr_mismatch;
        self.dropped_fixes += o.dropped_fixes;
    }
}

/// Bank-side logic wiring for one configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BankWiring {
    pub bank: u8,
    /// Replicas of the RMW/scrub logic (3 when triplicated, else 1).
    pub logic_replicas: u8,
}

#[inline]
pub fn byte_mask(be: u8) -> u32 {
    let mut m = 0u32;
    for lane in 0..4 {
        if be & (1 << lane) != 0 {
            m |= 0xff << (lane * 8);
        }
    }
    m
}

impl SramBank {
    pub fn new(mode: StorageMode) -> Self {
        let zero = match mode {
            StorageMode::Raw | StorageMode::Triplicated => 0,
            _ => ecc::encode(0).raw(),
        };
        SramBank { mode, cells: vec![zero; BANK_WORDS * mode.replicas()] }
    }

    /// Loads words at cycle 0 (before any protection logic runs).
    pub fn preload(&mut self, words: &[u32]) {
        for (i, &w) in words.iter().enumerate().take(BANK_WORDS) {
            self.store_all(i, w);
        }
    }

    fn store_all(&mut self, i: usize, w: u32) {
        match self.mode {
            StorageMode::Raw => self.cells[i] = w as u64,
            StorageMode::Ecc | StorageMode::Overlap => self.cells[i] = ecc::encode(w).raw(),
            StorageMode::Triplicated => {
                for r in 0..3 {
                    self.cells[r * BANK_WORDS + i] = w as u64;
                }
            }
        }
    }

    pub fn total_bits(&self) -> u64 {
        self.cells.len() as u64 * self.mode.cell_bits() as u64
    }

    /// Software-visible value of word `i` (decoded or voted).
    pub fn decoded(&self, i: usize) -> u32 {
        match self.mode {
            StorageMode::Raw => self.cells[i] as u32,
            StorageMode::Ecc | StorageMode::Overlap => ecc::decode(Codeword39::from_raw(self.cells[i])).data,
            StorageMode::Triplicated => {
                vote3(self.cells[i], self.cells[BANK_WORDS + i], self.cells[2 * BANK_WORDS + i]).value as u32
            }
        }
    }

    pub fn syndrome(&self, i: usize) -> u8 {
        match self.mode {
            StorageMode::Ecc | StorageMode::Overlap => ecc::syndrome(Codeword39::from_raw(self.cells[i])),
            StorageMode::Triplicated => {
                let (a, b, c) = (self.cells[i], self.cells[BANK_WORDS + i], self.cells[2 * BANK_WORDS + i]);
                (a != b || b != c) as u8
            }
            StorageMode::Raw => 0,
        }
    }

    /// External read of word `idx`.
    ///
    /// Returns the bus payload (a 32-bit word, or the stored codeword in
    /// overlap mode) and the decode status observed at the bank.
    pub fn bank_read(&mut self, idx: u32, taps: &Taps, bank: u8) -> (u64, DecodeStatus, MemEvents) {
        let i = idx as usize;
        let mut ev = MemEvents::default();
        match self.mode {
            StorageMode::Raw => (self.cells[i], DecodeStatus::Clean, ev),
            StorageMode::Ecc => {
                let r = ecc::decode(Codeword39::from_raw(self.cells[i]));
                ev.corrected = r.status.is_corrected();
                ev.uncorrectable = r.status.is_uncorrectable();
                let data = taps.on32(Signal::BankDec(bank), 0, r.data);
                (data as u64, r.status, ev)
            }
            StorageMode::Overlap => {
                let cw = Codeword39::from_raw(self.cells[i]);
                let status = ecc::decode(cw).status;
                ev.corrected = status.is_corrected();
                ev.uncorrectable = status.is_uncorrectable();
                (cw.raw(), status, ev)
            }
            StorageMode::Triplicated => {
                let v = vote3(self.cells[i], self.cells[BANK_WORDS + i], self.cells[2 * BANK_WORDS + i]);
                ev.tmr_mismatch = v.mismatch;
                (v.value, DecodeStatus::Clean, ev)
            }
        }
    }

    /// External write. Returns whether the bank must stall its next cycle.
    pub fn bank_write(
        &mut self,
        idx: u32,
        payload: WritePayload,
        be: u8,
        wiring: BankWiring,
        taps: &Taps,
    ) -> (bool, MemEvents) {
        let i = idx as usize;
        let bank = wiring.bank;
        let mut ev = MemEvents::default();
        let mask = byte_mask(be);
        match (self.mode, payload) {
            (StorageMode::Raw, WritePayload::Raw(d)) => {
                self.cells[i] = ((self.cells[i] as u32 & !mask) | (d & mask)) as u64;
                (false, ev)
            }
            (StorageMode::Triplicated, WritePayload::Raw(d)) => {
                for r in 0..3u8 {
                    let c = &mut self.cells[r as usize * BANK_WORDS + i];
                    let d = taps.on32(Signal::BankEnc(bank), r, d);
                    *c = ((*c as u32 & !mask) | (d & mask)) as u64;
                }
                (false, ev)
            }
            (StorageMode::Ecc, WritePayload::Raw(d)) if be == 0xf => {
                self.cells[i] = taps.on(Signal::BankEnc(bank), 0, ecc::encode(d).raw());
                (false, ev)
            }
            (StorageMode::Overlap, WritePayload::Code(cw)) if be == 0xf => {
                self.cells[i] = cw.raw();
                (false, ev)
            }
            (_, payload) => {
                let data = match payload {
                    WritePayload::Raw(d) => d,
                    WritePayload::Code(cw) => {
                        let r = ecc::decode(cw);
                        ev.corrected |= r.status.is_corrected();
                        ev.uncorrectable |= r.status.is_uncorrectable();
                        r.data
                    }
                };
                let stored = ecc::decode(Codeword39::from_raw(self.cells[i]));
                ev.corrected |= stored.status.is_corrected();
                ev.uncorrectable |= stored.status.is_uncorrectable();
                let merged = (stored.data & !mask) | (data & mask);
                self.cells[i] = rmw_result(merged, wiring, taps);
                (true, ev)
            }
        }
    }

    /// One cycle of background work on an idle bank: pending read fix-ups
    /// first, then the scrubber.
    pub fn background(
        &mut self,
        ctl: &mut BankCtl,
        scrub_enabled: bool,
        period: u32,
        idle: bool,
        wiring: BankWiring,
        taps: &Taps,
    ) -> MemEvents {
        let mut ev = MemEvents::default();
        if !self.mode.has_ecc() {
            return ev;
        }
        let period = period.max(1) as u64;
        if scrub_enabled {
            ctl.set_scrub_ctr((ctl.scrub_ctr() + 1).min(period));
        }
        if !idle {
            return ev;
        }
        if let Some(idx) = ctl.pop_fix() {
            // Re-read, correct and write back; the read already reported the event.
            let i = idx as usize;
            let r = ecc::decode(Codeword39::from_raw(self.cells[i]));
            if r.status.is_corrected() {
                self.cells[i] = taps.on(Signal::BankBgWb(wiring.bank), 0, r.corrected.raw());
            }
            return ev;
        }
        if scrub_enabled && ctl.scrub_ctr() >= period {
            let i = ctl.scrub_idx() as usize;
            let r = ecc::decode(Codeword39::from_raw(self.cells[i]));
            match r.status {
                DecodeStatus::CorrectedSingle(_) => {
                    ev.corrected = true;
                    self.cells[i] = taps.on(Signal::BankBgWb(wiring.bank), 0, r.corrected.raw());
                }
                DecodeStatus::UncorrectableDouble => ev.uncorrectable = true,
                DecodeStatus::Clean => {}
            }
            ctl.set_scrub_idx(((i + 1) % BANK_WORDS) as u64);
            ctl.set_scrub_ctr(0);
        }
        ev
    }

    /// Read of replica `k` by an independent logic plane (plain or triplicated storage).
    pub fn plane_read(&self, k: usize, idx: u32, taps: &Taps, bank: u8) -> u32 {
        let c = self.cells[self.plane_cell(k, idx)] as u32;
        taps.on32(Signal::BankDec(bank), k as u8, c)
    }

    /// Write of replica `k` by an independent logic plane.
    pub fn plane_write(&mut self, k: usize, idx: u32, d: u32, be: u8, taps: &Taps, bank: u8) {
        let i = self.plane_cell(k, idx);
        let m = byte_mask(be);
        let d = taps.on32(Signal::BankEnc(bank), k as u8, d);
        self.cells[i] = ((self.cells[i] as u32 & !m) | (d & m)) as u64;
    }

    fn plane_cell(&self, k: usize, idx: u32) -> usize {
        debug_assert!(!self.mode.has_ecc());
        (k % self.mode.replicas()) * BANK_WORDS + idx as usize
    }

    /// Queues a write-back for a word whose external read needed correction.
    pub fn monitor_read_fix(&self, ctl: &mut BankCtl, idx: u32, status: DecodeStatus) -> MemEvents {
        let mut ev = MemEvents::default();
        if self.mode.has_ecc() && status.is_corrected() {
            ctl.push_fix(idx, &mut ev.dropped_fixes);
        }
        ev
    }

    /// Text dump: one `addr_hex: codeword_hex syndrome_hex` line per word.
    /// `base` is the bank's byte address.
    pub fn dump(&self, base: u32) -> String {
        let mut out = String::with_capacity(BANK_WORDS * 24);
        for i in 0..BANK_WORDS {
            let addr = base + (i as u32) * 4;
            let cw = match self.mode {
                StorageMode::Triplicated => self.decoded(i) as u64,
                _ => self.cells[i],
            };
            let digits = if self.mode.has_ecc() { 10 } else { 8 };
            let _ = writeln!(out, "{addr:08x}: {cw:0digits$x} {:02x}", self.syndrome(i));
        }
        out
    }
}

/// Re-encodes a merged word through the (possibly triplicated) RMW logic.
fn rmw_result(merged: u32, wiring: BankWiring, taps: &Taps) -> u64 {
    let cw = ecc::encode(merged).raw();
    let bank = wiring.bank;
    if wiring.logic_replicas == 3 {
        let r: [u64; 3] = std::array::from_fn(|k| taps.on(Signal::BankRmw(bank), k as u8, cw));
        taps.on(Signal::BankRmwVote(bank), 0, vote3(r[0], r[1], r[2]).value)
    } else {
        taps.on(Signal::BankRmw(bank), 0, cw)
    }
}
