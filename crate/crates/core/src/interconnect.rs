//! Address decoding, arbitration, response latches and the protection
//! wiring of the request/response paths.

use crate::ecc::Codeword39;
use crate::memory::BANK_WORDS;
use crate::register_bank;
use crate::redundancy::vote3;

pub const BANK0_BASE: u32 = 0x0000_0000;
pub const BANK1_BASE: u32 = 0x0000_2000;
pub const BANK_BYTES: u32 = (BANK_WORDS * 4) as u32;
pub const PERIPH_BASE: u32 = 0x0001_0000;
pub const PERIPH_BYTES: u32 = 0x1000;

/// Requester ports. The instruction port wins ties.
pub const PORT_I: usize = 0;
pub const PORT_D: usize = 1;

/// Subordinate selected by an address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Target {
    Bank { bank: u8, idx: u32 },
    Periph { offset: u32 },
}

impl Target {
    /// Subordinate slot used by the arbiter (0, 1 banks, 2 peripherals).
    pub fn sub(self) -> usize {
        match self {
            Target::Bank { bank, .. } => bank as usize,
            Target::Periph { .. } => 2,
        }
    }
}

/// Decodes a byte address. `None` means unmapped (error response).
pub fn decode_addr(addr: u32) -> Option<Target> {
    if addr & 3 != 0 {
        return None;
    }
    for (bank, base) in [BANK0_BASE, BANK1_BASE].into_iter().enumerate() {
        if (base..base + BANK_BYTES).contains(&addr) {
            return Some(Target::Bank { bank: bank as u8, idx: (addr - base) / 4 });
        }
    }
    if (PERIPH_BASE..PERIPH_BASE + PERIPH_BYTES).contains(&addr) {
        return Some(Target::Periph { offset: addr - PERIPH_BASE });
    }
    None
}

register_bank! {
    /// Arbiter state: per subordinate, whether the instruction port was granted last.
    pub struct FabricState {
        last_i: 3,
    }
}

/// Outcome of arbitration for one port.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grant {
    /// Nothing requested.
    Idle,
    /// Granted to a subordinate.
    Granted(Target),
    /// Unmapped address; answered with an error.
    Error,
    /// Lost arbitration or subordinate busy; the requester retries.
    Stalled,
}

/// Arbitrates one cycle. `reqs[p]` is the decoded request of port `p`
/// (`Some(None)` for an unmapped address), `ready[s]` whether subordinate
/// `s` accepts a request this cycle.
pub fn arbitrate(st: &mut FabricState, reqs: [Option<Option<Target>>; 2], ready: [bool; 3]) -> [Grant; 2] {
    let mut out = [Grant::Idle; 2];
    for p in 0..2 {
        match reqs[p] {
            None => {}
            Some(None) => out[p] = Grant::Error,
            Some(Some(t)) => out[p] = if ready[t.sub()] { Grant::Granted(t) } else { Grant::Stalled },
        }
    }
    if let (Grant::Granted(a), Grant::Granted(b)) = (out[PORT_I], out[PORT_D]) {
        if a.sub() == b.sub() {
            let s = a.sub();
            let i_was_last = st.last_i() & (1 << s) != 0;
            if i_was_last {
                out[PORT_I] = Grant::Stalled;
            } else {
                out[PORT_D] = Grant::Stalled;
            }
        }
    }
    let mut last = st.last_i();
    for (p, g) in out.iter().enumerate() {
        if let Grant::Granted(t) = g {
            let bit = 1 << t.sub();
            if p == PORT_I {
                last |= bit;
            } else {
                last &= !bit;
            }
        }
    }
    st.set_last_i(last);
    out
}

/// Majority of three decisions taken by replicated fabric logic.
pub fn vote_grants(g: [Grant; 3]) -> (Grant, bool) {
    let mismatch = g[0] != g[1] || g[1] != g[2];
    let v = if g[1] == g[2] { g[1] } else { g[0] };
    (v, mismatch)
}

register_bank! {
    /// Response latch of an unprotected bus: one entry per port.
    pub struct RespRaw {
        i_valid: 1, i_err: 1, i_rdata: 32,
        d_valid: 1, d_err: 1, d_rdata: 32,
    }
}

register_bank! {
    /// Response latch of the protected bus: codeword payloads and
    /// triplicated handshake bits (one per lockstep replica).
    pub struct RespProt {
        i_valid: 3, i_err: 3, i_rdata: 39,
        d_valid: 3, d_err: 3, d_rdata: 39,
    }
}

/// Response of one port as seen by consumer replica `k`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProtResp {
    pub valid: bool,
    pub err: bool,
    pub rdata: Codeword39,
}

impl RespProt {
    /// Port `p` as presented to consumer replica `k`, which uses its own handshake copy.
    pub fn port(&self, p: usize, k: u8) -> ProtResp {
        let (v, e, d) = if p == PORT_I {
            (self.i_valid(), self.i_err(), self.i_rdata())
        } else {
            (self.d_valid(), self.d_err(), self.d_rdata())
        };
        ProtResp { valid: v >> k & 1 == 1, err: e >> k & 1 == 1, rdata: Codeword39::from_raw(d) }
    }

    /// Whether the handshake copies of either port disagree.
    pub fn handshake_mismatch(&self) -> bool {
        let split = |x: u64| {
            let b = [x & 1, x >> 1 & 1, x >> 2 & 1];
            vote3(b[0], b[1], b[2]).mismatch
        };
        split(self.i_valid()) || split(self.i_err()) || split(self.d_valid()) || split(self.d_err())
    }
}

/// Votes three replicated handshake bits at a consumption point.
pub fn vote_handshake(b: [bool; 3]) -> (bool, bool) {
    let r = vote3(b[0], b[1], b[2]);
    (r.value, r.mismatch)
}

/// How a net segment is protected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Protection {
    /// Plain single net.
    None,
    /// Carries an error-correcting codeword.
    Ecc,
    /// Three copies, voted where consumed.
    Replicated,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub from: &'static str,
    pub to: &'static str,
    pub what: &'static str,
    pub protection: Protection,
}

/// Net-level description of the core-to-memory paths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Wiring {
    /// Whether the requester-side codecs sit inside the lockstep domain.
    pub overlap: bool,
    pub segments: Vec<Segment>,
}

impl Wiring {
    /// Segments that are neither replicated nor carried as codewords.
    pub fn unprotected(&self) -> Vec<&Segment> {
        self.segments.iter().filter(|s| s.protection == Protection::None).collect()
    }
}

/// Builds the wiring of the request/response paths.
///
/// Without overlap the codecs sit at the bank and the voted lockstep outputs
/// cross the fabric as plain words. With overlap the codecs move inside the
/// lockstep domain, payloads cross as codewords and handshakes are triplicated.
pub fn set_overlap_mode(overlap: bool, lockstep: bool) -> Wiring {
    use Protection::*;
    let core_out = if lockstep { Replicated } else { None };
    let seg = |from, to, what, protection| Segment { from, to, what, protection };
    let segments = if overlap {
        vec![
            seg("core", "encoder", "addr/wdata", core_out),
            seg("encoder", "voter", "addr/wdata", Replicated),
            seg("voter", "fabric", "addr/wdata", Ecc),
            seg("fabric", "bank", "addr/wdata", Ecc),
            seg("core", "fabric", "valid/write/be", Replicated),
            seg("fabric", "core", "valid/err", Replicated),
            seg("bank", "fabric", "rdata", Ecc),
            seg("fabric", "decoder", "rdata", Ecc),
            seg("decoder", "core", "rdata", core_out),
        ]
    } else {
        vec![
            seg("core", "voter", "addr/wdata", core_out),
            seg("voter", "fabric", "addr/wdata", None),
            seg("fabric", "encoder", "addr/wdata", None),
            seg("encoder", "bank", "addr/wdata", Ecc),
            seg("core", "voter", "valid/write/be", core_out),
            seg("voter", "fabric", "valid/write/be", None),
            seg("fabric", "core", "valid/err", None),
            seg("bank", "decoder", "rdata", Ecc),
            seg("decoder", "fabric", "rdata", None),
            seg("fabric", "core", "rdata", None),
        ]
    };
    Wiring { overlap, segments }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_map() {
        assert_eq!(decode_addr(0x0), Some(Target::Bank { bank: 0, idx: 0 }));
        assert_eq!(decode_addr(0x1ffc), Some(Target::Bank { bank: 0, idx: 2047 }));
        assert_eq!(decode_addr(0x2004), Some(Target::Bank { bank: 1, idx: 1 }));
        assert_eq!(decode_addr(0x1_0100), Some(Target::Periph { offset: 0x100 }));
        assert_eq!(decode_addr(0x4000), None);
        assert_eq!(decode_addr(0x2), None);
    }

    #[test]
    fn single_request_granted() {
        let mut st = FabricState::default();
        let t = decode_addr(0x10);
        let g = arbitrate(&mut st, [Some(t), None], [true; 3]);
        assert_eq!(g, [Grant::Granted(t.unwrap()), Grant::Idle]);
    }

    #[test]
    fn contention_stalls_one_port_for_one_cycle() {
        let mut st = FabricState::default();
        let a = decode_addr(0x10);
        let b = decode_addr(0x20);
        let g1 = arbitrate(&mut st, [Some(a), Some(b)], [true; 3]);
        assert_eq!(g1, [Grant::Granted(a.unwrap()), Grant::Stalled]);
        // The data port retries alone next cycle.
        let g2 = arbitrate(&mut st, [None, Some(b)], [true; 3]);
        assert_eq!(g2[PORT_D], Grant::Granted(b.unwrap()));
        // Round robin: after an instruction grant, a tie goes to data.
        let mut st = FabricState::default();
        arbitrate(&mut st, [Some(a), None], [true; 3]);
        let g = arbitrate(&mut st, [Some(a), Some(b)], [true; 3]);
        assert_eq!(g, [Grant::Stalled, Grant::Granted(b.unwrap())]);
    }

    #[test]
    fn different_subordinates_proceed_together() {
        let mut st = FabricState::default();
        let a = decode_addr(0x10);
        let b = decode_addr(0x2010);
        let g = arbitrate(&mut st, [Some(a), Some(b)], [true; 3]);
        assert!(matches!(g, [Grant::Granted(_), Grant::Granted(_)]));
    }

    #[test]
    fn busy_subordinate_and_unmapped() {
        let mut st = FabricState::default();
        let g = arbitrate(&mut st, [Some(decode_addr(0x10)), Some(None)], [false, true, true]);
        assert_eq!(g, [Grant::Stalled, Grant::Error]);
    }

    #[test]
    fn flipped_handshake_replica_is_outvoted() {
        let mut r = RespProt::default();
        r.set_i_valid(0b111);
        assert!(!r.handshake_mismatch());
        r.set_i_valid(0b101);
        assert!(r.handshake_mismatch());
        let (v, m) = vote_handshake([r.port(PORT_I, 0).valid, r.port(PORT_I, 1).valid, r.port(PORT_I, 2).valid]);
        assert!(v && m);
    }

    #[test]
    fn grant_vote_masks_one_replica() {
        let t = Grant::Granted(Target::Periph { offset: 0 });
        assert_eq!(vote_grants([Grant::Stalled, t, t]), (t, true));
        assert_eq!(vote_grants([t, t, t]), (t, false));
    }

    #[test]
    fn overlap_wiring_has_no_unprotected_segment() {
        assert!(set_overlap_mode(true, true).unprotected().is_empty());
        let plain = set_overlap_mode(false, true);
        assert!(plain.unprotected().len() >= 2);
    }
}
