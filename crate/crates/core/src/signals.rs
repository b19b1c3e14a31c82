//! Declared combinational nets that can carry an injected transient.
//!
//! Each site is evaluated through [`Taps::on`], which XORs the fault mask into
//! the value when the active fault names that site and replica.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Signal {
    // Core datapath, one instance per core replica.
    CoreIr,
    CoreRs1,
    CoreRs2,
    CoreAlu,
    CoreAgu,
    CoreNpc,
    CoreWb,
    // Requester-side codecs inside the lockstep domain (overlap wiring).
    EncIaddr,
    EncDaddr,
    EncWdata,
    DecIrdata,
    DecDrdata,
    // Lockstep output voters.
    VoteIvalid,
    VoteIaddr,
    VoteDvalid,
    VoteDwrite,
    VoteDbe,
    VoteDaddr,
    VoteDwdata,
    // Chip output pins (single voter in protected configurations).
    BusyPin,
    UartPin,
    GpioPin,
    // Interconnect.
    BusIvalid,
    BusDvalid,
    BusDwrite,
    BusDbe,
    BusIaddr,
    BusDaddr,
    BusDwdata,
    FabricAdecI,
    FabricAdecD,
    FabricGrant,
    RespIrdata,
    RespDrdata,
    RespIvalid,
    RespDvalid,
    // Memory-side logic; the index is the bank.
    BankEnc(u8),
    BankDec(u8),
    BankRmw(u8),
    BankRmwVote(u8),
    BankBgWb(u8),
    // Peripheral bus adapter and logic.
    PeriphWdata,
    PeriphRdata,
    PeriphRvote,
    TimerInc,
    Irq,
}

impl Signal {
    pub fn name(&self) -> String {
        match self {
            Signal::BankEnc(b) => format!("bank{b}.enc"),
            Signal::BankDec(b) => format!("bank{b}.dec"),
            Signal::BankRmw(b) => format!("bank{b}.rmw"),
            Signal::BankRmwVote(b) => format!("bank{b}.rmw_vote"),
            Signal::BankBgWb(b) => format!("bank{b}.bg_wb"),
            other => {
                let s = format!("{other:?}");
                let mut out = String::new();
                for (i, ch) in s.chars().enumerate() {
                    if ch.is_ascii_uppercase() && i > 0 {
                        out.push('_');
                    }
                    out.push(ch.to_ascii_lowercase());
                }
                out
            }
        }
    }

    /// Whether the net drives a chip pin directly.
    pub fn is_pin(&self) -> bool {
        matches!(self, Signal::BusyPin | Signal::UartPin | Signal::GpioPin)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActiveTap {
    pub signal: Signal,
    pub replica: u8,
    pub mask: u64,
}

/// The transient active in the current cycle, if any.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Taps(pub Option<ActiveTap>);

impl Taps {
    pub const NONE: Taps = Taps(None);

    #[inline]
    pub fn on(&self, signal: Signal, replica: u8, v: u64) -> u64 {
        #[cfg(test)]
        probe::record(signal, replica);
        match self.0 {
            Some(t) if t.signal == signal && t.replica == replica => v ^ t.mask,
            _ => v,
        }
    }

    #[inline]
    pub fn on32(&self, signal: Signal, replica: u8, v: u32) -> u32 {
        self.on(signal, replica, v as u64) as u32
    }

    #[inline]
    pub fn on_bool(&self, signal: Signal, replica: u8, v: bool) -> bool {
        self.on(signal, replica, v as u64) & 1 == 1
    }

    #[inline]
    pub fn is_active(&self) -> bool {
        self.0.is_some()
    }
}

/// Records which sites the model evaluates, for coverage checks.
#[cfg(test)]
pub mod probe {
    use super::Signal;
    use std::cell::RefCell;
    use std::collections::BTreeSet;

    thread_local! {
        static SEEN: RefCell<Option<BTreeSet<(Signal, u8)>>> = const { RefCell::new(None) };
    }

    pub fn record(s: Signal, r: u8) {
        SEEN.with(|x| {
            if let Some(set) = x.borrow_mut().as_mut() {
                set.insert((s, r));
            }
        });
    }

    pub fn start() {
        SEEN.with(|x| *x.borrow_mut() = Some(BTreeSet::new()));
    }

    pub fn take() -> BTreeSet<(Signal, u8)> {
        SEEN.with(|x| x.borrow_mut().take().unwrap_or_default())
    }
}
