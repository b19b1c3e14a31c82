//! Timer, UART transmitter, GPIO, SoC control registers and the fault monitor.
//!
//! Register map (offsets inside the peripheral region):
//!
//! | offset | register |
//! |--------|----------|
//! | 0x000  | timer counter |
//! | 0x004  | timer compare |
//! | 0x008  | timer control (bit0 enable, bit1 irq arm) |
//! | 0x00C  | timer irq acknowledge (write) |
//! | 0x100  | UART transmit data (write) |
//! | 0x104  | UART status (bit0 busy) |
//! | 0x200  | GPIO output |
//! | 0x300  | return value |
//! | 0x304  | scrubber enable |
//! | 0x308  | application start marker (write) |
//! | 0x400..0x410 | fault counters (read), 0x414 clear (write) |

use crate::register_bank;
use crate::signals::{Signal, Taps};

pub const TIMER_CNT: u32 = 0x000;
pub const TIMER_CMP: u32 = 0x004;
pub const TIMER_CTRL: u32 = 0x008;
pub const TIMER_ACK: u32 = 0x00C;
pub const UART_TX: u32 = 0x100;
pub const UART_STATUS: u32 = 0x104;
pub const GPIO_OUT: u32 = 0x200;
pub const CTRL_RETVAL: u32 = 0x300;
pub const CTRL_SCRUB: u32 = 0x304;
pub const CTRL_START: u32 = 0x308;
pub const MON_BASE: u32 = 0x400;
pub const MON_CLEAR: u32 = 0x414;

/// Cycles per UART bit.
pub const UART_DIVIDER: u64 = 16;

register_bank! {
    /// Timer, UART, GPIO and control-block state.
    pub struct PeriphState {
        timer_cnt: 32, timer_cmp: 32, timer_ctrl: 2, timer_irq: 1,
        uart_frame: 10, uart_bits: 4, uart_div: 4, uart_busy: 1, uart_tx: 1,
        gpio_out: 32,
        retval: 32, scrub_en: 1, started: 1,
    }
}

impl PeriphState {
    pub fn reset() -> Self {
        let mut s = PeriphState::default();
        s.set_uart_tx(1);
        s
    }
}

/// A decoded MMIO access presented to the peripheral block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Mmio {
    pub offset: u32,
    pub write: bool,
    pub wdata: u32,
    pub be: u8,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PeriphOut {
    pub rdata: u32,
    pub err: bool,
    pub irq: bool,
    /// Monitor clear requested by this access.
    pub monitor_clear: bool,
    /// Offset of a monitor read, answered by the monitor.
    pub monitor_read: Option<u32>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Pins {
    pub uart_tx: bool,
    pub gpio: u32,
}

fn merge(old: u64, new: u32, be: u8) -> u64 {
    let m = crate::memory::byte_mask(be);
    ((old as u32 & !m) | (new & m)) as u64
}

/// One cycle of every peripheral plus the MMIO access, if any.
pub fn periph_step(s: &mut PeriphState, mmio: Option<Mmio>, taps: &Taps, r: u8) -> PeriphOut {
    let mut out = PeriphOut::default();
    if let Some(m) = mmio {
        if m.write {
            let d = taps.on32(Signal::PeriphWdata, r, m.wdata);
            match m.offset {
                TIMER_CNT => s.set_timer_cnt(merge(s.timer_cnt(), d, m.be)),
                TIMER_CMP => s.set_timer_cmp(merge(s.timer_cmp(), d, m.be)),
                TIMER_CTRL => s.set_timer_ctrl(d as u64),
                TIMER_ACK => s.set_timer_irq(0),
                UART_TX => {
                    if s.uart_busy() == 0 {
                        s.set_uart_frame((1 << 9) | (((d & 0xff) as u64) << 1));
                        s.set_uart_bits(0);
                        s.set_uart_div(0);
                        s.set_uart_busy(1);
                    }
                }
                UART_STATUS => {}
                GPIO_OUT => s.set_gpio_out(merge(s.gpio_out(), d, m.be)),
                CTRL_RETVAL => s.set_retval(merge(s.retval(), d, m.be)),
                CTRL_SCRUB => s.set_scrub_en(d as u64 & 1),
                CTRL_START => s.set_started(1),
                MON_CLEAR => out.monitor_clear = true,
                o if (MON_BASE..MON_CLEAR).contains(&o) => {}
                _ => out.err = true,
            }
        } else {
            out.rdata = match m.offset {
                TIMER_CNT => s.timer_cnt() as u32,
                TIMER_CMP => s.timer_cmp() as u32,
                TIMER_CTRL => s.timer_ctrl() as u32,
                UART_STATUS => s.uart_busy() as u32,
                GPIO_OUT => s.gpio_out() as u32,
                CTRL_RETVAL => s.retval() as u32,
                CTRL_SCRUB => s.scrub_en() as u32,
                o if (MON_BASE..MON_CLEAR).contains(&o) && o & 3 == 0 => {
                    out.monitor_read = Some(o - MON_BASE);
                    0
                }
                TIMER_ACK | UART_TX | CTRL_START | MON_CLEAR => 0,
                _ => {
                    out.err = true;
                    0
                }
            };
        }
    }

    // Timer.
    if s.timer_ctrl() & 1 == 1 {
        let next = taps.on32(Signal::TimerInc, r, (s.timer_cnt() as u32).wrapping_add(1));
        s.set_timer_cnt(next as u64);
        if s.timer_ctrl() & 2 == 2 && s.timer_cnt() == s.timer_cmp() {
            s.set_timer_irq(1);
        }
    }
    out.irq = s.timer_irq() == 1;

    // UART transmitter, 8N1, LSB first.
    if s.uart_busy() == 1 {
        s.set_uart_tx(s.uart_frame() & 1);
        if s.uart_div() == UART_DIVIDER - 1 {
            s.set_uart_div(0);
            s.set_uart_frame(s.uart_frame() >> 1);
            s.set_uart_bits(s.uart_bits() + 1);
            if s.uart_bits() == 10 {
                s.set_uart_busy(0);
            }
        } else {
            s.set_uart_div(s.uart_div() + 1);
        }
    } else {
        s.set_uart_tx(1);
    }
    out
}

pub fn pins(s: &PeriphState) -> Pins {
    Pins { uart_tx: s.uart_tx() == 1, gpio: s.gpio_out() as u32 }
}

/// Fault sources feeding the monitor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct FaultEvents {
    pub tcls: bool,
    pub ecc_corrected: bool,
    pub ecc_uncorrectable: bool,
    pub interconnect: bool,
    pub tmr: bool,
}

impl FaultEvents {
    pub fn any(&self) -> bool {
        self.tcls || self.ecc_corrected || self.ecc_uncorrectable || self.interconnect || self.tmr
    }

    pub fn bits(&self) -> u64 {
        self.tcls as u64
            | (self.ecc_corrected as u64) << 1
            | (self.ecc_uncorrectable as u64) << 2
            | (self.interconnect as u64) << 3
            | (self.tmr as u64) << 4
    }

    pub fn or(&mut self, o: FaultEvents) {
        self.tcls |= o.tcls;
        self.ecc_corrected |= o.ecc_corrected;
        self.ecc_uncorrectable |= o.ecc_uncorrectable;
        self.interconnect |= o.interconnect;
        self.tmr |= o.tmr;
    }
}

register_bank! {
    /// Fault counters. Not protected, and not part of the functional design.
    pub struct FaultMonitor {
        tcls: 16, ecc_corrected: 16, ecc_uncorrectable: 16, interconnect: 16, tmr: 16,
        pipe: 5,
    }
}

pub const MONITOR_COUNTERS: [&str; 5] = ["tcls", "ecc_corrected", "ecc_uncorrectable", "interconnect", "tmr"];

impl FaultMonitor {
    /// Applies last cycle's latched events, then latches `ev`.
    pub fn step(&mut self, ev: FaultEvents, clear: bool) {
        let pipe = self.pipe();
        for i in 0..5 {
            if pipe & (1 << i) != 0 {
                self.v[i] = (self.v[i] + 1).min(0xffff);
            }
        }
        if clear {
            self.v[..5].fill(0);
        }
        self.set_pipe(ev.bits());
    }

    pub fn readout(&self) -> [u16; 5] {
        std::array::from_fn(|i| self.v[i] as u16)
    }

    pub fn read(&self, offset: u32) -> u32 {
        self.v.get((offset / 4) as usize).filter(|_| offset < 0x14).copied().unwrap_or(0) as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(s: &mut PeriphState, offset: u32, wdata: u32) -> PeriphOut {
        periph_step(s, Some(Mmio { offset, write: true, wdata, be: 0xf }), &Taps::NONE, 0)
    }

    fn idle(s: &mut PeriphState) -> PeriphOut {
        periph_step(s, None, &Taps::NONE, 0)
    }

    #[test]
    fn timer_compare_irq() {
        let mut s = PeriphState::reset();
        write(&mut s, TIMER_CMP, 100);
        write(&mut s, TIMER_CTRL, 3);
        let mut fired = None;
        for c in 0..200 {
            if idle(&mut s).irq && fired.is_none() {
                fired = Some((c, s.timer_cnt()));
            }
        }
        assert_eq!(fired.unwrap().1, 100);
        // The enabling write itself counts one cycle.
        assert_eq!(fired.unwrap().0, 98);
    }

    /// Decodes 8N1 frames from a pin trace sampled every cycle.
    fn decode_frames(trace: &[bool], div: usize) -> Vec<u8> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < trace.len() {
            if !trace[i] {
                let mid = |bit: usize| trace[i + bit * div + div / 2];
                if i + 10 * div > trace.len() {
                    break;
                }
                assert!(!mid(0), "start bit");
                let mut b = 0u8;
                for k in 0..8 {
                    b |= (mid(1 + k) as u8) << k;
                }
                assert!(mid(9), "stop bit");
                out.push(b);
                i += 10 * div;
            } else {
                i += 1;
            }
        }
        out
    }

    #[test]
    fn uart_frame() {
        let mut s = PeriphState::reset();
        let mut trace = vec![pins(&s).uart_tx];
        write(&mut s, UART_TX, 0x41);
        trace.push(pins(&s).uart_tx);
        for _ in 0..200 {
            idle(&mut s);
            trace.push(pins(&s).uart_tx);
        }
        assert_eq!(decode_frames(&trace, UART_DIVIDER as usize), vec![0x41]);
        assert_eq!(s.uart_busy(), 0);
        // Exactly 10 bit periods low/high pattern after the start edge.
        let start = trace.iter().position(|&b| !b).unwrap();
        assert!(trace[start..start + 16].iter().all(|&b| !b));
        assert!(trace[start + 16..start + 32].iter().all(|&b| b)); // bit0 of 0x41 = 1
    }

    #[test]
    fn unmapped_offset_errors() {
        let mut s = PeriphState::reset();
        assert!(write(&mut s, 0x500, 1).err);
        let r = periph_step(&mut s, Some(Mmio { offset: 0x10, write: false, wdata: 0, be: 0xf }), &Taps::NONE, 0);
        assert!(r.err);
    }

    #[test]
    fn gpio_byte_write_merges() {
        let mut s = PeriphState::reset();
        write(&mut s, GPIO_OUT, 0x1234_5678);
        periph_step(&mut s, Some(Mmio { offset: GPIO_OUT, write: true, wdata: 0xAB00, be: 0b0010 }), &Taps::NONE, 0);
        assert_eq!(pins(&s).gpio, 0x1234_AB78);
    }

    #[test]
    fn monitor_lags_one_cycle() {
        let mut m = FaultMonitor::default();
        m.step(FaultEvents { ecc_corrected: true, ..Default::default() }, false);
        assert_eq!(m.readout(), [0; 5]);
        m.step(FaultEvents::default(), false);
        assert_eq!(m.readout(), [0, 1, 0, 0, 0]);
        assert_eq!(m.read(4), 1);
        m.step(FaultEvents::default(), true);
        assert_eq!(m.readout(), [0; 5]);
    }
}
