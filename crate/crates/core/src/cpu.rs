//! The reduced load/store core ("µcore").
//!
//! Timing: a fetch is issued in one cycle and its response is consumed in
//! the next (execute). ALU, branch and jump instructions issue the following
//! fetch from the execute cycle, giving one instruction per cycle. Loads and
//! stores issue on the data port and complete one cycle later, when the next
//! fetch is issued.

use crate::isa::{fields, AluFunct, Opcode, SysFunct};
use crate::register_bank;
use crate::signals::{Signal, Taps};

/// Interrupt vector (byte address).
pub const IRQ_VECTOR: u32 = 0x40;

pub mod phase {
    pub const FETCH: u64 = 0;
    pub const EXEC: u64 = 1;
    pub const MEM: u64 = 2;
    pub const SLEEP: u64 = 3;
}

pub mod flag {
    pub const EXCEPTION: u64 = 1 << 0;
    pub const IRQ_EN: u64 = 1 << 1;
    pub const HALTED: u64 = 1 << 2;
    pub const SLEEPING: u64 = 1 << 3;
    pub const IN_ISR: u64 = 1 << 4;
}

register_bank! {
    /// Architectural and pipeline state of one core.
    pub struct CoreState {
        pc: 32, phase: 2, ir: 32, epc: 32, flags: 5,
        x1: 32, x2: 32, x3: 32, x4: 32, x5: 32, x6: 32, x7: 32, x8: 32,
        x9: 32, x10: 32, x11: 32, x12: 32, x13: 32, x14: 32, x15: 32,
    }
}

impl CoreState {
    pub fn reset(entry: u32) -> Self {
        let mut s = CoreState::default();
        s.set_pc(entry as u64);
        s
    }

    #[inline]
    pub fn reg(&self, i: usize) -> u32 {
        if i == 0 {
            0
        } else {
            self.v[Self::X1 + i - 1] as u32
        }
    }

    #[inline]
    pub fn set_reg(&mut self, i: usize, x: u32) {
        if i != 0 {
            self.v[Self::X1 + i - 1] = x as u64;
        }
    }

    #[inline]
    pub fn has(&self, f: u64) -> bool {
        self.flags() & f != 0
    }

    #[inline]
    fn set_flag(&mut self, f: u64, on: bool) {
        let v = if on { self.flags() | f } else { self.flags() & !f };
        self.set_flags(v);
    }

    pub fn exception(&self) -> bool {
        self.has(flag::EXCEPTION)
    }

    pub fn halted(&self) -> bool {
        self.has(flag::HALTED)
    }

    pub fn busy(&self) -> bool {
        !(self.has(flag::HALTED) || self.has(flag::SLEEPING))
    }
}

/// Response to a previously issued request, as latched by the fabric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Resp {
    pub valid: bool,
    pub err: bool,
    pub rdata: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DataReq {
    pub addr: u32,
    pub write: bool,
    pub wdata: u32,
    pub be: u8,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CoreInputs {
    pub iresp: Resp,
    pub dresp: Resp,
    pub irq: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CoreOutputs {
    pub ireq: Option<u32>,
    pub dreq: Option<DataReq>,
    pub busy: bool,
    pub exception: bool,
}

fn trap(s: &mut CoreState) {
    s.set_flag(flag::EXCEPTION, true);
    s.set_flag(flag::HALTED, true);
}

/// Address and shape of the data access encoded by `ir`.
fn data_request(s: &CoreState, ir: u32, taps: &Taps, r: u8) -> Option<DataReq> {
    let f = fields(ir);
    let base = taps.on32(Signal::CoreRs1, r, s.reg(f.b));
    let addr = taps.on32(Signal::CoreAgu, r, base.wrapping_add(f.imm18 as u32));
    let src = taps.on32(Signal::CoreRs2, r, s.reg(f.a));
    match Opcode::from_bits(f.op)? {
        Opcode::Lw if addr & 3 == 0 => Some(DataReq { addr, write: false, wdata: 0, be: 0xf }),
        Opcode::Sw if addr & 3 == 0 => Some(DataReq { addr, write: true, wdata: src, be: 0xf }),
        Opcode::Sb => {
            let lane = addr & 3;
            Some(DataReq {
                addr: addr & !3,
                write: true,
                wdata: (src & 0xff) << (lane * 8),
                be: 1 << lane,
            })
        }
        _ => None,
    }
}

/// At an instruction boundary: vector to the handler if an interrupt is due.
fn take_irq(s: &mut CoreState, irq: bool) {
    if irq && s.has(flag::IRQ_EN) && !s.has(flag::IN_ISR) {
        s.set_epc(s.pc());
        s.set_pc(IRQ_VECTOR as u64);
        s.set_flag(flag::IN_ISR, true);
    }
}

/// Advances the core by one cycle.
pub fn core_step(s: &mut CoreState, inp: &CoreInputs, taps: &Taps, r: u8) -> CoreOutputs {
    let mut out = CoreOutputs::default();
    if s.halted() {
        out.exception = s.exception();
        return out;
    }
    match s.phase() {
        phase::FETCH => {
            out.ireq = Some(s.pc() as u32);
            s.set_phase(phase::EXEC);
        }
        phase::EXEC => exec(s, inp, taps, r, &mut out),
        phase::MEM => {
            let ir = s.ir() as u32;
            if !inp.dresp.valid {
                match data_request(s, ir, taps, r) {
                    Some(req) => out.dreq = Some(req),
                    None => trap(s),
                }
            } else if inp.dresp.err {
                trap(s);
            } else {
                let f = fields(ir);
                if f.op == Opcode::Lw as u32 {
                    let v = taps.on32(Signal::CoreWb, r, inp.dresp.rdata);
                    s.set_reg(f.a, v);
                }
                let npc = taps.on32(Signal::CoreNpc, r, (s.pc() as u32).wrapping_add(4));
                s.set_pc(npc as u64);
                take_irq(s, inp.irq);
                out.ireq = Some(s.pc() as u32);
                s.set_phase(phase::EXEC);
            }
        }
        _ => {
            // Asleep until the interrupt line rises.
            if inp.irq {
                s.set_flag(flag::SLEEPING, false);
                take_irq(s, inp.irq);
                out.ireq = Some(s.pc() as u32);
                s.set_phase(phase::EXEC);
            }
        }
    }
    if s.pc() & 3 != 0 && !s.exception() {
        trap(s);
        out.ireq = None;
        out.dreq = None;
    }
    out.busy = s.busy();
    out.exception = s.exception();
    out
}

fn exec(s: &mut CoreState, inp: &CoreInputs, taps: &Taps, r: u8, out: &mut CoreOutputs) {
    if !inp.iresp.valid {
        out.ireq = Some(s.pc() as u32);
        return;
    }
    if inp.iresp.err {
        trap(s);
        return;
    }
    let ir = taps.on32(Signal::CoreIr, r, inp.iresp.rdata);
    s.set_ir(ir as u64);
    let f = fields(ir);
    let Some(op) = Opcode::from_bits(f.op) else {
        trap(s);
        return;
    };
    let pc = s.pc() as u32;
    let mut npc = pc.wrapping_add(4);
    let rs1v = taps.on32(Signal::CoreRs1, r, s.reg(f.b));
    let rs1 = || rs1v;
    let alu = |v: u32| taps.on32(Signal::CoreAlu, r, v);
    match op {
        Opcode::Addi => s.set_reg(f.a, alu(rs1().wrapping_add(f.imm18 as u32))),
        Opcode::Andi => s.set_reg(f.a, alu(rs1() & f.imm18 as u32)),
        Opcode::Ori => s.set_reg(f.a, alu(rs1() | f.imm18 as u32)),
        Opcode::Xori => s.set_reg(f.a, alu(rs1() ^ f.imm18 as u32)),
        Opcode::Slli => s.set_reg(f.a, alu(rs1().wrapping_shl(f.imm18 as u32 & 31))),
        Opcode::Srli => s.set_reg(f.a, alu(rs1().wrapping_shr(f.imm18 as u32 & 31))),
        Opcode::Lui => s.set_reg(f.a, alu((f.imm22 as u32) << 10)),
        Opcode::Alu => {
            let Some(func) = AluFunct::from_bits(f.funct) else {
                trap(s);
                return;
            };
            let b = taps.on32(Signal::CoreRs2, r, s.reg(f.c));
            s.set_reg(f.a, alu(func.apply(rs1(), b)));
        }
        Opcode::Lw | Opcode::Sw | Opcode::Sb => {
            match data_request(s, ir, taps, r) {
                Some(req) => {
                    out.dreq = Some(req);
                    s.set_phase(phase::MEM);
                }
                None => trap(s),
            }
            return;
        }
        Opcode::Beq | Opcode::Bne | Opcode::Bltu => {
            let a = taps.on32(Signal::CoreRs1, r, s.reg(f.a));
            let b = taps.on32(Signal::CoreRs2, r, s.reg(f.b));
            let taken = match op {
                Opcode::Beq => a == b,
                Opcode::Bne => a != b,
                _ => a < b,
            };
            if taken {
                npc = pc.wrapping_add((f.imm18 << 2) as u32);
            }
        }
        Opcode::Jal => {
            s.set_reg(f.a, npc);
            npc = pc.wrapping_add((f.imm22 << 2) as u32);
        }
        Opcode::Jalr => {
            let target = alu(rs1().wrapping_add(f.imm18 as u32)) & !3;
            s.set_reg(f.a, npc);
            npc = target;
        }
        Opcode::Sys => match SysFunct::from_bits(f.funct) {
            Some(SysFunct::Wfi) => {
                s.set_pc(taps.on32(Signal::CoreNpc, r, npc) as u64);
                if inp.irq {
                    take_irq(s, inp.irq);
                } else {
                    s.set_flag(flag::SLEEPING, true);
                    s.set_phase(phase::SLEEP);
                    return;
                }
                out.ireq = Some(s.pc() as u32);
                return;
            }
            Some(SysFunct::Mret) => {
                npc = s.epc() as u32;
                s.set_flag(flag::IN_ISR, false);
            }
            Some(SysFunct::Halt) => {
                s.set_flag(flag::HALTED, true);
                return;
            }
            Some(SysFunct::IrqEnable) => {
                let en = rs1v & 1 == 1;
                s.set_flag(flag::IRQ_EN, en);
            }
            None => {
                trap(s);
                return;
            }
        },
    }
    let npc = taps.on32(Signal::CoreNpc, r, npc);
    s.set_pc(npc as u64);
    take_irq(s, inp.irq);
    out.ireq = Some(s.pc() as u32);
}
