//! The assembled SoC and its cycle step.
//!
//! Per cycle: replicated state is voted, interrupts are sampled, the cores
//! step, requests are encoded/voted, the fabric arbitrates, subordinates are
//! accessed, responses are latched, peripherals advance, idle banks run
//! background work, the fault monitor latches events, a pending lockstep
//! resync is applied, and the chip outputs are sampled.

use serde::{Deserialize, Serialize};

use crate::config::{ConfigId, SocConfig};
use crate::cpu::{core_step, CoreInputs, CoreOutputs, CoreState, Resp};
use crate::ecc::{self, Codeword39, DecodeStatus};
use crate::interconnect::*;
use crate::memory::{BankCtl, BankWiring, MemEvents, SramBank, WritePayload, BANK_WORDS};
use crate::peripherals::{pins, periph_step, FaultEvents, FaultMonitor, Mmio, PeriphOut, PeriphState, Pins};
use crate::redundancy::{vote3, vote_banks};
use crate::registry::{RegisterBank, Slot};
use crate::signals::{Signal, Taps};
use crate::tcls::{resync, ResyncReport, TclsState};
use crate::workload::{Workload, DONE};

/// Signals compared against the golden run every cycle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observed {
    pub uart_tx: bool,
    pub gpio: u32,
    pub busy: bool,
    pub exception: bool,
    pub retval: u32,
}

impl Observed {
    pub fn done(&self) -> bool {
        self.retval & DONE != 0
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct StepReport {
    pub obs: Observed,
    pub events: FaultEvents,
    pub dropped_fixes: u64,
    pub resync: Option<ResyncReport>,
    /// The application start marker has been written.
    pub started: bool,
}

/// A register bank instance in the state registry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Comp {
    Core(u8),
    Tcls,
    Fabric(u8),
    RespRaw(u8),
    RespProt,
    BankCtl(u8, u8),
    Periph(u8),
    Monitor,
}

impl Comp {
    pub fn name(self) -> String {
        match self {
            Comp::Core(k) => format!("core{k}"),
            Comp::Tcls => "tcls".into(),
            Comp::Fabric(k) => format!("fabric{k}"),
            Comp::RespRaw(k) => format!("resp{k}"),
            Comp::RespProt => "resp".into(),
            Comp::BankCtl(b, k) => format!("bank{b}.ctl{k}"),
            Comp::Periph(k) => format!("periph{k}"),
            Comp::Monitor => "monitor".into(),
        }
    }

    pub fn slots(self) -> &'static [Slot] {
        match self {
            Comp::Core(_) => CoreState::SLOTS,
            Comp::Tcls => TclsState::SLOTS,
            Comp::Fabric(_) => FabricState::SLOTS,
            Comp::RespRaw(_) => RespRaw::SLOTS,
            Comp::RespProt => RespProt::SLOTS,
            Comp::BankCtl(..) => BankCtl::SLOTS,
            Comp::Periph(_) => PeriphState::SLOTS,
            Comp::Monitor => FaultMonitor::SLOTS,
        }
    }

    pub fn bits(self) -> u64 {
        self.slots().iter().map(|s| s.width as u64).sum()
    }
}

/// Rough kind of logic a combinational site belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SiteKind {
    CoreLogic,
    PeriphLogic,
    Codec,
    Voter,
    Net,
}

/// A declared combinational site present in a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Site {
    pub signal: Signal,
    pub replica: u8,
    pub width: u32,
    pub kind: SiteKind,
    /// Part of the voter/decoder output set targeted by the port campaign.
    pub port: bool,
}

impl Site {
    pub fn name(&self) -> String {
        format!("{}.r{}", self.signal.name(), self.replica)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct BusReq {
    ivalid: bool,
    iaddr: u32,
    dvalid: bool,
    dwrite: bool,
    dbe: u8,
    daddr: u32,
    dwdata: u32,
}

impl BusReq {
    fn from_out(o: &CoreOutputs) -> Self {
        let d = o.dreq.unwrap_or_default();
        BusReq {
            ivalid: o.ireq.is_some(),
            iaddr: o.ireq.unwrap_or(0),
            dvalid: o.dreq.is_some(),
            dwrite: d.write,
            dbe: d.be,
            daddr: d.addr,
            dwdata: d.wdata,
        }
    }

    fn tapped(self, taps: &Taps, r: u8) -> Self {
        BusReq {
            ivalid: taps.on_bool(Signal::BusIvalid, r, self.ivalid),
            iaddr: taps.on32(Signal::BusIaddr, r, self.iaddr),
            dvalid: taps.on_bool(Signal::BusDvalid, r, self.dvalid),
            dwrite: taps.on_bool(Signal::BusDwrite, r, self.dwrite),
            dbe: taps.on(Signal::BusDbe, r, self.dbe as u64) as u8 & 0xf,
            daddr: taps.on32(Signal::BusDaddr, r, self.daddr),
            dwdata: taps.on32(Signal::BusDwdata, r, self.dwdata),
        }
    }

    fn targets(&self) -> [Option<Option<Target>>; 2] {
        [self.ivalid.then(|| decode_addr(self.iaddr)), self.dvalid.then(|| decode_addr(self.daddr))]
    }
}

/// Requests leaving the lockstep domain with overlapping protection.
#[derive(Clone, Copy, Debug, Default)]
struct ProtReq {
    ivalid: [bool; 3],
    dvalid: [bool; 3],
    dwrite: [bool; 3],
    dbe: [u8; 3],
    iaddr: Codeword39,
    daddr: Codeword39,
    wdata: Codeword39,
}

fn set_raw_resp(r: &mut RespRaw, p: usize, valid: bool, err: bool, data: u32) {
    if p == PORT_I {
        r.set_i_valid(valid as u64);
        r.set_i_err(err as u64);
        r.set_i_rdata(data as u64);
    } else {
        r.set_d_valid(valid as u64);
        r.set_d_err(err as u64);
        r.set_d_rdata(data as u64);
    }
}

fn tap_raw_resp(r: &mut RespRaw, taps: &Taps, k: u8) {
    r.set_i_valid(taps.on(Signal::RespIvalid, k, r.i_valid()) & 1);
    r.set_i_rdata(taps.on32(Signal::RespIrdata, k, r.i_rdata() as u32) as u64);
    r.set_d_valid(taps.on(Signal::RespDvalid, k, r.d_valid()) & 1);
    r.set_d_rdata(taps.on32(Signal::RespDrdata, k, r.d_rdata() as u32) as u64);
}

fn raw_resp(r: &RespRaw, p: usize) -> Resp {
    if p == PORT_I {
        Resp { valid: r.i_valid() == 1, err: r.i_err() == 1, rdata: r.i_rdata() as u32 }
    } else {
        Resp { valid: r.d_valid() == 1, err: r.d_err() == 1, rdata: r.d_rdata() as u32 }
    }
}

fn majority(b: impl IntoIterator<Item = bool>) -> bool {
    let v: Vec<bool> = b.into_iter().collect();
    if v.len() == 3 {
        vote3(v[0], v[1], v[2]).value
    } else {
        v[0]
    }
}

fn mem_events(ev: &mut FaultEvents, m: MemEvents) -> u64 {
    ev.ecc_corrected |= m.corrected;
    ev.ecc_uncorrectable |= m.uncorrectable;
    ev.tmr |= m.tmr_mismatch;
    m.dropped_fixes
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Soc {
    pub cfg: SocConfig,
    pub cycle: u64,
    pub cores: Vec<CoreState>,
    pub tcls: TclsState,
    pub fabric: Vec<FabricState>,
    pub resp_raw: Vec<RespRaw>,
    pub resp_prot: RespProt,
    pub banks: [SramBank; 2],
    pub bank_ctl: [Vec<BankCtl>; 2],
    pub periph: Vec<PeriphState>,
    pub monitor: Option<FaultMonitor>,
}

impl Soc {
    pub fn new(cfg: SocConfig, wl: &Workload) -> Self {
        let id = cfg.id;
        let mode = id.storage();
        let mut bank0 = SramBank::new(mode);
        bank0.preload(&wl.words);
        Soc {
            cfg,
            cycle: 0,
            cores: vec![CoreState::reset(wl.entry); id.core_replicas()],
            tcls: TclsState::default(),
            fabric: vec![FabricState::default(); id.fabric_replicas()],
            resp_raw: vec![RespRaw::default(); if id.overlap() { 0 } else if id.tmrg() { 3 } else { 1 }],
            resp_prot: RespProt::default(),
            banks: [bank0, SramBank::new(mode)],
            bank_ctl: std::array::from_fn(|_| vec![BankCtl::default(); id.bank_ctl_replicas()]),
            periph: vec![PeriphState::reset(); id.periph_replicas()],
            monitor: id.has_monitor().then(FaultMonitor::default),
        }
    }

    pub fn id(&self) -> ConfigId {
        self.cfg.id
    }

    /// Register banks present in this configuration, in a stable order.
    pub fn components(&self) -> Vec<Comp> {
        let id = self.id();
        let mut v: Vec<Comp> = (0..self.cores.len() as u8).map(Comp::Core).collect();
        if id.lockstep() {
            v.push(Comp::Tcls);
        }
        v.extend((0..self.fabric.len() as u8).map(Comp::Fabric));
        v.extend((0..self.resp_raw.len() as u8).map(Comp::RespRaw));
        if id.overlap() {
            v.push(Comp::RespProt);
        }
        for b in 0..2u8 {
            v.extend((0..self.bank_ctl[b as usize].len() as u8).map(|k| Comp::BankCtl(b, k)));
        }
        v.extend((0..self.periph.len() as u8).map(Comp::Periph));
        if self.monitor.is_some() {
            v.push(Comp::Monitor);
        }
        v
    }

    pub fn words(&self, c: Comp) -> &[u64] {
        match c {
            Comp::Core(k) => self.cores[k as usize].words(),
            Comp::Tcls => self.tcls.words(),
            Comp::Fabric(k) => self.fabric[k as usize].words(),
            Comp::RespRaw(k) => self.resp_raw[k as usize].words(),
            Comp::RespProt => self.resp_prot.words(),
            Comp::BankCtl(b, k) => self.bank_ctl[b as usize][k as usize].words(),
            Comp::Periph(k) => self.periph[k as usize].words(),
            Comp::Monitor => self.monitor.as_ref().expect("no monitor").words(),
        }
    }

    pub fn words_mut(&mut self, c: Comp) -> &mut [u64] {
        match c {
            Comp::Core(k) => self.cores[k as usize].words_mut(),
            Comp::Tcls => self.tcls.words_mut(),
            Comp::Fabric(k) => self.fabric[k as usize].words_mut(),
            Comp::RespRaw(k) => self.resp_raw[k as usize].words_mut(),
            Comp::RespProt => self.resp_prot.words_mut(),
            Comp::BankCtl(b, k) => self.bank_ctl[b as usize][k as usize].words_mut(),
            Comp::Periph(k) => self.periph[k as usize].words_mut(),
            Comp::Monitor => self.monitor.as_mut().expect("no monitor").words_mut(),
        }
    }

    /// Flips one register bit.
    pub fn flip_reg(&mut self, c: Comp, slot: usize, bit: u32) {
        assert!(bit < c.slots()[slot].width, "bit {bit} outside {}.{}", c.name(), c.slots()[slot].name);
        self.words_mut(c)[slot] ^= 1 << bit;
    }

    /// Flips one SRAM cell bit (`replica` selects the copy in triplicated storage).
    pub fn flip_sram(&mut self, bank: u8, replica: u8, word: u32, bit: u32) {
        let b = &mut self.banks[bank as usize];
        assert!(bit < b.mode.cell_bits() && (replica as usize) < b.mode.replicas());
        b.cells[replica as usize * BANK_WORDS + word as usize] ^= 1 << bit;
    }

    /// Whole state except the fault monitor.
    pub fn functional_eq(&self, o: &Soc) -> bool {
        self.cycle == o.cycle
            && self.cores == o.cores
            && self.tcls == o.tcls
            && self.fabric == o.fabric
            && self.resp_raw == o.resp_raw
            && self.resp_prot == o.resp_prot
            && self.bank_ctl == o.bank_ctl
            && self.periph == o.periph
            && self.banks == o.banks
    }

    /// Software-visible memory words (decoded or voted).
    pub fn memory_image(&self) -> Vec<u32> {
        self.banks.iter().flat_map(|b| (0..BANK_WORDS).map(move |i| b.decoded(i))).collect()
    }

    pub fn memory_dump(&self) -> String {
        let mut s = self.banks[0].dump(BANK0_BASE);
        s.push_str(&self.banks[1].dump(BANK1_BASE));
        s
    }

    /// Combinational sites that exist in `id`, in a stable order.
    pub fn sites(id: ConfigId) -> Vec<Site> {
        use Signal::*;
        use SiteKind::*;
        let mut v = Vec::new();
        let mut add = |signal, replica: u8, width, kind, port| v.push(Site { signal, replica, width, kind, port });
        let cores = id.core_replicas() as u8;
        let planes = if id.tmrg() { 3 } else { 1 };
        for k in 0..cores {
            for s in [CoreIr, CoreRs1, CoreRs2, CoreAlu, CoreAgu, CoreNpc, CoreWb] {
                add(s, k, 32, CoreLogic, false);
            }
        }
        let cw = ecc::CODEWORD_BITS;
        match id {
            ConfigId::Cfg0 | ConfigId::Tmrg => {
                for k in 0..planes {
                    for (s, w) in [(BusIvalid, 1), (BusIaddr, 32), (BusDvalid, 1), (BusDwrite, 1), (BusDbe, 4), (BusDaddr, 32), (BusDwdata, 32)] {
                        add(s, k, w, Net, false);
                    }
                    for b in 0..2 {
                        add(BankEnc(b), k, 32, Net, false);
                        add(BankDec(b), k, 32, Net, false);
                    }
                    for (s, w) in [(RespIvalid, 1), (RespIrdata, 32), (RespDvalid, 1), (RespDrdata, 32)] {
                        add(s, k, w, Net, false);
                    }
                    add(PeriphWdata, k, 32, Net, false);
                    add(PeriphRdata, k, 32, Net, false);
                    add(TimerInc, k, 32, PeriphLogic, false);
                    add(Irq, k, 1, Net, false);
                }
                let pin = if id.tmrg() { Voter } else { Net };
                add(BusyPin, 0, 1, pin, false);
                add(UartPin, 0, 1, pin, false);
                add(GpioPin, 0, 32, pin, false);
            }
            _ => {
                if id == ConfigId::Cfg2 {
                    for (s, w) in [(VoteIvalid, 1), (VoteIaddr, 32), (VoteDvalid, 1), (VoteDwrite, 1), (VoteDbe, 4), (VoteDaddr, 32), (VoteDwdata, 32)] {
                        add(s, 0, w, Voter, true);
                    }
                }
                if id.overlap() {
                    for k in 0..3 {
                        for s in [EncIaddr, EncDaddr, EncWdata] {
                            add(s, k, cw, Codec, false);
                        }
                        for s in [DecIrdata, DecDrdata] {
                            add(s, k, 32, Codec, true);
                        }
                    }
                    for s in [VoteIaddr, VoteDaddr, VoteDwdata] {
                        add(s, 0, cw, Voter, true);
                    }
                    for f in 0..3 {
                        add(FabricAdecI, f, 32, Codec, false);
                        add(FabricAdecD, f, 32, Codec, false);
                        add(FabricGrant, f, 2, Net, false);
                        add(RespIvalid, f, 1, Net, false);
                        add(RespDvalid, f, 1, Net, false);
                    }
                    add(RespIrdata, 0, cw, Net, false);
                    add(RespDrdata, 0, cw, Net, false);
                } else {
                    for (s, w) in [(BusIvalid, 1), (BusIaddr, 32), (BusDvalid, 1), (BusDwrite, 1), (BusDbe, 4), (BusDaddr, 32), (BusDwdata, 32)] {
                        add(s, 0, w, Net, false);
                    }
                    for (s, w) in [(RespIvalid, 1), (RespIrdata, 32), (RespDvalid, 1), (RespDrdata, 32)] {
                        add(s, 0, w, Net, false);
                    }
                }
                for b in 0..2 {
                    if !id.overlap() {
                        add(BankEnc(b), 0, cw, Codec, false);
                        add(BankDec(b), 0, 32, Codec, id == ConfigId::Cfg2);
                    }
                    if id.tmr_periph() {
                        for k in 0..3 {
                            add(BankRmw(b), k, cw, Codec, false);
                        }
                        add(BankRmwVote(b), 0, cw, Voter, false);
                    } else {
                        add(BankRmw(b), 0, cw, Codec, false);
                    }
                    add(BankBgWb(b), 0, cw, Net, false);
                }
                let np = id.periph_replicas() as u8;
                let rdw = if id.overlap() { cw } else { 32 };
                let rdkind = if id.overlap() { Codec } else { Net };
                for k in 0..np {
                    add(PeriphWdata, k, 32, if id.overlap() { Codec } else { Net }, false);
                    add(PeriphRdata, k, rdw, rdkind, false);
                    add(TimerInc, k, 32, PeriphLogic, false);
                    add(Irq, k, 1, Net, false);
                }
                if np == 3 {
                    add(PeriphRvote, 0, cw, Voter, false);
                }
                let pin = if id.tmr_periph() { Voter } else { Net };
                add(BusyPin, 0, 1, if id.lockstep() { Voter } else { Net }, id.lockstep());
                add(UartPin, 0, 1, pin, false);
                add(GpioPin, 0, 32, pin, false);
            }
        }
        v
    }

    /// Advances one cycle with the given transient (if any).
    pub fn step(&mut self, taps: &Taps) -> StepReport {
        let rep = match self.id() {
            ConfigId::Cfg0 | ConfigId::Tmrg => self.step_planes(taps),
            _ => self.step_protected(taps),
        };
        self.cycle += 1;
        rep
    }

    fn monitor_value(&self, off: u32) -> u32 {
        self.monitor.as_ref().map_or(0, |m| m.read(off))
    }

    fn periph_value(&self, o: &PeriphOut) -> u32 {
        o.monitor_read.map_or(o.rdata, |off| self.monitor_value(off))
    }

    /// One unprotected logic plane: core `k`, fabric `k`, SRAM replica `k`,
    /// response latch `k`, peripherals `k`.
    fn step_raw_plane(&mut self, k: usize, taps: &Taps) -> (CoreOutputs, PeriphOut) {
        let r = k as u8;
        let inp = CoreInputs {
            iresp: raw_resp(&self.resp_raw[k], PORT_I),
            dresp: raw_resp(&self.resp_raw[k], PORT_D),
            irq: taps.on_bool(Signal::Irq, r, self.periph[k].timer_irq() == 1),
        };
        let out = core_step(&mut self.cores[k], &inp, taps, r);
        let req = BusReq::from_out(&out).tapped(taps, r);
        let grants = arbitrate(&mut self.fabric[k], req.targets(), [true; 3]);
        let mut resp = RespRaw::default();
        let mut mmio = None;
        let mut periph_port = None;
        for (p, g) in grants.into_iter().enumerate() {
            match g {
                Grant::Granted(Target::Bank { bank, idx }) => {
                    let b = &mut self.banks[bank as usize];
                    let data = if p == PORT_D && req.dwrite {
                        b.plane_write(k, idx, req.dwdata, req.dbe, taps, bank);
                        0
                    } else {
                        b.plane_read(k, idx, taps, bank)
                    };
                    set_raw_resp(&mut resp, p, true, false, data);
                }
                Grant::Granted(Target::Periph { offset }) => {
                    let write = p == PORT_D && req.dwrite;
                    mmio = Some(Mmio { offset, write, wdata: req.dwdata, be: req.dbe });
                    periph_port = Some(p);
                }
                Grant::Error => set_raw_resp(&mut resp, p, true, true, 0),
                Grant::Idle | Grant::Stalled => {}
            }
        }
        let pout = periph_step(&mut self.periph[k], mmio, taps, r);
        if let Some(p) = periph_port {
            let v = taps.on32(Signal::PeriphRdata, r, self.periph_value(&pout));
            set_raw_resp(&mut resp, p, true, pout.err, v);
        }
        tap_raw_resp(&mut resp, taps, r);
        self.resp_raw[k] = resp;
        (out, pout)
    }

    fn step_planes(&mut self, taps: &Taps) -> StepReport {
        let mut rep = StepReport::default();
        let n = self.cores.len();
        if n == 3 {
            let mut m = vote_banks(&mut self.cores);
            m |= vote_banks(&mut self.fabric);
            m |= vote_banks(&mut self.resp_raw);
            m |= vote_banks(&mut self.periph);
            rep.events.tmr = m;
        }
        let mut outs = Vec::with_capacity(n);
        let mut pouts = Vec::with_capacity(n);
        for k in 0..n {
            let (o, p) = self.step_raw_plane(k, taps);
            outs.push(o);
            pouts.push(p);
        }
        let clear = majority(pouts.iter().map(|p| p.monitor_clear));
        if let Some(m) = self.monitor.as_mut() {
            m.step(rep.events, clear);
        }
        let busy = taps.on_bool(Signal::BusyPin, 0, majority(outs.iter().map(|o| o.busy)));
        rep.obs = self.observe(busy, taps);
        rep.started = majority(self.periph.iter().map(|p| p.started() == 1));
        rep
    }

    fn voted_pins(&self) -> Pins {
        if self.periph.len() == 3 {
            let p: Vec<Pins> = self.periph.iter().map(pins).collect();
            Pins {
                uart_tx: vote3(p[0].uart_tx, p[1].uart_tx, p[2].uart_tx).value,
                gpio: vote3(p[0].gpio, p[1].gpio, p[2].gpio).value,
            }
        } else {
            pins(&self.periph[0])
        }
    }

    fn observe(&self, busy: bool, taps: &Taps) -> Observed {
        let p = self.voted_pins();
        let retval = if self.periph.len() == 3 {
            let r: Vec<u32> = self.periph.iter().map(|s| s.retval() as u32).collect();
            vote3(r[0], r[1], r[2]).value
        } else {
            self.periph[0].retval() as u32
        };
        Observed {
            uart_tx: taps.on_bool(Signal::UartPin, 0, p.uart_tx),
            gpio: taps.on32(Signal::GpioPin, 0, p.gpio),
            busy,
            exception: majority(self.cores.iter().map(|c| c.exception())),
            retval,
        }
    }

    fn step_protected(&mut self, taps: &Taps) -> StepReport {
        let id = self.id();
        let overlap = id.overlap();
        let n = self.cores.len();
        let np = self.periph.len();
        let mut rep = StepReport::default();
        let mut ev = FaultEvents::default();

        if self.fabric.len() == 3 {
            ev.interconnect |= vote_banks(&mut self.fabric);
        }
        if np == 3 {
            ev.tmr |= vote_banks(&mut self.periph);
        }
        for b in 0..2 {
            if self.bank_ctl[b].len() == 3 {
                ev.tmr |= vote_banks(&mut self.bank_ctl[b]);
            }
        }

        // Cores.
        let shared_irq = taps.on_bool(Signal::Irq, 0, self.periph[0].timer_irq() == 1);
        let mut outs = [CoreOutputs::default(); 3];
        for k in 0..n {
            let r = k as u8;
            let irq = if np == 3 { taps.on_bool(Signal::Irq, r, self.periph[k].timer_irq() == 1) } else { shared_irq };
            let (iresp, dresp) = if overlap {
                let mut port = |p: usize, sig: Signal| {
                    let pr = self.resp_prot.port(p, r);
                    let d = ecc::decode(pr.rdata);
                    if pr.valid {
                        ev.interconnect |= d.status.is_corrected();
                        ev.ecc_uncorrectable |= d.status.is_uncorrectable();
                    }
                    Resp { valid: pr.valid, err: pr.err, rdata: taps.on32(sig, r, d.data) }
                };
                (port(PORT_I, Signal::DecIrdata), port(PORT_D, Signal::DecDrdata))
            } else {
                (raw_resp(&self.resp_raw[0], PORT_I), raw_resp(&self.resp_raw[0], PORT_D))
            };
            outs[k] = core_step(&mut self.cores[k], &CoreInputs { iresp, dresp, irq }, taps, r);
        }
        if overlap {
            ev.interconnect |= self.resp_prot.handshake_mismatch();
        }

        // Lockstep outputs.
        let reqs: [BusReq; 3] = std::array::from_fn(|k| BusReq::from_out(&outs[k.min(n - 1)]));
        let mut mismatch = false;
        let mut raw_req = reqs[0];
        let mut preq = ProtReq::default();
        let busy;
        if n == 1 {
            busy = taps.on_bool(Signal::BusyPin, 0, outs[0].busy);
        } else {
            let vb = vote3(outs[0].busy, outs[1].busy, outs[2].busy);
            mismatch |= vb.mismatch;
            busy = taps.on_bool(Signal::BusyPin, 0, vb.value);
            macro_rules! v {
                ($f:ident, $sig:expr) => {{
                    let x = vote3(reqs[0].$f, reqs[1].$f, reqs[2].$f);
                    mismatch |= x.mismatch;
                    x.value
                }};
            }
            if overlap {
                for k in 0..3 {
                    preq.ivalid[k] = reqs[k].ivalid;
                    preq.dvalid[k] = reqs[k].dvalid;
                    preq.dwrite[k] = reqs[k].dwrite;
                    preq.dbe[k] = reqs[k].dbe;
                }
                for (a, b) in [(0, 1), (1, 2)] {
                    let (x, y) = (&reqs[a], &reqs[b]);
                    mismatch |= x.ivalid != y.ivalid || x.dvalid != y.dvalid || x.dwrite != y.dwrite || x.dbe != y.dbe;
                }
                let enc = |sig: Signal, f: fn(&BusReq) -> u32| -> [u64; 3] {
                    std::array::from_fn(|k| taps.on(sig, k as u8, ecc::encode(f(&reqs[k])).raw()))
                };
                let mut vote_cw = |c: [u64; 3], sig: Signal| {
                    let x = vote3(c[0], c[1], c[2]);
                    mismatch |= x.mismatch;
                    Codeword39::from_raw(taps.on(sig, 0, x.value))
                };
                preq.iaddr = vote_cw(enc(Signal::EncIaddr, |q| q.iaddr), Signal::VoteIaddr);
                preq.daddr = vote_cw(enc(Signal::EncDaddr, |q| q.daddr), Signal::VoteDaddr);
                preq.wdata = vote_cw(enc(Signal::EncWdata, |q| q.dwdata), Signal::VoteDwdata);
            } else {
                raw_req = BusReq {
                    ivalid: taps.on_bool(Signal::VoteIvalid, 0, v!(ivalid, 0)),
                    iaddr: taps.on32(Signal::VoteIaddr, 0, v!(iaddr, 0)),
                    dvalid: taps.on_bool(Signal::VoteDvalid, 0, v!(dvalid, 0)),
                    dwrite: taps.on_bool(Signal::VoteDwrite, 0, v!(dwrite, 0)),
                    dbe: taps.on(Signal::VoteDbe, 0, v!(dbe, 0) as u64) as u8 & 0xf,
                    daddr: taps.on32(Signal::VoteDaddr, 0, v!(daddr, 0)),
                    dwdata: taps.on32(Signal::VoteDwdata, 0, v!(dwdata, 0)),
                };
            }
        }
        ev.tcls = mismatch;

        // Fabric.
        let ready = [self.bank_ctl[0][0].stall() == 0, self.bank_ctl[1][0].stall() == 0, true];
        let mut per_fabric = [[Grant::Idle; 2]; 3];
        let grants: [Grant; 2];
        let (dwrite, dbe);
        if overlap {
            let hv = |x: [bool; 3], ev: &mut FaultEvents| {
                let (v, m) = vote_handshake(x);
                ev.interconnect |= m;
                v
            };
            let ivalid = hv(preq.ivalid, &mut ev);
            let dvalid = hv(preq.dvalid, &mut ev);
            dwrite = hv(preq.dwrite, &mut ev);
            let vbe = vote3(preq.dbe[0], preq.dbe[1], preq.dbe[2]);
            ev.interconnect |= vbe.mismatch;
            dbe = vbe.value;
            let ia = ecc::decode(preq.iaddr);
            let da = ecc::decode(preq.daddr);
            for (valid, d) in [(ivalid, &ia), (dvalid, &da)] {
                if valid {
                    ev.interconnect |= d.status.is_corrected();
                    ev.ecc_uncorrectable |= d.status.is_uncorrectable();
                }
            }
            for f in 0..3 {
                let r = f as u8;
                let iaddr = taps.on32(Signal::FabricAdecI, r, ia.data);
                let daddr = taps.on32(Signal::FabricAdecD, r, da.data);
                let targets = [ivalid.then(|| decode_addr(iaddr)), dvalid.then(|| decode_addr(daddr))];
                let mut g = arbitrate(&mut self.fabric[f], targets, ready);
                let bits = g.iter().enumerate().map(|(p, x)| (matches!(x, Grant::Granted(_)) as u64) << p).sum::<u64>();
                let flipped = taps.on(Signal::FabricGrant, r, bits) ^ bits;
                for p in 0..2 {
                    if flipped >> p & 1 == 1 {
                        g[p] = match (g[p], targets[p]) {
                            (Grant::Granted(_), _) => Grant::Stalled,
                            (_, Some(Some(t))) => Grant::Granted(t),
                            (x, _) => x,
                        };
                    }
                }
                per_fabric[f] = g;
            }
            grants = std::array::from_fn(|p| {
                let (g, m) = vote_grants([per_fabric[0][p], per_fabric[1][p], per_fabric[2][p]]);
                ev.interconnect |= m;
                g
            });
        } else {
            raw_req = raw_req.tapped(taps, 0);
            grants = arbitrate(&mut self.fabric[0], raw_req.targets(), ready);
            dwrite = raw_req.dwrite;
            dbe = raw_req.dbe;
        }

        // Subordinates.
        let zero_payload = if overlap { ecc::encode(0).raw() } else { 0 };
        let mut served: [Option<(bool, u64)>; 2] = [None; 2];
        let mut accessed = [false; 2];
        let mut stall_next = [false; 2];
        let mut periph_req = None;
        for p in 0..2 {
            match grants[p] {
                Grant::Granted(Target::Bank { bank, idx }) => {
                    let b = bank as usize;
                    accessed[b] = true;
                    if p == PORT_D && dwrite {
                        let payload = if overlap { WritePayload::Code(preq.wdata) } else { WritePayload::Raw(raw_req.dwdata) };
                        let wiring = BankWiring { bank, logic_replicas: self.bank_ctl[b].len() as u8 };
                        let (st, m) = self.banks[b].bank_write(idx, payload, dbe, wiring, taps);
                        stall_next[b] = st;
                        rep.dropped_fixes += mem_events(&mut ev, m);
                        served[p] = Some((false, zero_payload));
                    } else {
                        let (data, status, m) = self.banks[b].bank_read(idx, taps, bank);
                        rep.dropped_fixes += mem_events(&mut ev, m);
                        let sram = &self.banks[b];
                        for ctl in self.bank_ctl[b].iter_mut() {
                            rep.dropped_fixes += sram.monitor_read_fix(ctl, idx, status).dropped_fixes;
                        }
                        served[p] = Some((false, data));
                    }
                }
                Grant::Granted(Target::Periph { offset }) => periph_req = Some((p, offset)),
                Grant::Error => served[p] = Some((true, zero_payload)),
                Grant::Idle | Grant::Stalled => {}
            }
        }

        // Peripherals.
        let mut pouts = [PeriphOut::default(); 3];
        for j in 0..np {
            let mmio = periph_req.map(|(p, offset)| {
                let write = p == PORT_D && dwrite;
                let wdata = if overlap {
                    let d = ecc::decode(preq.wdata);
                    if write {
                        ev.interconnect |= d.status.is_corrected();
                        ev.ecc_uncorrectable |= d.status.is_uncorrectable();
                    }
                    d.data
                } else {
                    raw_req.dwdata
                };
                Mmio { offset, write, wdata, be: dbe }
            });
            pouts[j] = periph_step(&mut self.periph[j], mmio, taps, j as u8);
        }
        if let Some((p, _)) = periph_req {
            let vals: Vec<u32> = pouts[..np].iter().map(|o| self.periph_value(o)).collect();
            let err = majority(pouts[..np].iter().map(|o| o.err));
            let payload = if overlap {
                let c: Vec<u64> = (0..np).map(|j| taps.on(Signal::PeriphRdata, j as u8, ecc::encode(vals[j]).raw())).collect();
                if np == 3 {
                    let v = vote3(c[0], c[1], c[2]);
                    ev.tmr |= v.mismatch;
                    taps.on(Signal::PeriphRvote, 0, v.value)
                } else {
                    c[0]
                }
            } else {
                taps.on32(Signal::PeriphRdata, 0, vals[0]) as u64
            };
            served[p] = Some((err, payload));
        }
        let monitor_clear = majority(pouts[..np].iter().map(|o| o.monitor_clear));

        // Response latches.
        if overlap {
            let mut rp = RespProt::default();
            for p in 0..2 {
                let (err, data) = served[p].unwrap_or((false, zero_payload));
                let mut valid = 0u64;
                let mut errs = 0u64;
                for f in 0..3 {
                    let sig = if p == PORT_I { Signal::RespIvalid } else { Signal::RespDvalid };
                    let v = matches!(per_fabric[f][p], Grant::Granted(_) | Grant::Error);
                    valid |= (taps.on_bool(sig, f as u8, v) as u64) << f;
                    errs |= ((v && err) as u64) << f;
                }
                if p == PORT_I {
                    rp.set_i_valid(valid);
                    rp.set_i_err(errs);
                    rp.set_i_rdata(taps.on(Signal::RespIrdata, 0, data));
                } else {
                    rp.set_d_valid(valid);
                    rp.set_d_err(errs);
                    rp.set_d_rdata(taps.on(Signal::RespDrdata, 0, data));
                }
            }
            self.resp_prot = rp;
        } else {
            let mut rr = RespRaw::default();
            for p in 0..2 {
                if let Some((err, data)) = served[p] {
                    set_raw_resp(&mut rr, p, true, err, data as u32);
                }
            }
            tap_raw_resp(&mut rr, taps, 0);
            self.resp_raw[0] = rr;
        }

        // Background memory work.
        let scrub_en = self.periph[0].scrub_en() == 1;
        for b in 0..2 {
            let ctls = &mut self.bank_ctl[b];
            let idle = !accessed[b] && ctls[0].stall() == 0;
            let wiring = BankWiring { bank: b as u8, logic_replicas: ctls.len() as u8 };
            let m = self.banks[b].background(&mut ctls[0], scrub_en, self.cfg.scrub_period, idle, wiring, taps);
            rep.dropped_fixes += mem_events(&mut ev, m);
            ctls[0].set_stall(stall_next[b] as u64);
            let first = ctls[0].clone();
            for c in ctls.iter_mut().skip(1) {
                *c = first.clone();
            }
        }

        if let Some(m) = self.monitor.as_mut() {
            m.step(ev, monitor_clear);
        }

        if n == 3 && self.tcls.step(mismatch, self.cfg.resync_latency) {
            rep.resync = Some(resync(&mut self.cores));
        }

        rep.events = ev;
        rep.obs = self.observe(busy, taps);
        rep.started = majority(self.periph.iter().map(|p| p.started() == 1));
        rep
    }
}

/// Decode status of a bank word, for diagnostics.
pub fn word_status(b: &SramBank, i: usize) -> DecodeStatus {
    if b.mode.has_ecc() {
        ecc::decode(Codeword39::from_raw(b.cells[i])).status
    } else {
        DecodeStatus::Clean
    }
}

/// Decodes 8N1 frames from the sampled transmit pin.
pub fn uart_text(obs: &[Observed]) -> String {
    let tx: Vec<bool> = obs.iter().map(|o| o.uart_tx).collect();
    let div = crate::peripherals::UART_DIVIDER as usize;
    let mut out = String::new();
    let mut i = 1;
    while i < tx.len() {
        if tx[i - 1] && !tx[i] {
            let mid = |b: usize| tx.get(i + b * div + div / 2).copied().unwrap_or(true);
            let mut byte = 0u8;
            for b in 0..8 {
                byte |= (mid(b + 1) as u8) << b;
            }
            out.push(byte as char);
            i += 10 * div;
        } else {
            i += 1;
        }
    }
    out
}

/// Output trace, one row per change.
pub fn trace_csv(obs: &[Observed]) -> String {
    let mut s = String::from("cycle,uart_tx,gpio,busy,exception,retval\n");
    let mut prev = None;
    for (c, o) in obs.iter().enumerate() {
        if prev != Some(*o) {
            s.push_str(&format!("{c},{},{:#010x},{},{},{:#010x}\n", o.uart_tx as u8, o.gpio, o.busy as u8, o.exception as u8, o.retval));
            prev = Some(*o);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::probe;
    use crate::workload;

    fn run(id: ConfigId) -> (Soc, Vec<Observed>, u64) {
        let wl = workload::build().unwrap();
        let mut soc = Soc::new(SocConfig::new(id), &wl);
        let mut obs = Vec::new();
        let mut start = None;
        loop {
            let r = soc.step(&Taps::NONE);
            assert!(!r.events.any(), "{id}: fault event in a fault-free run at {}", soc.cycle);
            if r.started && start.is_none() {
                start = Some(soc.cycle);
            }
            obs.push(r.obs);
            if r.obs.done() {
                break;
            }
            assert!(soc.cycle < 200_000, "{id}: no completion");
        }
        (soc, obs, start.unwrap())
    }

    #[test]
    fn golden_run_completes_identically_in_every_configuration() {
        let (ref_soc, ref_obs, ref_start) = run(ConfigId::Cfg0);
        assert_eq!(ref_obs.last().unwrap().retval, DONE, "kernel self-check failed");
        assert_eq!(uart_text(&ref_obs), workload::MESSAGE);
        for id in ConfigId::ALL {
            let (soc, obs, start) = run(id);
            assert_eq!(soc.cycle, ref_soc.cycle, "{id}");
            assert_eq!(start, ref_start, "{id}");
            assert_eq!(obs, ref_obs, "{id}");
            assert_eq!(soc.memory_image(), ref_soc.memory_image(), "{id}");
        }
    }

    #[test]
    fn every_declared_site_is_evaluated() {
        for id in ConfigId::ALL {
            probe::start();
            run(id);
            let seen = probe::take();
            // Write and write-back ports only toggle when the workload or a
            // correction uses them.
            for s in Soc::sites(id) {
                let event_driven = matches!(
                    s.signal,
                    Signal::BankEnc(_) | Signal::BankRmw(_) | Signal::BankRmwVote(_) | Signal::BankBgWb(_)
                );
                assert!(event_driven || seen.contains(&(s.signal, s.replica)), "{id}: {} never evaluated", s.name());
            }
            let declared: std::collections::BTreeSet<_> = Soc::sites(id).iter().map(|s| (s.signal, s.replica)).collect();
            for s in &seen {
                assert!(declared.contains(s), "{id}: {:?} evaluated but not declared", s);
            }
        }
    }

    #[test]
    fn registry_covers_all_state() {
        let wl = workload::build().unwrap();
        for id in ConfigId::ALL {
            let soc = Soc::new(SocConfig::new(id), &wl);
            for c in soc.components() {
                assert_eq!(soc.words(c).len(), c.slots().len());
            }
        }
    }
}
