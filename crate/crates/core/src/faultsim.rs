//! Fault injection: target enumeration, golden runs, single faulty runs,
//! classification and parallel campaigns.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigId, SocConfig, DEFAULT_RESYNC_LATENCY, DEFAULT_SCRUB_PERIOD};
use crate::memory::BANK_WORDS;
use crate::peripherals::MONITOR_COUNTERS;
use crate::report::AreaModel;
use crate::signals::{ActiveTap, Signal, Taps};
use crate::soc::{Comp, Observed, Site, SiteKind, Soc};
use crate::workload::Workload;

/// Golden checkpoint spacing, also the convergence check interval.
pub const CHECKPOINT_INTERVAL: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Every state bit, SRAM included, uniformly.
    FfAll,
    /// Every state bit except SRAM cells.
    FfExclSram,
    /// SRAM cells only.
    FfSram,
    /// Transients on combinational nets and register inputs, weighted by area.
    Set,
    /// Transients on lockstep voter outputs and ECC decoder outputs.
    Port,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [Scenario::FfAll, Scenario::FfExclSram, Scenario::FfSram, Scenario::Set, Scenario::Port];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::FfAll => "ff-all",
            Scenario::FfExclSram => "ff-excl-sram",
            Scenario::FfSram => "ff-sram",
            Scenario::Set => "set",
            Scenario::Port => "port",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let l = s.to_ascii_lowercase().replace('_', "-");
        Scenario::ALL
            .into_iter()
            .find(|x| x.name() == l)
            .ok_or_else(|| format!("unknown scenario `{s}` (expected one of ff-all, ff-excl-sram, ff-sram, set, port)"))
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("scenario {scenario} has no targets in configuration {config}")]
    EmptyTargetSet { config: ConfigId, scenario: Scenario },
    #[error("double-bit mode needs SRAM targets, scenario {0} has none")]
    DoubleBitWithoutSram(Scenario),
    #[error("golden run did not finish within {0} cycles")]
    GoldenTimeout(u64),
    #[error("golden run never wrote the start marker")]
    NoStartMarker,
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Where a fault lands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Locator {
    Reg { comp: Comp, slot: u16, bit: u8 },
    Sram { bank: u8, replica: u8, word: u16, bit: u8 },
    Net { signal: Signal, replica: u8, bit: u8 },
}

impl Locator {
    /// Stable hierarchical identifier.
    pub fn id(&self) -> String {
        match *self {
            Locator::Reg { comp, slot, bit } => format!("{}.{}[{bit}]", comp.name(), comp.slots()[slot as usize].name),
            Locator::Sram { bank, replica, word, bit } => format!("bank{bank}.sram{replica}[{word}][{bit}]"),
            Locator::Net { signal, replica, bit } => format!("{}.r{replica}[{bit}]", signal.name()),
        }
    }

    pub fn is_sram(&self) -> bool {
        matches!(self, Locator::Sram { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GroupKind {
    Reg { comp: Comp, slot: u16 },
    Sram { bank: u8, replica: u8, cell_bits: u8 },
    Net(Site),
}

/// A contiguous run of equally weighted fault bits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetGroup {
    pub kind: GroupKind,
    pub bits: u64,
    pub weight_per_bit: f64,
}

impl TargetGroup {
    fn locate(&self, b: u64) -> Locator {
        match self.kind {
            GroupKind::Reg { comp, slot } => Locator::Reg { comp, slot, bit: b as u8 },
            GroupKind::Sram { bank, replica, cell_bits } => Locator::Sram {
                bank,
                replica,
                word: (b / cell_bits as u64) as u16,
                bit: (b % cell_bits as u64) as u8,
            },
            GroupKind::Net(s) => Locator::Net { signal: s.signal, replica: s.replica, bit: b as u8 },
        }
    }

    pub fn name(&self) -> String {
        match self.kind {
            GroupKind::Reg { comp, slot } => format!("{}.{}", comp.name(), comp.slots()[slot as usize].name),
            GroupKind::Sram { bank, replica, .. } => format!("bank{bank}.sram{replica}"),
            GroupKind::Net(s) => s.name(),
        }
    }
}

/// Weighted fault population of one configuration and scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    pub groups: Vec<TargetGroup>,
    cumulative: Vec<f64>,
}

impl TargetSet {
    fn new(groups: Vec<TargetGroup>) -> Self {
        let mut acc = 0.0;
        let cumulative = groups
            .iter()
            .map(|g| {
                acc += g.bits as f64 * g.weight_per_bit;
                acc
            })
            .collect();
        TargetSet { groups, cumulative }
    }

    pub fn total_weight(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn total_bits(&self) -> u64 {
        self.groups.iter().map(|g| g.bits).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Weight share of the groups matching `f`.
    pub fn share(&self, f: impl Fn(&TargetGroup) -> bool) -> f64 {
        let w: f64 = self.groups.iter().filter(|g| f(g)).map(|g| g.bits as f64 * g.weight_per_bit).sum();
        w / self.total_weight()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Locator {
        let x = rng.gen::<f64>() * self.total_weight();
        let i = self.cumulative.partition_point(|&c| c <= x).min(self.groups.len() - 1);
        let g = &self.groups[i];
        g.locate(rng.gen_range(0..g.bits))
    }
}

/// GE per bit of a combinational site.
fn site_weight(s: &Site, area: &AreaModel) -> f64 {
    match s.kind {
        SiteKind::CoreLogic => area.core_logic_ge / area.core_logic_bits,
        SiteKind::PeriphLogic => area.periph_logic_ge / s.width as f64,
        SiteKind::Codec => area.codec_ge / s.width as f64,
        SiteKind::Voter => area.voter_ge_per_bit,
        SiteKind::Net => area.net_ge_per_bit,
    }
}

/// Enumerates the fault population of `scenario` in `id`.
pub fn enumerate_targets(id: ConfigId, scenario: Scenario, area: &AreaModel) -> Result<TargetSet, CampaignError> {
    let soc = Soc::new(SocConfig::new(id), &Workload { entry: 0, words: vec![0] });
    let mut groups = Vec::new();
    let regs = |groups: &mut Vec<TargetGroup>, w: f64| {
        for c in soc.components() {
            for (i, s) in c.slots().iter().enumerate() {
                groups.push(TargetGroup {
                    kind: GroupKind::Reg { comp: c, slot: i as u16 },
                    bits: s.width as u64,
                    weight_per_bit: w,
                });
            }
        }
    };
    let sram = |groups: &mut Vec<TargetGroup>| {
        for (b, bank) in soc.banks.iter().enumerate() {
            for r in 0..bank.mode.replicas() {
                let cell_bits = bank.mode.cell_bits();
                groups.push(TargetGroup {
                    kind: GroupKind::Sram { bank: b as u8, replica: r as u8, cell_bits: cell_bits as u8 },
                    bits: BANK_WORDS as u64 * cell_bits as u64,
                    weight_per_bit: 1.0,
                });
            }
        }
    };
    match scenario {
        Scenario::FfAll => {
            regs(&mut groups, 1.0);
            sram(&mut groups);
        }
        Scenario::FfExclSram => regs(&mut groups, 1.0),
        Scenario::FfSram => sram(&mut groups),
        Scenario::Set => {
            regs(&mut groups, area.ff_ge);
            for s in Soc::sites(id) {
                groups.push(TargetGroup { kind: GroupKind::Net(s), bits: s.width as u64, weight_per_bit: site_weight(&s, area) });
            }
        }
        Scenario::Port => {
            for s in Soc::sites(id).into_iter().filter(|s| s.port) {
                groups.push(TargetGroup { kind: GroupKind::Net(s), bits: s.width as u64, weight_per_bit: 1.0 });
            }
        }
    }
    if groups.is_empty() {
        return Err(CampaignError::EmptyTargetSet { config: id, scenario });
    }
    Ok(TargetSet::new(groups))
}

/// Fault-free reference run.
#[derive(Clone, Debug)]
pub struct Golden {
    pub cfg: SocConfig,
    /// `obs[c]`: outputs sampled at the end of cycle `c`.
    pub obs: Vec<Observed>,
    /// First cycle of the measured window.
    pub start: u64,
    /// Total cycles; the last one observes the completion write.
    pub end: u64,
    /// State at the start of cycle `i * CHECKPOINT_INTERVAL`.
    pub checkpoints: Vec<Soc>,
    pub final_state: Soc,
    pub final_image: Vec<u32>,
}

/// Golden runs give up after this many cycles.
pub const GOLDEN_LIMIT: u64 = 1_000_000;

pub fn golden_run(cfg: SocConfig, wl: &Workload) -> Result<Golden, CampaignError> {
    let mut soc = Soc::new(cfg, wl);
    let mut obs = Vec::new();
    let mut checkpoints = Vec::new();
    let mut start = None;
    loop {
        if soc.cycle % CHECKPOINT_INTERVAL == 0 {
            checkpoints.push(soc.clone());
        }
        let r = soc.step(&Taps::NONE);
        obs.push(r.obs);
        if r.started && start.is_none() {
            start = Some(soc.cycle);
        }
        if r.obs.done() {
            break;
        }
        if soc.cycle >= GOLDEN_LIMIT {
            return Err(CampaignError::GoldenTimeout(GOLDEN_LIMIT));
        }
    }
    let start = start.ok_or(CampaignError::NoStartMarker)?;
    Ok(Golden { cfg, obs, start, end: soc.cycle, checkpoints, final_image: soc.memory_image(), final_state: soc })
}

/// One fault to inject.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub index: u64,
    pub loc: Locator,
    /// State faults are applied before this cycle; transients act during it.
    pub cycle: u64,
    /// Second bit of a double-bit SRAM upset in the same word.
    pub second_bit: Option<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    Masked,
    Corrected,
    Latent,
    Failure,
    Uncorrectable,
}

impl Class {
    pub const ALL: [Class; 5] = [Class::Masked, Class::Corrected, Class::Latent, Class::Failure, Class::Uncorrectable];

    pub fn name(self) -> &'static str {
        match self {
            Class::Masked => "masked",
            Class::Corrected => "corrected",
            Class::Latent => "latent",
            Class::Failure => "failure",
            Class::Uncorrectable => "uncorrectable",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Normal,
    Early,
    Late,
    Timeout,
}

/// Classified result of one faulty run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub spec: FaultSpec,
    pub class: Class,
    pub first_divergence: Option<u64>,
    /// Cycles with an event per monitor counter.
    pub counters: [u64; 5],
    pub mem_diff: u32,
    pub raw_diff: u32,
    pub termination: Termination,
    pub converged: bool,
    pub dropped_fixes: u64,
}

/// Precedence: uncorrectable, failure, latent, corrected, masked.
pub fn classify(counters: &[u64; 5], diverged: bool, termination: Termination, mem_diff: u32) -> Class {
    if counters[2] > 0 {
        Class::Uncorrectable
    } else if diverged || termination != Termination::Normal {
        Class::Failure
    } else if mem_diff > 0 {
        Class::Latent
    } else if counters.iter().any(|&c| c > 0) {
        Class::Corrected
    } else {
        Class::Masked
    }
}

fn raw_diff(a: &Soc, b: &Soc) -> u32 {
    a.banks
        .iter()
        .zip(&b.banks)
        .map(|(x, y)| x.cells.iter().zip(&y.cells).filter(|(p, q)| p != q).count() as u32)
        .sum()
}

/// Runs one faulty simulation against the golden reference.
pub fn run_one(g: &Golden, spec: &FaultSpec) -> SimOutcome {
    let cp = (spec.cycle / CHECKPOINT_INTERVAL) as usize;
    let mut soc = g.checkpoints[cp].clone();
    while soc.cycle < spec.cycle {
        soc.step(&Taps::NONE);
    }
    let mut taps = Taps::NONE;
    match spec.loc {
        Locator::Reg { comp, slot, bit } => soc.flip_reg(comp, slot as usize, bit as u32),
        Locator::Sram { bank, replica, word, bit } => {
            soc.flip_sram(bank, replica, word as u32, bit as u32);
            if let Some(b2) = spec.second_bit {
                soc.flip_sram(bank, replica, word as u32, b2 as u32);
            }
        }
        Locator::Net { signal, replica, bit } => {
            taps = Taps(Some(ActiveTap { signal, replica, mask: 1 << bit }));
        }
    }
    let budget = 2 * g.end;
    let mut counters = [0u64; 5];
    let mut first_div = None;
    let mut dropped = 0;
    let mut converged = false;
    let mut done_at = None;
    loop {
        let c = soc.cycle;
        let t = if c == spec.cycle { taps } else { Taps::NONE };
        let r = soc.step(&t);
        let ev = r.events;
        for (i, on) in [ev.tcls, ev.ecc_corrected, ev.ecc_uncorrectable, ev.interconnect, ev.tmr].into_iter().enumerate() {
            counters[i] += on as u64;
        }
        dropped += r.dropped_fixes;
        if first_div.is_none() && g.obs.get(c as usize) != Some(&r.obs) {
            first_div = Some(c);
        }
        if r.obs.done() {
            done_at = Some(soc.cycle);
            break;
        }
        if soc.cycle >= budget {
            break;
        }
        match first_div {
            None => {
                let n = soc.cycle;
                if n % CHECKPOINT_INTERVAL == 0 && n > spec.cycle {
                    if let Some(gs) = g.checkpoints.get((n / CHECKPOINT_INTERVAL) as usize) {
                        if soc.functional_eq(gs) {
                            converged = true;
                            break;
                        }
                    }
                }
            }
            // A halted system past the reference end cannot recover.
            Some(_) if soc.cycle >= g.end && soc.cores.iter().all(|c| c.halted()) => break,
            Some(_) => {}
        }
    }
    let termination = match done_at {
        _ if converged => Termination::Normal,
        Some(d) if d == g.end => Termination::Normal,
        Some(d) if d < g.end => Termination::Early,
        Some(_) => Termination::Late,
        None => Termination::Timeout,
    };
    let (mem_diff, raw) = if converged {
        (0, 0)
    } else {
        let img = soc.memory_image();
        let d = img.iter().zip(&g.final_image).filter(|(a, b)| a != b).count() as u32;
        (d, raw_diff(&soc, &g.final_state))
    };
    SimOutcome {
        spec: *spec,
        class: classify(&counters, first_div.is_some(), termination, mem_diff),
        first_divergence: first_div,
        counters,
        mem_diff,
        raw_diff: raw,
        termination,
        converged,
        dropped_fixes: dropped,
    }
}

/// Parameters of one campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignPlan {
    pub config: ConfigId,
    pub scenario: Scenario,
    pub n: u64,
    pub seed: u64,
    #[serde(default)]
    pub double_bit: bool,
    #[serde(default = "default_scrub")]
    pub scrub_period: u32,
    #[serde(default = "default_resync")]
    pub resync_latency: u32,
}

fn default_scrub() -> u32 {
    DEFAULT_SCRUB_PERIOD
}

fn default_resync() -> u32 {
    DEFAULT_RESYNC_LATENCY
}

impl CampaignPlan {
    pub fn new(config: ConfigId, scenario: Scenario, n: u64, seed: u64) -> Self {
        CampaignPlan {
            config,
            scenario,
            n,
            seed,
            double_bit: false,
            scrub_period: DEFAULT_SCRUB_PERIOD,
            resync_latency: DEFAULT_RESYNC_LATENCY,
        }
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: &str| Err(CampaignError::InvalidPlan(m.to_string()));
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if self.scrub_period == 0 {
            return bad("scrub_period must be at least 1");
        }
        if self.resync_latency == 0 {
            return bad("resync_latency must be at least 1");
        }
        if self.double_bit && !matches!(self.scenario, Scenario::FfAll | Scenario::FfSram) {
            return Err(CampaignError::DoubleBitWithoutSram(self.scenario));
        }
        Ok(())
    }

    pub fn soc_config(&self) -> SocConfig {
        SocConfig { id: self.config, scrub_period: self.scrub_period, resync_latency: self.resync_latency }
    }
}

/// Draws fault `index` of a campaign. Each fault has its own random stream,
/// so the draw does not depend on scheduling.
pub fn draw_fault(plan: &CampaignPlan, targets: &TargetSet, window: (u64, u64), index: u64) -> FaultSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(index);
    let loc = targets.sample(&mut rng);
    let cycle = rng.gen_range(window.0..window.1);
    let second_bit = match (plan.double_bit, loc) {
        (true, Locator::Sram { bit, .. }) => {
            let cell_bits = targets
                .groups
                .iter()
                .find_map(|g| match g.kind {
                    GroupKind::Sram { cell_bits, .. } => Some(cell_bits),
                    _ => None,
                })
                .unwrap_or(32);
            let other = rng.gen_range(0..cell_bits - 1);
            Some(if other >= bit { other + 1 } else { other })
        }
        _ => None,
    };
    FaultSpec { index, loc, cycle, second_bit }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub config: ConfigId,
    pub scenario: Scenario,
    pub n: u64,
    pub seed: u64,
    pub double_bit: bool,
    pub golden_cycles: u64,
    pub window: (u64, u64),
    pub counts: std::collections::BTreeMap<String, u64>,
    pub fractions: std::collections::BTreeMap<String, f64>,
    /// Runs in which each monitor counter advanced.
    pub counter_runs: std::collections::BTreeMap<String, u64>,
}

#[derive(Clone, Debug)]
pub struct CampaignResult {
    pub plan: CampaignPlan,
    pub golden_cycles: u64,
    pub window: (u64, u64),
    pub outcomes: Vec<SimOutcome>,
}

impl CampaignResult {
    pub fn count(&self, c: Class) -> u64 {
        self.outcomes.iter().filter(|o| o.class == c).count() as u64
    }

    pub fn fraction(&self, c: Class) -> f64 {
        if self.outcomes.is_empty() {
            0.0
        } else {
            self.count(c) as f64 / self.outcomes.len() as f64
        }
    }

    pub fn histogram(&self) -> Histogram {
        let mut counts = std::collections::BTreeMap::new();
        let mut fractions = std::collections::BTreeMap::new();
        for c in Class::ALL {
            counts.insert(c.name().to_string(), self.count(c));
            fractions.insert(c.name().to_string(), self.fraction(c));
        }
        let counter_runs = MONITOR_COUNTERS
            .iter()
            .enumerate()
            .map(|(i, n)| (n.to_string(), self.outcomes.iter().filter(|o| o.counters[i] > 0).count() as u64))
            .collect();
        Histogram {
            config: self.plan.config,
            scenario: self.plan.scenario,
            n: self.plan.n,
            seed: self.plan.seed,
            double_bit: self.plan.double_bit,
            golden_cycles: self.golden_cycles,
            window: self.window,
            counts,
            fractions,
            counter_runs,
        }
    }

    /// One line per fault, in fault order.
    pub fn faults_csv(&self) -> String {
        let mut s = String::from(
            "fault_id,target,cycle,second_bit,class,first_divergence,termination,mem_diff,raw_diff,tcls,ecc_corrected,ecc_uncorrectable,interconnect,tmr\n",
        );
        for o in &self.outcomes {
            let c = o.counters;
            s.push_str(&format!(
                "{},{},{},{},{},{},{:?},{},{},{},{},{},{},{}\n",
                o.spec.index,
                o.spec.loc.id(),
                o.spec.cycle,
                o.spec.second_bit.map_or(String::new(), |b| b.to_string()),
                o.class.name(),
                o.first_divergence.map_or(String::new(), |d| d.to_string()),
                o.termination,
                o.mem_diff,
                o.raw_diff,
                c[0],
                c[1],
                c[2],
                c[3],
                c[4]
            ));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(), CampaignError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("faults.csv"), self.faults_csv())?;
        fs::write(dir.join("histogram.json"), serde_json::to_string_pretty(&self.histogram())?)?;
        Ok(())
    }
}

/// Runs a campaign against a precomputed golden run.
pub fn run_campaign_with(
    plan: &CampaignPlan,
    golden: &Golden,
    area: &AreaModel,
    workers: Option<usize>,
) -> Result<CampaignResult, CampaignError> {
    plan.validate()?;
    let targets = enumerate_targets(plan.config, plan.scenario, area)?;
    if plan.double_bit && !targets.groups.iter().any(|g| matches!(g.kind, GroupKind::Sram { .. })) {
        return Err(CampaignError::DoubleBitWithoutSram(plan.scenario));
    }
    let window = (golden.start, golden.end);
    let work = || -> Vec<SimOutcome> {
        (0..plan.n)
            .into_par_iter()
            .map(|i| run_one(golden, &draw_fault(plan, &targets, window, i)))
            .collect()
    };
    let outcomes = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| CampaignError::Pool(e.to_string()))?
            .install(work),
        None => work(),
    };
    Ok(CampaignResult { plan: plan.clone(), golden_cycles: golden.end, window, outcomes })
}

pub fn run_campaign(plan: &CampaignPlan, wl: &Workload, workers: Option<usize>) -> Result<CampaignResult, CampaignError> {
    let golden = golden_run(plan.soc_config(), wl)?;
    run_campaign_with(plan, &golden, &AreaModel::default(), workers)
}
