use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ftsoc::config::{ConfigId, SocConfig};
use ftsoc::faultsim::{
    draw_fault, enumerate_targets, golden_run, run_campaign_with, run_one, CampaignError, CampaignPlan, Golden, Histogram, Scenario,
};
use ftsoc::report::{emit_reports, estimate_area, AreaModel};
use ftsoc::soc::{trace_csv, uart_text};
use ftsoc::workload::{self, Workload, DONE};

const DESK_N: u64 = 10_000;
const FULL_N: u64 = 100_000;

#[derive(Parser)]
#[command(name = "ftsoc", version, about = "Fault-injection study of a protected microcontroller model")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "FTSOC_OUT", default_value = "ftsoc-out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    /// Workload image; the built-in program is used when absent.
    #[arg(long, global = true)]
    workload: Option<PathBuf>,
    /// More output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fault-free reference run: trace, memory dump, summary.
    RunGolden {
        #[arg(long, default_value = "cfg0")]
        config: ConfigId,
    },
    /// Draws and runs a single fault of a campaign.
    InjectOne {
        #[command(flatten)]
        sel: Select,
        /// Fault index within the campaign.
        #[arg(long, default_value_t = 0)]
        index: u64,
    },
    /// One campaign.
    Campaign {
        #[command(flatten)]
        sel: Select,
        /// TOML campaign plan; flags are ignored when given.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Every configuration and scenario, then the reports. Resumable.
    Study {
        /// TOML study plan.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        full_scale: bool,
    },
    /// Area, Pareto front and plot data from finished campaigns.
    Report {
        /// TOML area coefficients.
        #[arg(long)]
        area: Option<PathBuf>,
        /// Also copy the published reference values.
        #[arg(long)]
        reference: bool,
    },
    /// Writes the built-in workload image.
    DumpWorkload { path: PathBuf },
}

#[derive(Args)]
struct Select {
    #[arg(long, default_value = "cfg0")]
    config: ConfigId,
    #[arg(long, default_value = "ff-all")]
    scenario: Scenario,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Flip two bits of the same SRAM word.
    #[arg(long)]
    double_bit: bool,
    #[arg(long)]
    full_scale: bool,
}

impl Select {
    fn plan(&self) -> CampaignPlan {
        let n = self.n.unwrap_or(if self.full_scale { FULL_N } else { DESK_N });
        let mut p = CampaignPlan::new(self.config, self.scenario, n, self.seed);
        p.double_bit = self.double_bit;
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyPlan {
    #[serde(default = "desk_n")]
    n: u64,
    #[serde(default = "one")]
    seed: u64,
    #[serde(default = "all_configs")]
    configs: Vec<ConfigId>,
    #[serde(default = "default_scenarios")]
    scenarios: Vec<Scenario>,
    #[serde(default)]
    area: AreaModel,
}

fn desk_n() -> u64 {
    DESK_N
}
fn one() -> u64 {
    1
}
fn all_configs() -> Vec<ConfigId> {
    ConfigId::ALL.to_vec()
}
fn default_scenarios() -> Vec<Scenario> {
    Scenario::ALL.to_vec()
}

impl Default for StudyPlan {
    fn default() -> Self {
        StudyPlan { n: DESK_N, seed: 1, configs: all_configs(), scenarios: default_scenarios(), area: AreaModel::default() }
    }
}

struct Ctx {
    out: PathBuf,
    workers: Option<usize>,
    verbose: u8,
    wl: Workload,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&s).with_context(|| format!("parsing {}", path.display()))
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn campaign_dir(out: &Path, p: &CampaignPlan) -> PathBuf {
    let mut name = p.scenario.name().to_string();
    if p.double_bit {
        name.push_str("-double");
    }
    out.join("campaigns").join(p.config.name()).join(name)
}

fn run_golden(ctx: &Ctx, id: ConfigId) -> Result<ExitCode> {
    let g = golden_run(SocConfig::new(id), &ctx.wl)?;
    let dir = ctx.out.join("golden").join(id.name());
    let retval = g.obs.last().map_or(0, |o| o.retval);
    let text = uart_text(&g.obs);
    write(&dir.join("trace.csv"), trace_csv(&g.obs))?;
    write(&dir.join("memory.txt"), g.final_state.memory_dump())?;
    let summary = serde_json::json!({
        "config": id,
        "cycles": g.end,
        "start": g.start,
        "retval": format!("{retval:#010x}"),
        "uart": text,
    });
    write(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{id}: {} cycles, retval {retval:#010x}, uart {text:?}", g.end);
    if retval != DONE {
        eprintln!("{id}: workload reported failure");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn inject_one(ctx: &Ctx, plan: &CampaignPlan, index: u64) -> Result<()> {
    plan.validate()?;
    let targets = enumerate_targets(plan.config, plan.scenario, &AreaModel::default())?;
    let g = golden_run(plan.soc_config(), &ctx.wl)?;
    let spec = draw_fault(plan, &targets, (g.start, g.end), index);
    let o = run_one(&g, &spec);
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({
        "target": spec.loc.id(),
        "outcome": o,
    }))?);
    Ok(())
}

fn campaign(ctx: &Ctx, plan: &CampaignPlan, golden: Option<&Golden>, area: &AreaModel) -> Result<Histogram> {
    plan.validate()?;
    let owned;
    let g = match golden {
        Some(g) => g,
        None => {
            owned = golden_run(plan.soc_config(), &ctx.wl)?;
            &owned
        }
    };
    let r = run_campaign_with(plan, g, area, ctx.workers)?;
    let dir = campaign_dir(&ctx.out, plan);
    r.write(&dir).with_context(|| format!("writing {}", dir.display()))?;
    write(&dir.join("plan.toml"), toml::to_string(plan)?)?;
    let h = r.histogram();
    if ctx.verbose > 0 || golden.is_none() {
        let f: Vec<String> = h.fractions.iter().map(|(k, v)| format!("{k} {:.2}%", v * 100.0)).collect();
        println!("{} {}: {}", plan.config, plan.scenario, f.join(", "));
    }
    Ok(h)
}

/// A finished campaign with a matching plan, if any.
fn finished(dir: &Path, plan: &CampaignPlan) -> Option<Histogram> {
    let stored: CampaignPlan = toml::from_str(&fs::read_to_string(dir.join("plan.toml")).ok()?).ok()?;
    if stored != *plan {
        return None;
    }
    serde_json::from_str(&fs::read_to_string(dir.join("histogram.json")).ok()?).ok()
}

fn study(ctx: &Ctx, sp: &StudyPlan) -> Result<()> {
    sp.area.validate()?;
    if sp.n == 0 {
        bail!("study n must be at least 1");
    }
    write(&ctx.out.join("study.toml"), toml::to_string(sp)?)?;
    let mut failed = Vec::new();
    for &id in &sp.configs {
        let mut golden = None;
        for &sc in &sp.scenarios {
            let plan = CampaignPlan::new(id, sc, sp.n, sp.seed);
            if finished(&campaign_dir(&ctx.out, &plan), &plan).is_some() {
                println!("{id} {sc}: done, skipping");
                continue;
            }
            if golden.is_none() {
                golden = Some(golden_run(SocConfig::new(id), &ctx.wl)?);
            }
            match campaign(ctx, &plan, golden.as_ref(), &sp.area) {
                Ok(h) => {
                    let fail = h.fractions.get("failure").copied().unwrap_or(0.0);
                    println!("{id} {sc}: failure {:.2}%", fail * 100.0);
                }
                Err(e) => match e.downcast_ref::<CampaignError>() {
                    Some(CampaignError::EmptyTargetSet { .. }) => println!("{id} {sc}: not applicable"),
                    _ => {
                        eprintln!("{id} {sc}: {e:#}");
                        failed.push(format!("{id}/{sc}"));
                    }
                },
            }
        }
    }
    report(ctx, &sp.area, true)?;
    if !failed.is_empty() {
        bail!("campaigns failed: {}", failed.join(", "));
    }
    Ok(())
}

fn load_histograms(out: &Path) -> Result<Vec<Histogram>> {
    let mut v = Vec::new();
    let root = out.join("campaigns");
    if !root.exists() {
        return Ok(v);
    }
    for cfg in fs::read_dir(&root).with_context(|| format!("reading {}", root.display()))? {
        let cfg = cfg?.path();
        for sc in fs::read_dir(&cfg).with_context(|| format!("reading {}", cfg.display()))? {
            let p = sc?.path().join("histogram.json");
            if !p.exists() {
                continue;
            }
            let h: Histogram = serde_json::from_str(&fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?;
            if !h.double_bit {
                v.push(h);
            }
        }
    }
    v.sort_by_key(|h| (h.config, h.scenario));
    Ok(v)
}

fn report(ctx: &Ctx, area: &AreaModel, reference: bool) -> Result<()> {
    let hists = load_histograms(&ctx.out)?;
    let dir = ctx.out.join("report");
    let front = emit_reports(&hists, area, &dir, reference)?;
    let base = estimate_area(ConfigId::Cfg0, area).total();
    for id in ConfigId::ALL {
        let e = estimate_area(id, area);
        println!("{id}: {:.1} kGE ({:.2}x)", e.kge(), e.total() / base);
    }
    let names: Vec<&str> = front.iter().map(|p| p.config.name()).collect();
    println!("pareto front: {}", names.join(" "));
    println!("reports in {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let wl = match &cli.workload {
        Some(p) => Workload::load(p).with_context(|| format!("loading workload {}", p.display()))?,
        None => workload::build()?,
    };
    wl.validate()?;
    let ctx = Ctx { out: cli.out, workers: cli.workers.map(|w| w as usize), verbose: cli.verbose, wl };
    match cli.cmd {
        Cmd::RunGolden { config } => return run_golden(&ctx, config),
        Cmd::InjectOne { sel, index } => inject_one(&ctx, &sel.plan(), index)?,
        Cmd::Campaign { sel, plan } => {
            let plan = match plan {
                Some(p) => read_toml(&p)?,
                None => sel.plan(),
            };
            campaign(&ctx, &plan, None, &AreaModel::default())?;
        }
        Cmd::Study { plan, n, seed, full_scale } => {
            let mut sp: StudyPlan = match plan {
                Some(p) => read_toml(&p)?,
                None => StudyPlan::default(),
            };
            if full_scale {
                sp.n = FULL_N;
            }
            if let Some(n) = n {
                sp.n = n;
            }
            if let Some(s) = seed {
                sp.seed = s;
            }
            study(&ctx, &sp)?;
        }
        Cmd::Report { area, reference } => {
            let m = match area {
                Some(p) => read_toml(&p)?,
                None => AreaModel::default(),
            };
            report(&ctx, &m, reference)?;
        }
        Cmd::DumpWorkload { path } => ctx.wl.save(&path)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
