//! Area estimation, Pareto front and report files.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigId, SocConfig};
use crate::ecc::DATA_BITS;
use crate::faultsim::{Class, Histogram};
use crate::memory::BANK_WORDS;
use crate::soc::{Comp, SiteKind, Soc};
use crate::workload::Workload;

/// Linear gate-equivalent model. All coefficients are in GE.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AreaModel {
    /// Per register bit.
    pub ff_ge: f64,
    /// Per SRAM data bit.
    pub sram_bit_ge: f64,
    /// Per SRAM check bit.
    pub sram_ecc_bit_ge: f64,
    /// Per voted bit.
    pub voter_ge_per_bit: f64,
    /// Per encoder or decoder instance.
    pub codec_ge: f64,
    /// Per core datapath/control block.
    pub core_logic_ge: f64,
    /// Core logic bits exposed to transients, used to spread `core_logic_ge`.
    pub core_logic_bits: f64,
    /// Per peripheral block.
    pub periph_logic_ge: f64,
    /// Per bit of plain wiring (transient weighting only).
    pub net_ge_per_bit: f64,
}

impl Default for AreaModel {
    fn default() -> Self {
        AreaModel {
            ff_ge: 8.0,
            sram_bit_ge: 1.5,
            sram_ecc_bit_ge: 1.5,
            voter_ge_per_bit: 4.0,
            codec_ge: 350.0,
            core_logic_ge: 4000.0,
            core_logic_bits: 7.0 * 32.0,
            periph_logic_ge: 800.0,
            net_ge_per_bit: 1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("area coefficient `{0}` must be positive")]
    Coefficient(&'static str),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

impl AreaModel {
    pub fn validate(&self) -> Result<(), ReportError> {
        let fields = [
            ("ff_ge", self.ff_ge),
            ("sram_bit_ge", self.sram_bit_ge),
            ("sram_ecc_bit_ge", self.sram_ecc_bit_ge),
            ("voter_ge_per_bit", self.voter_ge_per_bit),
            ("codec_ge", self.codec_ge),
            ("core_logic_ge", self.core_logic_ge),
            ("core_logic_bits", self.core_logic_bits),
            ("periph_logic_ge", self.periph_logic_ge),
            ("net_ge_per_bit", self.net_ge_per_bit),
        ];
        match fields.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            Some((n, _)) => Err(ReportError::Coefficient(n)),
            None => Ok(()),
        }
    }
}

/// Area breakdown in GE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AreaEstimate {
    pub config: Option<ConfigId>,
    pub registers: f64,
    pub sram_data: f64,
    pub sram_ecc: f64,
    pub voters: f64,
    pub codecs: f64,
    pub logic: f64,
    pub register_bits: u64,
    pub voted_bits: u64,
    pub codec_count: u64,
}

impl AreaEstimate {
    pub fn total(&self) -> f64 {
        self.registers + self.sram_data + self.sram_ecc + self.voters + self.codecs + self.logic
    }

    pub fn kge(&self) -> f64 {
        self.total() / 1000.0
    }
}

/// Index of the replica a component belongs to, if it is part of a triplicated group.
fn replica_index(c: Comp, id: ConfigId) -> Option<u8> {
    match c {
        Comp::Core(k) if id.core_replicas() == 3 => Some(k),
        Comp::Fabric(k) if id.fabric_replicas() == 3 => Some(k),
        Comp::RespRaw(k) if id.tmrg() => Some(k),
        Comp::BankCtl(_, k) if id.bank_ctl_replicas() == 3 => Some(k),
        Comp::Periph(k) if id.periph_replicas() == 3 => Some(k),
        _ => None,
    }
}

/// Sums the model over the structure instantiated for `id`.
pub fn estimate_area(id: ConfigId, m: &AreaModel) -> AreaEstimate {
    let soc = Soc::new(SocConfig::new(id), &Workload { entry: 0, words: vec![0] });
    let mut e = AreaEstimate { config: Some(id), ..Default::default() };

    for c in soc.components() {
        e.register_bits += c.bits();
        if replica_index(c, id) == Some(0) {
            e.voted_bits += c.bits();
        }
    }
    let sites = Soc::sites(id);
    for s in &sites {
        match s.kind {
            SiteKind::Voter => e.voted_bits += s.width as u64,
            SiteKind::Codec => e.codec_count += 1,
            _ => {}
        }
    }

    let mut data_bits = 0u64;
    let mut check_bits = 0u64;
    for b in &soc.banks {
        let copies = (b.mode.replicas() * BANK_WORDS) as u64;
        data_bits += copies * DATA_BITS as u64;
        check_bits += copies * (b.mode.cell_bits() - DATA_BITS) as u64;
    }

    e.registers = e.register_bits as f64 * m.ff_ge;
    e.sram_data = data_bits as f64 * m.sram_bit_ge;
    e.sram_ecc = check_bits as f64 * m.sram_ecc_bit_ge;
    e.voters = e.voted_bits as f64 * m.voter_ge_per_bit;
    e.codecs = e.codec_count as f64 * m.codec_ge;
    e.logic = id.core_replicas() as f64 * m.core_logic_ge + id.periph_replicas() as f64 * m.periph_logic_ge;
    e
}

/// One configuration in the area/tolerance plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub config: ConfigId,
    pub area_kge: f64,
    /// Scenario name to fraction of non-failure outcomes.
    pub tolerance: BTreeMap<String, f64>,
}

impl ParetoPoint {
    /// Lower-or-equal area and higher-or-equal tolerance everywhere, strictly better somewhere.
    /// Scenarios missing from a point count as zero tolerance.
    pub fn dominates(&self, o: &ParetoPoint) -> bool {
        if self.area_kge > o.area_kge {
            return false;
        }
        let mut strict = self.area_kge < o.area_kge;
        let keys = self.tolerance.keys().chain(o.tolerance.keys());
        for k in keys {
            let a = self.tolerance.get(k).copied().unwrap_or(0.0);
            let b = o.tolerance.get(k).copied().unwrap_or(0.0);
            if a < b {
                return false;
            }
            strict |= a > b;
        }
        strict
    }
}

/// Points not dominated by any other, in input order.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    points.iter().filter(|p| !points.iter().any(|q| q.dominates(p))).cloned().collect()
}

/// Builds one point per config from campaign histograms.
pub fn pareto_points(hists: &[Histogram], m: &AreaModel) -> Vec<ParetoPoint> {
    let mut by_cfg: BTreeMap<ConfigId, BTreeMap<String, f64>> = BTreeMap::new();
    for h in hists {
        by_cfg.entry(h.config).or_default().insert(h.scenario.name().to_string(), tolerance(h));
    }
    by_cfg
        .into_iter()
        .map(|(config, tolerance)| ParetoPoint { config, area_kge: estimate_area(config, m).kge(), tolerance })
        .collect()
}

fn tolerance(h: &Histogram) -> f64 {
    let total: u64 = h.counts.values().sum();
    if total == 0 {
        return 1.0;
    }
    let fail = h.counts.get(Class::Failure.name()).copied().unwrap_or(0);
    1.0 - fail as f64 / total as f64
}

/// Published reference values for overlay plots, shipped with the crate.
pub const REFERENCE_JSON: &str = include_str!("../data/published_reference.json");

pub const PARETO_HEADER: &str = "config,scenario,area_kge,area_ratio,tolerance,failure,on_front\n";
pub const FRACTIONS_HEADER: &str = "config,scenario,masked,corrected,uncorrectable,latent,failure\n";
pub const AREA_HEADER: &str = "config,registers_ge,sram_data_ge,sram_ecc_ge,voters_ge,codecs_ge,logic_ge,total_kge,ratio\n";

fn write(path: PathBuf, body: &str) -> Result<(), ReportError> {
    fs::write(&path, body).map_err(|source| ReportError::Io { path, source })
}

/// Writes `pareto.csv`, `area.csv`, `fractions.csv`, per-config histogram
/// files and, with `reference`, a copy of the published reference values.
pub fn emit_reports(hists: &[Histogram], m: &AreaModel, dir: &Path, reference: bool) -> Result<Vec<ParetoPoint>, ReportError> {
    m.validate()?;
    fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.to_path_buf(), source })?;

    let base = estimate_area(ConfigId::Cfg0, m).total();
    let mut area = String::from(AREA_HEADER);
    for id in ConfigId::ALL {
        let e = estimate_area(id, m);
        area.push_str(&format!(
            "{},{:.1},{:.1},{:.1},{:.1},{:.1},{:.1},{:.3},{:.3}\n",
            id,
            e.registers,
            e.sram_data,
            e.sram_ecc,
            e.voters,
            e.codecs,
            e.logic,
            e.kge(),
            e.total() / base
        ));
    }
    write(dir.join("area.csv"), &area)?;

    let points = pareto_points(hists, m);
    let front = pareto_front(&points);
    let mut sorted: Vec<&Histogram> = hists.iter().collect();
    sorted.sort_by_key(|h| (h.config, h.scenario));

    let mut pareto = String::from(PARETO_HEADER);
    let mut fractions = String::from(FRACTIONS_HEADER);
    for h in &sorted {
        let p = points.iter().find(|p| p.config == h.config).expect("point per config");
        let t = tolerance(h);
        pareto.push_str(&format!(
            "{},{},{:.3},{:.3},{:.6},{:.6},{}\n",
            h.config,
            h.scenario,
            p.area_kge,
            p.area_kge * 1000.0 / base,
            t,
            1.0 - t,
            front.iter().any(|f| f.config == h.config)
        ));
        let f = |c: Class| h.fractions.get(c.name()).copied().unwrap_or(0.0);
        fractions.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            h.config,
            h.scenario,
            f(Class::Masked),
            f(Class::Corrected),
            f(Class::Uncorrectable),
            f(Class::Latent),
            f(Class::Failure)
        ));
    }
    write(dir.join("pareto.csv"), &pareto)?;
    write(dir.join("fractions.csv"), &fractions)?;

    let mut per_cfg: BTreeMap<ConfigId, Vec<&Histogram>> = BTreeMap::new();
    for h in sorted {
        per_cfg.entry(h.config).or_default().push(h);
    }
    for (id, hs) in per_cfg {
        let path = dir.join(format!("histogram_{id}.json"));
        let body = serde_json::to_string_pretty(&hs).map_err(|source| ReportError::Json { path: path.clone(), source })?;
        write(path, &body)?;
    }

    if reference {
        write(dir.join("published_reference.json"), REFERENCE_JSON)?;
    }
    Ok(front)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faultsim::Scenario;

    fn pt(c: ConfigId, a: f64, t: &[(&str, f64)]) -> ParetoPoint {
        ParetoPoint { config: c, area_kge: a, tolerance: t.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
    }

    #[test]
    fn area_grows_with_protection() {
        let m = AreaModel::default();
        let a: Vec<f64> = ConfigId::ALL.iter().map(|&c| estimate_area(c, &m).total()).collect();
        assert!(a.windows(2).all(|w| w[0] < w[1]), "{a:?}");
        let cfg1 = a[1] / a[0];
        assert!(cfg1 > 1.1 && cfg1 < 1.4, "{cfg1}");
    }

    #[test]
    fn register_term_is_linear() {
        let m = AreaModel::default();
        let d = AreaModel { ff_ge: 2.0 * m.ff_ge, ..m };
        for id in ConfigId::ALL {
            let (a, b) = (estimate_area(id, &m), estimate_area(id, &d));
            assert_eq!(b.registers, 2.0 * a.registers);
            assert_eq!(b.total() - a.total(), a.registers);
        }
    }

    #[test]
    fn non_positive_coefficient_is_rejected() {
        let m = AreaModel { codec_ge: 0.0, ..Default::default() };
        assert!(matches!(m.validate(), Err(ReportError::Coefficient("codec_ge"))));
    }

    #[test]
    fn single_point_is_its_own_front() {
        let p = vec![pt(ConfigId::Cfg2, 10.0, &[("ff-all", 0.9)])];
        assert_eq!(pareto_front(&p), p);
    }

    #[test]
    fn equal_tolerance_higher_area_is_dominated() {
        let p = vec![pt(ConfigId::Cfg4, 10.0, &[("ff-all", 1.0)]), pt(ConfigId::Tmrg, 12.0, &[("ff-all", 1.0)])];
        let f = pareto_front(&p);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].config, ConfigId::Cfg4);
    }

    #[test]
    fn identical_points_both_survive() {
        let p = vec![pt(ConfigId::Cfg1, 5.0, &[("a", 0.5)]), pt(ConfigId::Cfg2, 5.0, &[("a", 0.5)])];
        assert_eq!(pareto_front(&p).len(), 2);
    }

    #[test]
    fn front_is_permutation_invariant() {
        use rand::seq::SliceRandom;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let pts: Vec<ParetoPoint> = ConfigId::ALL
                .iter()
                .map(|&c| pt(c, rng.gen_range(0..5) as f64, &[("a", rng.gen_range(0..4) as f64 / 4.0), ("b", rng.gen_range(0..4) as f64 / 4.0)]))
                .collect();
            let mut want: Vec<ConfigId> = pareto_front(&pts).iter().map(|p| p.config).collect();
            want.sort();
            let mut shuffled = pts.clone();
            shuffled.shuffle(&mut rng);
            let mut got: Vec<ConfigId> = pareto_front(&shuffled).iter().map(|p| p.config).collect();
            got.sort();
            assert_eq!(want, got);
        }
    }

    #[test]
    fn empty_input_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let front = emit_reports(&[], &AreaModel::default(), dir.path(), false).unwrap();
        assert!(front.is_empty());
        assert_eq!(fs::read_to_string(dir.path().join("pareto.csv")).unwrap(), PARETO_HEADER);
        assert_eq!(fs::read_to_string(dir.path().join("fractions.csv")).unwrap(), FRACTIONS_HEADER);
    }

    #[test]
    fn one_row_per_campaign() {
        let mut hists = Vec::new();
        for id in [ConfigId::Cfg0, ConfigId::Cfg4] {
            for sc in [Scenario::FfAll, Scenario::FfExclSram] {
                let mut counts = BTreeMap::new();
                counts.insert("masked".to_string(), 9);
                counts.insert("failure".to_string(), if id == ConfigId::Cfg0 { 1 } else { 0 });
                hists.push(Histogram {
                    config: id,
                    scenario: sc,
                    n: 10,
                    seed: 0,
                    double_bit: false,
                    golden_cycles: 1,
                    window: (0, 1),
                    counts,
                    fractions: BTreeMap::new(),
                    counter_runs: BTreeMap::new(),
                });
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let front = emit_reports(&hists, &AreaModel::default(), dir.path(), true).unwrap();
        assert_eq!(front.len(), 2);
        let csv = fs::read_to_string(dir.path().join("pareto.csv")).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(dir.path().join("histogram_cfg4.json").exists());
        let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("published_reference.json")).unwrap()).unwrap();
        assert!(r["label"].as_str().unwrap().contains("published reference"));
    }
}
