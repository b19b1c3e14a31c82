//! Protection configurations and run parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::memory::StorageMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfigId {
    /// No protection.
    Cfg0,
    /// ECC memories with scrubbing.
    Cfg1,
    /// Adds the lockstepped core.
    Cfg2,
    /// Adds the ECC overlap into the lockstep domain and the protected interconnect.
    Cfg3,
    /// Adds triplicated peripherals and bank control logic.
    Cfg4,
    /// Global triple modular redundancy, voted every cycle.
    Tmrg,
}

impl ConfigId {
    pub const ALL: [ConfigId; 6] =
        [ConfigId::Cfg0, ConfigId::Cfg1, ConfigId::Cfg2, ConfigId::Cfg3, ConfigId::Cfg4, ConfigId::Tmrg];

    pub fn name(self) -> &'static str {
        match self {
            ConfigId::Cfg0 => "cfg0",
            ConfigId::Cfg1 => "cfg1",
            ConfigId::Cfg2 => "cfg2",
            ConfigId::Cfg3 => "cfg3",
            ConfigId::Cfg4 => "cfg4",
            ConfigId::Tmrg => "tmrg",
        }
    }

    pub fn ecc_memory(self) -> bool {
        matches!(self, ConfigId::Cfg1 | ConfigId::Cfg2 | ConfigId::Cfg3 | ConfigId::Cfg4)
    }

    pub fn lockstep(self) -> bool {
        matches!(self, ConfigId::Cfg2 | ConfigId::Cfg3 | ConfigId::Cfg4)
    }

    pub fn overlap(self) -> bool {
        matches!(self, ConfigId::Cfg3 | ConfigId::Cfg4)
    }

    pub fn tmr_periph(self) -> bool {
        self == ConfigId::Cfg4
    }

    pub fn tmrg(self) -> bool {
        self == ConfigId::Tmrg
    }

    pub fn has_monitor(self) -> bool {
        self != ConfigId::Cfg0
    }

    pub fn storage(self) -> StorageMode {
        match self {
            ConfigId::Cfg0 => StorageMode::Raw,
            ConfigId::Cfg1 | ConfigId::Cfg2 => StorageMode::Ecc,
            ConfigId::Cfg3 | ConfigId::Cfg4 => StorageMode::Overlap,
            ConfigId::Tmrg => StorageMode::Triplicated,
        }
    }

    /// Copies of the core state.
    pub fn core_replicas(self) -> usize {
        if self.lockstep() || self.tmrg() {
            3
        } else {
            1
        }
    }

    pub fn fabric_replicas(self) -> usize {
        if self.overlap() || self.tmrg() {
            3
        } else {
            1
        }
    }

    pub fn periph_replicas(self) -> usize {
        if self.tmr_periph() || self.tmrg() {
            3
        } else {
            1
        }
    }

    /// Copies of each bank's RMW/scrub control state (none without ECC).
    pub fn bank_ctl_replicas(self) -> usize {
        match self {
            ConfigId::Cfg0 | ConfigId::Tmrg => 0,
            ConfigId::Cfg4 => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConfigId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let l = s.to_ascii_lowercase();
        ConfigId::ALL
            .into_iter()
            .find(|c| c.name() == l || l == c.name().trim_start_matches("cfg"))
            .ok_or_else(|| format!("unknown configuration `{s}` (expected cfg0..cfg4 or tmrg)"))
    }
}

/// Tunable parameters of one simulated SoC.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SocConfig {
    pub id: ConfigId,
    /// Idle cycles between scrubber reads.
    pub scrub_period: u32,
    /// Cycles between a lockstep mismatch and the resynchronization.
    pub resync_latency: u32,
}

pub const DEFAULT_SCRUB_PERIOD: u32 = 1;
pub const DEFAULT_RESYNC_LATENCY: u32 = 64;

impl SocConfig {
    pub fn new(id: ConfigId) -> Self {
        SocConfig { id, scrub_period: DEFAULT_SCRUB_PERIOD, resync_latency: DEFAULT_RESYNC_LATENCY }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_names() {
        assert_eq!("cfg3".parse::<ConfigId>().unwrap(), ConfigId::Cfg3);
        assert_eq!("TMRG".parse::<ConfigId>().unwrap(), ConfigId::Tmrg);
        assert_eq!("2".parse::<ConfigId>().unwrap(), ConfigId::Cfg2);
        assert!("cfg9".parse::<ConfigId>().is_err());
    }

    #[test]
    fn protections_accumulate() {
        use ConfigId::*;
        assert!(!Cfg0.ecc_memory() && Cfg1.ecc_memory() && !Cfg1.lockstep());
        assert!(Cfg2.lockstep() && !Cfg2.overlap());
        assert!(Cfg3.overlap() && !Cfg3.tmr_periph());
        assert!(Cfg4.overlap() && Cfg4.tmr_periph());
        assert_eq!(Tmrg.storage(), StorageMode::Triplicated);
    }
}
