//! Triple-core lockstep: mismatch tracking and resynchronization.

use crate::cpu::CoreState;
use crate::redundancy::vote3;
use crate::register_bank;
use crate::registry::RegisterBank;

register_bank! {
    /// Lockstep controller state.
    pub struct TclsState {
        pending: 1, countdown: 16,
    }
}

/// Result of a resynchronization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ResyncReport {
    /// Slots where at least one replica was overwritten.
    pub restored: u32,
    /// Slots where no two replicas agreed; the bitwise majority was used.
    pub unresolvable: u32,
}

/// Overwrites every core replica with the slot-wise majority state.
pub fn resync(cores: &mut [CoreState]) -> ResyncReport {
    let mut rep = ResyncReport::default();
    if cores.len() != 3 {
        return rep;
    }
    for i in 0..CoreState::SLOTS.len() {
        let (a, b, c) = (cores[0].v[i], cores[1].v[i], cores[2].v[i]);
        if a == b && b == c {
            continue;
        }
        rep.restored += 1;
        if a != b && b != c && a != c {
            rep.unresolvable += 1;
        }
        let m = vote3(a, b, c).value;
        for core in cores.iter_mut() {
            core.v[i] = m;
        }
    }
    rep
}

impl TclsState {
    /// Bookkeeping for one cycle. Returns true when the resync must run now.
    pub fn step(&mut self, mismatch: bool, latency: u32) -> bool {
        if self.pending() == 1 {
            let left = self.countdown().saturating_sub(1);
            self.set_countdown(left);
            if left == 0 {
                self.set_pending(0);
                return true;
            }
        } else if mismatch {
            self.set_pending(1);
            self.set_countdown(latency.max(1) as u64);
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trio() -> Vec<CoreState> {
        let mut c = CoreState::reset(0x100);
        c.set_reg(3, 0xdead_beef);
        vec![c.clone(), c.clone(), c]
    }

    #[test]
    fn single_replica_pc_flip_is_restored() {
        let mut cores = trio();
        let golden = cores[0].clone();
        cores[1].flip(CoreState::PC, 4);
        let r = resync(&mut cores);
        assert_eq!(r.restored, 1);
        assert_eq!(r.unresolvable, 0);
        assert!(cores.iter().all(|c| *c == golden));
    }

    #[test]
    fn same_bit_in_two_replicas_defeats_the_vote() {
        let mut cores = trio();
        cores[0].flip(CoreState::PC, 4);
        cores[2].flip(CoreState::PC, 4);
        let wrong = cores[0].clone();
        resync(&mut cores);
        assert!(cores.iter().all(|c| *c == wrong));
    }

    #[test]
    fn random_corruption_of_one_replica_is_fully_restored() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let mut cores = trio();
            let golden = cores[0].clone();
            let victim = rng.gen_range(0..3);
            for _ in 0..100 {
                let slot = rng.gen_range(0..CoreState::SLOTS.len());
                let bit = rng.gen_range(0..CoreState::SLOTS[slot].width);
                cores[victim].flip(slot, bit);
            }
            resync(&mut cores);
            assert!(cores.iter().all(|c| *c == golden));
        }
    }

    #[test]
    fn three_way_disagreement_is_reported() {
        let mut cores = trio();
        cores[0].flip(CoreState::EPC, 0);
        cores[1].flip(CoreState::EPC, 1);
        assert_eq!(resync(&mut cores).unresolvable, 1);
    }

    #[test]
    fn resync_fires_after_latency() {
        let mut t = TclsState::default();
        assert!(!t.step(true, 3));
        assert!(!t.step(false, 3));
        assert!(!t.step(true, 3));
        assert!(t.step(false, 3));
        assert_eq!(t.pending(), 0);
    }
}
