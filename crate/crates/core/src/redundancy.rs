//! Majority voters and TMR register cells.

use crate::registry::RegisterBank;

/// Values that can be bitwise majority-voted.
pub trait Votable: Copy + Eq {
    fn majority(a: Self, b: Self, c: Self) -> Self;
}

macro_rules! impl_votable {
    ($($t:ty),*) => {$(
        impl Votable for $t {
            #[inline]
            fn majority(a: Self, b: Self, c: Self) -> Self {
                (a & b) | (a & c) | (b & c)
            }
        }
    )*};
}

impl_votable!(u8, u16, u32, u64, bool);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vote3Result<T> {
    pub value: T,
    pub mismatch: bool,
    /// Set when exactly one input disagrees with the other two.
    pub dissenting: Option<u8>,
}

/// Bitwise majority of three inputs.
///
/// All three inputs differing is still resolved bit by bit; `dissenting` is
/// then `None`.
#[inline]
pub fn vote3<T: Votable>(a: T, b: T, c: T) -> Vote3Result<T> {
    let value = T::majority(a, b, c);
    let (ab, bc, ac) = (a == b, b == c, a == c);
    let mismatch = !(ab && bc);
    let dissenting = match (ab, bc, ac) {
        (true, false, _) => Some(2),
        (false, true, _) => Some(0),
        (false, false, true) => Some(1),
        _ => None,
    };
    Vote3Result { value, mismatch, dissenting }
}

/// A register triplicated with one voter per replica.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TmrCell<T> {
    pub replicas: [T; 3],
}

impl<T: Votable> TmrCell<T> {
    pub fn new(v: T) -> Self {
        TmrCell { replicas: [v; 3] }
    }

    pub fn read(&self) -> Vote3Result<T> {
        let [a, b, c] = self.replicas;
        vote3(a, b, c)
    }

    /// Loads the majority of `next` into every replica. Returns the fault flag.
    pub fn step(&mut self, next: [T; 3]) -> bool {
        let v = vote3(next[0], next[1], next[2]);
        self.replicas = [v.value; 3];
        v.mismatch
    }
}

/// Votes every slot of three register-bank replicas, writing the voted state
/// back into all replicas. Returns whether any slot disagreed.
pub fn vote_banks<B: RegisterBank>(reps: &mut [B]) -> bool {
    if reps.len() != 3 {
        return false;
    }
    let (first, rest) = reps.split_at_mut(1);
    let (second, third) = rest.split_at_mut(1);
    let (a, b, c) = (first[0].words_mut(), second[0].words_mut(), third[0].words_mut());
    let mut mismatch = false;
    for i in 0..a.len() {
        let (x, y, z) = (a[i], b[i], c[i]);
        if x != y || y != z {
            mismatch = true;
            let m = u64::majority(x, y, z);
            a[i] = m;
            b[i] = m;
            c[i] = m;
        }
    }
    mismatch
}

/// Majority copy of three banks without modifying them.
pub fn voted_bank<B: RegisterBank + Clone>(reps: &[B]) -> (B, bool) {
    let mut out = reps[0].clone();
    if reps.len() != 3 {
        return (out, false);
    }
    let mut mismatch = false;
    let (a, b, c) = (reps[0].words(), reps[1].words(), reps[2].words());
    for (i, w) in out.words_mut().iter_mut().enumerate() {
        if a[i] != b[i] || b[i] != c[i] {
            mismatch = true;
        }
        *w = u64::majority(a[i], b[i], c[i]);
    }
    (out, mismatch)
}
