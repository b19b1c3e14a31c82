//! Named flip-flop state.
//!
//! Every piece of sequential state in the simulated SoC lives in a register
//! bank: a fixed list of named slots, each stored as a `u64` with a declared
//! bit width. Injection, voting, snapshot comparison and target enumeration
//! all work through this one representation.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub name: &'static str,
    pub width: u32,
}

impl Slot {
    pub const fn new(name: &'static str, width: u32) -> Self {
        Slot { name, width }
    }

    pub const fn mask(&self) -> u64 {
        if self.width >= 64 {
            u64::MAX
        } else {
            (1u64 << self.width) - 1
        }
    }
}

pub trait RegisterBank {
    const SLOTS: &'static [Slot];

    fn words(&self) -> &[u64];
    fn words_mut(&mut self) -> &mut [u64];

    fn state_bits() -> u64 {
        Self::SLOTS.iter().map(|s| s.width as u64).sum()
    }

    /// Flips bit `bit` of slot `slot`.
    fn flip(&mut self, slot: usize, bit: u32) {
        debug_assert!(bit < Self::SLOTS[slot].width);
        self.words_mut()[slot] ^= 1u64 << bit;
    }
}

/// Declares a register bank with typed accessors.
///
/// ```ignore
/// register_bank! { pub struct Timer { counter: 32, irq: 1 } }
/// ```
#[macro_export]
macro_rules! register_bank {
    ($(#[$m:meta])* pub struct $name:ident { $($field:ident : $width:expr),* $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
        pub struct $name {
            pub v: [u64; $crate::register_bank!(@count $($field)*)],
        }

        #[allow(dead_code)]
        impl $name {
            $crate::register_bank!(@idx 0usize; $($field)*);

            $(
                paste::paste! {
                    #[inline]
                    pub fn $field(&self) -> u64 {
                        self.v[Self::[<$field:upper>]]
                    }

                    #[inline]
                    pub fn [<set_ $field>](&mut self, x: u64) {
                        self.v[Self::[<$field:upper>]] = x & $crate::registry::Slot::new("", $width).mask();
                    }
                }
            )*
        }

        impl $crate::registry::RegisterBank for $name {
            const SLOTS: &'static [$crate::registry::Slot] =
                &[$($crate::registry::Slot::new(stringify!($field), $width)),*];

            #[inline]
            fn words(&self) -> &[u64] {
                &self.v
            }

            #[inline]
            fn words_mut(&mut self) -> &mut [u64] {
                &mut self.v
            }
        }
    };
    (@count) => { 0usize };
    (@count $head:ident $($tail:ident)*) => { 1usize + $crate::register_bank!(@count $($tail)*) };
    (@idx $n:expr;) => {};
    (@idx $n:expr; $head:ident $($tail:ident)*) => {
        paste::paste! { pub const [<$head:upper>]: usize = $n; }
        $crate::register_bank!(@idx $n + 1usize; $($tail)*);
    };
}
