//! (39,32) SECDED Hsiao code.
//!
//! Data bits occupy codeword positions 0..32 (little-endian), parity bits
//! 32..39. The parity-check matrix uses the first 32 weight-3 columns of
//! length 7 in ascending numeric order for the data positions and the 7x7
//! identity for the parity positions.

/// Number of bits in a protected codeword.
pub const CODEWORD_BITS: u32 = 39;
/// Number of data bits per codeword.
pub const DATA_BITS: u32 = 32;
/// Number of parity bits per codeword.
pub const PARITY_BITS: u32 = 7;

const CODEWORD_MASK: u64 = (1u64 << CODEWORD_BITS) - 1;

/// A 39-bit SECDED codeword. Bits above position 38 are always zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Codeword39(u64);

impl Codeword39 {
    pub const fn from_raw(bits: u64) -> Self {
        Codeword39(bits & CODEWORD_MASK)
    }

    pub const fn raw(self) -> u64 {
        self.0
    }

    /// Data half of the codeword, taken without correction.
    pub const fn data_bits(self) -> u32 {
        self.0 as u32
    }

    pub const fn parity_bits(self) -> u8 {
        (self.0 >> DATA_BITS) as u8
    }

    pub const fn flip(self, bit: u32) -> Self {
        Codeword39::from_raw(self.0 ^ (1u64 << bit))
    }
}

/// The 7 x 39 parity-check matrix, stored column-wise (each column a 7-bit value).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParityCheckMatrix {
    pub columns: [u8; CODEWORD_BITS as usize],
}

impl ParityCheckMatrix {
    /// Row `r` as a 39-bit mask over codeword positions.
    pub const fn row_mask(&self, r: u32) -> u64 {
        let mut mask = 0u64;
        let mut k = 0;
        while k < CODEWORD_BITS as usize {
            if (self.columns[k] >> r) & 1 == 1 {
                mask |= 1u64 << k;
            }
            k += 1;
        }
        mask
    }
}

const fn weight7(v: u8) -> u32 {
    (v & 0x7f).count_ones()
}

/// Builds the parity-check matrix used throughout the crate.
pub const fn build_matrix() -> ParityCheckMatrix {
    let mut columns = [0u8; CODEWORD_BITS as usize];
    let mut next = 0usize;
    let mut v = 1u8;
    while v < 128 && next < DATA_BITS as usize {
        if weight7(v) == 3 {
            columns[next] = v;
            next += 1;
        }
        v += 1;
    }
    let mut p = 0;
    while p < PARITY_BITS as usize {
        columns[DATA_BITS as usize + p] = 1 << p;
        p += 1;
    }
    ParityCheckMatrix { columns }
}

pub const MATRIX: ParityCheckMatrix = build_matrix();

const ROW_MASKS: [u64; PARITY_BITS as usize] = {
    let mut rows = [0u64; PARITY_BITS as usize];
    let mut r = 0;
    while r < PARITY_BITS as usize {
        rows[r] = MATRIX.row_mask(r as u32);
        r += 1;
    }
    rows
};

/// Syndrome value -> codeword position, or `NO_COLUMN`.
const NO_COLUMN: u8 = u8::MAX;
const SYNDROME_TO_BIT: [u8; 128] = {
    let mut table = [NO_COLUMN; 128];
    let mut k = 0;
    while k < CODEWORD_BITS as usize {
        table[MATRIX.columns[k] as usize] = k as u8;
        k += 1;
    }
    table
};

/// Outcome of decoding one codeword.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecodeStatus {
    Clean,
    CorrectedSingle(u8),
    UncorrectableDouble,
}

impl DecodeStatus {
    pub fn is_corrected(self) -> bool {
        matches!(self, DecodeStatus::CorrectedSingle(_))
    }

    pub fn is_uncorrectable(self) -> bool {
        matches!(self, DecodeStatus::UncorrectableDouble)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeResult {
    pub data: u32,
    pub status: DecodeStatus,
    /// The codeword after correction (equal to the input unless corrected).
    pub corrected: Codeword39,
}

pub fn encode(data: u32) -> Codeword39 {
    let d = data as u64;
    let mut parity = 0u64;
    for (r, mask) in ROW_MASKS.iter().enumerate() {
        parity |= (((d & mask).count_ones() & 1) as u64) << r;
    }
    Codeword39::from_raw(d | (parity << DATA_BITS))
}

pub fn syndrome(c: Codeword39) -> u8 {
    let mut s = 0u8;
    for (r, mask) in ROW_MASKS.iter().enumerate() {
        s |= (((c.raw() & mask).count_ones() & 1) as u8) << r;
    }
    s
}

pub fn decode(c: Codeword39) -> DecodeResult {
    let s = syndrome(c);
    if s == 0 {
        return DecodeResult { data: c.data_bits(), status: DecodeStatus::Clean, corrected: c };
    }
    // Odd-weight syndromes that match no column (three or more flips) are
    // treated as uncorrectable as well.
    match SYNDROME_TO_BIT[s as usize] {
        NO_COLUMN => DecodeResult {
            data: c.data_bits(),
            status: DecodeStatus::UncorrectableDouble,
            corrected: c,
        },
        bit => {
            let fixed = c.flip(bit as u32);
            DecodeResult {
                data: fixed.data_bits(),
                status: DecodeStatus::CorrectedSingle(bit),
                corrected: fixed,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_column_is_smallest_weight_three() {
        assert_eq!(MATRIX.columns[0], 0b000_0111);
    }

    #[test]
    fn columns_odd_distinct_nonzero() {
        let mut seen = std::collections::HashSet::new();
        for &c in MATRIX.columns.iter() {
            assert_ne!(c, 0);
            assert_eq!(weight7(c) % 2, 1);
            assert!(seen.insert(c));
        }
        assert_eq!(seen.len(), 39);
        for p in 0..7 {
            assert_eq!(MATRIX.columns[32 + p], 1 << p);
        }
    }

    #[test]
    fn enough_weight_three_columns() {
        let n = (1u8..128).filter(|&v| weight7(v) == 3).count();
        assert_eq!(n, 35);
        assert!(n >= 32);
    }

    #[test]
    fn zero_encodes_to_zero() {
        assert_eq!(encode(0).raw(), 0);
    }

    #[test]
    fn all_ones_parity_is_xor_of_data_columns() {
        let expected = MATRIX.columns[..32].iter().fold(0u8, |acc, &c| acc ^ c);
        assert_eq!(encode(u32::MAX).parity_bits(), expected);
    }

    #[test]
    fn single_flip_syndrome_is_column() {
        let c = encode(0x1234_5678);
        for k in 0..39 {
            assert_eq!(syndrome(c.flip(k)), MATRIX.columns[k as usize]);
        }
    }

    #[test]
    fn double_flip_syndrome_is_even_xor() {
        let c = encode(0xCAFE_F00D);
        for j in 0..39 {
            for k in (j + 1)..39 {
                let s = syndrome(c.flip(j).flip(k));
                assert_eq!(s, MATRIX.columns[j as usize] ^ MATRIX.columns[k as usize]);
                assert_eq!(s.count_ones() % 2, 0);
                assert_ne!(s, 0);
            }
        }
    }

    #[test]
    fn triple_flip_may_alias() {
        // Accepted SECDED behaviour: some triple errors look like single errors.
        let c = encode(0);
        let r = decode(c.flip(0).flip(1).flip(2));
        assert_ne!(r.status, DecodeStatus::Clean);
    }
}
