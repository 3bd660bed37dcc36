//! Byte-oriented range coder with 32-bit state and 16-bit frequencies.
//!
//! Carries out of the 32-bit window are resolved with a one-byte cache and a
//! run counter of pending 0xFF bytes, so the output never needs rewriting.
//! A finished stream of `S` renormalization shifts is `S + 1` bytes long.

use super::cdf::{CdfTable, PRECISION_BITS};
use crate::bytes::{put_u32, Reader};
use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        RangeEncoder::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn encode(&mut self, symbol: i32, table: &CdfTable) -> Result<()> {
        let (start, freq) = table.interval(symbol).ok_or_else(|| {
            Error::Encoding(format!(
                "symbol {symbol} outside table range [{}, {}]",
                table.min_symbol(),
                table.max_symbol()
            ))
        })?;
        let r = self.range >> PRECISION_BITS;
        self.low += u64::from(r) * u64::from(start);
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
        Ok(())
    }

    /// Emits the shortest tail that pins a value inside the final interval.
    pub fn finish(mut self) -> Vec<u8> {
        self.low = (self.low + u64::from(TOP - 1)) & !u64::from(TOP - 1);
        self.shift_low();
        self.shift_low();
        // The first byte out is the initial empty cache, always zero.
        debug_assert_eq!(self.out.first(), Some(&0));
        self.out.remove(0);
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

/// Bytes a valid stream lets the decoder read beyond its end.
const TAIL_BYTES: usize = 3;

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::decoding("empty range-coded payload"));
        }
        let mut d = RangeDecoder {
            data,
            pos: 0,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | u32::from(d.next_byte()?);
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = self.data.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        if self.pos > self.data.len() + TAIL_BYTES {
            return Err(Error::decoding("range-coded payload truncated"));
        }
        Ok(b)
    }

    pub fn decode(&mut self, table: &CdfTable) -> Result<i32> {
        let r = self.range >> PRECISION_BITS;
        let count = self.code / r;
        let (symbol, start, freq) = table
            .lookup(count)
            .ok_or_else(|| Error::decoding("range-coded payload is corrupt"))?;
        self.code -= r * start;
        self.range = r * freq;
        while self.range < TOP {
            self.code = (self.code << 8) | u32::from(self.next_byte()?);
            self.range <<= 8;
        }
        Ok(symbol)
    }

    /// Checks that exactly the encoder's bytes were consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() + TAIL_BYTES {
            return Err(Error::decoding(format!(
                "range-coded payload has {} unused bytes",
                (self.data.len() + TAIL_BYTES).saturating_sub(self.pos)
            )));
        }
        Ok(())
    }
}

/// Encodes `symbols[i]` under `tables[i]`.
pub fn range_encode(symbols: &[i32], tables: &[&CdfTable]) -> Result<Vec<u8>> {
    if symbols.len() != tables.len() {
        return Err(Error::Encoding(format!(
            "{} symbols but {} tables",
            symbols.len(),
            tables.len()
        )));
    }
    let mut enc = RangeEncoder::new();
    for (&s, t) in symbols.iter().zip(tables) {
        enc.encode(s, t)?;
    }
    Ok(enc.finish())
}

/// Decodes `count` symbols, one per table.
pub fn range_decode(bytes: &[u8], tables: &[&CdfTable], count: usize) -> Result<Vec<i32>> {
    if tables.len() != count {
        return Err(Error::decoding(format!(
            "{count} symbols requested with {} tables",
            tables.len()
        )));
    }
    let mut dec = RangeDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(count);
    for t in tables {
        out.push(dec.decode(t)?);
    }
    dec.finish()?;
    Ok(out)
}

/// Ideal code length of a symbol sequence under its tables, in bits.
pub fn table_entropy_bits(symbols: &[i32], tables: &[&CdfTable]) -> f64 {
    symbols
        .iter()
        .zip(tables)
        .map(|(&s, t)| -t.probability(s).unwrap_or(f64::MIN_POSITIVE).log2())
        .sum()
}

/// Framed payload: `[min i16][max i16][payload_len u32][payload]`, little-endian.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedBlock {
    pub min_symbol: i16,
    pub max_symbol: i16,
    pub payload: Vec<u8>,
}

/// Bytes of framing around each coded payload.
pub const CODED_BLOCK_HEADER_BYTES: usize = 8;

impl CodedBlock {
    pub fn byte_len(&self) -> usize {
        CODED_BLOCK_HEADER_BYTES + self.payload.len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.min_symbol.to_le_bytes());
        out.extend_from_slice(&self.max_symbol.to_le_bytes());
        put_u32(out, self.payload.len() as u32);
        out.extend_from_slice(&self.payload);
    }

    pub(crate) fn read_from(reader: &mut Reader) -> Result<CodedBlock> {
        let min_symbol = reader.i16()?;
        let max_symbol = reader.i16()?;
        if max_symbol < min_symbol {
            return Err(Error::decoding(format!(
                "symbol range [{min_symbol}, {max_symbol}] is empty"
            )));
        }
        let len = reader.u32()? as usize;
        let payload = reader.take(len)?.to_vec();
        Ok(CodedBlock {
            min_symbol,
            max_symbol,
            payload,
        })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::entropy::cdf::{build_cdf_table, UniformModel};

    fn random_table(rng: &mut ChaCha8Rng) -> CdfTable {
        let n = rng.gen_range(1..40);
        let skew: f64 = rng.gen_range(0.0..6.0);
        let masses: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(0.0f64..1.0).powf(skew))
            .collect();
        CdfTable::from_masses(rng.gen_range(-20..20), &masses).unwrap()
    }

    #[test]
    fn empty_sequence() {
        let bytes = range_encode(&[], &[]).unwrap();
        assert!(bytes.len() <= 8);
        assert_eq!(range_decode(&bytes, &[], 0).unwrap(), Vec::<i32>::new());
    }

    #[test]
    fn random_roundtrip_ten_thousand() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tables: Vec<CdfTable> = (0..16).map(|_| random_table(&mut rng)).collect();
        let picks: Vec<&CdfTable> = (0..10_000).map(|_| &tables[rng.gen_range(0..16)]).collect();
        let symbols: Vec<i32> = picks
            .iter()
            .map(|t| rng.gen_range(t.min_symbol()..=t.max_symbol()))
            .collect();
        let bytes = range_encode(&symbols, &picks).unwrap();
        assert_eq!(
            range_decode(&bytes, &picks, symbols.len()).unwrap(),
            symbols
        );
        let entropy = table_entropy_bits(&symbols, &picks);
        assert!((bytes.len() * 8) as f64 <= entropy + 32.0);
    }

    #[test]
    fn skewed_table_compresses() {
        let table = CdfTable::from_masses(0, &[0.99, 0.01]).unwrap();
        let symbols = vec![0; 1000];
        let tables = vec![&table; 1000];
        let bytes = range_encode(&symbols, &tables).unwrap();
        assert!(bytes.len() < 40, "{} bytes", bytes.len());
        assert_eq!(range_decode(&bytes, &tables, 1000).unwrap(), symbols);
    }

    #[test]
    fn out_of_range_symbol_is_encoding_error() {
        let t = build_cdf_table(&UniformModel, 0, 3).unwrap();
        assert!(matches!(range_encode(&[4], &[&t]), Err(Error::Encoding(_))));
    }

    #[test]
    fn truncation_is_detected() {
        let t = build_cdf_table(&UniformModel, 0, 255).unwrap();
        let symbols: Vec<i32> = (0..64).map(|i| (i * 37) % 256).collect();
        let tables = vec![&t; 64];
        let bytes = range_encode(&symbols, &tables).unwrap();
        for cut in 0..bytes.len() {
            assert!(
                range_decode(&bytes[..cut], &tables, 64).is_err(),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn carries_propagate() {
        // Symbols at the top of a tiny-frequency table push low upward and
        // exercise runs of 0xFF bytes.
        let mut masses = vec![1e-9; 200];
        masses[199] = 1.0;
        let t = CdfTable::from_masses(0, &masses).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let symbols: Vec<i32> = (0..5000)
            .map(|_| {
                if rng.gen_bool(0.97) {
                    199
                } else {
                    rng.gen_range(0..200)
                }
            })
            .collect();
        let tables = vec![&t; symbols.len()];
        let bytes = range_encode(&symbols, &tables).unwrap();
        assert_eq!(
            range_decode(&bytes, &tables, symbols.len()).unwrap(),
            symbols
        );
    }

    #[test]
    fn coded_block_framing() {
        let block = CodedBlock {
            min_symbol: -3,
            max_symbol: 7,
            payload: vec![1, 2, 3],
        };
        let mut bytes = Vec::new();
        block.write_to(&mut bytes);
        assert_eq!(bytes, vec![0xFD, 0xFF, 7, 0, 3, 0, 0, 0, 1, 2, 3]);
        assert_eq!(block.byte_len(), bytes.len());
        assert_eq!(
            CodedBlock::read_from(&mut Reader::new(&bytes)).unwrap(),
            block
        );
        assert!(CodedBlock::read_from(&mut Reader::new(&bytes[..10])).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn roundtrip_and_size_bound(seed in any::<u64>(), len in 0usize..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tables: Vec<CdfTable> = (0..4).map(|_| random_table(&mut rng)).collect();
            let picks: Vec<&CdfTable> = (0..len).map(|_| &tables[rng.gen_range(0..4)]).collect();
            let symbols: Vec<i32> = picks.iter().map(|t| rng.gen_range(t.min_symbol()..=t.max_symbol())).collect();
            let bytes = range_encode(&symbols, &picks).unwrap();
            prop_assert_eq!(range_decode(&bytes, &picks, len).unwrap(), symbols.clone());
            prop_assert!((bytes.len() * 8) as f64 <= table_entropy_bits(&symbols, &picks) + 32.0);
        }
    }
}
