use crate::error::{Error, Result};

/// Bits of probability precision in every table.
pub const PRECISION_BITS: u32 = 16;
/// Total frequency count of a table.
pub const TOTAL_FREQUENCY: u32 = 1 << PRECISION_BITS;
/// Largest alphabet a single table may cover.
pub const MAX_ALPHABET: usize = 4096;

/// Anything that assigns a probability mass to integer symbols.
pub trait SymbolModel {
    fn mass(&self, symbol: i32) -> f64;
    /// Mass of every symbol at or below `symbol`.
    fn below(&self, symbol: i32) -> f64;
    /// Mass of every symbol at or above `symbol`.
    fn above(&self, symbol: i32) -> f64;
}

/// Equal mass on every symbol. The tails carry one symbol's worth each.
pub struct UniformModel;

impl SymbolModel for UniformModel {
    fn mass(&self, _symbol: i32) -> f64 {
        1.0
    }

    fn below(&self, _symbol: i32) -> f64 {
        1.0
    }

    fn above(&self, _symbol: i32) -> f64 {
        1.0
    }
}

/// Quantized cumulative frequencies over `[min_symbol, max_symbol]`.
///
/// `cumulative[i]` is the upper bound of symbol `min_symbol + i`; the lower
/// bound is the previous entry, or 0 for the first symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    min_symbol: i32,
    cumulative: Vec<u32>,
}

impl CdfTable {
    /// Quantizes (unnormalized) masses to 16-bit frequencies, each at least 1.
    pub fn from_masses(min_symbol: i32, masses: &[f64]) -> Result<CdfTable> {
        let n = masses.len();
        if n == 0 {
            return Err(Error::Config("empty symbol range".into()));
        }
        if n > MAX_ALPHABET {
            return Err(Error::Config(format!(
                "{n} symbols exceed the table budget of {MAX_ALPHABET}"
            )));
        }
        let clean: Vec<f64> = masses
            .iter()
            .map(|&m| if m.is_finite() && m > 0.0 { m } else { 0.0 })
            .collect();
        let sum: f64 = clean.iter().sum();
        let probs: Vec<f64> = if sum > 0.0 && sum.is_finite() {
            clean.iter().map(|m| m / sum).collect()
        } else {
            vec![1.0 / n as f64; n]
        };
        let total = f64::from(TOTAL_FREQUENCY);
        let mut freq: Vec<u32> = probs
            .iter()
            .map(|p| ((p * total).floor() as u32).max(1))
            .collect();
        let assigned: u64 = freq.iter().map(|&f| u64::from(f)).sum();
        if assigned < u64::from(TOTAL_FREQUENCY) {
            let mut order: Vec<usize> = (0..n).collect();
            let remainder = |i: usize| probs[i] * total - (probs[i] * total).floor();
            order.sort_by(|&a, &b| remainder(b).total_cmp(&remainder(a)).then(a.cmp(&b)));
            let mut deficit = u64::from(TOTAL_FREQUENCY) - assigned;
            let mut k = 0;
            while deficit > 0 {
                freq[order[k % n]] += 1;
                deficit -= 1;
                k += 1;
            }
        } else {
            let mut surplus = assigned - u64::from(TOTAL_FREQUENCY);
            while surplus > 0 {
                let (i, _) = freq
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                    .expect("non-empty");
                freq[i] -= 1;
                surplus -= 1;
            }
        }
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0;
        for f in freq {
            acc += f;
            cumulative.push(acc);
        }
        debug_assert_eq!(acc, TOTAL_FREQUENCY);
        Ok(CdfTable {
            min_symbol,
            cumulative,
        })
    }

    pub fn min_symbol(&self) -> i32 {
        self.min_symbol
    }

    pub fn max_symbol(&self) -> i32 {
        self.min_symbol + self.cumulative.len() as i32 - 1
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    /// `(lower bound, frequency)` of a symbol, or `None` if out of range.
    pub fn interval(&self, symbol: i32) -> Option<(u32, u32)> {
        let i = usize::try_from(i64::from(symbol) - i64::from(self.min_symbol)).ok()?;
        let high = *self.cumulative.get(i)?;
        let low = if i == 0 { 0 } else { self.cumulative[i - 1] };
        Some((low, high - low))
    }

    /// Symbol whose interval contains `count`, with its `(lower bound, frequency)`.
    pub fn lookup(&self, count: u32) -> Option<(i32, u32, u32)> {
        if count >= TOTAL_FREQUENCY {
            return None;
        }
        let i = self.cumulative.partition_point(|&c| c <= count);
        let low = if i == 0 { 0 } else { self.cumulative[i - 1] };
        Some((self.min_symbol + i as i32, low, self.cumulative[i] - low))
    }

    /// Probability the table assigns to a symbol.
    pub fn probability(&self, symbol: i32) -> Option<f64> {
        self.interval(symbol)
            .map(|(_, f)| f64::from(f) / f64::from(TOTAL_FREQUENCY))
    }
}

fn check_range(min_symbol: i32, max_symbol: i32) -> Result<()> {
    if max_symbol < min_symbol {
        return Err(Error::Config(format!(
            "symbol range [{min_symbol}, {max_symbol}] is empty"
        )));
    }
    let width = i64::from(max_symbol) - i64::from(min_symbol) + 1;
    if width > MAX_ALPHABET as i64 {
        return Err(Error::Config(format!(
            "{width} symbols exceed the table budget of {MAX_ALPHABET}"
        )));
    }
    Ok(())
}

/// Discretizes a model's masses over the inclusive symbol range.
pub fn build_cdf_table(
    model: &impl SymbolModel,
    min_symbol: i32,
    max_symbol: i32,
) -> Result<CdfTable> {
    check_range(min_symbol, max_symbol)?;
    let masses: Vec<f64> = (min_symbol..=max_symbol).map(|s| model.mass(s)).collect();
    CdfTable::from_masses(min_symbol, &masses)
}

/// Like [`build_cdf_table`], but the first and last symbols carry the whole
/// lower and upper tails, so an inner symbol costs its own model mass rather
/// than a share renormalized over the range.
pub fn build_tail_table(
    model: &impl SymbolModel,
    min_symbol: i32,
    max_symbol: i32,
) -> Result<CdfTable> {
    check_range(min_symbol, max_symbol)?;
    if min_symbol == max_symbol {
        return CdfTable::from_masses(min_symbol, &[1.0]);
    }
    let masses: Vec<f64> = (min_symbol..=max_symbol)
        .map(|s| {
            if s == min_symbol {
                model.below(s)
            } else if s == max_symbol {
                model.above(s)
            } else {
                model.mass(s)
            }
        })
        .collect();
    CdfTable::from_masses(min_symbol, &masses)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn uniform_quarters() {
        let t = build_cdf_table(&UniformModel, -2, 1).unwrap();
        assert_eq!(t.cumulative(), &[16384, 32768, 49152, 65536]);
        assert_eq!(t.interval(-2), Some((0, 16384)));
        assert_eq!(t.interval(2), None);
        assert_eq!(t.lookup(16383), Some((-2, 0, 16384)));
        assert_eq!(t.lookup(16384), Some((-1, 16384, 16384)));
        assert_eq!(t.lookup(65536), None);
    }

    struct Geometric;

    impl SymbolModel for Geometric {
        fn mass(&self, symbol: i32) -> f64 {
            0.5f64.powi(symbol.unsigned_abs() as i32) / 3.0
        }

        fn below(&self, symbol: i32) -> f64 {
            (i32::MIN..=symbol)
                .rev()
                .take(60)
                .map(|s| self.mass(s))
                .sum()
        }

        fn above(&self, symbol: i32) -> f64 {
            (symbol..=i32::MAX).take(60).map(|s| self.mass(s)).sum()
        }
    }

    #[test]
    fn tail_table_edges_hold_the_tails() {
        let t = build_tail_table(&Geometric, -3, 3).unwrap();
        assert_eq!(*t.cumulative().last().unwrap(), 65536);
        for s in -2..=2 {
            let p = t.probability(s).unwrap();
            assert!((p - Geometric.mass(s)).abs() < 2e-4, "{s}: {p}");
        }
        assert!((t.probability(3).unwrap() - Geometric.above(3)).abs() < 2e-4);
        let single = build_tail_table(&Geometric, 5, 5).unwrap();
        assert_eq!(single.interval(5), Some((0, 65536)));
    }

    #[test]
    fn budget_is_enforced() {
        assert!(matches!(
            build_cdf_table(&UniformModel, 0, MAX_ALPHABET as i32),
            Err(Error::Config(_))
        ));
        assert!(build_cdf_table(&UniformModel, 0, MAX_ALPHABET as i32 - 1).is_ok());
        assert!(build_cdf_table(&UniformModel, 1, 0).is_err());
    }

    #[test]
    fn degenerate_masses_get_floor() {
        let t = CdfTable::from_masses(0, &[0.0, 1.0, 0.0, f64::NAN]).unwrap();
        assert_eq!(t.cumulative(), &[1, 65534, 65535, 65536]);
        let t = CdfTable::from_masses(5, &[0.0, 0.0]).unwrap();
        assert_eq!(t.cumulative(), &[32768, 65536]);
        let t = CdfTable::from_masses(0, &[3.0]).unwrap();
        assert_eq!(t.cumulative(), &[65536]);
    }

    proptest! {
        #[test]
        fn tables_are_strictly_increasing(masses in prop::collection::vec(0.0f64..10.0, 1..600)) {
            let t = CdfTable::from_masses(-3, &masses).unwrap();
            prop_assert_eq!(*t.cumulative().last().unwrap(), TOTAL_FREQUENCY);
            prop_assert!(t.cumulative()[0] >= 1);
            prop_assert!(t.cumulative().windows(2).all(|w| w[1] > w[0]));
        }
    }
}
