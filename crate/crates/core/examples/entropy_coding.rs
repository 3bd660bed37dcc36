//! Range codes Gaussian-distributed symbols with quantized CDF tables and
//! compares the size with the table entropy.

use pcc_geo::entropy::{
    build_cdf_table, range_decode, range_encode, table_entropy_bits, GaussianConditional,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> pcc_geo::Result<()> {
    let gc = GaussianConditional::new(0.11)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for sigma in [0.2, 1.0, 4.0, 16.0] {
        let dist = Normal::new(0.0f64, sigma).unwrap();
        let symbols: Vec<i32> = (0..10_000)
            .map(|_| dist.sample(&mut rng).round() as i32)
            .collect();
        let (lo, hi) = (
            *symbols.iter().min().unwrap(),
            *symbols.iter().max().unwrap(),
        );
        let table = build_cdf_table(&gc.model(sigma), lo, hi)?;
        let tables = vec![&table; symbols.len()];
        let bytes = range_encode(&symbols, &tables)?;
        assert_eq!(range_decode(&bytes, &tables, symbols.len())?, symbols);
        let entropy = table_entropy_bits(&symbols, &tables);
        println!(
            "sigma {sigma:>4}: {:>6} bits coded, {entropy:>9.1} bits entropy, {:.3} bits/symbol",
            bytes.len() * 8,
            bytes.len() as f64 * 8.0 / symbols.len() as f64
        );
    }
    Ok(())
}
