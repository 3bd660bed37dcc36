//! Shapes and parameter counts of every transform, plus one forward and
//! backward pass through the residual analysis.

use pcc_geo::nn::{backward_transform, forward_transform, TransformSpec, WeightStore};
use pcc_geo::Tensor4D;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pcc_geo::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 8;
    let block = 32;
    let specs = [
        (TransformSpec::analysis_v1(n), block),
        (TransformSpec::synthesis_v1(n), block / 8),
        (TransformSpec::analysis_v2(n), block),
        (TransformSpec::synthesis_v2(n), block / 8),
        (TransformSpec::hyper_analysis(n), block / 8),
        (TransformSpec::hyper_synthesis(n), block / 16),
    ];
    for (spec, side) in &specs {
        let weights = WeightStore::init(std::slice::from_ref(spec), &mut rng);
        let out = spec.output_shape([*side; 3])?;
        println!(
            "{:<16} {side:>2}^3 x {} -> {:?}, {} parameters",
            spec.name.as_str(),
            spec.input_channels,
            out,
            weights.param_count()
        );
    }

    let spec = &specs[2].0;
    let weights = WeightStore::init(std::slice::from_ref(spec), &mut rng);
    let mut x = Tensor4D::zeros([block, block, block, 1]);
    for i in 0..block {
        x.set(i, i, block / 2, 0, 1.0);
    }
    let (y, tape) = forward_transform(spec, &weights, &x)?;
    let (dx, _) = backward_transform(tape, &y.map(|_| 1.0))?;
    println!(
        "latent range [{:.3}, {:.3}], input gradient norm {:.3}",
        y.data().iter().copied().fold(f64::INFINITY, f64::min),
        y.data().iter().copied().fold(f64::NEG_INFINITY, f64::max),
        dx.dot(&dx)?.sqrt()
    );
    Ok(())
}
