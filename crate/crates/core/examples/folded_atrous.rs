//! Shape algebra of the 2×2 fold and the folded atrous convolution.

use gatenet::ops::{conv2d, fold2x2, folded_atrous_conv, unfold2x2, ConvSpec};
use gatenet::{Shape, Tensor};
use rand::SeedableRng;

fn main() -> gatenet::Result<()> {
    let x = Tensor::<f32>::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, x| (y * 4 + x) as f32);
    let f = fold2x2(&x)?;
    println!("fold {} -> {}", x.shape(), f.shape());
    for c in 0..4 {
        println!("  channel {c}: {:?}", f.plane(0, c));
    }
    assert_eq!(unfold2x2(&f)?, x);

    // A rate-r conv on the folded map sees pixels 2r apart in the original grid.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::<f32>::random_uniform(Shape::new(1, 8, 16, 16), -1.0, 1.0, &mut rng);
    for rate in [2, 4, 6] {
        let spec = ConvSpec::same(4 * 8, 4 * 8, 3, rate);
        let w = Tensor::random_uniform(spec.weight_shape(), -0.1, 0.1, &mut rng);
        let y = folded_atrous_conv(&x, &spec, &w, None)?;
        let plain = conv2d(&x, &ConvSpec::same(8, 8, 3, rate), &Tensor::random_uniform(Shape::new(8, 8, 3, 3), -0.1, 0.1, &mut rng), None)?;
        println!("rate {rate}: folded {} -> {}, plain atrous output {}", x.shape(), y.shape(), plain.shape());
    }
    Ok(())
}
