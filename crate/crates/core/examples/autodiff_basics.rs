//! Records a small graph on a tape and reads back gradients.

use gatenet::ops::ConvSpec;
use gatenet::{Shape, Tape, Tensor};

fn main() -> gatenet::Result<()> {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, x| (y * 4 + x) as f64 / 16.0));
    let w = tape.leaf(Tensor::full(Shape::new(2, 1, 3, 3), 0.1));
    let b = tape.leaf(Tensor::zeros(Shape::new(1, 2, 1, 1)));

    let y = tape.conv2d(x, w, Some(b), ConvSpec::same(2, 1, 3, 1))?;
    let y = tape.relu(y);
    let pooled = tape.max_pool2x2(y)?;
    let p = tape.sigmoid(pooled);
    let loss = tape.sum(p);

    println!("loss = {:.6}", tape.value(loss).item());
    let grads = tape.backward(loss)?;
    println!("d loss / d bias   = {:?}", grads.get(b).unwrap().data());
    println!("d loss / d weight (first filter):");
    for row in grads.get(w).unwrap().data()[..9].chunks(3) {
        println!("  {row:.5?}");
    }
    println!("the input is a constant: {:?}", grads.get(x).is_none());
    Ok(())
}
