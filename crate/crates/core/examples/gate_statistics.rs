//! Mean gate value per level for a trained checkpoint (or a fresh model).
//!
//! cargo run --release --example gate_statistics -- [checkpoint.gnet]

use gatenet::cli::load_model;
use gatenet::data::{Dataset, SynthSpec};
use gatenet::model::{gate_statistics, GateNet, ModelConfig};
use gatenet::Tensor;

fn main() -> gatenet::Result<()> {
    let net = match std::env::args().nth(1) {
        Some(path) => load_model(path.as_ref())?,
        None => GateNet::new(ModelConfig::toy(), 0)?,
    };
    let size = net.config().backbone.input_size;
    let data = Dataset::synthetic(&SynthSpec::new(200, 16, size))?;
    let batches = data
        .samples
        .chunks(4)
        .map(|c| Tensor::stack(&c.iter().map(|s| &s.image).collect::<Vec<_>>()))
        .collect::<gatenet::Result<Vec<_>>>()?;
    let stats = gate_statistics(&net, &batches)?;
    print!("{}", stats.to_csv());
    let t = stats.trend();
    println!("g1 rises with level: {}, g2 falls with level: {}", t.g1_increasing, t.g2_decreasing);
    Ok(())
}
