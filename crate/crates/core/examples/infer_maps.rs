//! Trains a tiny model briefly, saves it, then writes saliency maps for new images.

use gatenet::cli::infer;
use gatenet::data::{netpbm, Dataset, SynthSpec};
use gatenet::train::{predict, train, RunOptions, TrainConfig, CHECKPOINT_FILE};

fn main() -> gatenet::Result<()> {
    let root = std::env::temp_dir().join("gatenet_infer_example");
    let (run, images, maps) = (root.join("run"), root.join("images"), root.join("maps"));

    let mut cfg = TrainConfig::preset("tiny")?;
    cfg.epochs = 2;
    cfg.batch = 2;
    let train_set = Dataset::synthetic(&SynthSpec::new(1, 8, 32))?;
    let out = train(&cfg, &train_set, None, RunOptions { out_dir: Some(run.clone()), ..Default::default() })?;

    let new = Dataset::synthetic(&SynthSpec::new(2, 3, 32))?;
    new.save(&images)?;
    let n = infer(&run.join(CHECKPOINT_FILE), &images, &maps)?;
    println!("wrote {n} maps to {}", maps.display());

    // The files are the 8-bit quantization of the in-memory prediction.
    let inputs: Vec<_> = new.samples.iter().map(|s| &s.image).collect();
    let direct = predict(&out.net, &inputs, 4)?;
    let from_disk = netpbm::read(&maps.join("0000.pgm"))?;
    let quantized: Vec<u8> = direct[0].data().iter().map(|&v| netpbm::quantize(v as f64)).collect();
    println!("file matches library output: {}", from_disk.pixels == quantized);
    Ok(())
}
