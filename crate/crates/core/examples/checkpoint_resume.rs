//! Stops a run part-way, resumes it from the checkpoint and compares with an
//! uninterrupted run.

use gatenet::data::{Dataset, SynthSpec};
use gatenet::train::{train, Checkpoint, RunOptions, TrainConfig, CHECKPOINT_FILE};

fn main() -> gatenet::Result<()> {
    let dir = std::env::temp_dir().join("gatenet_resume_example");
    let data = Dataset::synthetic(&SynthSpec::new(3, 8, 32))?;
    let mut cfg = TrainConfig::preset("tiny")?;
    cfg.epochs = 2;
    cfg.batch = 2;

    let full = train(&cfg, &data, None, RunOptions::default())?;

    let mut first_half = cfg.clone();
    first_half.max_iters = Some(3);
    train(&first_half, &data, None, RunOptions { out_dir: Some(dir.clone()), ..Default::default() })?;
    let ckpt = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
    println!("checkpoint at iteration {}, {} parameter tensors", ckpt.iteration, ckpt.params.len());

    let rest = train(&cfg, &data, None, RunOptions { out_dir: Some(dir), resume: Some(ckpt), ..Default::default() })?;
    println!("resumed run took {} more steps", rest.log.iters.len());
    println!("weights identical to the uninterrupted run: {}", rest.net.params() == full.net.params());
    Ok(())
}
