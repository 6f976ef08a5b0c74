//! Trains the toy model on a generated dataset and reports held-out metrics.
//!
//! cargo run --release --example train_toy -- [out_dir] [key=value ...]
//!
//! Extra arguments override configuration keys, e.g. `epochs=2 lr=0.005`.

use std::path::PathBuf;
use std::time::Instant;

use gatenet::data::{Dataset, SynthSpec};
use gatenet::train::{train, RunOptions, TrainConfig};

fn main() -> gatenet::Result<()> {
    let mut args = std::env::args().skip(1);
    let out_dir = PathBuf::from(args.next().unwrap_or_else(|| "toy_run".into()));
    let overrides: Vec<String> = args.collect();

    let mut cfg = TrainConfig::toy();
    cfg.apply(&gatenet::kv::parse(&overrides.join("\n"))?)?;
    print!("{}", cfg.to_text());

    let train_set = Dataset::synthetic(&SynthSpec::new(100, 200, 64))?;
    let test_set = Dataset::synthetic(&SynthSpec::new(200, 50, 64))?;
    let start = Instant::now();
    let opts = RunOptions { out_dir: Some(out_dir.clone()), report_every: 25, ..Default::default() };
    let out = train(&cfg, &train_set, Some(&test_set), opts)?;

    if let Some((first, last)) = out.log.loss_ends(10) {
        println!("loss {first:.4} -> {last:.4} (ratio {:.3})", last / first);
    }
    if let Some(m) = out.final_eval {
        println!("held-out: maxF {:.4}  MAE {:.4}  S {:.4}", m.f_beta_max, m.mae, m.s_measure);
    }
    println!("{} iterations in {:.1?}; logs and checkpoint in {}", out.log.iters.len(), start.elapsed(), out_dir.display());
    Ok(())
}
