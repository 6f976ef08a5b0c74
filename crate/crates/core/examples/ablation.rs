//! Trains the four-rung ablation ladder on a small synthetic benchmark.
//!
//! cargo run --release --example ablation -- [preset] [epochs] [seeds...]

use gatenet::data::{Dataset, SynthSpec};
use gatenet::train::{ablation_csv, run_ablation, TrainConfig};

fn main() -> gatenet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = TrainConfig::preset(args.first().map_or("tiny", String::as_str))?;
    cfg.epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let seeds: Vec<u64> = args.iter().skip(2).filter_map(|s| s.parse().ok()).collect();
    let seeds = if seeds.is_empty() { vec![0, 1] } else { seeds };

    let size = cfg.model.backbone.input_size;
    let train_set = Dataset::synthetic(&SynthSpec::new(100, 40, size))?;
    let test_set = Dataset::synthetic(&SynthSpec::new(200, 16, size))?;
    let rows = run_ablation(&cfg, &train_set, &test_set, &seeds, |stage, seed, f| {
        eprintln!("{:<18} seed {seed}  maxF {f:.4}", stage.label());
    })?;
    print!("{}", ablation_csv(&rows));
    Ok(())
}
