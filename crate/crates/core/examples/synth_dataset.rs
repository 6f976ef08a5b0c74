//! Generates a synthetic saliency dataset and writes it as PPM/PGM files.
//!
//! cargo run --release --example synth_dataset -- [out_dir] [count] [size] [seed]

use std::path::PathBuf;

use gatenet::data::{synth_generate, Dataset, SynthSpec};

fn main() -> gatenet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map_or("synthetic", String::as_str));
    let count = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let size = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(64);
    let seed = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    let spec = SynthSpec::new(seed, count, size);
    let samples = synth_generate(&spec)?;
    for (i, s) in samples.iter().enumerate().take(5) {
        let fg = s.sample.mask.sum() / (size * size) as f32;
        println!("sample {i}: {} figure(s), foreground {:.1}%", s.foreground.len(), 100.0 * fg);
    }
    Dataset::synthetic(&spec)?.save(&out)?;
    println!("wrote {count} pairs to {}/{{images,masks}}", out.display());
    Ok(())
}
