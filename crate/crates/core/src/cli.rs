//! Command-line front end. [`run`] parses arguments, dispatches and maps errors to exit codes:
//! 0 success, 1 usage, 2 data, 3 numeric.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{list_stems, netpbm, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::gradcheck::{model_gradcheck, op_suite, FdConfig};
use crate::kv;
use crate::metrics::evaluate_dataset;
use crate::model::{gate_statistics, GateNet, ModelConfig};
use crate::ops::resize_bilinear;
use crate::tensor::Tensor;
use crate::train::{ablation_csv, predict, run_ablation, train, Checkpoint, RunOptions, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "gatenet", version, about = "Gated dual-branch salient object detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (images/NNNN.ppm, masks/NNNN.pgm).
    SynthData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a model; writes logs and checkpoint.gnet into --out-dir.
    Train(TrainArgs),
    /// Score a directory of predicted PGM maps against ground-truth PGM masks.
    Eval {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        /// Where metrics.csv and pr_curve.csv go.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write the 8-bit final saliency map of every image as <stem>.pgm.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A directory of .ppm files, or a dataset directory with an images/ subdirectory.
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Finite-difference checks of every operator and of a tiny model end to end.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Coordinates sampled per parameter tensor in the model check.
        #[arg(long, default_value_t = 16)]
        coords: usize,
        /// Only run the operator suite.
        #[arg(long)]
        ops_only: bool,
    },
    /// Mean gate value per level and branch, as CSV.
    GateStats {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score the four-rung ablation ladder, averaged over seeds.
    Ablate {
        #[arg(long)]
        train_dir: PathBuf,
        #[arg(long)]
        test_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model/training preset: toy, paper or tiny.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override a configuration key, e.g. `--set lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

impl ConfigArgs {
    /// Preset defaults, then the config file, then `--set` pairs, then dedicated flags.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::preset(self.preset.as_deref().unwrap_or("toy"))?;
        if let Some(path) = &self.config {
            let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let keys = kv::parse(&body)?;
            if let Some(p) = keys.get("preset") {
                cfg = TrainConfig::preset(p)?;
            }
            cfg.apply(&keys)?;
        }
        let mut pairs = String::new();
        for o in &self.overrides {
            if !o.contains('=') {
                return Err(Error::Invalid(format!("--set expects KEY=VALUE, got '{o}'")));
            }
            pairs.push_str(o);
            pairs.push('\n');
        }
        for (k, v) in [
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("batch", self.batch.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("max_iters", self.max_iters.map(|v| v.to_string())),
        ] {
            if let Some(v) = v {
                pairs.push_str(&format!("{k} = {v}\n"));
            }
        }
        cfg.apply(&kv::parse(&pairs)?)?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out dataset evaluated after every epoch.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Continue from this checkpoint; the configuration must match.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Checkpoint period in iterations.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub report_every: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Invalid(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Shape { .. } | Error::Format { .. } | Error::Checkpoint(_) | Error::Data(_) | Error::Io { .. } => EXIT_DATA,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, A>(argv: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::SynthData { seed, count, size, out_dir } => {
            let d = Dataset::synthetic(&SynthSpec::new(seed, count, size))?;
            d.save(&out_dir)?;
            println!("wrote {} samples to {}", d.len(), out_dir.display());
            Ok(EXIT_OK)
        }
        Command::Train(a) => cmd_train(a),
        Command::Eval { pred_dir, gt_dir, out_dir } => {
            let r = evaluate_dataset(&pred_dir, &gt_dir)?;
            print!("{}", r.metrics_csv());
            if let Some(d) = out_dir {
                r.write(&d)?;
            }
            Ok(EXIT_OK)
        }
        Command::Infer { checkpoint, images, out_dir } => {
            let n = infer(&checkpoint, &images, &out_dir)?;
            println!("wrote {n} maps to {}", out_dir.display());
            Ok(EXIT_OK)
        }
        Command::Gradcheck { cases, seed, coords, ops_only } => cmd_gradcheck(cases, seed, coords, ops_only),
        Command::GateStats { checkpoint, data, out } => {
            let net = load_model(&checkpoint)?;
            let d = Dataset::load(&data)?.resized_to(net.config().backbone.input_size)?;
            let batches = d
                .samples
                .chunks(4)
                .map(|c| Tensor::stack(&c.iter().map(|s| &s.image).collect::<Vec<_>>()))
                .collect::<Result<Vec<_>>>()?;
            let stats = gate_statistics(&net, &batches)?;
            let csv = stats.to_csv();
            match out {
                Some(p) => fs::write(&p, &csv).map_err(|e| Error::io(&p, e))?,
                None => print!("{csv}"),
            }
            let t = stats.trend();
            let verdict = |ok: bool| if ok { "PASS" } else { "INFO" };
            eprintln!(
                "trend (advisory): g1 increasing with level: {}; g2 decreasing with level: {}",
                verdict(t.g1_increasing),
                verdict(t.g2_decreasing)
            );
            Ok(EXIT_OK)
        }
        Command::Ablate { train_dir, test_dir, seeds, out, config } => {
            let base = config.resolve()?;
            let tr = Dataset::load(&train_dir)?;
            let te = Dataset::load(&test_dir)?;
            let rows = run_ablation(&base, &tr, &te, &seeds, |stage, seed, f| {
                eprintln!("{:<18} seed {seed:<4} maxF {f:.4}", stage.label());
            })?;
            let csv = ablation_csv(&rows);
            fs::write(&out, &csv).map_err(|e| Error::io(&out, e))?;
            print!("{csv}");
            Ok(EXIT_OK)
        }
    }
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let mut cfg = a.config.resolve()?;
    if let Some(every) = a.checkpoint_every {
        cfg.checkpoint_every = every;
    }
    let train_set = Dataset::load(&a.data)?;
    let test_set = a.test.as_deref().map(Dataset::load).transpose()?;
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let out = train(
        &cfg,
        &train_set,
        test_set.as_ref(),
        RunOptions {
            out_dir: Some(a.out_dir.clone()),
            resume,
            report_every: a.report_every,
        },
    )?;
    if let Some((first, last)) = out.log.loss_ends(10) {
        println!("loss {first:.4} -> {last:.4}");
    }
    if let Some(m) = out.final_eval {
        print!("{}", m.metrics_csv());
    }
    Ok(EXIT_OK)
}

fn cmd_gradcheck(cases: usize, seed: u64, coords: usize, ops_only: bool) -> Result<i32> {
    let fd = FdConfig::default();
    let mut ok = true;
    println!("check,cases,checked,failures,max_abs_err,max_rel_err");
    for r in op_suite(cases, seed, &fd)? {
        ok &= r.passed();
        println!("{},{},{},{},{:.3e},{:.3e}", r.op, r.cases, r.cmp.checked, r.cmp.failures, r.cmp.max_abs_err, r.cmp.max_rel_err);
    }
    if !ops_only {
        let model_fd = FdConfig {
            rel_tol: 1e-3,
            ..fd
        };
        for p in model_gradcheck(&ModelConfig::tiny(), 2, coords, seed, &model_fd)? {
            ok &= p.cmp.passed();
            println!("param:{},1,{},{},{:.3e},{:.3e}", p.name, p.cmp.checked, p.cmp.failures, p.cmp.max_abs_err, p.cmp.max_rel_err);
        }
    }
    if ok {
        println!("all gradient checks passed");
        Ok(EXIT_OK)
    } else {
        eprintln!("gradient check failed");
        Ok(EXIT_NUMERIC)
    }
}

/// Rebuilds the network stored in a checkpoint.
pub fn load_model(path: &Path) -> Result<GateNet<f32>> {
    let ckpt = Checkpoint::<f32>::load(path)?;
    let model = ModelConfig::from_text(&ckpt.config).map_err(|e| Error::Checkpoint(format!("stored configuration: {e}")))?;
    GateNet::from_params(model, ckpt.params).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Writes `<out_dir>/<stem>.pgm` for every `.ppm` image; returns how many.
pub fn infer(checkpoint: &Path, images: &Path, out_dir: &Path) -> Result<usize> {
    let net = load_model(checkpoint)?;
    let dir = if images.join("images").is_dir() { images.join("images") } else { images.to_path_buf() };
    let stems = list_stems(&dir, "ppm")?;
    if stems.is_empty() {
        return Err(Error::Data(format!("{}: no .ppm images", dir.display())));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let s = net.config().backbone.input_size;
    let mut inputs = Vec::with_capacity(stems.len());
    for stem in &stems {
        let img = netpbm::load_image(&dir.join(format!("{stem}.ppm")))?;
        let (h, w) = (img.shape().h(), img.shape().w());
        inputs.push(if (h, w) == (s, s) { img } else { resize_bilinear(&img, s, s)? });
    }
    let refs: Vec<&Tensor<f32>> = inputs.iter().collect();
    let maps = predict(&net, &refs, 4)?;
    for (stem, m) in stems.iter().zip(&maps) {
        netpbm::save_tensor(&out_dir.join(format!("{stem}.pgm")), m)?;
    }
    Ok(stems.len())
}
