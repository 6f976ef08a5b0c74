//! Training loop, schedule, optimiser, run logs and checkpoints.

mod ablation;
mod checkpoint;
mod config;
mod optim;

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use ablation::{ablation_csv, run_ablation, AblationRow, ABLATION_CSV_HEADER};
pub use checkpoint::{Checkpoint, MAGIC, RUN_CONTROL_KEYS, VERSION};
pub use config::TrainConfig;
pub use optim::{decays, poly_lr, sgd_step, SgdConfig};

use crate::data::{augment, batch_indices, collate, epoch_order, AugmentConfig, Dataset, Sample};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, BinaryMask, MetricsReport, ScoreMap};
use crate::model::{GateNet, ParamStore};
use crate::tensor::Tensor;

/// Loss and schedule state after one optimiser step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    /// 1-based count of steps taken.
    pub iter: usize,
    /// 0-based epoch the step belongs to.
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub l_s1: Option<f64>,
    pub l_sf: Option<f64>,
}

/// Held-out metrics after an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub epoch: usize,
    pub iter: usize,
    pub f_beta_max: f64,
    pub mae: f64,
    pub s_measure: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub iters: Vec<IterRecord>,
    pub evals: Vec<EvalRecord>,
}

pub const ITER_CSV_HEADER: &str = "iter,epoch,lr,loss,l_s1,l_sf";
pub const EVAL_CSV_HEADER: &str = "epoch,iter,f_beta_max,mae,s_measure";

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.8}"))
}

impl IterRecord {
    pub fn csv(&self) -> String {
        format!("{},{},{:.8e},{:.8},{},{}", self.iter, self.epoch, self.lr, self.loss, opt(self.l_s1), opt(self.l_sf))
    }
}

impl EvalRecord {
    pub fn csv(&self) -> String {
        format!("{},{},{:.6},{:.6},{:.6}", self.epoch, self.iter, self.f_beta_max, self.mae, self.s_measure)
    }
}

impl RunLog {
    pub fn iter_csv(&self) -> String {
        let mut s = format!("{ITER_CSV_HEADER}\n");
        for r in &self.iters {
            s.push_str(&r.csv());
            s.push('\n');
        }
        s
    }

    pub fn eval_csv(&self) -> String {
        let mut s = format!("{EVAL_CSV_HEADER}\n");
        for r in &self.evals {
            s.push_str(&r.csv());
            s.push('\n');
        }
        s
    }

    /// Mean loss of the first and last `k` iterations.
    pub fn loss_ends(&self, k: usize) -> Option<(f64, f64)> {
        if self.iters.is_empty() {
            return None;
        }
        let k = k.clamp(1, self.iters.len());
        let mean = |rs: &[IterRecord]| rs.iter().map(|r| r.loss).sum::<f64>() / rs.len() as f64;
        Some((mean(&self.iters[..k]), mean(&self.iters[self.iters.len() - k..])))
    }
}

/// SplitMix64 finaliser, used to derive independent stream seeds.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn shuffle_seed(seed: u64, epoch: usize) -> u64 {
    mix(mix(seed, 1), epoch as u64)
}

pub fn augment_seed(seed: u64, epoch: usize, sample: usize) -> u64 {
    mix(mix(mix(seed, 2), epoch as u64), sample as u64)
}

/// Model plus optimiser state, advanced one mini-batch at a time.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    net: GateNet<f32>,
    velocity: ParamStore<f32>,
    iteration: usize,
    dataset_len: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, dataset_len: usize) -> Result<Self> {
        cfg.validate()?;
        if dataset_len == 0 {
            return Err(Error::Data("training set is empty".into()));
        }
        let net = GateNet::new(cfg.model.clone(), cfg.seed)?;
        let velocity = net.params().zeros_like();
        Ok(Trainer {
            cfg,
            net,
            velocity,
            iteration: 0,
            dataset_len,
        })
    }

    /// Continues from a checkpoint written by a run with the same configuration.
    pub fn resume(cfg: TrainConfig, dataset_len: usize, ckpt: Checkpoint<f32>) -> Result<Self> {
        ckpt.check_config(&cfg.to_text())?;
        let mut t = Self::new(cfg, dataset_len)?;
        t.net = GateNet::from_params(t.cfg.model.clone(), ckpt.params)?;
        ckpt.momentum
            .check_against(&t.cfg.model)
            .map_err(|e| Error::Checkpoint(format!("momentum table: {e}")))?;
        t.velocity = ckpt.momentum;
        t.iteration = ckpt.iteration as usize;
        if t.iteration > t.total_iters() {
            return Err(Error::Checkpoint(format!("iteration {} beyond the run length {}", t.iteration, t.total_iters())));
        }
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn net(&self) -> &GateNet<f32> {
        &self.net
    }

    pub fn into_net(self) -> GateNet<f32> {
        self.net
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn iters_per_epoch(&self) -> usize {
        self.dataset_len.div_ceil(self.cfg.batch)
    }

    /// Length of the poly schedule: every batch of every epoch.
    pub fn schedule_len(&self) -> usize {
        self.cfg.epochs * self.iters_per_epoch()
    }

    /// Steps this run will actually take.
    pub fn total_iters(&self) -> usize {
        self.cfg.max_iters.map_or(self.schedule_len(), |m| m.min(self.schedule_len()))
    }

    pub fn finished(&self) -> bool {
        self.iteration >= self.total_iters()
    }

    pub fn checkpoint(&self) -> Checkpoint<f32> {
        Checkpoint {
            config: self.cfg.to_text(),
            iteration: self.iteration as u64,
            params: self.net.params().clone(),
            momentum: self.velocity.clone(),
        }
    }

    /// The (possibly augmented) samples of the current iteration, in batch order.
    pub fn current_batch(&self, data: &Dataset) -> Vec<Sample> {
        let per = self.iters_per_epoch();
        let epoch = self.iteration / per;
        let order = epoch_order(data.len(), shuffle_seed(self.cfg.seed, epoch));
        let idx = &batch_indices(&order, self.cfg.batch)[self.iteration % per];
        idx.iter()
            .map(|&i| {
                let s = &data.samples[i];
                if self.cfg.augment {
                    let mut rng = ChaCha8Rng::seed_from_u64(augment_seed(self.cfg.seed, epoch, i));
                    augment(s, &AugmentConfig::default(), &mut rng)
                } else {
                    s.clone()
                }
            })
            .collect()
    }

    /// One SGD step. Leaves the state untouched if the loss, a gradient or an updated
/// parameter is not finite.
    pub fn step(&mut self, data: &Dataset) -> Result<IterRecord> {
        if data.len() != self.dataset_len {
            return Err(Error::Data(format!("trainer built for {} samples, got {}", self.dataset_len, data.len())));
        }
        if self.finished() {
            return Err(Error::Invalid("training run already complete".into()));
        }
        let (images, masks) = collate(&self.current_batch(data))?;
        let (loss, grads) = self.net.loss_and_grads(&images, &masks)?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!("loss is {} at iteration {}", loss.total, self.iteration + 1)));
        }
        let lr = poly_lr(self.iteration, self.schedule_len(), self.cfg.base_lr, self.cfg.poly_power)?;
        let sgd = SgdConfig {
            momentum: self.cfg.momentum,
            weight_decay: self.cfg.weight_decay,
        };
        let (params, velocity) = (self.net.params().clone(), self.velocity.clone());
        sgd_step(self.net.params_mut(), &grads, &mut self.velocity, lr, &sgd)?;
        let overflow = self.net.params().iter().find(|(_, t)| !t.all_finite()).map(|(n, _)| n.to_string());
        if let Some(name) = overflow {
            *self.net.params_mut() = params;
            self.velocity = velocity;
            return Err(Error::Numeric(format!("parameter '{name}' overflowed at iteration {}", self.iteration + 1)));
        }
        let epoch = self.iteration / self.iters_per_epoch();
        self.iteration += 1;
        Ok(IterRecord {
            iter: self.iteration,
            epoch,
            lr,
            loss: loss.total as f64,
            l_s1: loss.l_s1.map(f64::from),
            l_sf: loss.l_sf.map(f64::from),
        })
    }
}

/// Final saliency maps `(1,1,S,S)` of every sample, in dataset order.
pub fn predict(net: &GateNet<f32>, images: &[&Tensor<f32>], batch: usize) -> Result<Vec<Tensor<f32>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let x = Tensor::stack(chunk)?;
        let f = net.forward(&x)?.final_map;
        out.extend((0..chunk.len()).map(|i| f.batch_item(i)));
    }
    Ok(out)
}

pub fn evaluate_model(net: &GateNet<f32>, data: &Dataset, batch: usize) -> Result<MetricsReport> {
    let images: Vec<&Tensor<f32>> = data.samples.iter().map(|s| &s.image).collect();
    let maps = predict(net, &images, batch)?;
    let preds = maps.iter().map(|m| ScoreMap::from_tensor(m, 0)).collect::<Result<Vec<_>>>()?;
    let gts = data
        .samples
        .iter()
        .map(|s| BinaryMask::from_tensor(&s.mask, 0))
        .collect::<Result<Vec<_>>>()?;
    evaluate(&preds, &gts)
}

/// Where a run keeps its files. Everything is optional.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Receives `train_log.csv`, `eval_log.csv`, `checkpoint.gnet` and `config.txt`.
    pub out_dir: Option<PathBuf>,
    pub resume: Option<Checkpoint<f32>>,
    /// Print a progress line every this many iterations (0: silent).
    pub report_every: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: GateNet<f32>,
    pub log: RunLog,
    /// Held-out metrics at the end of the run, when a test set was given.
    pub final_eval: Option<MetricsReport>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.gnet";

struct Logs {
    iters: File,
    evals: File,
}

fn open_log(path: &Path, header: &str, fresh: bool) -> Result<File> {
    let exists = path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(!fresh)
        .write(true)
        .truncate(fresh)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    if fresh || !exists {
        writeln!(f, "{header}").map_err(|e| Error::io(path, e))?;
    }
    Ok(f)
}

fn append(f: &mut File, line: &str, path: &Path) -> Result<()> {
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Runs (or resumes) training. Samples are resized to the model input size first.
///
/// On a non-finite loss the run stops with [`Error::Numeric`]; the last periodic
/// checkpoint in `out_dir` is left as it was.
pub fn train(cfg: &TrainConfig, train_set: &Dataset, test_set: Option<&Dataset>, opts: RunOptions) -> Result<TrainOutcome> {
    let size = cfg.model.backbone.input_size;
    let train_set = train_set.resized_to(size)?;
    let test_set = test_set.map(|d| d.resized_to(size)).transpose()?;

    let resuming = opts.resume.is_some();
    let mut trainer = match opts.resume {
        Some(ckpt) => Trainer::resume(cfg.clone(), train_set.len(), ckpt)?,
        None => Trainer::new(cfg.clone(), train_set.len())?,
    };

    let mut logs = None;
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join("config.txt");
        fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
        logs = Some(Logs {
            iters: open_log(&dir.join("train_log.csv"), ITER_CSV_HEADER, !resuming)?,
            evals: open_log(&dir.join("eval_log.csv"), EVAL_CSV_HEADER, !resuming)?,
        });
    }
    let save = |t: &Trainer| -> Result<()> {
        match &opts.out_dir {
            Some(dir) => t.checkpoint().save(&dir.join(CHECKPOINT_FILE)),
            None => Ok(()),
        }
    };

    let mut log = RunLog::default();
    let mut last_eval = None;
    let per = trainer.iters_per_epoch();
    while !trainer.finished() {
        let rec = trainer.step(&train_set)?;
        if let (Some(l), Some(dir)) = (&mut logs, &opts.out_dir) {
            append(&mut l.iters, &rec.csv(), &dir.join("train_log.csv"))?;
        }
        if opts.report_every > 0 && (rec.iter % opts.report_every == 0 || rec.iter == 1) {
            eprintln!("iter {:>5}  epoch {:>3}  lr {:.3e}  loss {:.4}", rec.iter, rec.epoch, rec.lr, rec.loss);
        }
        log.iters.push(rec);

        let epoch_done = trainer.iteration() % per == 0 || trainer.finished();
        if epoch_done {
            if let Some(test) = &test_set {
                let m = evaluate_model(trainer.net(), test, cfg.batch)?;
                let e = EvalRecord {
                    epoch: rec.epoch,
                    iter: rec.iter,
                    f_beta_max: m.f_beta_max,
                    mae: m.mae,
                    s_measure: m.s_measure,
                };
                if let (Some(l), Some(dir)) = (&mut logs, &opts.out_dir) {
                    append(&mut l.evals, &e.csv(), &dir.join("eval_log.csv"))?;
                }
                if opts.report_every > 0 {
                    eprintln!("eval  epoch {:>3}  maxF {:.4}  MAE {:.4}  S {:.4}", e.epoch, e.f_beta_max, e.mae, e.s_measure);
                }
                log.evals.push(e);
                last_eval = Some(m);
            }
        }
        let periodic = cfg.checkpoint_every > 0 && trainer.iteration() % cfg.checkpoint_every == 0;
        if periodic || trainer.finished() {
            save(&trainer)?;
        }
    }
    Ok(TrainOutcome {
        net: trainer.into_net(),
        log,
        final_eval: last_eval,
    })
}
