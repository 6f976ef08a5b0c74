//! Central finite-difference checks of the tape's analytic gradients, in `f64`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::model::{layer_table, GateNet, Init, ModelConfig};
use crate::ops::ConvSpec;
use crate::tensor::{Shape, Tensor};

/// Step size and acceptance thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub eps: f64,
    pub rel_tol: f64,
    /// Absolute differences below this pass regardless of relative error.
    pub abs_floor: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            eps: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-6,
        }
    }
}

/// Accumulated agreement between analytic and numeric gradients.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Comparison {
    pub checked: usize,
    pub failures: usize,
    pub max_abs_err: f64,
    /// Largest relative error among entries above the absolute floor.
    pub max_rel_err: f64,
}

impl Comparison {
    pub fn record(&mut self, analytic: f64, numeric: f64, cfg: &FdConfig) {
        let abs = (analytic - numeric).abs();
        self.checked += 1;
        self.max_abs_err = self.max_abs_err.max(abs);
        if abs <= cfg.abs_floor {
            return;
        }
        let rel = abs / analytic.abs().max(numeric.abs());
        self.max_rel_err = self.max_rel_err.max(rel);
        if !(rel < cfg.rel_tol) {
            self.failures += 1;
        }
    }

    pub fn merge(&mut self, other: &Comparison) {
        self.checked += other.checked;
        self.failures += other.failures;
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

type BuildFn<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

/// Checks every coordinate of every input of `build`. Non-scalar outputs are reduced
/// with fixed random weights so each output element contributes.
pub fn check_op(build: &BuildFn<'_>, inputs: &[Tensor<f64>], cfg: &FdConfig, seed: u64) -> Result<Comparison> {
    let mut projection: Option<Tensor<f64>> = None;
    let mut eval = |xs: &[Tensor<f64>], want_grads: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let loss = if tape.shape(out) == Shape::scalar() {
            out
        } else {
            let w = projection.get_or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                Tensor::random_uniform(tape.shape(out), -1.0, 1.0, &mut rng)
            });
            tape.weighted_sum(out, w)?
        };
        let value = tape.value(loss).item();
        let grads = if want_grads {
            let g = tape.backward(loss)?;
            vars.iter()
                .zip(xs)
                .map(|(v, x)| g.wrt(*v, x.shape()))
                .collect()
        } else {
            Vec::new()
        };
        Ok((value, grads))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut cmp = Comparison::default();
    let mut work = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..work[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + cfg.eps;
            let (fp, _) = eval(&work, false)?;
            work[i].data_mut()[j] = orig - cfg.eps;
            let (fm, _) = eval(&work, false)?;
            work[i].data_mut()[j] = orig;
            cmp.record(grad.data()[j], (fp - fm) / (2.0 * cfg.eps), cfg);
        }
    }
    Ok(cmp)
}

/// Result of checking one operator over several random instantiations.
#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub op: &'static str,
    pub cases: usize,
    pub cmp: Comparison,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.cmp.passed()
    }
}

fn uniform(rng: &mut ChaCha8Rng, s: Shape) -> Tensor<f64> {
    Tensor::random_uniform(s, -1.0, 1.0, rng)
}

/// Values at least `gap` away from zero, so ReLU kinks stay outside the FD stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, s: Shape, gap: f64) -> Tensor<f64> {
    let mut t = uniform(rng, s);
    for v in t.data_mut() {
        if v.abs() < gap {
            *v = if *v < 0.0 { -gap } else { gap } + *v;
        }
    }
    t
}

/// Distinct values spaced ≥ 0.01 apart, so max-pool winners never tie under perturbation.
fn distinct(rng: &mut ChaCha8Rng, s: Shape) -> Tensor<f64> {
    let mut vals: Vec<f64> = (0..s.numel())
        .map(|i| i as f64 * 0.01 + rng.gen_range(0.0..0.004))
        .collect();
    vals.shuffle(rng);
    Tensor::from_vec(s, vals).expect("sized")
}

fn small_shape(rng: &mut ChaCha8Rng, even: bool) -> Shape {
    let n = rng.gen_range(1..=2);
    let c = rng.gen_range(1..=3);
    let (h, w) = if even {
        (2 * rng.gen_range(1..=3), 2 * rng.gen_range(1..=3))
    } else {
        (rng.gen_range(2..=6), rng.gen_range(2..=6))
    };
    Shape::new(n, c, h, w)
}

/// Runs every differentiable op through [`check_op`] `cases` times with random shapes and values.
pub fn op_suite(cases: usize, seed: u64, cfg: &FdConfig) -> Result<Vec<OpReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    let mut run = |op: &'static str,
                   rng: &mut ChaCha8Rng,
                   make: &mut dyn FnMut(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<BuildFn<'static>>)|
     -> Result<()> {
        let mut cmp = Comparison::default();
        for case in 0..cases {
            let (inputs, build) = make(rng);
            let c = check_op(build.as_ref(), &inputs, cfg, seed.wrapping_add(case as u64))?;
            cmp.merge(&c);
        }
        reports.push(OpReport { op, cases, cmp });
        Ok(())
    };

    run("conv2d", &mut rng, &mut |rng| {
        let cin = rng.gen_range(1..=3);
        let cout = rng.gen_range(1..=3);
        let k = [1, 3][rng.gen_range(0..2)];
        let dilation = rng.gen_range(1..=2);
        let stride = rng.gen_range(1..=2);
        let padding = rng.gen_range(0..=2);
        let spec = ConvSpec::new(cout, cin, k)
            .with_dilation(dilation)
            .with_stride(stride)
            .with_padding(padding);
        let n = rng.gen_range(1..=2);
        let x = uniform(rng, Shape::new(n, cin, 7, 6));
        let w = uniform(rng, spec.weight_shape());
        let b = uniform(rng, Shape::new(1, cout, 1, 1));
        (
            vec![x, w, b],
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.conv2d(v[0], v[1], Some(v[2]), spec)),
        )
    })?;

    run("folded_atrous_conv", &mut rng, &mut |rng| {
        let c = rng.gen_range(1..=2);
        let out = 4 * rng.gen_range(1..=2);
        let dilation = rng.gen_range(1..=3);
        let spec = ConvSpec::same(out, 4 * c, 3, dilation);
        let n = rng.gen_range(1..=2);
        let x = uniform(rng, Shape::new(n, c, 6, 8));
        let w = uniform(rng, spec.weight_shape());
        let b = uniform(rng, Shape::new(1, out, 1, 1));
        (
            vec![x, w, b],
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.folded_atrous_conv(v[0], v[1], Some(v[2]), spec)),
        )
    })?;

    run("fold2x2", &mut rng, &mut |rng| {
        let x = { let s = small_shape(rng, true); uniform(rng, s) };
        (vec![x], Box::new(|t: &mut Tape<f64>, v: &[Var]| t.fold2x2(v[0])))
    })?;

    run("unfold2x2", &mut rng, &mut |rng| {
        let s = small_shape(rng, false);
        let x = uniform(rng, Shape::new(s.n(), 4 * s.c(), s.h(), s.w()));
        (vec![x], Box::new(|t: &mut Tape<f64>, v: &[Var]| t.unfold2x2(v[0])))
    })?;

    run("sigmoid", &mut rng, &mut |rng| {
        let x = { let s = small_shape(rng, false); uniform(rng, s) }.map(|v| 4.0 * v);
        (vec![x], Box::new(|t: &mut Tape<f64>, v: &[Var]| Ok(t.sigmoid(v[0]))))
    })?;

    run("relu", &mut rng, &mut |rng| {
        let x = { let s = small_shape(rng, false); away_from_zero(rng, s, 1e-3) };
        (vec![x], Box::new(|t: &mut Tape<f64>, v: &[Var]| Ok(t.relu(v[0]))))
    })?;

    run("global_avg_pool", &mut rng, &mut |rng| {
        let x = { let s = small_shape(rng, false); uniform(rng, s) };
        (vec![x], Box::new(|t: &mut Tape<f64>, v: &[Var]| t.global_avg_pool(v[0])))
    })?;

    run("max_pool2x2", &mut rng, &mut |rng| {
        let x = { let s = small_shape(rng, true); distinct(rng, s) };
        (vec![x], Box::new(|t: &mut Tape<f64>, v: &[Var]| t.max_pool2x2(v[0])))
    })?;

    run("bilinear_upsample", &mut rng, &mut |rng| {
        let s = small_shape(rng, false);
        let (th, tw) = (s.h() + rng.gen_range(1..=9), s.w() * rng.gen_range(1..=3) + 1);
        let x = uniform(rng, s);
        (
            vec![x],
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.upsample(v[0], th, tw)),
        )
    })?;

    run("concat_channels", &mut rng, &mut |rng| {
        let s = small_shape(rng, false);
        let k = rng.gen_range(2..=3);
        let xs = (0..k)
            .map(|_| {
                let c = rng.gen_range(1..=3);
                uniform(rng, Shape::new(s.n(), c, s.h(), s.w()))
            })
            .collect();
        (xs, Box::new(|t: &mut Tape<f64>, v: &[Var]| t.concat_channels(v)))
    })?;

    run("add", &mut rng, &mut |rng| {
        let s = small_shape(rng, false);
        (
            vec![uniform(rng, s), uniform(rng, s)],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| t.add(v[0], v[1])),
        )
    })?;

    run("scale_by_gate", &mut rng, &mut |rng| {
        let s = small_shape(rng, false);
        let g = Tensor::random_uniform(Shape::new(s.n(), 1, 1, 1), 0.05, 0.95, rng);
        (
            vec![uniform(rng, s), g],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| t.scale_by_gate(v[0], v[1])),
        )
    })?;

    run("select_channel", &mut rng, &mut |rng| {
        let s = small_shape(rng, false);
        let ch = rng.gen_range(0..s.c());
        (
            vec![uniform(rng, s)],
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.select_channel(v[0], ch)),
        )
    })?;

    run("bce", &mut rng, &mut |rng| {
        let s = small_shape(rng, false);
        let p = Tensor::random_uniform(s, 0.05, 0.95, rng);
        let y = Tensor::from_fn(s, |_, _, _, _| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
        (
            vec![p],
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.bce(v[0], &y)),
        )
    })?;

    Ok(reports)
}

/// Per-tensor result of the end-to-end model check.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub cmp: Comparison,
    /// Coordinates re-measured with a smaller step after a mismatch.
    pub refined: usize,
}

const KINK_RETRIES: usize = 2;

fn agrees(analytic: f64, numeric: f64, cfg: &FdConfig) -> bool {
    let mut c = Comparison::default();
    c.record(analytic, numeric, cfg);
    c.passed()
}

fn central_difference(
    net: &mut GateNet<f64>,
    name: &str,
    j: usize,
    eps: f64,
    images: &Tensor<f64>,
    masks: &Tensor<f64>,
) -> Result<f64> {
    let orig = net.params().require(name)?.data()[j];
    let set = |net: &mut GateNet<f64>, v: f64| {
        net.params_mut().get_mut(name).expect("checked above").data_mut()[j] = v;
    };
    set(net, orig + eps);
    let fp = net.loss_value(images, masks);
    set(net, orig - eps);
    let fm = net.loss_value(images, masks);
    set(net, orig);
    Ok((fp? - fm?) / (2.0 * eps))
}

/// End-to-end check of the full loss against every parameter tensor.
///
/// For each tensor, up to `coords_per_tensor` coordinates are perturbed (all of them
/// when the tensor is smaller). Zero-initialised layers are randomised first so the
/// gate units are not checked only at their symmetric starting point.
pub fn model_gradcheck(cfg: &ModelConfig, batch: usize, coords_per_tensor: usize, seed: u64, fd: &FdConfig) -> Result<Vec<ParamCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = GateNet::<f64>::new(cfg.clone(), seed)?;
    for layer in layer_table(cfg) {
        if layer.init == Init::Zero {
            let w = net.params_mut().get_mut(&layer.weight_name()).expect("layer exists");
            let bound = (1.0 / layer.conv.fan_in() as f64).sqrt();
            *w = Tensor::random_uniform(w.shape(), -bound, bound, &mut rng);
        }
    }
    for (name, t) in net.params_mut().iter_mut() {
        if name.ends_with(".bias") {
            // Biases: small nonzero values exercise their gradients away from the init point.
            *t = Tensor::random_uniform(t.shape(), -0.05, 0.05, &mut rng);
        }
    }
    let s = cfg.backbone.input_size;
    let images = Tensor::random_uniform(Shape::new(batch, 3, s, s), 0.0, 1.0, &mut rng);
    let masks = Tensor::from_fn(Shape::new(batch, 1, s, s), |_, _, h, w| {
        if (h as f64 - s as f64 / 2.0).hypot(w as f64 - s as f64 / 3.0) < s as f64 / 3.5 {
            1.0
        } else {
            0.0
        }
    });

    let (_, grads) = net.loss_and_grads(&images, &masks)?;
    let names: Vec<String> = net.params().names().map(String::from).collect();
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let analytic = grads.require(&name)?.clone();
        let n = analytic.len();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > coords_per_tensor {
            coords.shuffle(&mut rng);
            coords.truncate(coords_per_tensor);
        }
        let mut cmp = Comparison::default();
        let mut refined = 0;
        for j in coords {
            let a = analytic.data()[j];
            let mut eps = fd.eps;
            let mut numeric = central_difference(&mut net, &name, j, eps, &images, &masks)?;
            // A ReLU or max-pool switch inside [x-eps, x+eps] corrupts the difference quotient.
            // Shrinking the step moves the kink out of the stencil; a wrong gradient stays wrong.
            for _ in 0..KINK_RETRIES {
                if agrees(a, numeric, fd) {
                    break;
                }
                eps /= 100.0;
                numeric = central_difference(&mut net, &name, j, eps, &images, &masks)?;
                refined += 1;
            }
            cmp.record(a, numeric, fd);
        }
        out.push(ParamCheck { name, cmp, refined });
    }
    Ok(out)
}
