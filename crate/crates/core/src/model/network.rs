//! Forward graph of the gated network.
//!
//! Top-down order: G⁵ from (E⁵, T⁵), D⁵ from g₁⁵·T⁵, then for each lower level the
//! upsampled D^{i+1} feeds both the gate unit Gⁱ and the FPN sum. The parallel branch
//! concatenates D¹ with every g₂ⁱ·Tⁱ upsampled to full resolution, and the final map is
//! `sigmoid(conv(F_cat) + D¹)`.

use indexmap::IndexMap;

use super::config::{DecoderKind, GateMode, ModelConfig, TopHead, PYRAMID_RATES};
use super::params::{layer_table, LayerSpec, ParamStore};
use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Gate values of one level, one entry per batch sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GatePair<T> {
    /// FPN-branch gate.
    pub g1: Vec<T>,
    /// Parallel-branch gate.
    pub g2: Vec<T>,
}

/// Per-sample gate variables of one level; `None` when gating is disabled.
#[derive(Debug, Clone, Copy)]
pub struct GateVars {
    pub g1: Var,
    pub g2: Var,
}

/// Everything a forward pass recorded on its tape.
#[derive(Debug, Clone)]
pub struct Graph {
    pub params: IndexMap<String, Var>,
    pub image: Var,
    /// E¹..E⁵.
    pub encoder: Vec<Var>,
    /// T¹..T⁵.
    pub transitions: Vec<Var>,
    /// G¹..G⁵ (index 0 is level 1).
    pub gates: Vec<Option<GateVars>>,
    /// D¹..D⁵ when the decoder has an FPN branch; D¹ is the single-channel logit map.
    pub decoder: Vec<Var>,
    pub f_cat: Option<Var>,
    /// Output of the fusion conv, before the residual add.
    pub fused: Option<Var>,
    pub final_map: Var,
}

impl Graph {
    pub fn d1_logits(&self) -> Option<Var> {
        self.decoder.first().copied()
    }

    /// Named intermediates: `E1..E5`, `T1..T5`, `D1..D5`, `F_cat`, `S_F`.
    pub fn named(&self) -> IndexMap<String, Var> {
        let mut m = IndexMap::new();
        for (i, v) in self.encoder.iter().enumerate() {
            m.insert(format!("E{}", i + 1), *v);
        }
        for (i, v) in self.transitions.iter().enumerate() {
            m.insert(format!("T{}", i + 1), *v);
        }
        for (i, v) in self.decoder.iter().enumerate() {
            m.insert(format!("D{}", i + 1), *v);
        }
        if let Some(f) = self.f_cat {
            m.insert("F_cat".into(), f);
        }
        m.insert("S_F".into(), self.final_map);
        m
    }
}

/// Values extracted from a finished forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutputs<T> {
    pub d1_logits: Option<Tensor<T>>,
    pub final_map: Tensor<T>,
    /// Level 1 first.
    pub gates: Vec<GatePair<T>>,
    pub intermediates: IndexMap<String, Tensor<T>>,
}

/// Loss nodes. `l_s1` supervises D¹, `l_sf` the final map.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub l_s1: Option<Var>,
    pub l_sf: Option<Var>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms<T> {
    pub total: T,
    pub l_s1: Option<T>,
    pub l_sf: Option<T>,
}

#[derive(Debug, Clone)]
pub struct GateNet<T> {
    cfg: ModelConfig,
    layers: IndexMap<String, LayerSpec>,
    params: ParamStore<T>,
}

impl<T: Real> GateNet<T> {
    /// Builds the model with freshly initialised parameters.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = ParamStore::init(&cfg, seed);
        Self::from_params(cfg, params)
    }

    pub fn from_params(cfg: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        cfg.validate()?;
        params.check_against(&cfg)?;
        let layers = layer_table(&cfg)
            .into_iter()
            .map(|l| (l.name.clone(), l))
            .collect();
        Ok(GateNet { cfg, layers, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    /// Same architecture and weights at another precision.
    pub fn cast<U: Real>(&self) -> GateNet<U> {
        GateNet {
            cfg: self.cfg.clone(),
            layers: self.layers.clone(),
            params: self.params.cast(),
        }
    }

    fn check_image(&self, image: &Tensor<T>) -> Result<()> {
        let s = image.shape();
        let size = self.cfg.backbone.input_size;
        if s.c() != 3 || s.h() != size || s.w() != size || s.n() == 0 {
            return Err(Error::shape(
                "gatenet",
                format!("input {s} must be (b,3,{size},{size})"),
            ));
        }
        Ok(())
    }

    /// Records a forward pass of `image` (shape `(b,3,S,S)`) on `tape`.
    pub fn build(&self, tape: &mut Tape<T>, image: &Tensor<T>) -> Result<Graph> {
        self.check_image(image)?;
        let params = self
            .params
            .iter()
            .map(|(name, t)| (name.to_string(), tape.leaf(t.clone())))
            .collect();
        let image = tape.constant(image.clone());
        let mut b = Builder {
            tape,
            net: self,
            params: &params,
        };
        let encoder = b.encode(image)?;
        let mut transitions = (0..4)
            .map(|i| b.transition(i + 1, encoder[i]))
            .collect::<Result<Vec<_>>>()?;
        transitions.push(b.top_head(encoder[4])?);

        let (decoder, gates) = match self.cfg.decoder {
            DecoderKind::Parallel => (Vec::new(), b.fixed_gates(image)?),
            _ => b.fpn_decode(&encoder, &transitions)?,
        };

        let (f_cat, fused, final_map) = match self.cfg.decoder {
            DecoderKind::Progressive => (None, None, b.tape.sigmoid(decoder[0])),
            DecoderKind::Dual => {
                let f_cat = b.parallel_branch(Some(decoder[0]), &transitions, &gates)?;
                let (fused, out) = b.fuse(f_cat, Some(decoder[0]))?;
                (Some(f_cat), Some(fused), out)
            }
            DecoderKind::Parallel => {
                let f_cat = b.parallel_branch(None, &transitions, &gates)?;
                let (fused, out) = b.fuse(f_cat, None)?;
                (Some(f_cat), Some(fused), out)
            }
        };

        Ok(Graph {
            params,
            image,
            encoder,
            transitions,
            gates,
            decoder,
            f_cat,
            fused,
            final_map,
        })
    }

    /// Adds the twin cross-entropy losses for a `{0,1}` mask of shape `(b,1,S,S)`.
    pub fn loss(&self, tape: &mut Tape<T>, graph: &Graph, mask: &Tensor<T>) -> Result<LossVars> {
        let fs = tape.shape(graph.final_map);
        if mask.shape() != fs {
            return Err(Error::shape(
                "loss",
                format!("mask {} must match prediction {}", mask.shape(), fs),
            ));
        }
        match self.cfg.decoder {
            DecoderKind::Dual => {
                let d1 = graph.d1_logits().expect("dual decoder has D1");
                let p1 = tape.sigmoid(d1);
                let l_s1 = tape.bce(p1, mask)?;
                let l_sf = tape.bce(graph.final_map, mask)?;
                let total = tape.add(l_s1, l_sf)?;
                Ok(LossVars {
                    total,
                    l_s1: Some(l_s1),
                    l_sf: Some(l_sf),
                })
            }
            DecoderKind::Progressive => {
                // The final map is sigmoid(D1) itself: a single supervision term.
                let l_s1 = tape.bce(graph.final_map, mask)?;
                Ok(LossVars {
                    total: l_s1,
                    l_s1: Some(l_s1),
                    l_sf: None,
                })
            }
            DecoderKind::Parallel => {
                let l_sf = tape.bce(graph.final_map, mask)?;
                Ok(LossVars {
                    total: l_sf,
                    l_s1: None,
                    l_sf: Some(l_sf),
                })
            }
        }
    }

    /// Forward pass without gradient bookkeeping beyond the tape itself.
    pub fn forward(&self, image: &Tensor<T>) -> Result<ForwardOutputs<T>> {
        let mut tape = Tape::new();
        let g = self.build(&mut tape, image)?;
        Ok(outputs(&tape, &g))
    }

    /// Loss terms and per-parameter gradients for one batch.
    pub fn loss_and_grads(&self, images: &Tensor<T>, masks: &Tensor<T>) -> Result<(LossTerms<T>, ParamStore<T>)> {
        let mut tape = Tape::new();
        let g = self.build(&mut tape, images)?;
        let l = self.loss(&mut tape, &g, masks)?;
        let grads = tape.backward(l.total)?;
        Ok((loss_terms(&tape, &l), self.collect_grads(&g, &grads)))
    }

    /// Loss value only; used by finite-difference checks.
    pub fn loss_value(&self, images: &Tensor<T>, masks: &Tensor<T>) -> Result<T> {
        let mut tape = Tape::new();
        let g = self.build(&mut tape, images)?;
        let l = self.loss(&mut tape, &g, masks)?;
        Ok(tape.value(l.total).item())
    }

    pub fn collect_grads(&self, graph: &Graph, grads: &Gradients<T>) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, t) in self.params.iter() {
            out.insert(name, grads.wrt(graph.params[name], t.shape()));
        }
        out
    }
}

pub fn loss_terms<T: Real>(tape: &Tape<T>, l: &LossVars) -> LossTerms<T> {
    LossTerms {
        total: tape.value(l.total).item(),
        l_s1: l.l_s1.map(|v| tape.value(v).item()),
        l_sf: l.l_sf.map(|v| tape.value(v).item()),
    }
}

/// Copies values of a recorded forward pass out of its tape.
pub fn outputs<T: Real>(tape: &Tape<T>, g: &Graph) -> ForwardOutputs<T> {
    let gates = g
        .gates
        .iter()
        .map(|gv| match gv {
            Some(GateVars { g1, g2 }) => GatePair {
                g1: tape.value(*g1).data().to_vec(),
                g2: tape.value(*g2).data().to_vec(),
            },
            None => {
                let n = tape.shape(g.image).n();
                GatePair {
                    g1: vec![T::one(); n],
                    g2: vec![T::one(); n],
                }
            }
        })
        .collect();
    ForwardOutputs {
        d1_logits: g.d1_logits().map(|v| tape.value(v).clone()),
        final_map: tape.value(g.final_map).clone(),
        gates,
        intermediates: g
            .named()
            .into_iter()
            .map(|(k, v)| (k, tape.value(v).clone()))
            .collect(),
    }
}

struct Builder<'a, T: Real> {
    tape: &'a mut Tape<T>,
    net: &'a GateNet<T>,
    params: &'a IndexMap<String, Var>,
}

impl<T: Real> Builder<'_, T> {
    fn conv(&mut self, layer: &str, x: Var) -> Result<Var> {
        let spec = self
            .net
            .layers
            .get(layer)
            .ok_or_else(|| Error::Invalid(format!("architecture has no layer '{layer}'")))?;
        let w = self.params[&spec.weight_name()];
        let b = self.params[&spec.bias_name()];
        self.tape.conv2d(x, w, Some(b), spec.conv)
    }

    fn folded_conv(&mut self, layer: &str, x: Var) -> Result<Var> {
        let spec = &self.net.layers[layer];
        let w = self.params[&spec.weight_name()];
        let b = self.params[&spec.bias_name()];
        self.tape.folded_atrous_conv(x, w, Some(b), spec.conv)
    }

    fn conv_relu(&mut self, layer: &str, x: Var) -> Result<Var> {
        let y = self.conv(layer, x)?;
        Ok(self.tape.relu(y))
    }

    fn encode(&mut self, image: Var) -> Result<Vec<Var>> {
        let mut x = image;
        let mut levels = Vec::with_capacity(5);
        for i in 1..=5 {
            if i > 1 {
                x = self.tape.max_pool2x2(x)?;
            }
            for j in 0..self.net.cfg.backbone.convs_per_block {
                x = self.conv_relu(&format!("enc{i}.conv{j}"), x)?;
            }
            levels.push(x);
        }
        Ok(levels)
    }

    fn transition(&mut self, level: usize, e: Var) -> Result<Var> {
        self.conv_relu(&format!("trans{level}"), e)
    }

    fn top_head(&mut self, e5: Var) -> Result<Var> {
        match self.net.cfg.top {
            TopHead::Pointwise => self.conv_relu("top.b0", e5),
            TopHead::Atrous(r) => self.conv_relu(&format!("top.atrous{r}"), e5),
            TopHead::Fold(r) => {
                let y = self.folded_conv(&format!("top.fold{r}"), e5)?;
                Ok(self.tape.relu(y))
            }
            TopHead::Aspp | TopHead::FoldAspp => {
                let mut branches = vec![self.conv("top.b0", e5)?];
                for r in PYRAMID_RATES {
                    let b = if self.net.cfg.top == TopHead::FoldAspp {
                        self.folded_conv(&format!("top.fold{r}"), e5)?
                    } else {
                        self.conv(&format!("top.atrous{r}"), e5)?
                    };
                    branches.push(b);
                }
                let cat = self.tape.concat_channels(&branches)?;
                self.conv_relu("top.fuse", cat)
            }
        }
    }

    /// `GAP(sigmoid(conv3x3(cat(E, context))))`, split into the two per-sample gates.
    fn gate_unit(&mut self, level: usize, e: Var, context: Var) -> Result<Option<GateVars>> {
        let n = self.tape.shape(e).n();
        match self.net.cfg.gates {
            GateMode::Off => Ok(None),
            GateMode::Fixed(v) => {
                let g = self.tape.constant(Tensor::full(Shape::new(n, 1, 1, 1), T::lit(v)));
                Ok(Some(GateVars { g1: g, g2: g }))
            }
            GateMode::Learned => {
                let (se, sc) = (self.tape.shape(e), self.tape.shape(context));
                if se.h() != sc.h() || se.w() != sc.w() {
                    return Err(Error::shape(
                        "gate_unit",
                        format!("encoder {se} and context {sc} differ spatially; upsample the context first"),
                    ));
                }
                let cat = self.tape.concat_channels(&[e, context])?;
                let logits = self.conv(&format!("gate{level}"), cat)?;
                let s = self.tape.sigmoid(logits);
                let pooled = self.tape.global_avg_pool(s)?;
                let g1 = self.tape.select_channel(pooled, 0)?;
                let g2 = self.tape.select_channel(pooled, 1)?;
                Ok(Some(GateVars { g1, g2 }))
            }
        }
    }

    fn fixed_gates(&mut self, image: Var) -> Result<Vec<Option<GateVars>>> {
        let mut gates = Vec::with_capacity(5);
        for level in 1..=5 {
            // Fixed and disabled gates ignore their inputs.
            gates.push(self.gate_unit(level, image, image)?);
        }
        Ok(gates)
    }

    fn gated(&mut self, x: Var, gate: Option<Var>) -> Result<Var> {
        match gate {
            Some(g) => self.tape.scale_by_gate(x, g),
            None => Ok(x),
        }
    }

    fn decoder_block(&mut self, level: usize, x: Var) -> Result<Var> {
        let h = self.conv_relu(&format!("dec{level}.conv0"), x)?;
        if level == 1 {
            self.conv("dec1.conv1", h)
        } else {
            self.conv_relu(&format!("dec{level}.conv1"), h)
        }
    }

    /// Returns D¹..D⁵ and G¹..G⁵, computed top-down with gates interleaved.
    fn fpn_decode(&mut self, e: &[Var], t: &[Var]) -> Result<(Vec<Var>, Vec<Option<GateVars>>)> {
        let mut decoder = vec![None; 5];
        let mut gates = vec![None; 5];

        let g5 = self.gate_unit(5, e[4], t[4])?;
        let x5 = self.gated(t[4], g5.map(|g| g.g1))?;
        decoder[4] = Some(self.decoder_block(5, x5)?);
        gates[4] = g5;

        for level in (1..=4).rev() {
            let i = level - 1;
            let ts = self.tape.shape(t[i]);
            let up = self.tape.upsample(decoder[i + 1].unwrap(), ts.h(), ts.w())?;
            let gi = self.gate_unit(level, e[i], up)?;
            let gt = self.gated(t[i], gi.map(|g| g.g1))?;
            let sum = self.tape.add(gt, up)?;
            decoder[i] = Some(self.decoder_block(level, sum)?);
            gates[i] = gi;
        }
        Ok((decoder.into_iter().map(Option::unwrap).collect(), gates))
    }

    /// `cat(D¹, up(g₂¹·T¹), …, up(g₂⁵·T⁵))` at full resolution.
    fn parallel_branch(&mut self, d1: Option<Var>, t: &[Var], gates: &[Option<GateVars>]) -> Result<Var> {
        let size = self.net.cfg.backbone.input_size;
        let mut parts: Vec<Var> = d1.into_iter().collect();
        for (ti, g) in t.iter().zip(gates) {
            let gt = self.gated(*ti, g.map(|g| g.g2))?;
            parts.push(self.tape.upsample(gt, size, size)?);
        }
        self.tape.concat_channels(&parts)
    }

    /// Returns the fusion conv output and `sigmoid(fused + D¹)`.
    fn fuse(&mut self, f_cat: Var, d1: Option<Var>) -> Result<(Var, Var)> {
        let fused = self.conv("fuse", f_cat)?;
        let pre = match d1 {
            Some(d1) => self.tape.add(fused, d1)?,
            None => fused,
        };
        Ok((fused, self.tape.sigmoid(pre)))
    }
}
