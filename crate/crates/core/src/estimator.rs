//! Per-scale matching block and the coarse-to-fine estimation loop.
//!
//! Starting from zero flow at stride 16, each scale runs `T_s` iterations of
//! cost lookup, motion encoding, context-guided grouping and a GRU update.
//! The final flow of a scale is convex-upsampled ×2 to initialize the next
//! one. Every iteration's flow is also convex-upsampled and then brought to
//! full resolution for supervision.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::attention::{CrossGroupingBlock, XcitBlock};
use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::{ContextEncoder, FeatureEncoder, ImageTensor, COARSEST_STRIDE};
use crate::nn::Conv;
use crate::ops::conv::Conv2dSpec;
use crate::ops::upsample::MASK_CHANNELS;
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Dense displacement field `[2, H, W]` (u then v), in pixels of its own
/// resolution. `stride` is the downsampling factor w.r.t. the input image.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    data: Tensor,
    stride: usize,
}

impl FlowField {
    pub fn new(data: Tensor, stride: usize) -> Result<Self> {
        if data.shape().len() != 3 || data.shape()[0] != 2 {
            return Err(Error::shape("flow", "expected a [2, H, W] tensor"));
        }
        if !data.all_finite() {
            return Err(Error::shape("flow", "non-finite displacement"));
        }
        Ok(Self { data, stride })
    }

    pub fn zeros(height: usize, width: usize, stride: usize) -> Self {
        Self {
            data: Tensor::zeros(&[2, height, width]),
            stride,
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    /// `(u, v)` at pixel `(y, x)`.
    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        (self.data.at3(0, y, x), self.data.at3(1, y, x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchedulePreset {
    /// Training iterations.
    Train,
    /// Sintel inference settings.
    Sintel,
    /// KITTI inference settings.
    Kitti,
}

impl SchedulePreset {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "train" => Some(Self::Train),
            "sintel" => Some(Self::Sintel),
            "kitti" => Some(Self::Kitti),
            _ => None,
        }
    }
}

/// GRU iteration counts per scale, coarse to fine.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IterationSchedule(Vec<usize>);

impl IterationSchedule {
    pub fn new(iters: Vec<usize>) -> Result<Self> {
        if iters.is_empty() || iters.contains(&0) {
            return Err(Error::Config("every scale needs at least one GRU iteration".into()));
        }
        Ok(Self(iters))
    }

    pub fn preset(preset: SchedulePreset, num_scales: usize) -> Result<Self> {
        let iters: &[usize] = match (preset, num_scales) {
            (SchedulePreset::Train, 4) => &[4, 5, 5, 6],
            (SchedulePreset::Sintel, 4) => &[8, 10, 10, 10],
            (SchedulePreset::Kitti, 4) => &[35, 35, 5, 15],
            (SchedulePreset::Sintel, 3) => &[10, 15, 20],
            (SchedulePreset::Kitti, 3) => &[6, 18, 30],
            _ => {
                return Err(Error::Config(format!(
                    "no {preset:?} schedule is defined for {num_scales} scales"
                )))
            }
        };
        Self::new(iters.to_vec())
    }

    pub fn iters(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

/// Matching features of both frames at one scale.
#[derive(Clone, Copy, Debug)]
pub struct CorrelationSampler {
    pub f1: Var,
    pub f2: Var,
    pub radius: usize,
}

/// Local costs `<F1(x), F2(x + flow(x) + δ)> / sqrt(d_F)`, `δ ∈ [-r, r]²`,
/// computed on demand.
pub fn corr_lookup(tape: &mut Tape<'_>, sampler: &CorrelationSampler, flow: Var) -> Result<Var> {
    let fs = tape.shape(sampler.f1).to_vec();
    if fs.len() != 3 || tape.shape(sampler.f2) != fs.as_slice() {
        return Err(Error::shape("corr_lookup", "feature maps of both frames must share a shape"));
    }
    if tape.shape(flow) != [2, fs[1], fs[2]] {
        return Err(Error::shape(
            "corr_lookup",
            format!("flow {:?} does not match features {}x{}", tape.shape(flow), fs[1], fs[2]),
        ));
    }
    if sampler.radius == 0 {
        return Err(Error::Config("lookup radius must be at least 1".into()));
    }
    Ok(tape.corr_lookup(sampler.f1, sampler.f2, flow, sampler.radius))
}

/// ×2 convex upsampling (softmax over the 3×3 coarse neighbourhood), values ×2.
pub fn convex_upsample_x2(tape: &mut Tape<'_>, flow: Var, mask: Var) -> Result<Var> {
    let (c, h, w) = tape.value(flow).dims3();
    if c != 2 || tape.shape(mask) != [MASK_CHANNELS, h, w] {
        return Err(Error::shape("convex_upsample_x2", "mask must be [36, H, W] for a [2, H, W] flow"));
    }
    Ok(tape.convex_upsample(flow, mask))
}

/// Shared motion encoder: costs and flow to motion features (flow appended).
#[derive(Clone, Debug)]
pub struct MotionEncoder {
    convc1: Conv,
    convc2: Conv,
    convf1: Conv,
    convf2: Conv,
    conv: Conv,
    out_channels: usize,
}

impl MotionEncoder {
    pub fn new(store: &mut ParamStore, init: &mut Init, cfg: &ModelConfig) -> Self {
        let m = cfg.motion_dim;
        let (c1, c2, f1, f2) = (2 * m, (3 * m / 2).max(1), m, (m / 2).max(1));
        Self {
            convc1: Conv::same(store, init, "motion.convc1", cfg.cost_channels(), c1, 1),
            convc2: Conv::same(store, init, "motion.convc2", c1, c2, 3),
            convf1: Conv::same(store, init, "motion.convf1", 2, f1, 7),
            convf2: Conv::same(store, init, "motion.convf2", f1, f2, 3),
            conv: Conv::same(store, init, "motion.conv", c2 + f2, m - 2, 3),
            out_channels: m,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn encode_motion(&self, tape: &mut Tape<'_>, costs: Var, flow: Var) -> Var {
        let c = self.convc1.forward(tape, costs);
        let c = tape.relu(c);
        let c = self.convc2.forward(tape, c);
        let c = tape.relu(c);
        let f = self.convf1.forward(tape, flow);
        let f = tape.relu(f);
        let f = self.convf2.forward(tape, f);
        let f = tape.relu(f);
        let cf = tape.concat(&[c, f]);
        let out = self.conv.forward(tape, cf);
        let out = tape.relu(out);
        tape.concat(&[out, flow])
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.convc1, &self.convc2, &self.convf1, &self.convf2, &self.conv]
            .iter()
            .flat_map(|c| c.params())
            .collect()
    }
}

#[derive(Clone, Debug)]
struct GruPass {
    z: Conv,
    r: Conv,
    q: Conv,
}

/// Update and reset gate activations of one GRU pass.
#[derive(Clone, Copy, Debug)]
pub struct GateTrace {
    pub update: Var,
    pub reset: Var,
}

/// Separable convolutional GRU: a 1×5 pass followed by a 5×1 pass.
#[derive(Clone, Debug)]
pub struct SepConvGru {
    horizontal: GruPass,
    vertical: GruPass,
    hidden: usize,
    input: usize,
}

impl SepConvGru {
    fn new(store: &mut ParamStore, init: &mut Init, hidden: usize, input: usize) -> Self {
        let mk = |store: &mut ParamStore, init: &mut Init, name: &str, k: (usize, usize)| {
            let spec = Conv2dSpec {
                stride: 1,
                pad_h: k.0 / 2,
                pad_w: k.1 / 2,
                groups: 1,
            };
            Conv::new(store, init, name, hidden + input, hidden, k, spec, core::f64::consts::FRAC_1_SQRT_2)
        };
        let pass = |store: &mut ParamStore, init: &mut Init, tag: &str, k| GruPass {
            z: mk(store, init, &format!("gru.{tag}.z"), k),
            r: mk(store, init, &format!("gru.{tag}.r"), k),
            q: mk(store, init, &format!("gru.{tag}.q"), k),
        };
        Self {
            horizontal: pass(store, init, "h", (1, 5)),
            vertical: pass(store, init, "v", (5, 1)),
            hidden,
            input,
        }
    }

    fn step(tape: &mut Tape<'_>, pass: &GruPass, h: Var, x: Var) -> (Var, GateTrace) {
        let hx = tape.concat(&[h, x]);
        let z = pass.z.forward(tape, hx);
        let z = tape.sigmoid(z);
        let r = pass.r.forward(tape, hx);
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h);
        let rhx = tape.concat(&[rh, x]);
        let q = pass.q.forward(tape, rhx);
        let q = tape.tanh(q);
        // h' = (1 - z) h + z q
        let dq = tape.sub(q, h);
        let zdq = tape.mul(z, dq);
        (tape.add(h, zdq), GateTrace { update: z, reset: r })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, h: Var, x: Var) -> (Var, [GateTrace; 2]) {
        let (h, g1) = Self::step(tape, &self.horizontal, h, x);
        let (h, g2) = Self::step(tape, &self.vertical, h, x);
        (h, [g1, g2])
    }

    fn params(&self) -> Vec<ParamId> {
        [&self.horizontal, &self.vertical]
            .iter()
            .flat_map(|p| [&p.z, &p.r, &p.q])
            .flat_map(|c| c.params())
            .collect()
    }
}

/// Output of one recurrent update.
#[derive(Clone, Copy, Debug)]
pub struct GruUpdate {
    pub hidden: Var,
    pub delta: Var,
    /// Convex-upsampling logits, `[36, H, W]`.
    pub mask: Var,
    pub gates: [GateTrace; 2],
}

/// Shared GRU plus flow and mask heads.
#[derive(Clone, Debug)]
pub struct UpdateBlock {
    gru: SepConvGru,
    flow1: Conv,
    flow2: Conv,
    mask1: Conv,
    mask2: Conv,
}

/// Mask logits are damped to keep early upsampling close to uniform.
const MASK_SCALE: f64 = 0.25;

impl UpdateBlock {
    pub fn new(store: &mut ParamStore, init: &mut Init, cfg: &ModelConfig) -> Self {
        let input = 2 * cfg.motion_dim + cfg.context_dim;
        let hw = cfg.head_width;
        Self {
            gru: SepConvGru::new(store, init, cfg.hidden_dim, input),
            flow1: Conv::same(store, init, "flow_head.conv1", cfg.hidden_dim, hw, 3),
            flow2: Conv::new(store, init, "flow_head.conv2", hw, 2, (3, 3), Conv2dSpec::same(3, 3), 0.1),
            mask1: Conv::same(store, init, "mask_head.conv1", cfg.hidden_dim, hw, 3),
            mask2: Conv::same(store, init, "mask_head.conv2", hw, MASK_CHANNELS, 1),
        }
    }

    /// Channel width the shared GRU expects for `[CMF, C_s, MF]`.
    pub fn input_width(&self) -> usize {
        self.gru.input
    }

    pub fn gru_update(
        &self,
        tape: &mut Tape<'_>,
        hidden: Var,
        grouped: Var,
        context: Var,
        motion: Var,
    ) -> Result<GruUpdate> {
        let x = tape.concat(&[grouped, context, motion]);
        let got = tape.value(x).channels();
        if got != self.gru.input {
            return Err(Error::shape(
                "gru_update",
                format!("GRU expects {} input channels, got {got}", self.gru.input),
            ));
        }
        if tape.value(hidden).channels() != self.gru.hidden {
            return Err(Error::shape("gru_update", "hidden state width mismatch"));
        }
        let (h, gates) = self.gru.forward(tape, hidden, x);
        let f = self.flow1.forward(tape, h);
        let f = tape.relu(f);
        let delta = self.flow2.forward(tape, f);
        let m = self.mask1.forward(tape, h);
        let m = tape.relu(m);
        let m = self.mask2.forward(tape, m);
        let mask = tape.scale(m, MASK_SCALE);
        Ok(GruUpdate {
            hidden: h,
            delta,
            mask,
            gates,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.gru.params();
        for c in [&self.flow1, &self.flow2, &self.mask1, &self.mask2] {
            v.extend(c.params());
        }
        v
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EstimateOptions {
    /// Cut the gradient through the running flow at each iteration start.
    pub detach_flow: bool,
    /// Keep every iteration's full-resolution prediction.
    pub record_predictions: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            detach_flow: true,
            record_predictions: true,
        }
    }
}

/// One GRU invocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IterationRecord {
    pub scale: usize,
    pub iteration: usize,
}

#[derive(Clone, Debug)]
pub struct FlowEstimate {
    /// Full-resolution flow after the last iteration.
    pub flow: Var,
    /// Full-resolution predictions in (scale, iteration) order.
    pub predictions: Vec<Var>,
    /// Flow each scale started from, at that scale's resolution.
    pub scale_inits: Vec<Var>,
    /// Final flow of each scale together with its last upsampling mask.
    pub scale_finals: Vec<(Var, Var)>,
    pub invocations: Vec<IterationRecord>,
}

/// The complete coarse-to-fine model. GRU, heads and motion encoder are
/// single instances shared by all scales; attention blocks exist per scale.
#[derive(Clone, Debug)]
pub struct FlowModel {
    pub config: ModelConfig,
    pub features: FeatureEncoder,
    pub context: ContextEncoder,
    pub global_context: Vec<XcitBlock>,
    pub grouping: Vec<CrossGroupingBlock>,
    pub motion: MotionEncoder,
    pub update: UpdateBlock,
}

impl FlowModel {
    /// Builds the model and a freshly initialized parameter store.
    pub fn new(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let model = Self::build(config, &mut store, &mut Init::new(seed))?;
        Ok((model, store))
    }

    /// Registers all parameters in a fixed order.
    pub fn build(config: ModelConfig, store: &mut ParamStore, init: &mut Init) -> Result<Self> {
        config.validate()?;
        let features = FeatureEncoder::new(store, init, &config);
        let context = ContextEncoder::new(store, init, &config);
        let global_context = (0..config.num_scales)
            .map(|s| XcitBlock::new(store, init, &format!("global_context.{s}"), &config))
            .collect();
        let grouping = (0..config.num_scales)
            .map(|s| CrossGroupingBlock::new(store, init, &format!("grouping.{s}"), &config))
            .collect();
        let motion = MotionEncoder::new(store, init, &config);
        let update = UpdateBlock::new(store, init, &config);
        Ok(Self {
            config,
            features,
            context,
            global_context,
            grouping,
            motion,
            update,
        })
    }

    /// Named parameter groups: shared ones once, per-scale ones per scale.
    pub fn param_groups(&self) -> Vec<(String, Vec<ParamId>)> {
        let mut groups = vec![
            (String::from("motion_encoder"), self.motion.params()),
            (String::from("update_block"), self.update.params()),
        ];
        for (s, b) in self.global_context.iter().enumerate() {
            groups.push((format!("global_context.{s}"), b.params()));
        }
        for (s, b) in self.grouping.iter().enumerate() {
            groups.push((format!("grouping.{s}"), b.params()));
        }
        groups
    }

    /// Coarse-to-fine estimation on stride-16 divisible images.
    pub fn estimate_flow(
        &self,
        tape: &mut Tape<'_>,
        image1: &ImageTensor,
        image2: &ImageTensor,
        schedule: &IterationSchedule,
        opts: EstimateOptions,
    ) -> Result<FlowEstimate> {
        let cfg = &self.config;
        if schedule.len() != cfg.num_scales {
            return Err(Error::Schedule {
                expected: cfg.num_scales,
                got: schedule.len(),
            });
        }
        if image1.tensor().shape() != image2.tensor().shape() {
            return Err(Error::shape("estimate_flow", "frames differ in size"));
        }
        image1.check_divisible()?;
        let (full_h, full_w) = (image1.height(), image1.width());

        let f1 = self.features.extract_image_features(tape, image1)?;
        let f2 = self.features.extract_image_features(tape, image2)?;
        let ctx = self.context.extract_context(tape, image1)?;
        let mut gcs = Vec::with_capacity(cfg.num_scales);
        for (s, block) in self.global_context.iter().enumerate() {
            gcs.push(block.global_context(tape, ctx.levels[s].context)?);
        }
        let mut keys = Vec::with_capacity(cfg.num_scales);
        for (s, block) in self.grouping.iter().enumerate() {
            keys.push(block.prepare(tape, gcs[s])?);
        }

        let (h0, w0) = (full_h / COARSEST_STRIDE, full_w / COARSEST_STRIDE);
        let mut flow = tape.constant(Tensor::zeros(&[2, h0, w0]));
        let mut out = FlowEstimate {
            flow,
            predictions: Vec::new(),
            scale_inits: Vec::new(),
            scale_finals: Vec::new(),
            invocations: Vec::new(),
        };
        let mut persistent: Vec<Var> = Vec::new();
        let mut final_flow = flow;
        for s in 0..cfg.num_scales {
            let sampler = CorrelationSampler {
                f1: f1.maps[s],
                f2: f2.maps[s],
                radius: cfg.corr_radius,
            };
            let context = ctx.levels[s].context;
            let mut hidden = ctx.levels[s].hidden;
            out.scale_inits.push(flow);
            let stride = COARSEST_STRIDE >> s;
            let finest = s + 1 == cfg.num_scales;
            let mut upsampled = flow;
            let mut mask = flow;
            for t in 0..schedule.iters()[s] {
                let mark = tape.len();
                let flow_in = if opts.detach_flow { tape.detach(flow) } else { flow };
                let costs = corr_lookup(tape, &sampler, flow_in)?;
                let mf = self.motion.encode_motion(tape, costs, flow_in);
                let cmf = self.grouping[s].apply(tape, &keys[s], mf)?;
                let upd = self.update.gru_update(tape, hidden, cmf, context, mf)?;
                out.invocations.push(IterationRecord { scale: s, iteration: t });
                hidden = upd.hidden;
                mask = upd.mask;
                flow = tape.add(flow_in, upd.delta);
                upsampled = convex_upsample_x2(tape, flow, mask)?;
                let needs_pred = opts.record_predictions || (finest && t + 1 == schedule.iters()[s]);
                if needs_pred {
                    let pred = if stride / 2 == 1 {
                        upsampled
                    } else if finest {
                        let m2 = tape.repeat_nearest2(mask);
                        convex_upsample_x2(tape, upsampled, m2)?
                    } else {
                        let r = tape.resize_bilinear(upsampled, full_h, full_w);
                        tape.scale(r, (stride / 2) as f64)
                    };
                    if opts.record_predictions {
                        out.predictions.push(pred);
                        persistent.push(pred);
                    }
                    final_flow = pred;
                }
                if !tape.grad_enabled() {
                    let mut keep = persistent.clone();
                    keep.extend([hidden, flow, mask, upsampled, final_flow]);
                    tape.release_since(mark, &keep);
                }
            }
            out.scale_finals.push((flow, mask));
            persistent.extend([flow, mask]);
            flow = upsampled;
        }
        out.flow = final_flow;
        Ok(out)
    }

    /// Full inference: pads both frames, runs a no-grad pass, crops the result.
    pub fn infer(
        &self,
        store: &ParamStore,
        image1: &ImageTensor,
        image2: &ImageTensor,
        schedule: &IterationSchedule,
    ) -> Result<FlowField> {
        let (p1, pad) = image1.pad_to_multiple();
        let (p2, _) = image2.pad_to_multiple();
        let mut tape = Tape::no_grad(store);
        let est = self.estimate_flow(
            &mut tape,
            &p1,
            &p2,
            schedule,
            EstimateOptions {
                detach_flow: true,
                record_predictions: false,
            },
        )?;
        let flow = tape.value(est.flow).crop(pad.height, pad.width);
        FlowField::new(flow, 1).map_err(|_| Error::shape("infer", "non-finite flow estimate"))
    }
}
