//! Cross-covariance transformer blocks applied at full per-scale resolution.
//!
//! The self-attention block turns context `C_s` into global context `GC_s`:
//!
//! ```text
//! C_sp   = C_s + PE
//! C_int1 = C_sp   + γ1 ⊙ XCA(K, Q, V)        K, Q, V = LN(C_sp)·W
//! C_int2 = C_int1 + γ2 ⊙ LPI(LN(C_int1))
//! GC_s   = C_int2 + γ3 ⊙ FFN(LN(C_int2))
//! ```
//!
//! The cross block groups motion features: keys and queries come from the
//! global context, values and the residual stream from the motion features.
//! No patchification happens anywhere; every map keeps its resolution.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv, LayerNorm};
use crate::ops::conv::Conv2dSpec;
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::Tensor;

const PE_BASE: f64 = 10_000.0;

/// 2-D sinusoidal embedding, `[channels, h, w]`.
///
/// The first half of the channels encodes the row, the second half the
/// column; within a half, channel `j` uses frequency `PE_BASE^(-2⌊j/2⌋/m)`
/// with `sin` on even and `cos` on odd `j`.
pub fn positional_embedding(channels: usize, h: usize, w: usize) -> Result<Tensor> {
    if channels == 0 || channels % 2 != 0 {
        return Err(Error::Config(format!(
            "positional embedding needs an even channel count, got {channels}"
        )));
    }
    let m = channels / 2;
    let mut pe = Tensor::zeros(&[channels, h, w]);
    for c in 0..channels {
        let (j, by_row) = if c < m { (c, true) } else { (c - m, false) };
        let omega = libm::pow(PE_BASE, -((2 * (j / 2)) as f64) / m as f64);
        for y in 0..h {
            for x in 0..w {
                let pos = if by_row { y } else { x } as f64;
                let v = if j % 2 == 0 { libm::sin(pos * omega) } else { libm::cos(pos * omega) };
                pe.set3(c, y, x, v);
            }
        }
    }
    Ok(pe)
}

/// `x + PE`.
pub fn positional_embed(tape: &mut Tape<'_>, x: Var) -> Result<Var> {
    let (c, h, w) = tape.value(x).dims3();
    let pe = tape.constant(positional_embedding(c, h, w)?);
    Ok(tape.add(x, pe))
}

/// Splits a `[d, H, W]` map into `heads` contiguous channel blocks.
pub fn split_heads(t: &Tensor, heads: usize) -> Result<Vec<Tensor>> {
    let d = t.channels();
    if heads == 0 || d % heads != 0 {
        return Err(Error::shape("split_heads", format!("{heads} heads do not divide {d} channels")));
    }
    let dh = d / heads;
    Ok((0..heads).map(|i| t.slice_channels(i * dh, dh)).collect())
}

/// Linear key/query/value maps (1×1 convolutions with bias).
#[derive(Clone, Debug)]
pub struct KqvProjection {
    pub key: Conv,
    pub query: Conv,
    pub value: Conv,
    pub heads: usize,
}

fn linear(store: &mut ParamStore, init: &mut Init, name: &str, cin: usize, cout: usize, gain: f64) -> Conv {
    Conv::new(store, init, name, cin, cout, (1, 1), Conv2dSpec::same(1, 1), gain)
}

const INV_SQRT2: f64 = core::f64::consts::FRAC_1_SQRT_2;

impl KqvProjection {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        kq_channels: usize,
        v_channels: usize,
        dim: usize,
        heads: usize,
    ) -> Self {
        Self {
            key: linear(store, init, &format!("{name}.key"), kq_channels, dim, INV_SQRT2),
            query: linear(store, init, &format!("{name}.query"), kq_channels, dim, INV_SQRT2),
            value: linear(store, init, &format!("{name}.value"), v_channels, dim, INV_SQRT2),
            heads,
        }
    }
}

/// `K = x·W_k`, `Q = x·W_q`, `V = x·W_v` on a layer-normalized input. The
/// heads are the contiguous channel blocks of width `d/h`.
pub fn kqv_project(tape: &mut Tape<'_>, x_norm: Var, proj: &KqvProjection) -> Result<(Var, Var, Var)> {
    let dim = tape.store().get(proj.key.weight).shape()[0];
    if proj.heads == 0 || dim % proj.heads != 0 {
        return Err(Error::shape(
            "kqv_project",
            format!("{} heads do not divide {dim} channels", proj.heads),
        ));
    }
    let k = proj.key.forward(tape, x_norm);
    let q = proj.query.forward(tape, x_norm);
    let v = proj.value.forward(tape, x_norm);
    Ok((k, q, v))
}

/// Cross-covariance attention with shape validation.
pub fn xca(tape: &mut Tape<'_>, k: Var, q: Var, v: Var, log_temperature: Var, heads: usize) -> Result<Var> {
    let ks = tape.shape(k).to_vec();
    if ks.len() != 3 || tape.shape(q) != ks.as_slice() || tape.shape(v) != ks.as_slice() {
        return Err(Error::shape("xca", "keys, queries and values must share one [d, H, W] shape"));
    }
    if heads == 0 || ks[0] % heads != 0 {
        return Err(Error::shape("xca", format!("{heads} heads do not divide {} channels", ks[0])));
    }
    if tape.value(log_temperature).len() != heads {
        return Err(Error::shape("xca", "one temperature per head required"));
    }
    Ok(tape.xca(k, q, v, log_temperature, heads))
}

/// Local patch interaction: depth-wise 3×3, GELU, per-channel affine,
/// depth-wise 3×3.
#[derive(Clone, Debug)]
pub struct Lpi {
    pub conv1: Conv,
    pub norm_scale: ParamId,
    pub norm_shift: ParamId,
    pub conv2: Conv,
}

impl Lpi {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, channels: usize) -> Self {
        let dw = |store: &mut ParamStore, init: &mut Init, n: &str| {
            Conv::new(store, init, n, channels, channels, (3, 3), Conv2dSpec::depthwise(3, channels), INV_SQRT2)
        };
        Self {
            conv1: dw(store, init, &format!("{name}.conv1")),
            norm_scale: store.add(format!("{name}.norm.scale"), Tensor::full(&[channels], 1.0)),
            norm_shift: store.add(format!("{name}.norm.shift"), Tensor::zeros(&[channels])),
            conv2: dw(store, init, &format!("{name}.conv2")),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let y = self.conv1.forward(tape, x);
        let y = tape.gelu(y);
        let s = tape.param(self.norm_scale);
        let y = tape.channel_scale(y, s);
        let b = tape.param(self.norm_shift);
        let y = tape.channel_shift(y, b);
        self.conv2.forward(tape, y)
    }
}

/// Token-wise MLP `d -> e·d -> d` with GELU.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub fc1: Conv,
    pub fc2: Conv,
}

impl Ffn {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, channels: usize, expansion: usize) -> Self {
        Self {
            fc1: linear(store, init, &format!("{name}.fc1"), channels, channels * expansion, 1.0),
            fc2: linear(store, init, &format!("{name}.fc2"), channels * expansion, channels, INV_SQRT2),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let y = self.fc1.forward(tape, x);
        let y = tape.gelu(y);
        self.fc2.forward(tape, y)
    }
}

fn layer_scale(store: &mut ParamStore, name: &str, channels: usize, init: f64) -> ParamId {
    store.add(name, Tensor::full(&[channels], init))
}

fn residual(tape: &mut Tape<'_>, stream: Var, branch: Var, gamma: ParamId) -> Var {
    let g = tape.param(gamma);
    let scaled = tape.channel_scale(branch, g);
    tape.add(stream, scaled)
}

/// Self-attention block computing global context for one scale.
#[derive(Clone, Debug)]
pub struct XcitBlock {
    pub norm1: LayerNorm,
    pub proj: KqvProjection,
    pub log_temperature: ParamId,
    pub gamma1: ParamId,
    pub norm2: LayerNorm,
    pub lpi: Lpi,
    pub gamma2: ParamId,
    pub norm3: LayerNorm,
    pub ffn: Ffn,
    pub gamma3: ParamId,
}

impl XcitBlock {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, cfg: &ModelConfig) -> Self {
        let d = cfg.context_dim;
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            proj: KqvProjection::new(store, init, &format!("{name}.attn"), d, d, d, cfg.heads),
            log_temperature: store.add(format!("{name}.attn.log_temperature"), Tensor::zeros(&[cfg.heads])),
            gamma1: layer_scale(store, &format!("{name}.gamma1"), d, cfg.layer_scale_init),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
            lpi: Lpi::new(store, init, &format!("{name}.lpi"), d),
            gamma2: layer_scale(store, &format!("{name}.gamma2"), d, cfg.layer_scale_init),
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), d),
            ffn: Ffn::new(store, init, &format!("{name}.ffn"), d, cfg.ffn_expansion),
            gamma3: layer_scale(store, &format!("{name}.gamma3"), d, cfg.layer_scale_init),
        }
    }

    /// `C_s -> GC_s`, resolution preserved.
    pub fn global_context(&self, tape: &mut Tape<'_>, context: Var) -> Result<Var> {
        let d = self.proj.key_in_channels(tape);
        if tape.value(context).channels() != d {
            return Err(Error::shape("global_context_block", "context channel count mismatch"));
        }
        let csp = positional_embed(tape, context)?;
        let n1 = self.norm1.forward(tape, csp);
        let (k, q, v) = kqv_project(tape, n1, &self.proj)?;
        let t = tape.param(self.log_temperature);
        let attn = xca(tape, k, q, v, t, self.proj.heads)?;
        let int1 = residual(tape, csp, attn, self.gamma1);
        let n2 = self.norm2.forward(tape, int1);
        let local = self.lpi.forward(tape, n2);
        let int2 = residual(tape, int1, local, self.gamma2);
        let n3 = self.norm3.forward(tape, int2);
        let mlp = self.ffn.forward(tape, n3);
        Ok(residual(tape, int2, mlp, self.gamma3))
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        v.extend([self.norm1.gain, self.norm1.bias]);
        v.extend(self.proj.key.params());
        v.extend(self.proj.query.params());
        v.extend(self.proj.value.params());
        v.extend([self.log_temperature, self.gamma1, self.norm2.gain, self.norm2.bias]);
        v.extend(self.lpi.conv1.params());
        v.extend([self.lpi.norm_scale, self.lpi.norm_shift]);
        v.extend(self.lpi.conv2.params());
        v.extend([self.gamma2, self.norm3.gain, self.norm3.bias]);
        v.extend(self.ffn.fc1.params());
        v.extend(self.ffn.fc2.params());
        v.push(self.gamma3);
        v
    }
}

impl KqvProjection {
    fn key_in_channels(&self, tape: &Tape<'_>) -> usize {
        tape.store().get(self.key.weight).shape()[1]
    }
}

/// Keys and queries of one scale's global context; computed once per scale
/// and reused for every recurrent iteration.
#[derive(Clone, Copy, Debug)]
pub struct GroupingKeys {
    pub key: Var,
    pub query: Var,
}

/// Cross-attention block: context-guided motion grouping for one scale.
#[derive(Clone, Debug)]
pub struct CrossGroupingBlock {
    pub norm_kq: LayerNorm,
    pub norm_v: LayerNorm,
    pub proj: KqvProjection,
    pub log_temperature: ParamId,
    pub gamma1: ParamId,
    pub norm2: LayerNorm,
    pub lpi: Lpi,
    pub gamma2: ParamId,
    pub norm3: LayerNorm,
    pub ffn: Ffn,
    pub gamma3: ParamId,
}

impl CrossGroupingBlock {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, cfg: &ModelConfig) -> Self {
        let (d, m) = (cfg.context_dim, cfg.motion_dim);
        Self {
            norm_kq: LayerNorm::new(store, &format!("{name}.norm_kq"), d),
            norm_v: LayerNorm::new(store, &format!("{name}.norm_v"), m),
            proj: KqvProjection::new(store, init, &format!("{name}.attn"), d, m, d, cfg.heads),
            log_temperature: store.add(format!("{name}.attn.log_temperature"), Tensor::zeros(&[cfg.heads])),
            gamma1: layer_scale(store, &format!("{name}.gamma1"), m, cfg.layer_scale_init),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), m),
            lpi: Lpi::new(store, init, &format!("{name}.lpi"), m),
            gamma2: layer_scale(store, &format!("{name}.gamma2"), m, cfg.layer_scale_init),
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), m),
            ffn: Ffn::new(store, init, &format!("{name}.ffn"), m, cfg.ffn_expansion),
            gamma3: layer_scale(store, &format!("{name}.gamma3"), m, cfg.layer_scale_init),
        }
    }

    /// Keys and queries from `LN(GC_s + PE)`.
    pub fn prepare(&self, tape: &mut Tape<'_>, global_context: Var) -> Result<GroupingKeys> {
        if tape.value(global_context).channels() != self.proj.key_in_channels(tape) {
            return Err(Error::shape("cross_motion_grouping", "global context channel count mismatch"));
        }
        let gp = positional_embed(tape, global_context)?;
        let n = self.norm_kq.forward(tape, gp);
        Ok(GroupingKeys {
            key: self.proj.key.forward(tape, n),
            query: self.proj.query.forward(tape, n),
        })
    }

    /// Motion features `MF -> CMF`; the residual stream runs on `MF`.
    pub fn apply(&self, tape: &mut Tape<'_>, keys: &GroupingKeys, motion: Var) -> Result<Var> {
        let (kc, kh, kw) = tape.value(keys.key).dims3();
        let (mc, mh, mw) = tape.value(motion).dims3();
        if (kh, kw) != (mh, mw) {
            return Err(Error::shape(
                "cross_motion_grouping",
                format!("global context is {kh}x{kw} but motion features are {mh}x{mw}"),
            ));
        }
        if mc != tape.store().get(self.proj.value.weight).shape()[1] || mc != kc {
            return Err(Error::shape("cross_motion_grouping", "motion channel count mismatch"));
        }
        let nv = self.norm_v.forward(tape, motion);
        let v = self.proj.value.forward(tape, nv);
        let t = tape.param(self.log_temperature);
        let attn = xca(tape, keys.key, keys.query, v, t, self.proj.heads)?;
        let int1 = residual(tape, motion, attn, self.gamma1);
        let n2 = self.norm2.forward(tape, int1);
        let local = self.lpi.forward(tape, n2);
        let int2 = residual(tape, int1, local, self.gamma2);
        let n3 = self.norm3.forward(tape, int2);
        let mlp = self.ffn.forward(tape, n3);
        Ok(residual(tape, int2, mlp, self.gamma3))
    }

    pub fn cross_motion_grouping(&self, tape: &mut Tape<'_>, global_context: Var, motion: Var) -> Result<Var> {
        let (_, gh, gw) = tape.value(global_context).dims3();
        let (_, mh, mw) = tape.value(motion).dims3();
        if (gh, gw) != (mh, mw) {
            return Err(Error::shape(
                "cross_motion_grouping",
                format!("global context is {gh}x{gw} but motion features are {mh}x{mw}"),
            ));
        }
        let keys = self.prepare(tape, global_context)?;
        self.apply(tape, &keys, motion)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        v.extend([self.norm_kq.gain, self.norm_kq.bias, self.norm_v.gain, self.norm_v.bias]);
        v.extend(self.proj.key.params());
        v.extend(self.proj.query.params());
        v.extend(self.proj.value.params());
        v.extend([self.log_temperature, self.gamma1, self.norm2.gain, self.norm2.bias]);
        v.extend(self.lpi.conv1.params());
        v.extend([self.lpi.norm_scale, self.lpi.norm_shift]);
        v.extend(self.lpi.conv2.params());
        v.extend([self.gamma2, self.norm3.gain, self.norm3.bias]);
        v.extend(self.ffn.fc1.params());
        v.extend(self.ffn.fc2.params());
        v.push(self.gamma3);
        v
    }
}
