//! Multi-scale image and context encoders.
//!
//! A strided residual backbone produces top-down intermediates at strides
//! 2, 4, 8 and 16. The coarsest output comes from one activation-free conv on
//! the stride-16 intermediate; every finer output consolidates the upsampled
//! coarser output with the intermediate of its own stride through a residual
//! unit followed by an activation-free conv, so outputs keep their sign.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv, ResidualBlock};
use crate::ops::conv::Conv2dSpec;
use crate::params::{Init, ParamStore};
use crate::tensor::Tensor;

/// Stride of the coarsest scale; input sizes must be multiples of it.
pub const COARSEST_STRIDE: usize = 16;

/// RGB image with values in `[-1, 1]`, stored `[3, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor(Tensor);

/// Rows and columns added by [`ImageTensor::pad_to_multiple`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Padding {
    pub height: usize,
    pub width: usize,
    pub bottom: usize,
    pub right: usize,
}

impl ImageTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.shape().len() != 3 || t.shape()[0] != 3 {
            return Err(Error::shape("image", "expected a [3, H, W] tensor"));
        }
        if t.shape()[1] == 0 || t.shape()[2] == 0 {
            return Err(Error::shape("image", "empty image"));
        }
        if !t.all_finite() {
            return Err(Error::shape("image", "non-finite pixel values"));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    fn required_padding(&self) -> Padding {
        let (h, w) = (self.height(), self.width());
        let up = |v: usize| v.div_ceil(COARSEST_STRIDE) * COARSEST_STRIDE - v;
        Padding {
            height: h,
            width: w,
            bottom: up(h),
            right: up(w),
        }
    }

    pub fn check_divisible(&self) -> Result<()> {
        let p = self.required_padding();
        if p.bottom != 0 || p.right != 0 {
            return Err(Error::Padding {
                height: p.height,
                width: p.width,
                pad_bottom: p.bottom,
                pad_right: p.right,
            });
        }
        Ok(())
    }

    /// Replicate-pads bottom/right to the next multiple of 16.
    pub fn pad_to_multiple(&self) -> (ImageTensor, Padding) {
        let p = self.required_padding();
        (ImageTensor(self.0.pad_replicate(p.bottom, p.right)), p)
    }
}

/// Per-scale matching features, coarse to fine.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub maps: Vec<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct ContextLevel {
    /// ReLU-activated context `C_s`.
    pub context: Var,
    /// Tanh-activated initial hidden state `H_s`.
    pub hidden: Var,
}

#[derive(Clone, Debug)]
pub struct ContextPyramid {
    pub levels: Vec<ContextLevel>,
}

#[derive(Clone, Debug)]
struct Backbone {
    stem: Conv,
    stages: Vec<Vec<ResidualBlock>>,
}

impl Backbone {
    fn new(store: &mut ParamStore, init: &mut Init, name: &str, cfg: &ModelConfig) -> Self {
        let w = cfg.encoder_widths;
        let stem = Conv::new(store, init, &format!("{name}.stem"), 3, w[0], (3, 3), Conv2dSpec::strided(3, 2), 1.0);
        let stages = (0..4)
            .map(|k| {
                (0..cfg.blocks_per_stage)
                    .map(|b| {
                        let (cin, stride) = if b == 0 && k > 0 { (w[k - 1], 2) } else { (w[k], 1) };
                        ResidualBlock::new(store, init, &format!("{name}.stage{k}.block{b}"), cin, w[k], stride)
                    })
                    .collect()
            })
            .collect();
        Self { stem, stages }
    }

    /// Intermediates at strides 2, 4, 8, 16.
    fn forward(&self, tape: &mut Tape<'_>, image: Var) -> Vec<Var> {
        let x = self.stem.forward(tape, image);
        let mut x = tape.relu(x);
        let mut out = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                x = block.forward(tape, x);
            }
            out.push(x);
        }
        out
    }
}

/// Consolidates an upsampled coarser output with a finer intermediate.
#[derive(Clone, Debug)]
pub struct ConsolidationUnit {
    blocks: Vec<ResidualBlock>,
    out: Conv,
}

impl ConsolidationUnit {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        coarse_channels: usize,
        fine_channels: usize,
        unit_width: usize,
        unit_blocks: usize,
        out_channels: usize,
    ) -> Self {
        let blocks = (0..unit_blocks)
            .map(|b| {
                let cin = if b == 0 { coarse_channels + fine_channels } else { unit_width };
                ResidualBlock::new(store, init, &format!("{name}.res{b}"), cin, unit_width, 1)
            })
            .collect();
        let out = Conv::same(store, init, &format!("{name}.out"), unit_width, out_channels, 3);
        Self { blocks, out }
    }

    /// Bilinear ×2 upsampling of `coarse`, channel stacking with
    /// `fine_intermediate`, residual unit, then the activation-free conv.
    pub fn consolidate(&self, tape: &mut Tape<'_>, coarse: Var, fine_intermediate: Var) -> Result<Var> {
        let (_, ch, cw) = tape.value(coarse).dims3();
        let (_, fh, fw) = tape.value(fine_intermediate).dims3();
        if fh != 2 * ch || fw != 2 * cw {
            return Err(Error::shape(
                "consolidate",
                format!("coarse {ch}x{cw} is not half of fine {fh}x{fw}"),
            ));
        }
        let up = tape.resize_bilinear(coarse, fh, fw);
        let mut x = tape.concat(&[up, fine_intermediate]);
        for block in &self.blocks {
            x = block.forward(tape, x);
        }
        Ok(self.out.forward(tape, x))
    }
}

/// Backbone plus top-down consolidation, producing `S` maps coarse to fine.
#[derive(Clone, Debug)]
pub struct PyramidEncoder {
    backbone: Backbone,
    top: Conv,
    units: Vec<ConsolidationUnit>,
    num_scales: usize,
    out_channels: usize,
}

impl PyramidEncoder {
    fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        cfg: &ModelConfig,
        out_channels: usize,
        unit_width: usize,
        unit_blocks: usize,
    ) -> Self {
        let backbone = Backbone::new(store, init, &format!("{name}.backbone"), cfg);
        let top = Conv::same(store, init, &format!("{name}.top"), cfg.encoder_widths[3], out_channels, 3);
        let units = (1..cfg.num_scales)
            .map(|s| {
                ConsolidationUnit::new(
                    store,
                    init,
                    &format!("{name}.consolidate{s}"),
                    out_channels,
                    cfg.encoder_widths[3 - s],
                    unit_width,
                    unit_blocks,
                    out_channels,
                )
            })
            .collect();
        Self {
            backbone,
            top,
            units,
            num_scales: cfg.num_scales,
            out_channels,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn units(&self) -> &[ConsolidationUnit] {
        &self.units
    }

    fn forward(&self, tape: &mut Tape<'_>, image: &ImageTensor) -> Result<Vec<Var>> {
        image.check_divisible()?;
        let x = tape.constant(image.tensor().clone());
        let inter = self.backbone.forward(tape, x);
        let mut maps = Vec::with_capacity(self.num_scales);
        let mut current = self.top.forward(tape, inter[3]);
        maps.push(current);
        for (s, unit) in self.units.iter().enumerate() {
            current = unit.consolidate(tape, current, inter[2 - s])?;
            maps.push(current);
        }
        Ok(maps)
    }
}

/// Shared-weight matching-feature encoder for both frames.
#[derive(Clone, Debug)]
pub struct FeatureEncoder {
    inner: PyramidEncoder,
}

impl FeatureEncoder {
    pub fn new(store: &mut ParamStore, init: &mut Init, cfg: &ModelConfig) -> Self {
        Self {
            inner: PyramidEncoder::new(
                store,
                init,
                "fnet",
                cfg,
                cfg.feature_dim,
                cfg.feature_unit_width,
                cfg.feature_unit_blocks,
            ),
        }
    }

    pub fn extract_image_features(&self, tape: &mut Tape<'_>, image: &ImageTensor) -> Result<FeaturePyramid> {
        Ok(FeaturePyramid {
            maps: self.inner.forward(tape, image)?,
        })
    }

    pub fn consolidation_unit(&self, scale: usize) -> &ConsolidationUnit {
        &self.inner.units()[scale - 1]
    }
}

/// Context encoder with the leaner consolidation unit; its output is split
/// into the tanh hidden state and the ReLU context.
#[derive(Clone, Debug)]
pub struct ContextEncoder {
    inner: PyramidEncoder,
    hidden_dim: usize,
    context_dim: usize,
}

impl ContextEncoder {
    pub fn new(store: &mut ParamStore, init: &mut Init, cfg: &ModelConfig) -> Self {
        Self {
            inner: PyramidEncoder::new(
                store,
                init,
                "cnet",
                cfg,
                cfg.context_total(),
                cfg.context_unit_width,
                cfg.context_unit_blocks,
            ),
            hidden_dim: cfg.hidden_dim,
            context_dim: cfg.context_dim,
        }
    }

    pub fn extract_context(&self, tape: &mut Tape<'_>, image: &ImageTensor) -> Result<ContextPyramid> {
        let maps = self.inner.forward(tape, image)?;
        let levels = maps
            .into_iter()
            .map(|m| split_context(tape, m, self.hidden_dim, self.context_dim))
            .collect();
        Ok(ContextPyramid { levels })
    }
}

/// `H = tanh(first d_H channels)`, `C = relu(remaining d channels)`.
pub fn split_context(tape: &mut Tape<'_>, map: Var, hidden_dim: usize, context_dim: usize) -> ContextLevel {
    let h = tape.slice_channels(map, 0, hidden_dim);
    let c = tape.slice_channels(map, hidden_dim, context_dim);
    ContextLevel {
        hidden: tape.tanh(h),
        context: tape.relu(c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_error_reports_amounts() {
        let img = ImageTensor::new(Tensor::zeros(&[3, 30, 40])).unwrap();
        assert_eq!(
            img.check_divisible(),
            Err(Error::Padding {
                height: 30,
                width: 40,
                pad_bottom: 2,
                pad_right: 8
            })
        );
        let (padded, p) = img.pad_to_multiple();
        assert_eq!((padded.height(), padded.width()), (32, 48));
        assert_eq!((p.bottom, p.right), (2, 8));
        assert!(padded.check_divisible().is_ok());
    }

    #[test]
    fn image_rejects_wrong_channels() {
        assert!(ImageTensor::new(Tensor::zeros(&[1, 16, 16])).is_err());
    }
}
