//! Model hyper-parameters.

use alloc::format;

use crate::error::{Error, Result};

/// Architecture widths and depths. Every trained checkpoint records one.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of matching scales: 3 (1/16..1/4) or 4 (1/16..1/2).
    pub num_scales: usize,
    /// Image-feature channels `d_F` at every scale.
    pub feature_dim: usize,
    /// Context channels `d` fed to the attention blocks and the GRU.
    pub context_dim: usize,
    /// GRU hidden channels `d_H`.
    pub hidden_dim: usize,
    /// Motion-feature channels `d_MF`, flow included. Must equal `context_dim`.
    pub motion_dim: usize,
    /// Backbone widths at strides 2, 4, 8, 16.
    pub encoder_widths: [usize; 4],
    pub blocks_per_stage: usize,
    /// Residual-unit width inside the image-feature consolidation.
    pub feature_unit_width: usize,
    pub feature_unit_blocks: usize,
    /// Residual-unit width inside the (leaner) context consolidation.
    pub context_unit_width: usize,
    pub context_unit_blocks: usize,
    pub heads: usize,
    pub ffn_expansion: usize,
    /// Initial value of the per-channel residual scales γ.
    pub layer_scale_init: f64,
    pub corr_radius: usize,
    /// Hidden width of the flow and mask heads.
    pub head_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_scales: 4,
            feature_dim: 256,
            context_dim: 128,
            hidden_dim: 128,
            motion_dim: 128,
            encoder_widths: [64, 96, 128, 192],
            blocks_per_stage: 2,
            feature_unit_width: 256,
            feature_unit_blocks: 1,
            context_unit_width: 128,
            context_unit_blocks: 2,
            heads: 8,
            ffn_expansion: 4,
            layer_scale_init: 1.0,
            corr_radius: 4,
            head_width: 256,
        }
    }
}

impl ModelConfig {
    /// Three-scale model small enough to train on a CPU in minutes.
    pub fn toy() -> Self {
        Self {
            num_scales: 3,
            feature_dim: 32,
            context_dim: 32,
            hidden_dim: 32,
            motion_dim: 32,
            encoder_widths: [16, 24, 32, 48],
            blocks_per_stage: 1,
            feature_unit_width: 32,
            feature_unit_blocks: 1,
            context_unit_width: 16,
            context_unit_blocks: 2,
            heads: 4,
            ffn_expansion: 2,
            layer_scale_init: 1.0,
            corr_radius: 3,
            head_width: 48,
        }
    }

    /// Smallest sensible model, used by gradient and schedule tests.
    pub fn tiny(num_scales: usize) -> Self {
        Self {
            num_scales,
            feature_dim: 8,
            context_dim: 8,
            hidden_dim: 6,
            motion_dim: 8,
            encoder_widths: [4, 6, 8, 8],
            blocks_per_stage: 1,
            feature_unit_width: 8,
            feature_unit_blocks: 1,
            context_unit_width: 4,
            context_unit_blocks: 2,
            heads: 2,
            ffn_expansion: 2,
            layer_scale_init: 0.5,
            corr_radius: 1,
            head_width: 8,
        }
    }

    /// Channels of the consolidated context map before the hidden/context split.
    pub fn context_total(&self) -> usize {
        self.hidden_dim + self.context_dim
    }

    /// Cost channels produced by one lookup.
    pub fn cost_channels(&self) -> usize {
        (2 * self.corr_radius + 1).pow(2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::Config(msg));
        if !(3..=4).contains(&self.num_scales) {
            return bad(format!("num_scales must be 3 or 4, got {}", self.num_scales));
        }
        let widths = [
            self.feature_dim,
            self.context_dim,
            self.hidden_dim,
            self.feature_unit_width,
            self.context_unit_width,
            self.head_width,
            self.heads,
            self.ffn_expansion,
            self.corr_radius,
            self.blocks_per_stage,
            self.feature_unit_blocks,
            self.context_unit_blocks,
        ];
        if widths.contains(&0) || self.encoder_widths.contains(&0) {
            return bad("all widths, depths and the lookup radius must be positive".into());
        }
        if self.context_dim % self.heads != 0 {
            return bad(format!("heads ({}) must divide context_dim ({})", self.heads, self.context_dim));
        }
        if self.context_dim % 2 != 0 {
            return bad("context_dim must be even for the positional embedding".into());
        }
        if self.motion_dim != self.context_dim {
            return bad("motion_dim must equal context_dim (residual value path)".into());
        }
        if self.motion_dim < 4 {
            return bad("motion_dim must be at least 4".into());
        }
        Ok(())
    }
}
