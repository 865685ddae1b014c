//! Heat maps of context and global-context features.

use std::path::Path;

use anyhow::{Context, Result};
use image::{ImageBuffer, Luma};
use xcaflow_core::{FlowModel, ImageTensor, ParamStore, Tape, Tensor};

use crate::error::UsageError;

#[derive(Clone, Debug, PartialEq)]
pub struct HeatMap {
    pub name: &'static str,
    pub width: usize,
    pub height: usize,
    /// Row-major values in `[0, 1]`.
    pub values: Vec<f64>,
}

/// Per-pixel L2 norm over `channels`, rescaled so the map spans `[0, 1]`.
/// A constant map becomes all zeros.
pub fn norm_heatmap(name: &'static str, t: &Tensor, channels: &[usize]) -> HeatMap {
    let (_, h, w) = t.dims3();
    let mut values: Vec<f64> = (0..h * w)
        .map(|p| channels.iter().map(|&c| t.channel(c)[p].powi(2)).sum::<f64>().sqrt())
        .collect();
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    for v in &mut values {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
    HeatMap {
        name,
        width: w,
        height: h,
        values,
    }
}

/// Context `C_s` and global context `GC_s` heat maps of one image at scale
/// index `scale` (0 = coarsest). An empty channel list selects all channels.
pub fn context_heatmaps(
    model: &FlowModel,
    store: &ParamStore,
    image: &ImageTensor,
    scale: usize,
    channels: &[usize],
) -> Result<[HeatMap; 2]> {
    let d = model.config.context_dim;
    let s_max = model.config.num_scales;
    if scale >= s_max {
        return Err(UsageError::new(format!("scale {scale} out of range: the model has {s_max} scales")).into());
    }
    if let Some(&c) = channels.iter().find(|&&c| c >= d) {
        return Err(UsageError::new(format!("channel {c} out of range: context has {d} channels")).into());
    }
    let selected: Vec<usize> = if channels.is_empty() { (0..d).collect() } else { channels.to_vec() };
    let (padded, _) = image.pad_to_multiple();
    let mut tape = Tape::no_grad(store);
    let ctx = model.context.extract_context(&mut tape, &padded)?;
    let c = ctx.levels[scale].context;
    let gc = model.global_context[scale].global_context(&mut tape, c)?;
    Ok([
        norm_heatmap("context", tape.value(c), &selected),
        norm_heatmap("global_context", tape.value(gc), &selected),
    ])
}

pub fn write_heatmap(path: &Path, map: &HeatMap) -> Result<()> {
    let px: Vec<u8> = map.values.iter().map(|v| (v * 255.0).round() as u8).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(map.width as u32, map.height as u32, px).context("heat map size")?;
    buf.save(path).with_context(|| format!("writing {}", path.display()))
}
