//! Benchmark report files: CSV table and a log-log plot.

use std::path::Path;

use anyhow::{Context, Result};
use image::{ImageBuffer, Rgb};
use xcaflow_core::bench::FootprintReport;

/// Square grid sides between 32 and 256, half-octave spaced.
pub const DEFAULT_LADDER: [usize; 7] = [32, 48, 64, 96, 128, 192, 256];

pub fn write_csv(path: &Path, reports: &[FootprintReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["mechanism", "side", "tokens", "channels", "heads", "attention_elements", "peak_bytes", "status"])?;
    for r in reports {
        for p in &r.points {
            w.write_record([
                r.mechanism.name().to_string(),
                p.side.to_string(),
                p.tokens.to_string(),
                r.channels.to_string(),
                r.heads.to_string(),
                p.elements.to_string(),
                p.peak_bytes.to_string(),
                "measured".into(),
            ])?;
        }
        for &side in &r.truncated {
            w.write_record([
                r.mechanism.name().to_string(),
                side.to_string(),
                (side * side).to_string(),
                r.channels.to_string(),
                r.heads.to_string(),
                xcaflow_core::bench::footprint_analytic(
                    r.mechanism,
                    (side * side) as u64,
                    r.channels as u64,
                    r.heads as u64,
                )
                .to_string(),
                String::new(),
                "over_budget".into(),
            ])?;
        }
    }
    Ok(w.flush()?)
}

type Canvas = ImageBuffer<Rgb<u8>, Vec<u8>>;

fn line(img: &mut Canvas, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for i in 0..=steps {
        let x = x0 + (x1 - x0) * i / steps;
        let y = y0 + (y1 - y0) * i / steps;
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
    }
}

fn dot(img: &mut Canvas, (x, y): (i64, i64), c: Rgb<u8>) {
    for dy in -3..=3 {
        line(img, (x - 3, y + dy), (x + 3, y + dy), c);
    }
}

/// Peak bytes against token count on log-log axes, one colour per mechanism;
/// tick marks sit at powers of ten.
pub fn plot_loglog(path: &Path, reports: &[FootprintReport]) -> Result<()> {
    let (w, h, m) = (720i64, 480i64, 50i64);
    let mut img: Canvas = ImageBuffer::from_pixel(w as u32, h as u32, Rgb([255, 255, 255]));
    let pts: Vec<(f64, f64)> = reports
        .iter()
        .flat_map(|r| r.points.iter().map(|p| ((p.tokens as f64).log10(), (p.peak_bytes.max(1) as f64).log10())))
        .collect();
    if !pts.is_empty() {
        let (x_lo, x_hi) = bounds(pts.iter().map(|p| p.0));
        let (y_lo, y_hi) = bounds(pts.iter().map(|p| p.1));
        let px = |x: f64, y: f64| {
            (
                m + ((x - x_lo) / (x_hi - x_lo) * (w - 2 * m) as f64) as i64,
                h - m - ((y - y_lo) / (y_hi - y_lo) * (h - 2 * m) as f64) as i64,
            )
        };
        let axis = Rgb([0, 0, 0]);
        line(&mut img, (m, h - m), (w - m, h - m), axis);
        line(&mut img, (m, m), (m, h - m), axis);
        for d in x_lo.ceil() as i64..=x_hi.floor() as i64 {
            let (x, _) = px(d as f64, y_lo);
            line(&mut img, (x, h - m), (x, h - m + 8), axis);
        }
        for d in y_lo.ceil() as i64..=y_hi.floor() as i64 {
            let (_, y) = px(x_lo, d as f64);
            line(&mut img, (m - 8, y), (m, y), axis);
        }
        let colours = [Rgb([200, 30, 30]), Rgb([30, 60, 200]), Rgb([20, 140, 40])];
        for (r, &c) in reports.iter().zip(colours.iter().cycle()) {
            let series: Vec<(i64, i64)> = r
                .points
                .iter()
                .map(|p| px((p.tokens as f64).log10(), (p.peak_bytes.max(1) as f64).log10()))
                .collect();
            for pair in series.windows(2) {
                line(&mut img, pair[0], pair[1], c);
            }
            for &p in &series {
                dot(&mut img, p, c);
            }
        }
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let pad = ((hi - lo) * 0.05).max(0.1);
    (lo - pad, hi + pad)
}
