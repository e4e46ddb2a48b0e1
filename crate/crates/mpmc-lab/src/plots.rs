//! Hand-rolled PNG charts. Every chart ships with a backing CSV holding
//! exactly the plotted numbers; charts whose inputs are missing are
//! skipped with a warning rather than failing the run.

use std::path::{Path, PathBuf};

use anyhow::Result;
use image::{Rgb, RgbImage};

use crate::trainer::RunRecord;

const WIDTH: u32 = 640;
const HEIGHT: u32 = 420;
const MARGIN: u32 = 50;
const PALETTE: [[u8; 3]; 6] = [
    [214, 69, 65],
    [31, 119, 180],
    [44, 160, 44],
    [148, 103, 189],
    [255, 127, 14],
    [23, 190, 207],
];

/// What a plotting pass produced.
#[derive(Debug, Default)]
pub struct PlotReport {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// A named series of (x, y) points.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn blank() -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    // Axis lines.
    for x in MARGIN..WIDTH - MARGIN / 2 {
        img.put_pixel(x, HEIGHT - MARGIN, Rgb([0, 0, 0]));
    }
    for y in MARGIN / 2..=HEIGHT - MARGIN {
        img.put_pixel(MARGIN, y, Rgb([0, 0, 0]));
    }
    img
}

fn data_bounds(series: &[Series]) -> Option<(f64, f64, f64, f64)> {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            xs.push(x);
            ys.push(y);
        }
    }
    if xs.is_empty() {
        return None;
    }
    let fmin = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let fmax = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (x0, x1, y0, y1) = (fmin(&xs), fmax(&xs), fmin(&ys), fmax(&ys));
    let pad = |lo: f64, hi: f64| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    Some((x0, x1, y0, y1))
}

fn to_px(v: f64, lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> i64 {
    (px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo)).round() as i64
}

fn draw_line(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), color: Rgb<u8>) {
    // Bresenham.
    let (mut x0, mut y0) = a;
    let (x1, y1) = b;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if (0..WIDTH as i64).contains(&x0) && (0..HEIGHT as i64).contains(&y0) {
            img.put_pixel(x0 as u32, y0 as u32, color);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Render a multi-series line chart and its backing CSV
/// (`x, <series name>...` with one row per distinct x).
pub fn line_chart(series: &[Series], png: &Path, csv_path: &Path) -> Result<()> {
    let (x0, x1, y0, y1) = data_bounds(series).expect("caller checks non-empty");
    let mut img = blank();
    for (n, s) in series.iter().enumerate() {
        let color = Rgb(PALETTE[n % PALETTE.len()]);
        let px: Vec<(i64, i64)> = s
            .points
            .iter()
            .map(|&(x, y)| {
                (
                    to_px(x, x0, x1, MARGIN as f64, (WIDTH - MARGIN / 2) as f64),
                    to_px(y, y0, y1, (HEIGHT - MARGIN) as f64, (MARGIN / 2) as f64),
                )
            })
            .collect();
        for pair in px.windows(2) {
            draw_line(&mut img, pair[0], pair[1], color);
        }
    }
    img.save(png)?;

    let mut w = csv::Writer::from_path(csv_path)?;
    let mut header = vec!["x".to_string()];
    header.extend(series.iter().map(|s| s.name.clone()));
    w.write_record(&header)?;
    let longest = series.iter().map(|s| s.points.len()).max().unwrap_or(0);
    for k in 0..longest {
        let mut row = Vec::with_capacity(series.len() + 1);
        let x = series
            .iter()
            .find_map(|s| s.points.get(k).map(|p| p.0))
            .unwrap_or(k as f64);
        row.push(format!("{x}"));
        for s in series {
            row.push(
                s.points
                    .get(k)
                    .map(|p| format!("{}", p.1))
                    .unwrap_or_default(),
            );
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Render a grouped bar chart (`labels` on the x axis, one bar group per
/// series) and its backing CSV.
pub fn bar_chart(labels: &[String], series: &[Series], png: &Path, csv_path: &Path) -> Result<()> {
    let mut img = blank();
    let all: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .collect();
    let top = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let bottom = all.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
    let (y0, y1) = if top > bottom {
        (bottom, top)
    } else {
        (bottom - 0.5, top + 0.5)
    };
    let groups = labels.len().max(1) as f64;
    let group_w = (WIDTH - MARGIN - MARGIN / 2) as f64 / groups;
    let bar_w = (group_w * 0.8 / series.len().max(1) as f64).max(1.0);
    let baseline = to_px(0.0, y0, y1, (HEIGHT - MARGIN) as f64, (MARGIN / 2) as f64);
    for (sn, s) in series.iter().enumerate() {
        let color = Rgb(PALETTE[sn % PALETTE.len()]);
        for (g, p) in s.points.iter().enumerate() {
            let x_left =
                MARGIN as f64 + g as f64 * group_w + group_w * 0.1 + sn as f64 * bar_w;
            let y_px = to_px(p.1, y0, y1, (HEIGHT - MARGIN) as f64, (MARGIN / 2) as f64);
            let (lo, hi) = if y_px < baseline {
                (y_px, baseline)
            } else {
                (baseline, y_px)
            };
            for x in x_left as i64..(x_left + bar_w) as i64 {
                for y in lo..=hi {
                    if (0..WIDTH as i64).contains(&x) && (0..HEIGHT as i64).contains(&y) {
                        img.put_pixel(x as u32, y as u32, color);
                    }
                }
            }
        }
    }
    img.save(png)?;

    let mut w = csv::Writer::from_path(csv_path)?;
    let mut header = vec!["label".to_string()];
    header.extend(series.iter().map(|s| s.name.clone()));
    w.write_record(&header)?;
    for (g, label) in labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        for s in series {
            row.push(
                s.points
                    .get(g)
                    .map(|p| format!("{}", p.1))
                    .unwrap_or_default(),
            );
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Emit the standard charts for a set of named run records: total-loss
/// curves and validation mIoU curves. Records lacking the needed numbers
/// produce warnings instead of files.
pub fn emit_run_plots(records: &[(String, RunRecord)], out_dir: &Path) -> Result<PlotReport> {
    std::fs::create_dir_all(out_dir)?;
    let mut report = PlotReport::default();
    if records.is_empty() {
        report.warnings.push("no run records given; nothing plotted".into());
        return Ok(report);
    }

    let loss_series: Vec<Series> = records
        .iter()
        .filter(|(_, r)| !r.steps.is_empty())
        .map(|(name, r)| Series {
            name: name.clone(),
            points: r
                .steps
                .iter()
                .map(|s| (s.step as f64, s.total))
                .collect(),
        })
        .collect();
    if loss_series.is_empty() {
        report
            .warnings
            .push("no per-step losses recorded; loss chart skipped".into());
    } else {
        let png = out_dir.join("loss_curves.png");
        let csv_path = out_dir.join("loss_curves.csv");
        line_chart(&loss_series, &png, &csv_path)?;
        report.written.push(png);
        report.written.push(csv_path);
    }

    let miou_series: Vec<Series> = records
        .iter()
        .filter(|(_, r)| !r.epochs.is_empty())
        .map(|(name, r)| Series {
            name: name.clone(),
            points: r
                .epochs
                .iter()
                .map(|e| (e.step as f64, e.val_miou))
                .collect(),
        })
        .collect();
    if miou_series.is_empty() {
        report
            .warnings
            .push("no evaluation points recorded; mIoU chart skipped".into());
    } else {
        let png = out_dir.join("val_miou.png");
        let csv_path = out_dir.join("val_miou.csv");
        line_chart(&miou_series, &png, &csv_path)?;
        report.written.push(png);
        report.written.push(csv_path);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_records_warn_and_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let report = emit_run_plots(&[], dir.path()).unwrap();
        assert!(report.written.is_empty());
        assert!(!report.warnings.is_empty());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn line_chart_csv_matches_input_extrema() {
        let dir = tempfile::tempdir().unwrap();
        let series = vec![Series {
            name: "a".into(),
            points: vec![(0.0, 1.0), (1.0, 3.0), (2.0, 2.0)],
        }];
        let png = dir.path().join("c.png");
        let csv_path = dir.path().join("c.csv");
        line_chart(&series, &png, &csv_path).unwrap();
        assert!(png.exists());
        let text = std::fs::read_to_string(&csv_path).unwrap();
        let ys: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 3.0);
        assert_eq!(ys.iter().cloned().fold(f64::INFINITY, f64::min), 1.0);
    }

    #[test]
    fn bar_chart_writes_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let labels = vec!["x".to_string(), "y".to_string()];
        let series = vec![Series {
            name: "v".into(),
            points: vec![(0.0, 0.4), (1.0, -0.2)],
        }];
        let png = dir.path().join("b.png");
        let csv_path = dir.path().join("b.csv");
        bar_chart(&labels, &series, &png, &csv_path).unwrap();
        assert!(png.exists() && csv_path.exists());
    }
}
