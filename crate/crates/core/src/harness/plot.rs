//! Minimal line charts rasterized straight into an RGB [`Image`].
//!
//! Top panel: test accuracy (blue) and mean loss (orange, scaled by its
//! maximum). Bottom panel: AvgScore per explainer on a fixed [0, 1] axis.
//! Null values break the line.

use std::path::Path;

use super::ExperimentReport;
use crate::error::Result;
use crate::io::{save_image, Image};

const WIDTH: usize = 480;
const PANEL_HEIGHT: usize = 200;
const MARGIN: usize = 20;

const AXIS: [f64; 3] = [0.2, 0.2, 0.2];
const GRIDLINE: [f64; 3] = [0.85, 0.85, 0.85];
const ACCURACY: [f64; 3] = [0.12, 0.47, 0.71];
const LOSS: [f64; 3] = [1.0, 0.5, 0.05];
const PALETTE: [[f64; 3]; 4] = [
    [0.17, 0.63, 0.17],
    [0.84, 0.15, 0.16],
    [0.58, 0.4, 0.74],
    [0.55, 0.34, 0.29],
];

struct Panel {
    top: usize,
}

impl Panel {
    fn x(&self, i: usize, n: usize) -> i64 {
        let span = (WIDTH - 2 * MARGIN) as f64;
        let t = if n <= 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
        (MARGIN as f64 + t * span).round() as i64
    }

    fn y(&self, v: f64) -> i64 {
        let span = (PANEL_HEIGHT - 2 * MARGIN) as f64;
        let v = v.clamp(0.0, 1.0);
        (self.top as f64 + (PANEL_HEIGHT - MARGIN) as f64 - v * span).round() as i64
    }
}

fn put(img: &mut Image, x: i64, y: i64, color: [f64; 3]) {
    if x < 0 || y < 0 || x as usize >= img.width || y as usize >= img.height {
        return;
    }
    for (c, v) in color.iter().enumerate() {
        img.set(y as usize, x as usize, c, *v);
    }
}

fn line(img: &mut Image, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: [f64; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, color);
        put(img, x, y + 1, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn frame(img: &mut Image, panel: &Panel) {
    for q in 0..=4 {
        let y = panel.y(q as f64 / 4.0);
        let color = if q == 0 { AXIS } else { GRIDLINE };
        line(img, (MARGIN as i64, y), ((WIDTH - MARGIN) as i64, y), color);
    }
    line(
        img,
        (MARGIN as i64, panel.y(0.0)),
        (MARGIN as i64, panel.y(1.0)),
        AXIS,
    );
}

fn series(img: &mut Image, panel: &Panel, values: &[Option<f64>], color: [f64; 3]) {
    let n = values.len();
    let mut prev: Option<(i64, i64)> = None;
    for (i, v) in values.iter().enumerate() {
        match v {
            Some(v) => {
                let p = (panel.x(i, n), panel.y(*v));
                match prev {
                    Some(q) => line(img, q, p, color),
                    None => {
                        for d in -1..=1 {
                            put(img, p.0 + d, p.1, color);
                            put(img, p.0, p.1 + d, color);
                        }
                    }
                }
                prev = Some(p);
            }
            None => prev = None,
        }
    }
}

/// Renders the two-panel chart.
pub fn render_curves(report: &ExperimentReport) -> Image {
    let mut img = Image::filled(2 * PANEL_HEIGHT, WIDTH, 3, 1.0);
    let top = Panel { top: 0 };
    let bottom = Panel { top: PANEL_HEIGHT };
    frame(&mut img, &top);
    frame(&mut img, &bottom);

    let acc: Vec<Option<f64>> = report.epochs.iter().map(|e| e.accuracy).collect();
    let loss_max = report
        .epochs
        .iter()
        .filter_map(|e| e.mean_loss)
        .fold(0.0f64, f64::max);
    let loss: Vec<Option<f64>> = report
        .epochs
        .iter()
        .map(|e| e.mean_loss.filter(|_| loss_max > 0.0).map(|l| l / loss_max))
        .collect();
    series(&mut img, &top, &loss, LOSS);
    series(&mut img, &top, &acc, ACCURACY);

    for (k, name) in report.explainer_names().iter().enumerate() {
        let values: Vec<Option<f64>> = report
            .epochs
            .iter()
            .map(|e| e.avg_scores.get(name).cloned().flatten().map(|d| d.avg_score))
            .collect();
        series(&mut img, &bottom, &values, PALETTE[k % PALETTE.len()]);
    }
    img
}

pub fn save_curves(path: impl AsRef<Path>, report: &ExperimentReport) -> Result<()> {
    save_image(path, &render_curves(report))
}
