use std::fmt::Write;
use std::path::Path;

use image::{Rgb, RgbImage};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 320;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 28.0;
const BOTTOM: f64 = 40.0;

/// One per-frame risk curve with its decision threshold and, for positive
/// videos, the accident frame.
#[derive(Debug, Clone)]
pub struct CurvePlot {
    pub title: String,
    pub scores: Vec<f64>,
    pub threshold: f64,
    /// 1-based.
    pub accident_frame: Option<usize>,
}

impl CurvePlot {
    /// Frame `t` (1-based) to pixel x.
    fn x(&self, t: f64) -> f64 {
        let span = (self.scores.len().max(2) - 1) as f64;
        LEFT + (t - 1.0) / span * (WIDTH as f64 - LEFT - RIGHT)
    }

    fn y(&self, p: f64) -> f64 {
        TOP + (1.0 - p.clamp(0.0, 1.0)) * (HEIGHT as f64 - TOP - BOTTOM)
    }

    fn points(&self) -> Vec<(f64, f64)> {
        self.scores
            .iter()
            .enumerate()
            .map(|(i, &s)| (self.x(i as f64 + 1.0), self.y(s)))
            .collect()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Coordinates are printed with two decimals so output is byte-stable.
pub fn render_svg(plot: &CurvePlot) -> String {
    let (w, h) = (WIDTH as f64, HEIGHT as f64);
    let (x0, x1, y0, y1) = (LEFT, w - RIGHT, plot.y(1.0), plot.y(0.0));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="18">{}</text>"#,
        x0,
        escape(&plot.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y1 - y0
    );
    for tick in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{tick:.1}</text>"#,
            x0 - 6.0,
            plot.y(tick) + 4.0
        );
    }
    let n = plot.scores.len();
    for t in [1, n.div_ceil(2), n] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#,
            plot.x(t as f64),
            y1 + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">frame</text>"#,
        (x0 + x1) / 2.0,
        h - 6.0
    );
    let _ = writeln!(
        s,
        r#"<line class="threshold" x1="{x0:.2}" y1="{ty:.2}" x2="{x1:.2}" y2="{ty:.2}" stroke="gray" stroke-dasharray="6 4"/>"#,
        ty = plot.y(plot.threshold)
    );
    if let Some(tau) = plot.accident_frame {
        let tx = plot.x(tau as f64);
        let _ = writeln!(
            s,
            r#"<line class="accident" x1="{tx:.2}" y1="{y0:.2}" x2="{tx:.2}" y2="{y1:.2}" stroke="red"/>"#
        );
    }
    let pts: Vec<String> = plot
        .points()
        .iter()
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline class="risk" fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        pts.join(" ")
    );
    s.push_str("</svg>\n");
    s
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Integer line stepping; `dash` of `Some((on, off))` skips pixels.
fn line(
    img: &mut RgbImage,
    a: (f64, f64),
    b: (f64, f64),
    c: Rgb<u8>,
    thick: i64,
    dash: Option<(usize, usize)>,
) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        if let Some((on, off)) = dash {
            if i % (on + off) >= on {
                continue;
            }
        }
        let f = i as f64 / steps as f64;
        let x = (a.0 + f * (b.0 - a.0)).round() as i64;
        let y = (a.1 + f * (b.1 - a.1)).round() as i64;
        for dx in 0..thick {
            for dy in 0..thick {
                put(img, x + dx, y + dy, c);
            }
        }
    }
}

/// Same geometry as the SVG, without text.
pub fn render_png(plot: &CurvePlot, path: &Path) -> anyhow::Result<()> {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let black = Rgb([0, 0, 0]);
    let (x0, x1, y0, y1) = (LEFT, WIDTH as f64 - RIGHT, plot.y(1.0), plot.y(0.0));
    for (a, b) in [
        ((x0, y0), (x1, y0)),
        ((x1, y0), (x1, y1)),
        ((x1, y1), (x0, y1)),
        ((x0, y1), (x0, y0)),
    ] {
        line(&mut img, a, b, black, 1, None);
    }
    let ty = plot.y(plot.threshold);
    line(
        &mut img,
        (x0, ty),
        (x1, ty),
        Rgb([128, 128, 128]),
        1,
        Some((6, 4)),
    );
    if let Some(tau) = plot.accident_frame {
        let tx = plot.x(tau as f64);
        line(&mut img, (tx, y0), (tx, y1), Rgb([220, 0, 0]), 1, None);
    }
    let pts = plot.points();
    for w in pts.windows(2) {
        line(&mut img, w[0], w[1], Rgb([70, 130, 180]), 2, None);
    }
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
