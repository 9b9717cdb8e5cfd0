use std::fmt::Write;

use super::rd::RDCurveSet;
use crate::error::{Error, Result};
use crate::training::Regime;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

fn color(regime: Regime) -> &'static str {
    match regime {
        Regime::Joint => "#1f77b4",
        Regime::Distributed => "#d62728",
        Regime::Separate => "#2ca02c",
    }
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }

    fn path(&self, xs: &[f64], ys: &[f64]) -> String {
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// SVG of PSNR against bpp: the mean per-source curve of each regime with a
/// shaded `±1` sd band, plus the pooled joint curve dashed when present.
pub fn rd_plot_svg(set: &RDCurveSet) -> Result<String> {
    let regimes = set.regimes();
    if regimes.is_empty() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let (mut x1, mut y0, mut y1) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    let mut series = Vec::new();
    for &r in &regimes {
        let xs = set.bpp_axis(r);
        let band = set.band(r)?;
        let lo = band.lower().unwrap_or_else(|| band.mean.clone());
        let hi = band.upper().unwrap_or_else(|| band.mean.clone());
        x1 = xs.iter().fold(x1, |a, &b| a.max(b));
        y0 = lo.iter().fold(y0, |a, &b| a.min(b));
        y1 = hi.iter().fold(y1, |a, &b| a.max(b));
        let pooled: Vec<(f64, f64)> = set
            .curve(r, None)
            .iter()
            .map(|p| (p.bpp, p.psnr_db))
            .collect();
        for &(x, y) in &pooled {
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        series.push((r, xs, band, lo, hi, pooled));
    }
    let y0 = (y0 - 1.0).floor();
    let y1 = (y1 + 1.0).ceil();
    let ax = Axes {
        x0: 0.0,
        x1: if x1 > 0.0 { x1 * 1.05 } else { 1.0 },
        y0,
        y1: if y1 > y0 { y1 } else { y0 + 1.0 },
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (bx, by) = (H - BOTTOM, W - RIGHT);
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT},{TOP} L{LEFT},{bx} L{by},{bx}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let x = ax.x0 + (ax.x1 - ax.x0) * i as f64 / 4.0;
        let y = ax.y0 + (ax.y1 - ax.y0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x:.3}</text>"#,
            ax.px(x),
            bx + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{y:.1}</text>"#,
            LEFT - 6.0,
            ax.py(y) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">bits per pixel</text>"#,
        (LEFT + by) / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">PSNR (dB)</text>"#,
        (TOP + bx) / 2.0,
        (TOP + bx) / 2.0
    );
    for (k, (r, xs, band, lo, hi, pooled)) in series.iter().enumerate() {
        let c = color(*r);
        if band.sd.is_some() {
            let mut rx = xs.clone();
            rx.reverse();
            let mut rhi = hi.clone();
            rhi.reverse();
            let _ = writeln!(
                s,
                r#"<polygon points="{} {}" fill="{c}" fill-opacity="0.18" stroke="none"/>"#,
                ax.path(xs, lo),
                ax.path(&rx, &rhi)
            );
        }
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#,
            ax.path(xs, &band.mean)
        );
        let ly = TOP + 20.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{c}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{r}</text>"#,
            by + 10.0,
            by + 30.0,
            by + 36.0,
            ly + 4.0
        );
        if !pooled.is_empty() {
            let (px, py): (Vec<f64>, Vec<f64>) = pooled.iter().copied().unzip();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5" stroke-dasharray="5,3"/>"#,
                ax.path(&px, &py)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// SVG heatmap of a square matrix with values in `[-1, 1]`.
pub fn heatmap_svg(matrix: &[Vec<f64>], title: &str) -> Result<String> {
    let n = matrix.len();
    if n == 0 || matrix.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument(
            "heatmap needs a non-empty square matrix".into(),
        ));
    }
    let cell = 36.0;
    let (ox, oy) = (30.0, 40.0);
    let side = ox + cell * n as f64 + 10.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side:.0}" height="{:.0}" font-family="sans-serif" font-size="10">"#,
        oy + cell * n as f64 + 10.0
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{ox}" y="20" font-size="13">{}</text>"#,
        escape(title)
    );
    for (i, row) in matrix.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{i}</text>"#,
            ox - 4.0,
            oy + cell * (i as f64 + 0.5) + 3.0
        );
        for (j, &v) in row.iter().enumerate() {
            let v = v.clamp(-1.0, 1.0);
            // White at 0, red towards +1, blue towards -1.
            let fade = (255.0 * (1.0 - v.abs())).round() as u8;
            let fill = if v >= 0.0 {
                format!("#ff{fade:02x}{fade:02x}")
            } else {
                format!("#{fade:02x}{fade:02x}ff")
            };
            let (x, y) = (ox + cell * j as f64, oy + cell * i as f64);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="{fill}" stroke="gray"/><text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 3.0
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
