//! Minimal line and heat-map charts as standalone SVG text.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub struct Series {
    pub label: String,
    pub points: Vec<[f64; 2]>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<[f64; 2]>) -> Self {
        Self {
            label: label.into(),
            points,
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return None;
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        Some((lo - 0.5, hi + 0.5))
    } else {
        Some((lo, hi))
    }
}

fn header(out: &mut String, title: &str, hash: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, "<!-- config_hash={hash} -->");
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, x_label: &str, y_label: &str, xr: (f64, f64), yr: (f64, f64), log_y: bool) {
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let x = LEFT + f * pw;
        let y = TOP + ph - f * ph;
        let xv = xr.0 + f * (xr.1 - xr.0);
        let yv = yr.0 + f * (yr.1 - yr.0);
        let yv = if log_y { 10f64.powf(yv) } else { yv };
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 20.0,
            tick_label(xv)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let y_label = if log_y { format!("{y_label} (log scale)") } else { y_label.to_string() };
    let _ = writeln!(
        out,
        r#"<text transform="translate(18,{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + ph / 2.0,
        escape(&y_label)
    );
}

/// Polylines over a shared frame; with `log_y` non-positive values are dropped.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool, hash: &str) -> String {
    let ty = |y: f64| if log_y { y.log10() } else { y };
    let usable = |p: &[f64; 2]| p[0].is_finite() && ty(p[1]).is_finite();
    let pts = || series.iter().flat_map(|s| s.points.iter().filter(|p| usable(p)));
    let mut out = String::new();
    header(&mut out, title, hash);
    let (Some(xr), Some(yr)) = (range(pts().map(|p| p[0])), range(pts().map(|p| ty(p[1])))) else {
        let _ = writeln!(out, r#"<text x="{}" y="{}">no data</text>"#, LEFT, HEIGHT / 2.0);
        out.push_str("</svg>\n");
        return out;
    };
    axes(&mut out, x_label, y_label, xr, yr, log_y);
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x - xr.0) / (xr.1 - xr.0) * pw;
    let sy = |y: f64| TOP + ph - (ty(y) - yr.0) / (yr.1 - yr.0) * ph;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .filter(|p| usable(p))
            .map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1])))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        for c in &coords {
            let (x, y) = c.split_once(',').expect("formatted pair");
            let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{color}"/>"#);
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn shade(f: f64) -> String {
    // light yellow to dark blue
    let (a, b) = ([255.0, 247.0, 188.0], [8.0, 48.0, 107.0]);
    let f = f.clamp(0.0, 1.0);
    let c: Vec<String> = (0..3).map(|i| format!("{:02x}", (a[i] + f * (b[i] - a[i])).round() as u8)).collect();
    format!("#{}", c.concat())
}

/// Cells `(x, y, value)` on the grid of distinct `x` and `y` values.
pub fn heat_map(title: &str, x_label: &str, y_label: &str, cells: &[(f64, f64, f64)], hash: &str) -> String {
    let mut out = String::new();
    header(&mut out, title, hash);
    let distinct = |f: fn(&(f64, f64, f64)) -> f64| {
        let mut v: Vec<f64> = cells.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let xs = distinct(|c| c.0);
    let ys = distinct(|c| c.1);
    let Some(vr) = range(cells.iter().map(|c| c.2).filter(|v| v.is_finite())) else {
        let _ = writeln!(out, r#"<text x="{}" y="{}">no data</text>"#, LEFT, HEIGHT / 2.0);
        out.push_str("</svg>\n");
        return out;
    };
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let (cw, ch) = (pw / xs.len() as f64, ph / ys.len() as f64);
    for &(x, y, v) in cells {
        let i = xs.partition_point(|&a| a < x) as f64;
        let j = ys.partition_point(|&a| a < y) as f64;
        let fill = if v.is_finite() { shade((v - vr.0) / (vr.1 - vr.0)) } else { "#dddddd".into() };
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
            LEFT + i * cw,
            TOP + ph - (j + 1.0) * ch,
            cw,
            ch
        );
    }
    let half = |v: &[f64]| if v.len() > 1 { (v[1] - v[0]) / 2.0 } else { 0.5 };
    let xr = (xs[0] - half(&xs), xs[xs.len() - 1] + half(&xs));
    let yr = (ys[0] - half(&ys), ys[ys.len() - 1] + half(&ys));
    axes(&mut out, x_label, y_label, xr, yr, false);
    let lx = WIDTH - RIGHT + 20.0;
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let y = TOP + ph - f * ph * 0.5 - 20.0;
        let _ = writeln!(
            out,
            r#"<rect x="{lx}" y="{y:.2}" width="16" height="16" fill="{}"/><text x="{}" y="{:.2}">{}</text>"#,
            shade(f),
            lx + 22.0,
            y + 12.0,
            tick_label(vr.0 + f * (vr.1 - vr.0))
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_embed_the_hash_and_close() {
        let s = vec![Series::new("a<b", vec![[0.0, 1.0], [1.0, 10.0], [2.0, 0.0]])];
        let svg = line_chart("t", "x", "y", &s, true, "abc");
        assert!(svg.contains("config_hash=abc"));
        assert!(svg.contains("a&lt;b"));
        assert!(svg.trim_end().ends_with("</svg>"));
        let h = heat_map("h", "k", "n", &[(0.0, 1.0, -16.0), (1.0, 1.0, f64::NEG_INFINITY)], "abc");
        assert!(h.contains("#dddddd") && h.contains("config_hash=abc"));
        assert!(line_chart("e", "x", "y", &[], false, "abc").contains("no data"));
    }
}
