//! Minimal SVG line charts. Figures are diagnostics; the CSVs are the record.

use std::fmt::Write as _;

use super::tables::{LCurveRow, SeriesRow, SurfaceRow};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |v: &mut dyn Iterator<Item = f64>| {
            v.filter(|x| x.is_finite())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
                    (a.min(x), b.max(x))
                })
        };
        let mut x = span(&mut xs.clone());
        let mut y = span(&mut ys.clone());
        for r in [&mut x, &mut y] {
            if !r.0.is_finite() {
                *r = (0.0, 1.0);
            }
            if r.1 <= r.0 {
                let pad = r.0.abs().max(1.0) * 0.5;
                *r = (r.0 - pad, r.1 + pad);
            }
        }
        Self { x, y }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

fn open(title: &str, xlabel: &str, ylabel: &str, f: &Frame, out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        out,
        r#"<path d="M{x0},{y0} L{x0},{y1} L{x1},{y1}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = f.x.0 + t * (f.x.1 - f.x.0);
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let (px, py) = (f.px(xv), f.py(yv));
        let _ = writeln!(
            out,
            r#"<line x1="{px:.1}" y1="{y1}" x2="{px:.1}" y2="{:.1}" stroke="black"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            y1 + 5.0,
            y1 + 18.0,
            fmt_tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{py:.1}" x2="{x0}" y2="{py:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            fmt_tick(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn polyline(f: &Frame, pts: &[(f64, f64)]) -> String {
    let mut d = String::new();
    for (i, (x, y)) in pts.iter().enumerate() {
        let _ = write!(
            d,
            "{}{:.2},{:.2} ",
            if i == 0 { "M" } else { "L" },
            f.px(*x),
            f.py(*y)
        );
    }
    d
}

/// Median curve over a shaded band; each point is `(x, lo, median, hi)`.
pub fn band_chart(title: &str, xlabel: &str, ylabel: &str, pts: &[(f64, f64, f64, f64)]) -> String {
    let f = Frame::new(
        pts.iter().map(|p| p.0),
        pts.iter()
            .flat_map(|p| [p.1, p.3])
            .chain(std::iter::once(0.0)),
    );
    let mut out = String::new();
    open(title, xlabel, ylabel, &f, &mut out);
    if !pts.is_empty() {
        let mut outline: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.3)).collect();
        outline.extend(pts.iter().rev().map(|p| (p.0, p.1)));
        let _ = writeln!(
            out,
            r##"<path d="{}Z" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>"##,
            polyline(&f, &outline)
        );
        let med: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.2)).collect();
        let _ = writeln!(
            out,
            r##"<path d="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##,
            polyline(&f, &med)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Points of one year of a surface, plotted at bin midpoints.
pub fn surface_year(rows: &[SurfaceRow], year: i64) -> Vec<(f64, f64, f64, f64)> {
    rows.iter()
        .filter(|r| r.year == year)
        .map(|r| {
            (
                0.5 * (r.age_lo + r.age_hi),
                r.band.lo,
                r.band.median,
                r.band.hi,
            )
        })
        .collect()
}

pub fn series_points(rows: &[SeriesRow]) -> Vec<(f64, f64, f64, f64)> {
    rows.iter()
        .map(|r| (r.year as f64, r.band.lo, r.band.median, r.band.hi))
        .collect()
}

/// `ln ρ` against `ln η` with the selected point ringed.
pub fn lcurve_chart(rows: &[LCurveRow]) -> String {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.point.residual_norm.ln(), r.point.seminorm.ln()))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let f = Frame::new(pts.iter().map(|p| p.0), pts.iter().map(|p| p.1));
    let mut out = String::new();
    open("L-curve", "ln residual norm", "ln seminorm", &f, &mut out);
    if !pts.is_empty() {
        let _ = writeln!(
            out,
            r##"<path d="{}" fill="none" stroke="#555"/>"##,
            polyline(&f, &pts)
        );
    }
    for r in rows {
        let (x, y) = (r.point.residual_norm.ln(), r.point.seminorm.ln());
        if !(x.is_finite() && y.is_finite()) {
            continue;
        }
        let (cx, cy) = (f.px(x), f.py(y));
        if r.selected {
            let _ = writeln!(
                out,
                r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="6" fill="none" stroke="red" stroke-width="2"><title>β = {:e}</title></circle>"#,
                r.point.beta
            );
        }
        let _ = writeln!(
            out,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2" fill="black"/>"#
        );
    }
    out.push_str("</svg>\n");
    out
}
