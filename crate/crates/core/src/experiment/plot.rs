//! Self-contained SVG log-log plots of error curves.

use std::fmt::Write as _;

use super::fit::{Curve, RateFit};
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 64.0;

struct Axis {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Axis {
    /// Log10 axis spanning whole decades around `[min, max]`.
    fn decades(min: f64, max: f64, from: f64, to: f64) -> Axis {
        let mut lo = min.log10().floor();
        let mut hi = max.log10().ceil();
        if hi <= lo {
            lo -= 1.0;
            hi += 1.0;
        }
        Axis { lo, hi, from, to }
    }

    fn map(&self, v: f64) -> f64 {
        self.from + (v.log10() - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the curve as markers plus, when given, the fitted power law over
/// its window.
pub fn render_svg(curve: &Curve, fit: Option<&RateFit>, title: &str) -> Result<String> {
    let pts: Vec<(f64, f64)> = curve
        .rows
        .iter()
        .filter(|r| r.k > 0 && r.metric_mean > 0.0 && r.metric_mean.is_finite())
        .map(|r| (r.k as f64, r.metric_mean))
        .collect();
    if pts.is_empty() {
        return Err(Error::NoData);
    }
    let (kmin, kmax) = pts.iter().fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut ymin, mut ymax) = pts.iter().fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let guide = fit.map(|f| {
        let lo = (f.window.0 as f64).max(kmin);
        let hi = (f.window.1 as f64).min(kmax);
        ((lo, f.predict(lo)), (hi, f.predict(hi)))
    });
    if let Some(((_, a), (_, b))) = guide {
        for v in [a, b] {
            if v > 0.0 && v.is_finite() {
                ymin = ymin.min(v);
                ymax = ymax.max(v);
            }
        }
    }
    let x = Axis::decades(kmin, kmax, MARGIN, WIDTH - MARGIN / 2.0);
    let y = Axis::decades(ymin, ymax, HEIGHT - MARGIN, MARGIN / 2.0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#, WIDTH / 2.0, esc(title));
    let _ = writeln!(s, r##"<g stroke="#ccc" stroke-width="1">"##);
    for e in x.lo as i32..=x.hi as i32 {
        let px = x.map(10f64.powi(e));
        let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}"/>"#, y.from, y.to);
    }
    for e in y.lo as i32..=y.hi as i32 {
        let py = y.map(10f64.powi(e));
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}"/>"#, x.from, x.to);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "<g>");
    for e in x.lo as i32..=x.hi as i32 {
        let px = x.map(10f64.powi(e));
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">1e{e}</text>"#, y.from + 18.0);
    }
    for e in y.lo as i32..=y.hi as i32 {
        let py = y.map(10f64.powi(e));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{e}</text>"#, x.from - 6.0, py + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">k</text>"#, WIDTH / 2.0, HEIGHT - 12.0);
    let _ = writeln!(s, "</g>");

    if let Some(((k0, v0), (k1, v1))) = guide {
        if v0 > 0.0 && v1 > 0.0 {
            let f = fit.expect("guide implies fit");
            let _ = writeln!(
                s,
                r##"<line class="fit" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#d62728" stroke-width="2" stroke-dasharray="6 4"/>"##,
                x.map(k0),
                y.map(v0),
                x.map(k1),
                y.map(v1)
            );
            let _ = writeln!(
                s,
                r##"<text x="{:.2}" y="48" text-anchor="end" fill="#d62728">slope {:.3}</text>"##,
                x.to,
                f.slope
            );
        }
    }
    let _ = writeln!(s, r##"<g fill="#1f77b4">"##);
    for (k, v) in &pts {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#, x.map(*k), y.map(*v));
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}
