//! Minimal static SVG plots.

use std::fmt::Write;

use super::ecdf::EcdfBand;
use super::elpd::ElpdTable;
use super::recovery::Recovery;

const PANEL: f64 = 240.0;
const PAD: f64 = 36.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let m = 0.05 * (hi - lo);
    (lo - m, hi + m)
}

/// One plotting panel mapping data coordinates into a cell of a grid.
struct Panel {
    x0: f64,
    y0: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Panel {
    fn px(&self, x: f64) -> f64 {
        self.x0 + PAD + (x - self.xr.0) / (self.xr.1 - self.xr.0) * (PANEL - 1.5 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + PANEL - PAD - (y - self.yr.0) / (self.yr.1 - self.yr.0) * (PANEL - 1.5 * PAD)
    }

    fn frame(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (l, r) = (self.px(self.xr.0), self.px(self.xr.1));
        let (b, t) = (self.py(self.yr.0), self.py(self.yr.1));
        let _ = write!(
            out,
            r##"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
            r - l,
            b - t
        );
        let _ = write!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"##,
            (l + r) / 2.0,
            t - 6.0,
            escape(title)
        );
        let _ = write!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"##,
            (l + r) / 2.0,
            b + 24.0,
            escape(xlabel)
        );
        let _ = write!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"##,
            l - 24.0,
            (t + b) / 2.0,
            l - 24.0,
            (t + b) / 2.0,
            escape(ylabel)
        );
        for (x, anchor) in [(self.xr.0, "start"), (self.xr.1, "end")] {
            let _ = write!(
                out,
                r##"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="{anchor}">{x:.3}</text>"##,
                self.px(x),
                b + 11.0
            );
        }
        for y in [self.yr.0, self.yr.1] {
            let _ = write!(
                out,
                r##"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="end">{y:.3}</text>"##,
                l - 3.0,
                self.py(y) + 3.0
            );
        }
    }

    fn diagonal(&self, out: &mut String) {
        let lo = self.xr.0.max(self.yr.0);
        let hi = self.xr.1.min(self.yr.1);
        if lo < hi {
            let _ = write!(
                out,
                r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-dasharray="4 3"/>"##,
                self.px(lo),
                self.py(lo),
                self.px(hi),
                self.py(hi)
            );
        }
    }

    fn points(&self, out: &mut String, x: &[f64], y: &[f64], color: &str) {
        for (a, b) in x.iter().zip(y) {
            if a.is_finite() && b.is_finite() {
                let _ = write!(
                    out,
                    r##"<circle cx="{:.1}" cy="{:.1}" r="2" fill="{color}" fill-opacity="0.6"/>"##,
                    self.px(*a),
                    self.py(*b)
                );
            }
        }
    }

    fn polyline(&self, out: &mut String, x: &[f64], y: &[f64], color: &str) {
        let pts: Vec<String> = x
            .iter()
            .zip(y)
            .map(|(a, b)| format!("{:.1},{:.1}", self.px(*a), self.py(*b)))
            .collect();
        let _ = write!(
            out,
            r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1"/>"##,
            pts.join(" ")
        );
    }
}

fn document(cells: usize, body: impl Fn(&mut String, usize, f64, f64)) -> String {
    let cols = cells.clamp(1, 4);
    let rows = cells.div_ceil(cols).max(1);
    let (w, h) = (cols as f64 * PANEL, rows as f64 * PANEL);
    let mut out = format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif"><rect width="{w}" height="{h}" fill="white"/>"##
    );
    for i in 0..cells {
        body(&mut out, i, (i % cols) as f64 * PANEL, (i / cols) as f64 * PANEL);
    }
    out.push_str("</svg>\n");
    out
}

/// Posterior means with central intervals against the truth, one panel per
/// parameter.
pub fn recovery_svg(recoveries: &[Recovery]) -> String {
    document(recoveries.len(), |out, i, x0, y0| {
        let r = &recoveries[i];
        let xr = range(r.truths.iter().copied());
        let yr = range(r.lower.iter().chain(&r.upper).chain(&r.truths).copied());
        let p = Panel { x0, y0, xr, yr };
        p.frame(out, &format!("{} (r = {:.3})", r.name, r.correlation), "true", "estimated");
        p.diagonal(out);
        for ((t, lo), hi) in r.truths.iter().zip(&r.lower).zip(&r.upper) {
            if lo.is_finite() && hi.is_finite() {
                let _ = write!(
                    out,
                    r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#9bb8d3" stroke-width="0.6"/>"##,
                    p.px(*t),
                    p.py(*lo),
                    p.px(*t),
                    p.py(*hi)
                );
            }
        }
        p.points(out, &r.truths, &r.means, "#1f4e79");
    })
}

/// ECDF-difference curves with their simultaneous band, one panel per
/// parameter.
pub fn ecdf_svg(band: &EcdfBand, names: &[String]) -> String {
    let yr = range(band.upper.iter().chain(&band.lower).chain(band.curves.iter().flatten()).copied());
    document(band.curves.len(), |out, i, x0, y0| {
        let p = Panel {
            x0,
            y0,
            xr: (0.0, 1.0),
            yr,
        };
        let name = names.get(i).map_or("", String::as_str);
        p.frame(out, name, "fractional rank", "ECDF difference");
        let mut poly: Vec<String> = band
            .grid
            .iter()
            .zip(&band.upper)
            .map(|(x, y)| format!("{:.1},{:.1}", p.px(*x), p.py(*y)))
            .collect();
        poly.extend(
            band.grid
                .iter()
                .zip(&band.lower)
                .rev()
                .map(|(x, y)| format!("{:.1},{:.1}", p.px(*x), p.py(*y))),
        );
        let _ = write!(out, r##"<polygon points="{}" fill="#d9d9d9"/>"##, poly.join(" "));
        let color = if band.inside[i] { "#1f4e79" } else { "#c0392b" };
        p.polyline(out, &band.grid, &band.curves[i], color);
    })
}

/// Scatter of two estimates of the same quantity with the identity line.
pub fn shrinkage_svg(title: &str, oracle: &[f64], estimate: &[f64]) -> String {
    let r = range(oracle.iter().chain(estimate).copied());
    document(1, |out, _, x0, y0| {
        let p = Panel { x0, y0, xr: r, yr: r };
        p.frame(out, title, "reference", "estimate");
        p.diagonal(out);
        p.points(out, oracle, estimate, "#1f4e79");
    })
}

/// Per-group elpd of model A against model B.
pub fn elpd_svg(table: &ElpdTable) -> String {
    let a: Vec<f64> = table.a.iter().map(|g| g.elpd).collect();
    let b: Vec<f64> = table.b.iter().map(|g| g.elpd).collect();
    let r = range(a.iter().chain(&b).copied());
    document(1, |out, _, x0, y0| {
        let p = Panel { x0, y0, xr: r, yr: r };
        p.frame(
            out,
            &format!("diff {:.2} (SE {:.2})", table.elpd_diff, table.se_diff),
            &table.model_b,
            &table.model_a,
        );
        p.diagonal(out);
        p.points(out, &b, &a, "#1f4e79");
    })
}
