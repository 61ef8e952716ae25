//! Minimal static SVG plots. Every plot is also written as CSV elsewhere.

use std::fmt::Write;

const FONT: &str = "font-family=\"sans-serif\" font-size=\"12\"";

fn header(w: f64, h: f64) -> String {
    format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Row-normalized heat map; cells show counts. Rows are the reference.
pub fn confusion(title: &str, names: &[&str], counts: &[Vec<u64>]) -> String {
    let cell = 60.0;
    let (left, top) = (90.0, 50.0);
    let k = names.len() as f64;
    let mut s = header(left + cell * k + 20.0, top + cell * k + 50.0);
    let _ = writeln!(s, "<text x=\"10\" y=\"20\" {FONT}>{}</text>", escape(title));
    for (i, row) in counts.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (j, c) in row.iter().enumerate() {
            let frac = if total > 0 { *c as f64 / total as f64 } else { 0.0 };
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            let (x, y) = (left + j as f64 * cell, top + i as f64 * cell);
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},255)\" stroke=\"gray\"/>"
            );
            let colour = if frac > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{colour}\" {FONT}>{c}</text>",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    for (i, name) in names.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" {FONT}>{}</text>",
            left - 6.0,
            top + i as f64 * cell + cell / 2.0 + 4.0,
            escape(name)
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" {FONT}>{}</text>",
            left + i as f64 * cell + cell / 2.0,
            top + k * cell + 18.0,
            escape(name)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" {FONT}>predicted</text>",
        left + k * cell / 2.0,
        top + k * cell + 38.0
    );
    s.push_str("</svg>\n");
    s
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Difference against mean of each pair, with the mean difference and the
/// limits of agreement as horizontal lines.
pub fn bland_altman(title: &str, pairs: &[(f64, f64)], mean_diff: f64, loa: (f64, f64)) -> String {
    let (w, h, m) = (480.0, 360.0, 50.0);
    let pts: Vec<(f64, f64)> = pairs.iter().map(|(p, r)| ((p + r) / 2.0, p - r)).collect();
    let (x0, x1) = range(pts.iter().map(|p| p.0));
    let (y0, y1) = range(pts.iter().map(|p| p.1).chain([loa.0, loa.1]));
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = header(w, h);
    let _ = writeln!(s, "<text x=\"10\" y=\"20\" {FONT}>{}</text>", escape(title));
    let _ = writeln!(
        s,
        "<rect x=\"{m}\" y=\"{m}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        w - 2.0 * m,
        h - 2.0 * m
    );
    for (y, dash, label) in [
        (mean_diff, "", format!("mean {mean_diff:.3}")),
        (loa.0, " stroke-dasharray=\"4 3\"", format!("{:.3}", loa.0)),
        (loa.1, " stroke-dasharray=\"4 3\"", format!("{:.3}", loa.1)),
    ] {
        let _ = writeln!(
            s,
            "<line x1=\"{m}\" x2=\"{}\" y1=\"{:.2}\" y2=\"{:.2}\" stroke=\"red\"{dash}/>",
            w - m,
            sy(y),
            sy(y)
        );
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.2}\" {FONT}>{label}</text>", w - m + 2.0, sy(y) + 4.0);
    }
    for (x, y) in &pts {
        let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>", sx(*x), sy(*y));
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" {FONT}>mean of prediction and reference</text>",
        w / 2.0,
        h - 15.0
    );
    s.push_str("</svg>\n");
    s
}

/// Grouped bars of values in [0, 1] (kappa or accuracy): one group per
/// category, one bar per series.
pub fn bars(title: &str, categories: &[String], series: &[(String, Vec<Option<f64>>)]) -> String {
    let (bar, gap, m) = (18.0, 16.0, 50.0);
    let group = bar * series.len().max(1) as f64 + gap;
    let w = 2.0 * m + group * categories.len().max(1) as f64 + 120.0;
    let h = 320.0;
    let plot_h = h - 2.0 * m;
    let mut s = header(w, h);
    let _ = writeln!(s, "<text x=\"10\" y=\"20\" {FONT}>{}</text>", escape(title));
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = h - m - tick * plot_h;
        let _ = writeln!(
            s,
            "<line x1=\"{m}\" x2=\"{}\" y1=\"{y}\" y2=\"{y}\" stroke=\"lightgray\"/>",
            w - 120.0 - m + m
        );
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" {FONT}>{tick}</text>", m - 4.0, y + 4.0);
    }
    const COLOURS: [&str; 6] = ["steelblue", "darkorange", "seagreen", "firebrick", "slateblue", "goldenrod"];
    for (ci, cat) in categories.iter().enumerate() {
        let gx = m + ci as f64 * group + gap / 2.0;
        for (si, (_, values)) in series.iter().enumerate() {
            if let Some(v) = values.get(ci).copied().flatten() {
                let bh = v.clamp(0.0, 1.0) * plot_h;
                let _ = writeln!(
                    s,
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{bar}\" height=\"{:.2}\" fill=\"{}\"/>",
                    gx + si as f64 * bar,
                    h - m - bh,
                    bh,
                    COLOURS[si % COLOURS.len()]
                );
            }
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" {FONT}>{}</text>",
            gx + group / 2.0 - gap / 2.0,
            h - m + 16.0,
            escape(cat)
        );
    }
    for (si, (name, _)) in series.iter().enumerate() {
        let y = m + si as f64 * 18.0;
        let x = w - 110.0;
        let _ = writeln!(s, "<rect x=\"{x}\" y=\"{y}\" width=\"10\" height=\"10\" fill=\"{}\"/>", COLOURS[si % COLOURS.len()]);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" {FONT}>{}</text>", x + 14.0, y + 10.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_are_well_formed() {
        let c = confusion("c", &["W", "S"], &[vec![3, 1], vec![0, 0]]);
        assert!(c.starts_with("<svg") && c.ends_with("</svg>\n"));
        assert_eq!(c.matches("<rect").count(), 5);
        let b = bland_altman("b", &[(1.0, 2.0), (3.0, 3.5)], -0.75, (-1.5, 0.0));
        assert_eq!(b.matches("<circle").count(), 2);
        let g = bars("k", &["a".into(), "b".into()], &[("net".into(), vec![Some(0.5), None])]);
        assert!(g.contains("net"));
        assert!(escape("a<b&c").contains("&lt;"));
    }
}
