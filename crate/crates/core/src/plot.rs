//! Plain SVG renderings: ROC curves and perplexity box plots.

use std::fmt::Write;

use crate::metrics::RocCurve;
use crate::perplexity::PerplexityTable;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// ROC curves on the unit square with the chance diagonal. Each entry is
/// (legend label, curve, AUC).
pub fn roc_svg(title: &str, curves: &[(String, &RocCurve, f64)]) -> String {
    let (left, top, size) = (60.0, 40.0, 400.0);
    let legend_h = 18.0 * curves.len() as f64;
    let width = left + size + 30.0;
    let height = top + size + 60.0 + legend_h;
    let px = |x: f64| left + x * size;
    let py = |y: f64| top + (1.0 - y) * size;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + size / 2.0, escape(title));
    let _ = writeln!(s, r##"<rect x="{left}" y="{top}" width="{size}" height="{size}" fill="none" stroke="#333"/>"##);
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(s, r##"<line x1="{x}" y1="{y0}" x2="{x}" y2="{y1}" stroke="#333"/>"##, x = px(v), y0 = py(0.0), y1 = py(0.0) + 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{v:.1}</text>"#, px(v), py(0.0) + 18.0);
        let _ = writeln!(s, r##"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="#333"/>"##, x0 = px(0.0) - 5.0, x1 = px(0.0), y = py(v));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#, px(0.0) - 8.0, py(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">False positive rate</text>"#, left + size / 2.0, top + size + 38.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">True positive rate</text>"#,
        y = top + size / 2.0
    );
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="5,4"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for (i, (label, curve, auc)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = curve.points.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let ly = top + size + 58.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="3"/>"#, ly - 4.0, left + 20.0, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{} (AUC = {auc:.3})</text>"#, left + 26.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

fn quartiles(sorted: &[f64]) -> (f64, f64, f64) {
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    (q(0.25), q(0.5), q(0.75))
}

/// One panel per student corpus with a box per teacher, on a log10 axis.
/// Whiskers reach the furthest points within 1.5 IQR; the rest are dots.
/// The lowest-median teacher of each panel is shaded.
pub fn perplexity_box_svg(table: &PerplexityTable) -> String {
    let n_panels = table.students.len().max(1);
    let cols = n_panels.min(3);
    let rows = n_panels.div_ceil(cols);
    let box_w = 28.0;
    let slot = 48.0;
    let panel_w = 70.0 + slot * table.teachers.len() as f64 + 20.0;
    let panel_h = 300.0;
    let width = panel_w * cols as f64;
    let height = panel_h * rows as f64 + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, student) in table.students.iter().enumerate() {
        let ox = panel_w * (p % cols) as f64;
        let oy = panel_h * (p / cols) as f64 + 10.0;
        let (plot_x, plot_y, plot_h) = (ox + 60.0, oy + 30.0, 190.0);
        let cells: Vec<_> = table.teachers.iter().filter_map(|t| table.cell(student, t)).collect();
        let logs: Vec<f64> = cells
            .iter()
            .flat_map(|c| c.values.iter().map(|v| v.perplexity.max(1e-12).log10()))
            .collect();
        let mut lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || !hi.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-9 {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        let pad = (hi - lo) * 0.05;
        let (lo, hi) = (lo - pad, hi + pad);
        let y = |v: f64| plot_y + (hi - v) / (hi - lo) * plot_h;
        let plot_w = slot * table.teachers.len() as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#, plot_x + plot_w / 2.0, oy + 16.0, escape(student));
        let _ = writeln!(s, r##"<rect x="{plot_x}" y="{plot_y}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##);
        for k in 0..=4 {
            let v = lo + (hi - lo) * k as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, plot_x - 5.0, y(v) + 4.0, 10f64.powf(v));
            let _ = writeln!(s, r##"<line x1="{}" y1="{yy}" x2="{plot_x}" y2="{yy}" stroke="#333"/>"##, plot_x - 3.0, yy = y(v));
        }
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{yy}" text-anchor="middle" transform="rotate(-90 {x} {yy})">perplexity (log scale)</text>"#,
            x = ox + 12.0,
            yy = plot_y + plot_h / 2.0
        );
        for (i, cell) in cells.iter().enumerate() {
            let cx = plot_x + slot * (i as f64 + 0.5);
            let mut v: Vec<f64> = cell.values.iter().map(|d| d.perplexity.max(1e-12).log10()).collect();
            v.sort_by(f64::total_cmp);
            let (q1, med, q3) = quartiles(&v);
            let iqr = q3 - q1;
            let w_lo = v.iter().copied().find(|x| *x >= q1 - 1.5 * iqr).unwrap_or(q1);
            let w_hi = v.iter().rev().copied().find(|x| *x <= q3 + 1.5 * iqr).unwrap_or(q3);
            let best = table.argmin_teacher.get(student) == Some(&cell.teacher);
            let fill = if best { "#9ecae1" } else { "#eeeeee" };
            let _ = writeln!(s, r##"<line x1="{cx}" y1="{}" x2="{cx}" y2="{}" stroke="#333"/>"##, y(w_hi), y(q3));
            let _ = writeln!(s, r##"<line x1="{cx}" y1="{}" x2="{cx}" y2="{}" stroke="#333"/>"##, y(q1), y(w_lo));
            for w in [w_lo, w_hi] {
                let _ = writeln!(s, r##"<line x1="{}" y1="{yy}" x2="{}" y2="{yy}" stroke="#333"/>"##, cx - box_w / 4.0, cx + box_w / 4.0, yy = y(w));
            }
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{}" width="{box_w}" height="{}" fill="{fill}" stroke="#333"/>"##,
                cx - box_w / 2.0,
                y(q3),
                (y(q1) - y(q3)).max(0.5)
            );
            let _ = writeln!(s, r##"<line x1="{}" y1="{yy}" x2="{}" y2="{yy}" stroke="#d62728" stroke-width="2"/>"##, cx - box_w / 2.0, cx + box_w / 2.0, yy = y(med));
            for x in v.iter().filter(|x| **x < w_lo || **x > w_hi) {
                let _ = writeln!(s, r##"<circle cx="{cx}" cy="{:.2}" r="2" fill="none" stroke="#555"/>"##, y(*x));
            }
            let _ = writeln!(
                s,
                r#"<text x="{cx}" y="{yy}" text-anchor="end" transform="rotate(-40 {cx} {yy})">{}</text>"#,
                escape(&cell.teacher),
                yy = plot_y + plot_h + 14.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::roc_curve;
    use crate::perplexity::{DocPerplexity, PerplexityCell, Summary};
    use std::collections::BTreeMap;

    #[test]
    fn roc_svg_has_curve_and_diagonal() {
        let c = roc_curve(&[0.9, 0.4, 0.6, 0.2], &[true, true, false, false]).unwrap();
        let svg = roc_svg("A & B", &[("teacher-<0>".into(), &c, 0.75)]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("stroke-dasharray"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("A &amp; B"));
        assert!(svg.contains("teacher-&lt;0&gt; (AUC = 0.750)"));
    }

    #[test]
    fn box_plot_panels() {
        let cell = |s: &str, t: &str, vals: &[f64]| PerplexityCell {
            student: s.into(),
            teacher: t.into(),
            summary: Summary::of(vals).unwrap(),
            values: vals
                .iter()
                .enumerate()
                .map(|(i, v)| DocPerplexity {
                    doc_id: i.to_string(),
                    perplexity: *v,
                })
                .collect(),
        };
        let mut argmin = BTreeMap::new();
        argmin.insert("s".to_string(), "a".to_string());
        let table = PerplexityTable {
            students: vec!["s".into()],
            teachers: vec!["a".into(), "b".into()],
            cells: vec![cell("s", "a", &[2.0, 3.0, 4.0, 100.0]), cell("s", "b", &[5.0, 6.0, 7.0])],
            argmin_teacher: argmin,
            failures: vec![],
            sample_n: 4,
            seed: 0,
        };
        let svg = perplexity_box_svg(&table);
        assert_eq!(svg.matches("<rect x=").count(), 3);
        assert_eq!(svg.matches("#9ecae1").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 1);
    }
}
