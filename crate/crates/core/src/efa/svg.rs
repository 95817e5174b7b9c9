use std::fmt::Write as _;

use super::FactorGraph;

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f", "#d62728"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Line plot of eigenvalues with the Kaiser line at 1.
pub fn scree_svg(eigenvalues: &[f64], title: &str) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let n = eigenvalues.len().max(1);
    let top = eigenvalues.iter().copied().fold(1.0, f64::max).ceil();
    let x = |i: usize| m + (w - 2.0 * m) * i as f64 / (n.max(2) - 1) as f64;
    let y = |v: f64| h - m - (h - 2.0 * m) * v / top;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m);
    let _ = writeln!(
        s,
        r##"<line x1="{m}" y1="{y1:.1}" x2="{}" y2="{y1:.1}" stroke="#d62728" stroke-dasharray="6,4"/>"##,
        w - m,
        y1 = y(1.0)
    );
    for t in 0..=(top as usize) {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{t}</text>"#, m - 6.0, y(t as f64) + 4.0);
    }
    let pts: Vec<String> = eigenvalues.iter().enumerate().map(|(i, &v)| format!("{:.1},{:.1}", x(i), y(v))).collect();
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##, pts.join(" "));
    for (i, &v) in eigenvalues.iter().enumerate() {
        let _ = writeln!(s, r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="#1f77b4"><title>{}: {v:.3}</title></circle>"##, x(i), y(v), i + 1);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">factor</text>"#, w / 2.0, h - 12.0);
    s.push_str("</svg>\n");
    s
}

/// Circular item-factor graph: items on an outer ring colored by their
/// theoretical dimension (`dimension_of[i]` indexes `dimension_names`),
/// factors as hubs on an inner ring. Positive edges are gray and solid,
/// negative edges red and dashed.
pub fn graph_svg(graph: &FactorGraph, dimension_of: &[usize], dimension_names: &[String], title: &str) -> String {
    let size = 720.0;
    let c = size / 2.0;
    let outer = size * 0.40;
    let inner = if graph.k > 1 { size * 0.15 } else { 0.0 };
    let p = graph.items.len().max(1);
    let item_pos = |i: usize| {
        let a = std::f64::consts::TAU * i as f64 / p as f64 - std::f64::consts::FRAC_PI_2;
        (c + outer * a.cos(), c + outer * a.sin(), a)
    };
    let hub_pos = |j: usize| {
        let a = std::f64::consts::TAU * j as f64 / graph.k.max(1) as f64 - std::f64::consts::FRAC_PI_2;
        (c + inner * a.cos(), c + inner * a.sin())
    };
    let index: std::collections::HashMap<&str, usize> =
        graph.items.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="10">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{c}" y="18" text-anchor="middle" font-size="14">{}</text>"#, escape(title));
    for e in &graph.edges {
        let Some(&i) = index.get(e.item.as_str()) else { continue };
        let (x1, y1, _) = item_pos(i);
        let (x2, y2) = hub_pos(e.factor);
        let width = 0.5 + 3.0 * (e.weight.abs() - graph.threshold).max(0.0) / (1.0 - graph.threshold).max(1e-9);
        let style = if e.weight >= 0.0 { r##"stroke="#888888""## } else { r##"stroke="#d62728" stroke-dasharray="5,3""## };
        let _ = writeln!(
            s,
            r#"<line x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" {style} stroke-width="{width:.2}"><title>{} – F{}: {:.2}</title></line>"#,
            escape(&e.item),
            e.factor + 1,
            e.weight
        );
    }
    for (i, id) in graph.items.iter().enumerate() {
        let (x, y, a) = item_pos(i);
        let d = dimension_of.get(i).copied().unwrap_or(0);
        let color = PALETTE[d % PALETTE.len()];
        let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="7" fill="{color}"/>"#);
        let (lx, ly) = (c + (outer + 18.0) * a.cos(), c + (outer + 18.0) * a.sin());
        let _ = writeln!(s, r#"<text x="{lx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, ly + 3.0, escape(id));
    }
    for j in 0..graph.k {
        let (x, y) = hub_pos(j);
        let _ = writeln!(s, r##"<circle cx="{x:.1}" cy="{y:.1}" r="14" fill="#f2f2f2" stroke="black"/>"##);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="11">F{}</text>"#, y + 4.0, j + 1);
    }
    for (d, name) in dimension_names.iter().enumerate() {
        let y = size - 14.0 * (dimension_names.len() - d) as f64 - 6.0;
        let _ = writeln!(s, r#"<rect x="10" y="{:.1}" width="10" height="10" fill="{}"/>"#, y - 9.0, PALETTE[d % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="26" y="{y:.1}">{}</text>"#, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efa::graph_from_loadings;
    use nalgebra::DMatrix;

    #[test]
    fn graph_svg_styles_edges_by_sign() {
        let l = DMatrix::from_row_slice(3, 2, &[0.7, 0.0, -0.5, 0.0, 0.0, 0.8]);
        let ids: Vec<String> = vec!["a".into(), "b".into(), "c<1>".into()];
        let g = graph_from_loadings(&l, &ids, 0.4);
        let svg = graph_svg(&g, &[0, 0, 1], &["X".into(), "Y".into()], "test");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("stroke-dasharray").count(), 1);
        assert_eq!(svg.matches(r##"stroke="#888888""##).count(), 2);
        assert!(svg.contains("c&lt;1&gt;"));
    }

    #[test]
    fn scree_svg_has_all_points() {
        let svg = scree_svg(&[3.2, 1.4, 0.9, 0.5], "scree");
        assert_eq!(svg.matches("<circle").count(), 4);
        assert!(svg.contains("stroke-dasharray"));
    }
}
