//! Minimal SVG heatmap for link matrices.

use std::fmt::Write as _;

use crate::links::LinkMatrix;

const CELL: usize = 28;
const LABEL: usize = 110;
const LEGEND: usize = 60;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

/// White-to-dark-blue ramp over `t` in [0, 1].
fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(255.0, 8.0),
        lerp(255.0, 48.0),
        lerp(255.0, 107.0)
    )
}

/// Renders one rectangle per cell with a linear colour scale between the
/// matrix minimum and maximum (both annotated). Undefined cells are grey.
pub fn render_svg(m: &LinkMatrix) -> String {
    let k = m.genres.len();
    let defined = m.values.iter().flatten().filter_map(|v| *v);
    let (min, max) = defined.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (min, max) = if min.is_finite() { (min, max) } else { (0.0, 0.0) };
    let span = max - min;
    let width = LABEL + k * CELL + LEGEND;
    let height = LABEL + k * CELL + 40;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(&m.measure.to_string()));
    for (c, g) in m.genres.iter().enumerate() {
        let x = LABEL + c * CELL + CELL / 2;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" transform="rotate(-60 {x} {})" text-anchor="start">{}</text>"#,
            LABEL - 4,
            LABEL - 4,
            escape(g)
        );
    }
    for (r, g) in m.genres.iter().enumerate() {
        let y = LABEL + r * CELL;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LABEL - 4,
            y + CELL / 2 + 3,
            escape(g)
        );
        for c in 0..k {
            let x = LABEL + c * CELL;
            let (fill, label) = match m.values[r][c] {
                Some(v) => {
                    let t = if span > 0.0 { (v - min) / span } else { 1.0 };
                    (color(t), format!("{v:.6}"))
                }
                None => ("#cccccc".to_string(), "missing".to_string()),
            };
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}"><title>{} / {}: {label}</title></rect>"#,
                escape(g),
                escape(&m.genres[c])
            );
        }
    }
    let lx = LABEL + k * CELL + 10;
    let _ = writeln!(
        s,
        r#"<rect x="{lx}" y="{LABEL}" width="14" height="14" fill="{}"/><text x="{}" y="{}">max {max:.6}</text>"#,
        color(1.0),
        lx + 18,
        LABEL + 11
    );
    let _ = writeln!(
        s,
        r#"<rect x="{lx}" y="{}" width="14" height="14" fill="{}"/><text x="{}" y="{}">min {min:.6}</text>"#,
        LABEL + 20,
        color(0.0),
        lx + 18,
        LABEL + 31
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::links::{DirectionConvention, Measure};
    use std::collections::BTreeMap;

    #[test]
    fn one_rect_per_cell_plus_legend() {
        let m = LinkMatrix {
            measure: Measure::Jaccard,
            genres: vec!["A".into(), "B&C".into()],
            values: vec![vec![Some(1.0), Some(0.25)], vec![Some(0.25), None]],
            direction_convention: DirectionConvention::Symmetric,
            dataset_fingerprint: String::new(),
            metadata: BTreeMap::new(),
        };
        let svg = render_svg(&m);
        assert_eq!(svg.matches("<rect").count(), 4 + 2);
        assert!(svg.contains("max 1.000000"));
        assert!(svg.contains("min 0.250000"));
        assert!(svg.contains("B&amp;C"));
        assert!(svg.contains("#cccccc"));
    }
}
