//! Grayscale SVG rendering of an attention grid.

use std::fmt::Write;

const CELL_W: usize = 72;
const CELL_H: usize = 24;
const LABEL_W: usize = 160;
const HEADER_H: usize = 40;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Rows are relations, columns are mentions; darker means more attention.
pub fn render_svg(relations: &[String], mentions: &[String], weights: &[Vec<f64>]) -> String {
    let width = LABEL_W + CELL_W * mentions.len();
    let height = HEADER_H + CELL_H * relations.len();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    for (j, m) in mentions.iter().enumerate() {
        let x = LABEL_W + j * CELL_W + CELL_W / 2;
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            HEADER_H - 10,
            escape(m)
        );
    }
    for (r, (name, row)) in relations.iter().zip(weights).enumerate() {
        let y = HEADER_H + r * CELL_H;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LABEL_W - 6,
            y + CELL_H / 2 + 4,
            escape(name)
        );
        for (j, &a) in row.iter().enumerate() {
            let level = (255.0 * (1.0 - a.clamp(0.0, 1.0))).round() as u8;
            let x = LABEL_W + j * CELL_W;
            let _ = writeln!(
                svg,
                r#"<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="rgb({level},{level},{level})" stroke="white"><title>{a:.4}</title></rect>"#
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
