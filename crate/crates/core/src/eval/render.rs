//! Deterministic SVG figures and CSV tables.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::NUM_CLASSES;

use super::confusion::ConfusionMatrix;
use super::tsne::Embedding;

const SIZE: f64 = 800.0;

/// One color per digit class.
pub const CLASS_COLORS: [&str; NUM_CLASSES] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"800\" viewBox=\"0 0 800 800\" font-family=\"sans-serif\">\n");
    out.push_str("<rect width=\"800\" height=\"800\" fill=\"#ffffff\"/>\n");
    let _ = writeln!(
        out,
        "<text x=\"400\" y=\"36\" text-anchor=\"middle\" font-size=\"22\">{}</text>",
        escape(title)
    );
}

/// Row-normalized heatmap with the value printed in every cell.
pub fn confusion_svg(cm: &ConfusionMatrix, title: &str) -> String {
    let norm = cm.normalized();
    let (left, top, cell) = (110.0, 90.0, 64.0);
    let mut out = String::new();
    header(&mut out, title);
    for (t, row) in norm.iter().enumerate() {
        for (p, &v) in row.iter().enumerate() {
            let (x, y) = (left + p as f64 * cell, top + t as f64 * cell);
            // White to dark blue.
            let shade = |full: f64| (255.0 - v * (255.0 - full)).round() as u8;
            let fill = format!("#{:02x}{:02x}{:02x}", shade(8.0), shade(48.0), shade(107.0));
            let ink = if v > 0.5 { "#ffffff" } else { "#000000" };
            let _ = writeln!(
                out,
                "<rect x=\"{x:.0}\" y=\"{y:.0}\" width=\"{cell:.0}\" height=\"{cell:.0}\" fill=\"{fill}\" stroke=\"#cccccc\"/>"
            );
            let _ = writeln!(
                out,
                "<text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"middle\" font-size=\"15\" fill=\"{ink}\">{v:.2}</text>",
                x + cell / 2.0,
                y + cell / 2.0 + 5.0
            );
        }
    }
    for k in 0..NUM_CLASSES {
        let c = k as f64 * cell + cell / 2.0;
        let _ = writeln!(
            out,
            "<text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"middle\" font-size=\"16\">{k}</text>",
            left + c,
            top - 10.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"end\" font-size=\"16\">{k}</text>",
            left - 12.0,
            top + c + 5.0
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"middle\" font-size=\"16\">predicted</text>",
        left + 5.0 * cell,
        top + 10.0 * cell + 36.0
    );
    let _ = writeln!(
        out,
        "<text x=\"40\" y=\"{:.0}\" text-anchor=\"middle\" font-size=\"16\" transform=\"rotate(-90 40 {:.0})\">true</text>",
        top + 5.0 * cell,
        top + 5.0 * cell
    );
    out.push_str("</svg>\n");
    out
}

/// Scatter plot colored by class. When `domains` is given, points of
/// domain 1 are drawn as hollow squares and domain 0 as filled circles.
pub fn embedding_svg(emb: &Embedding, domains: Option<&[u8]>, title: &str) -> String {
    let (margin, top) = (60.0, 70.0);
    let (mut min_x, mut max_x, mut min_y, mut max_y) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &emb.points {
        min_x = min_x.min(p[0]);
        max_x = max_x.max(p[0]);
        min_y = min_y.min(p[1]);
        max_y = max_y.max(p[1]);
    }
    let span = (max_x - min_x).max(max_y - min_y).max(1e-12);
    let plot = SIZE - margin - margin.max(top);
    let sx = |v: f64| margin + (v - min_x) / span * plot;
    let sy = |v: f64| top + (v - min_y) / span * plot;

    let mut out = String::new();
    header(&mut out, title);
    for (i, (p, &label)) in emb.points.iter().zip(&emb.labels).enumerate() {
        let color = CLASS_COLORS[label % NUM_CLASSES];
        let (x, y) = (sx(p[0]), sy(p[1]));
        if domains.is_some_and(|d| d[i] == 1) {
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"6\" height=\"6\" fill=\"none\" stroke=\"{color}\"/>",
                x - 3.0,
                y - 3.0
            );
        } else {
            let _ = writeln!(out, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{color}\"/>");
        }
    }
    for (k, color) in CLASS_COLORS.iter().enumerate() {
        let y = 80.0 + k as f64 * 22.0;
        let _ = writeln!(out, "<circle cx=\"760\" cy=\"{y:.0}\" r=\"6\" fill=\"{color}\"/>");
        let _ = writeln!(out, "<text x=\"775\" y=\"{:.0}\" font-size=\"14\">{k}</text>", y + 5.0);
    }
    out.push_str("</svg>\n");
    out
}

/// Comma-separated text with a header row and LF line endings.
pub fn csv_string<S: AsRef<str>>(header: &[S], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(header.iter().map(AsRef::as_ref)).map_err(fail)?;
    for row in rows {
        w.write_record(row).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Normalized confusion view as CSV: a `true` column then one column per
/// predicted class.
pub fn confusion_csv(cm: &ConfusionMatrix) -> Result<String> {
    let mut header = vec!["true".to_string()];
    header.extend((0..NUM_CLASSES).map(|k| format!("pred_{k}")));
    let rows: Vec<Vec<String>> = cm
        .normalized()
        .iter()
        .enumerate()
        .map(|(t, row)| {
            std::iter::once(t.to_string())
                .chain(row.iter().map(|v| v.to_string()))
                .collect()
        })
        .collect();
    csv_string(&header, &rows)
}

pub fn confusion_counts_csv(cm: &ConfusionMatrix) -> Result<String> {
    let mut header = vec!["true".to_string()];
    header.extend((0..NUM_CLASSES).map(|k| format!("pred_{k}")));
    let rows: Vec<Vec<String>> = cm
        .counts
        .iter()
        .enumerate()
        .map(|(t, row)| {
            std::iter::once(t.to_string())
                .chain(row.iter().map(|v| v.to_string()))
                .collect()
        })
        .collect();
    csv_string(&header, &rows)
}

pub fn embedding_csv(emb: &Embedding, domains: Option<&[u8]>) -> Result<String> {
    let rows: Vec<Vec<String>> = emb
        .points
        .iter()
        .zip(&emb.labels)
        .enumerate()
        .map(|(i, (p, l))| {
            vec![
                p[0].to_string(),
                p[1].to_string(),
                l.to_string(),
                domains.map_or(0, |d| d[i]).to_string(),
            ]
        })
        .collect();
    csv_string(&["x", "y", "label", "domain"], &rows)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_heatmap_has_ten_ones() {
        let labels: Vec<usize> = (0..10).collect();
        let cm = ConfusionMatrix::from_predictions(&labels, &labels).unwrap();
        let svg = confusion_svg(&cm, "identity");
        assert_eq!(svg.matches(">1.00<").count(), 10);
        assert_eq!(svg.matches(">0.00<").count(), 90);
        assert!(svg.contains("viewBox=\"0 0 800 800\""));
        assert_eq!(svg, confusion_svg(&cm, "identity"));
    }

    #[test]
    fn csv_quotes_and_line_endings() {
        let s = csv_string(&["a", "b"], &[vec!["1".into(), "x,y".into()]]).unwrap();
        assert_eq!(s, "a,b\n1,\"x,y\"\n");
    }
}
