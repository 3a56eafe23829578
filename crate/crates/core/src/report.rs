//! CSV tables and static SVG charts.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("writing {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ReportError> {
    let err = |source| ReportError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes a CSV with explicit header and string cells.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), ReportError> {
    let err = |source| ReportError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), ReportError> {
    std::fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One bar per label, with optional interval whiskers. Negative values
/// extend below the zero line.
pub fn bar_chart_svg(title: &str, labels: &[String], values: &[f64], intervals: Option<&[(f64, f64)]>) -> String {
    let bar = 18.0;
    let gap = 6.0;
    let (left, top, plot_w) = (180.0, 40.0, 420.0);
    let height = top + labels.len() as f64 * (bar + gap) + 30.0;
    let mut lo = values.iter().copied().fold(0.0, f64::min);
    let mut hi = values.iter().copied().fold(0.0, f64::max);
    if let Some(iv) = intervals {
        for &(a, b) in iv {
            lo = lo.min(a);
            hi = hi.max(b);
        }
    }
    if hi - lo <= 0.0 {
        hi = lo + 1.0;
    }
    let sx = |v: f64| left + (v - lo) / (hi - lo) * plot_w;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{height:.0}" font-family="sans-serif" font-size="12">"#,
        left + plot_w + 60.0
    );
    let _ = writeln!(s, r#"<text x="10" y="20" font-size="14">{}</text>"#, escape(title));
    let zero = sx(0.0);
    let _ = writeln!(
        s,
        r##"<line x1="{zero:.1}" y1="{top}" x2="{zero:.1}" y2="{:.1}" stroke="#333"/>"##,
        height - 30.0
    );
    for (k, (label, &v)) in labels.iter().zip(values).enumerate() {
        let y = top + k as f64 * (bar + gap);
        let (x0, x1) = if v >= 0.0 { (zero, sx(v)) } else { (sx(v), zero) };
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            y + bar * 0.75,
            escape(label)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{x0:.1}" y="{y:.1}" width="{:.1}" height="{bar}" fill="#4c78a8"/>"##,
            (x1 - x0).max(0.5)
        );
        if let Some(&(a, b)) = intervals.and_then(|iv| iv.get(k)) {
            let cy = y + bar / 2.0;
            let _ = writeln!(
                s,
                r##"<line x1="{:.1}" y1="{cy:.1}" x2="{:.1}" y2="{cy:.1}" stroke="#000"/>"##,
                sx(a),
                sx(b)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{v:.3}</text>"#,
            x1.max(zero) + 4.0,
            y + bar * 0.75
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Scatter of two rankings with the identity line; points far from the
/// diagonal are methods the two rankings disagree on.
pub fn rank_scatter_svg(title: &str, labels: &[String], x_rank: &[f64], y_rank: &[f64], x_name: &str, y_name: &str) -> String {
    let size = 400.0;
    let margin = 50.0;
    let n = labels.len().max(1) as f64;
    let pos = |r: f64| margin + (r - 1.0) / (n - 1.0).max(1.0) * size;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0:.0}" height="{0:.0}" font-family="sans-serif" font-size="11">"#,
        size + 2.0 * margin
    );
    let _ = writeln!(s, r#"<text x="10" y="20" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r##"<line x1="{margin}" y1="{margin}" x2="{0}" y2="{0}" stroke="#999" stroke-dasharray="4"/>"##,
        margin + size
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.0}" y="{:.0}" text-anchor="middle">{}</text>"#,
        margin + size / 2.0,
        size + 2.0 * margin - 10.0,
        escape(x_name)
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.0}" transform="rotate(-90 15 {:.0})" text-anchor="middle">{}</text>"#,
        margin + size / 2.0,
        margin + size / 2.0,
        escape(y_name)
    );
    for ((label, &rx), &ry) in labels.iter().zip(x_rank).zip(y_rank) {
        let (cx, cy) = (pos(rx), pos(ry));
        let _ = writeln!(s, r##"<circle cx="{cx:.1}" cy="{cy:.1}" r="3" fill="#e45756"/>"##);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, cx + 5.0, cy - 4.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}
