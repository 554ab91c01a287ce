use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::ProjectionProfile;
use crate::error::Result;

pub const PROJECTION_CSV_HEADER: &str = "position,depth,stage,basis,symbol,value";

/// Static bar chart of one profile, zero line in the middle.
pub fn render_svg(p: &ProjectionProfile) -> String {
    let (bar, height, pad) = (6.0, 200.0, 20.0);
    let width = p.values.len() as f64 * bar + 2.0 * pad;
    let scale = p.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mid = pad + height / 2.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" font-family="monospace" font-size="10">"#,
        height + 2.0 * pad
    );
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="12">position {} depth {} {} / {} basis</text>"#,
        p.position,
        p.depth,
        p.stage.name(),
        p.basis.name()
    );
    let _ = writeln!(s, r##"<line x1="{pad}" y1="{mid}" x2="{}" y2="{mid}" stroke="#888"/>"##, width - pad);
    for (k, &v) in p.values.iter().enumerate() {
        let h = v.abs() / scale * height / 2.0;
        let y = if v >= 0.0 { mid - h } else { mid };
        let fill = if v >= 0.0 { "#3465a4" } else { "#cc0000" };
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{y:.3}" width="{:.1}" height="{h:.3}" fill="{fill}"><title>{k}: {v}</title></rect>"#,
            pad + k as f64 * bar,
            bar - 1.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes one CSV row per (profile, symbol) to `csv_path` and, when
/// `svg_dir` is given, one chart per profile. Returns every file written.
pub fn emit_projection_report(profiles: &[ProjectionProfile], csv_path: &Path, svg_dir: Option<&Path>) -> Result<Vec<PathBuf>> {
    let mut csv = format!("{PROJECTION_CSV_HEADER}\n");
    for p in profiles {
        for (k, v) in p.values.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{},{},{k},{v}", p.position, p.depth, p.stage.name(), p.basis.name());
        }
    }
    std::fs::write(csv_path, csv)?;
    let mut written = vec![csv_path.to_path_buf()];
    if let Some(dir) = svg_dir {
        std::fs::create_dir_all(dir)?;
        for p in profiles {
            let path = dir.join(format!("pos{}_depth{}_{}_{}.svg", p.position, p.depth, p.stage.name(), p.basis.name()));
            std::fs::write(&path, render_svg(p))?;
            written.push(path);
        }
    }
    Ok(written)
}
