//! Plain XYZ files: a particle count, a comment line, then `element x y z` rows in Å.

use std::fmt::Write as _;
use std::path::Path;

use shakegen::Conformation;

use crate::error::HarnessError;

pub const DEFAULT_ELEMENT: &str = "C";

/// Fixed-precision rendering, so identical coordinates give identical bytes.
pub fn format_xyz(x: &Conformation, comment: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", x.len());
    let _ = writeln!(out, "{}", comment.replace('\n', " "));
    for (i, p) in x.positions().iter().enumerate() {
        let element = x.labels().map(|l| l[i].as_str()).unwrap_or(DEFAULT_ELEMENT);
        let _ = writeln!(out, "{element} {:.10} {:.10} {:.10}", p.x, p.y, p.z);
    }
    out
}

pub fn write_xyz(path: &Path, x: &Conformation, comment: &str) -> Result<(), HarnessError> {
    std::fs::write(path, format_xyz(x, comment)).map_err(|e| HarnessError::io(path, e))
}

/// Parses one frame. Element labels are kept unless every row uses the default.
pub fn parse_xyz(text: &str) -> Result<Conformation, String> {
    let mut lines = text.lines();
    let count: usize = lines
        .next()
        .ok_or("empty file")?
        .trim()
        .parse()
        .map_err(|_| "first line must be the particle count".to_string())?;
    lines.next().ok_or("missing comment line")?;
    let mut rows = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for k in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| format!("expected {count} particles, found {k}"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(format!("line {}: expected `element x y z`", k + 3));
        }
        let mut r = [0.0; 3];
        for (c, f) in fields[1..].iter().enumerate() {
            r[c] = f
                .parse()
                .map_err(|_| format!("line {}: bad coordinate `{f}`", k + 3))?;
        }
        rows.push(r);
        labels.push(fields[0].to_string());
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(format!("trailing content after {count} particles"));
    }
    let x = Conformation::from_rows(&rows).map_err(|e| e.to_string())?;
    if labels.iter().all(|l| l == DEFAULT_ELEMENT) {
        Ok(x)
    } else {
        x.with_labels(labels).map_err(|e| e.to_string())
    }
}

pub fn read_xyz(path: &Path) -> Result<Conformation, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_xyz(&text).map_err(|m| HarnessError::Data(format!("{}: {m}", path.display())))
}
