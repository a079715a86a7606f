//! Plain-text point clouds: an optional `#classes k` header, then one
//! `x y z r g b label` line per point. Other `#` lines are comments.

use std::fmt::Write as _;
use std::path::Path;

use sspc_core::PointCloud;

use crate::error::{read_text, write_text, Error, FormatError};

pub fn parse_cloud(text: &str) -> Result<PointCloud, FormatError> {
    let mut declared: Option<(usize, usize)> = None;
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    let mut label_lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut words = rest.split_whitespace();
            if words.next() == Some("classes") {
                let k = words
                    .next()
                    .and_then(|w| w.parse::<usize>().ok())
                    .filter(|&k| k > 0)
                    .ok_or_else(|| FormatError::new(line_no, "`#classes` needs a positive integer"))?;
                if words.next().is_some() {
                    return Err(FormatError::new(line_no, "trailing text after `#classes k`"));
                }
                declared = Some((k, line_no));
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(FormatError::new(line_no, format!("expected 7 fields `x y z r g b label`, found {}", fields.len())));
        }
        let mut v = [0.0; 6];
        for (slot, field) in v.iter_mut().zip(&fields[..6]) {
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| FormatError::new(line_no, format!("`{field}` is not a finite number")))?;
        }
        let label = fields[6].parse::<usize>().map_err(|_| FormatError::new(line_no, format!("`{}` is not a class id", fields[6])))?;
        positions.push([v[0], v[1], v[2]]);
        colors.push([v[3], v[4], v[5]]);
        labels.push(label);
        label_lines.push(line_no);
    }
    if labels.is_empty() {
        return Err(FormatError::new(0, "no points"));
    }
    let classes = match declared {
        Some((k, _)) => k,
        None => 1 + labels.iter().max().copied().unwrap_or(0),
    };
    if let Some(i) = labels.iter().position(|&l| l >= classes) {
        return Err(FormatError::new(label_lines[i], format!("label {} out of range for {classes} classes", labels[i])));
    }
    PointCloud::new(positions, colors, labels, classes).map_err(|e| FormatError::new(0, e.to_string()))
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn format_cloud(cloud: &PointCloud) -> String {
    let mut out = format!("#classes {}\n", cloud.num_classes());
    for ((p, c), l) in cloud.positions().iter().zip(cloud.colors()).zip(cloud.gt_labels()) {
        writeln!(out, "{} {} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2], l).unwrap();
    }
    out
}

pub fn load_cloud(path: &Path) -> Result<PointCloud, Error> {
    parse_cloud(&read_text(path)?).map_err(|e| Error::parse(path, e))
}

pub fn save_cloud(cloud: &PointCloud, path: &Path) -> Result<(), Error> {
    write_text(path, &format_cloud(cloud))
}
