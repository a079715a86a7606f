//! Text checkpoints: a `#dims` header, then per parameter a `name shape...`
//! line followed by a line of values.

use std::fmt::Write as _;
use std::path::Path;

use sspc_core::nn::Tensor;
use sspc_core::{ModelDims, ModelParams};

use crate::error::{read_text, write_text, Error, FormatError};

pub fn format_checkpoint(model: &ModelParams) -> String {
    let d = model.dims;
    let mut out = format!("#dims hidden={} embed={} classes={} gnn_steps={}\n", d.hidden, d.embed, d.classes, d.gnn_steps);
    for p in model.params.iter() {
        out.push_str(&p.name);
        for s in p.tensor.shape() {
            write!(out, " {s}").unwrap();
        }
        out.push('\n');
        let values: Vec<String> = p.tensor.data().iter().map(|v| v.to_string()).collect();
        out.push_str(&values.join(" "));
        out.push('\n');
    }
    out
}

fn parse_dims(line: &str, line_no: usize) -> Result<ModelDims, FormatError> {
    let rest = line.strip_prefix("#dims").ok_or_else(|| FormatError::new(line_no, "missing `#dims` header"))?;
    let mut dims = ModelDims::new(0);
    let mut seen = 0;
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| FormatError::new(line_no, format!("`{kv}` is not key=value")))?;
        let v: usize = v.parse().map_err(|_| FormatError::new(line_no, format!("`{kv}` needs an integer")))?;
        match k {
            "hidden" => dims.hidden = v,
            "embed" => dims.embed = v,
            "classes" => dims.classes = v,
            "gnn_steps" => dims.gnn_steps = v,
            _ => return Err(FormatError::new(line_no, format!("unknown dimension `{k}`"))),
        }
        seen += 1;
    }
    if seen != 4 {
        return Err(FormatError::new(line_no, "`#dims` needs hidden, embed, classes and gnn_steps"));
    }
    Ok(dims)
}

/// Parsed `#dims` and `(name, tensor)` blocks, without layout validation.
pub fn parse_checkpoint(text: &str) -> Result<(ModelDims, Vec<(String, Tensor)>), FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let (n, header) = lines.next().ok_or_else(|| FormatError::new(0, "empty checkpoint"))?;
    let dims = parse_dims(header, n)?;
    let mut stored = Vec::new();
    while let Some((n, head)) = lines.next() {
        let mut words = head.split_whitespace();
        let name = words.next().unwrap_or_default().to_string();
        let shape: Vec<usize> = words
            .map(|w| w.parse().map_err(|_| FormatError::new(n, format!("bad dimension `{w}` for `{name}`"))))
            .collect::<Result<_, _>>()?;
        let (vn, body) = lines.next().ok_or_else(|| FormatError::new(n, format!("`{name}` has no values line")))?;
        let data: Vec<f64> = body
            .split_whitespace()
            .map(|w| w.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| FormatError::new(vn, format!("bad value `{w}`"))))
            .collect::<Result<_, _>>()?;
        let tensor = Tensor::new(&shape, data).map_err(|e| FormatError::new(vn, format!("`{name}`: {e}")))?;
        stored.push((name, tensor));
    }
    Ok((dims, stored))
}

pub fn save_checkpoint(model: &ModelParams, path: &Path) -> Result<(), Error> {
    write_text(path, &format_checkpoint(model))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, Error> {
    let (dims, stored) = parse_checkpoint(&read_text(path)?).map_err(|e| Error::parse(path, e))?;
    ModelParams::from_tensors(dims, stored).map_err(|e| Error::Checkpoint { path: path.into(), detail: e.to_string() })
}
