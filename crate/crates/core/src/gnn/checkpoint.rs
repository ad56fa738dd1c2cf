//! Model checkpoints: a versioned text header followed by named tensors stored
//! as little-endian 64-bit floats.
//!
//! ```text
//! rigidgraph-model-v1
//! latent=<n>
//! layers=<n>
//! history=<n>
//! tensors=<count>
//! <name> <rows> <cols>\n<rows*cols*8 bytes>   (repeated)
//! ```

use std::path::Path;

use crate::error::{Error, Result};

use super::model::{Architecture, GnnModel, Normalizer, Stats};
use super::tape::Mat;
use super::train::AdamState;

pub const CHECKPOINT_HEADER: &str = "rigidgraph-model-v1";

fn push_tensor(out: &mut Vec<u8>, name: &str, m: &Mat) {
    out.extend_from_slice(format!("{name} {} {}\n", m.rows, m.cols).as_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn vec_mat(v: &[f64]) -> Mat {
    Mat::from_vec(1, v.len(), v.to_vec())
}

/// Serialize a model and, optionally, its optimizer state.
pub fn encode(model: &GnnModel, optimizer: Option<&AdamState>) -> Vec<u8> {
    let mut tensors: Vec<(String, Mat)> = model.param_names.iter().cloned().zip(model.params.iter().cloned()).collect();
    for (name, s) in model.norm.groups() {
        tensors.push((format!("norm.{name}.mean"), vec_mat(&s.mean)));
        tensors.push((format!("norm.{name}.std"), vec_mat(&s.std)));
    }
    if let Some(a) = optimizer {
        tensors.push(("adam.step".into(), vec_mat(&[a.step as f64])));
        for (k, name) in model.param_names.iter().enumerate() {
            tensors.push((format!("adam.m.{name}"), a.m[k].clone()));
            tensors.push((format!("adam.v.{name}"), a.v[k].clone()));
        }
    }
    let a = model.arch;
    let mut out = format!("{CHECKPOINT_HEADER}\nlatent={}\nlayers={}\nhistory={}\ntensors={}\n", a.latent, a.layers, a.history, tensors.len()).into_bytes();
    for (name, m) in &tensors {
        push_tensor(&mut out, name, m);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format { path: self.path.to_path_buf(), line: self.line, msg: msg.into() }
    }

    fn line(&mut self) -> Result<&str> {
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| self.err("unexpected end of file"))?;
        self.pos += end + 1;
        self.line += 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| self.err("header line is not UTF-8"))
    }

    fn key(&mut self, key: &str) -> Result<usize> {
        let l = self.line()?.to_string();
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| self.err(format!("expected {key}=<integer>, found {l:?}")))
    }

    fn tensor(&mut self) -> Result<(String, Mat)> {
        let l = self.line()?.to_string();
        let parts: Vec<&str> = l.split(' ').collect();
        let (Some(name), Some(Ok(rows)), Some(Ok(cols))) = (parts.first(), parts.get(1).map(|s| s.parse::<usize>()), parts.get(2).map(|s| s.parse::<usize>())) else {
            return Err(self.err(format!("bad tensor header {l:?}")));
        };
        let n = rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| self.err("tensor too large"))?;
        if self.pos + n > self.bytes.len() {
            return Err(self.err(format!("tensor {name} is truncated")));
        }
        let data = self.bytes[self.pos..self.pos + n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        self.pos += n;
        Ok((name.to_string(), Mat::from_vec(rows, cols, data)))
    }
}

/// Parse checkpoint bytes; `path` is used in error messages only.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(GnnModel, Option<AdamState>)> {
    let mut r = Reader { bytes, pos: 0, line: 0, path };
    let header = r.line().map(str::to_string).unwrap_or_default();
    if header != CHECKPOINT_HEADER {
        return Err(r.err(format!("expected header {CHECKPOINT_HEADER:?}, found {header:?}")));
    }
    let arch = Architecture { latent: r.key("latent")?, layers: r.key("layers")?, history: r.key("history")? };
    let count = r.key("tensors")?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        tensors.push(r.tensor()?);
    }
    let template = GnnModel::new(arch, 0).map_err(|e| r.err(e.to_string()))?;
    let np = template.params.len();
    if tensors.len() < np + 14 {
        return Err(r.err(format!("expected at least {} tensors, found {}", np + 14, tensors.len())));
    }
    let mut rest = tensors.split_off(np);
    let mut norm = Normalizer::identity(arch.history);
    let mut norm_tensors = rest.drain(..14);
    for (name, s) in norm.groups_mut() {
        let (mn, mean) = norm_tensors.next().expect("14 tensors");
        let (sn, std) = norm_tensors.next().expect("14 tensors");
        if mn != format!("norm.{name}.mean") || sn != format!("norm.{name}.std") {
            return Err(r.err(format!("expected normalization tensors for {name}, found {mn}, {sn}")));
        }
        *s = Stats { mean: mean.data, std: std.data };
    }
    drop(norm_tensors);
    let model = GnnModel::from_parts(arch, norm, tensors).map_err(|e| r.err(e.to_string()))?;
    let optimizer = if rest.is_empty() {
        None
    } else {
        if rest.len() != 1 + 2 * np || rest[0].0 != "adam.step" {
            return Err(r.err("optimizer section is malformed"));
        }
        let step = rest[0].1.data.first().copied().unwrap_or(0.0) as usize;
        let mut m = Vec::with_capacity(np);
        let mut v = Vec::with_capacity(np);
        for k in 0..np {
            let (mn, mm) = &rest[1 + 2 * k];
            let (vn, vm) = &rest[2 + 2 * k];
            let want = &model.param_names[k];
            let shape = (model.params[k].rows, model.params[k].cols);
            if *mn != format!("adam.m.{want}") || *vn != format!("adam.v.{want}") || (mm.rows, mm.cols) != shape || (vm.rows, vm.cols) != shape {
                return Err(r.err(format!("optimizer state for {want} is malformed")));
            }
            m.push(mm.clone());
            v.push(vm.clone());
        }
        Some(AdamState { step, m, v })
    };
    Ok((model, optimizer))
}

pub fn save(path: &Path, model: &GnnModel, optimizer: Option<&AdamState>) -> Result<()> {
    std::fs::write(path, encode(model, optimizer)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(GnnModel, Option<AdamState>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
