//! Versioned binary checkpoints: a JSON header (architecture config,
//! vocabulary, schedule, anything serde) followed by named raw f32 tensors.

use super::{Module, ParamSlot};
use crate::error::{DesigenError, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"DSGN";
const VERSION: u32 = 1;

fn ckpt_err(path: &Path, detail: impl Into<String>) -> DesigenError {
    DesigenError::Checkpoint { path: path.display().to_string(), detail: detail.into() }
}

pub fn save<M: Module, H: serde::Serialize>(model: &mut M, header: &H, path: &Path) -> Result<()> {
    let header_json =
        serde_json::to_vec(header).map_err(|e| ckpt_err(path, format!("header encode: {e}")))?;
    let mut entries: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    model.visit_params("", &mut |name: &str, p: &mut dyn ParamSlot| {
        entries.push((
            name.to_string(),
            p.value().shape().to_vec(),
            p.value().iter().copied().collect(),
        ));
    });
    let file = std::fs::File::create(path).map_err(|e| DesigenError::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e: std::io::Error| DesigenError::io(path.display().to_string(), e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(io)?;
    w.write_u64::<LittleEndian>(header_json.len() as u64).map_err(io)?;
    w.write_all(&header_json).map_err(io)?;
    w.write_u64::<LittleEndian>(entries.len() as u64).map_err(io)?;
    for (name, shape, data) in &entries {
        w.write_u32::<LittleEndian>(name.len() as u32).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_u32::<LittleEndian>(shape.len() as u32).map_err(io)?;
        for d in shape {
            w.write_u64::<LittleEndian>(*d as u64).map_err(io)?;
        }
        for v in data {
            w.write_f32::<LittleEndian>(*v).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads the JSON header without touching the tensors.
pub fn load_header<H: serde::de::DeserializeOwned>(path: &Path) -> Result<H> {
    let file = std::fs::File::open(path).map_err(|e| DesigenError::io(path.display().to_string(), e))?;
    let mut r = std::io::BufReader::new(file);
    let io = |e: std::io::Error| DesigenError::io(path.display().to_string(), e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(ckpt_err(path, "bad magic; not a checkpoint file"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != VERSION {
        return Err(ckpt_err(path, format!("unsupported version {version}")));
    }
    let hlen = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf).map_err(io)?;
    serde_json::from_slice(&hbuf).map_err(|e| ckpt_err(path, format!("header decode: {e}")))
}

/// Fills `model`'s parameters from the checkpoint. The model must already be
/// constructed with the architecture recorded in the header.
pub fn load_into<M: Module>(model: &mut M, path: &Path) -> Result<()> {
    let file = std::fs::File::open(path).map_err(|e| DesigenError::io(path.display().to_string(), e))?;
    let mut r = std::io::BufReader::new(file);
    let io = |e: std::io::Error| DesigenError::io(path.display().to_string(), e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(ckpt_err(path, "bad magic; not a checkpoint file"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != VERSION {
        return Err(ckpt_err(path, format!("unsupported version {version}")));
    }
    let hlen = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf).map_err(io)?;
    let n = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let mut tensors: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::with_capacity(n);
    for _ in 0..n {
        let nlen = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut nbuf = vec![0u8; nlen];
        r.read_exact(&mut nbuf).map_err(io)?;
        let name = String::from_utf8(nbuf).map_err(|e| ckpt_err(path, format!("tensor name: {e}")))?;
        let ndim = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        let mut numel = 1usize;
        for _ in 0..ndim {
            let d = r.read_u64::<LittleEndian>().map_err(io)? as usize;
            numel *= d;
            shape.push(d);
        }
        let mut data = vec![0f32; numel];
        r.read_f32_into::<LittleEndian>(&mut data).map_err(io)?;
        tensors.insert(name, (shape, data));
    }
    let mut missing: Vec<String> = Vec::new();
    let mut used = 0usize;
    let mut shape_err: Option<String> = None;
    model.visit_params("", &mut |name: &str, p: &mut dyn ParamSlot| {
        match tensors.get(name) {
            Some((shape, data)) => {
                used += 1;
                if p.value().shape() != shape.as_slice() {
                    shape_err.get_or_insert(format!(
                        "tensor {name}: shape {:?} in file vs {:?} in model",
                        shape,
                        p.value().shape()
                    ));
                    return;
                }
                for (dst, src) in p.value_mut().iter_mut().zip(data.iter()) {
                    *dst = *src;
                }
            }
            None => missing.push(name.to_string()),
        }
    });
    if let Some(e) = shape_err {
        return Err(ckpt_err(path, e));
    }
    if !missing.is_empty() {
        return Err(ckpt_err(path, format!("missing tensors: {}", missing.join(", "))));
    }
    if used != tensors.len() {
        return Err(ckpt_err(path, format!("{} unused tensors in file", tensors.len() - used)));
    }
    Ok(())
}
