//! Binary checkpoint format.
//!
//! ```text
//! "CDAE" | version u32 | header JSON (u32 length + UTF-8) | tensor count u32
//! per tensor: name (u32 length + UTF-8) | ndim u32 | dims u32 × ndim | f32 data
//! ```
//!
//! All integers and floats are little-endian. Model tensors come first,
//! followed by the Adam moments under `adam.ae.{m,v}.` and
//! `adam.disc.{m,v}.` prefixes.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{LossBundle, ModelParams};
use crate::optim::AdamState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CDAE";
pub const FORMAT_VERSION: u32 = 1;

/// A complete, resumable training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams<f32>,
    pub opt_ae: AdamState,
    pub opt_disc: AdamState,
    pub global_step: u64,
    /// Per-term running means over every step so far.
    pub loss_means: LossBundle,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    global_step: u64,
    loss_means: LossBundle,
    adam_ae: AdamState,
    adam_disc: AdamState,
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LittleEndian>(s.len() as u32).expect("vec write");
    out.extend_from_slice(s.as_bytes());
}

fn read_str(r: &mut Cursor<&[u8]>, what: &str) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(Error::Format(format!(
            "{what} length {len} runs past the end of the file"
        )));
    }
    let mut buf = vec![0; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
}

fn write_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    write_str(out, name);
    out.write_u32::<LittleEndian>(shape.len() as u32).expect("vec write");
    for &d in shape {
        out.write_u32::<LittleEndian>(d as u32).expect("vec write");
    }
    for &v in data {
        out.write_f32::<LittleEndian>(v).expect("vec write");
    }
}

fn adam_tensors<'a>(
    prefix: &str,
    state: &'a AdamState,
    params: &[(String, &Tensor<f32>)],
) -> Vec<(String, Vec<usize>, &'a [f32])> {
    let mut out = Vec::new();
    for (moment, values) in [("m", &state.m), ("v", &state.v)] {
        for ((name, t), data) in params.iter().zip(values) {
            out.push((
                format!("adam.{prefix}.{moment}.{name}"),
                t.shape().to_vec(),
                data.as_slice(),
            ));
        }
    }
    out
}

type Named<'a> = Vec<(String, &'a Tensor<f32>)>;

fn split_named(params: &ModelParams<f32>) -> (Named<'_>, Named<'_>) {
    params
        .named_tensors()
        .into_iter()
        .partition(|(name, _)| !name.starts_with("d_"))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(FORMAT_VERSION).expect("vec write");
        let header = Header {
            config: self.config.clone(),
            global_step: self.global_step,
            loss_means: self.loss_means,
            adam_ae: self.opt_ae.clone(),
            adam_disc: self.opt_disc.clone(),
        };
        write_str(&mut out, &serde_json::to_string(&header).expect("header serializes"));

        let named = self.params.named_tensors();
        let (ae, disc) = split_named(&self.params);
        let mut moments = adam_tensors("ae", &self.opt_ae, &ae);
        moments.extend(adam_tensors("disc", &self.opt_disc, &disc));
        out.write_u32::<LittleEndian>((named.len() + moments.len()) as u32)
            .expect("vec write");
        for (name, t) in &named {
            write_tensor(&mut out, name, t.shape(), t.data());
        }
        for (name, shape, data) in &moments {
            write_tensor(&mut out, name, shape, data);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("file too short for a checkpoint".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let header: Header = serde_json::from_str(&read_str(&mut r, "header")?)?;
        header.config.validate()?;

        let count = r.read_u32::<LittleEndian>()?;
        let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
        for _ in 0..count {
            let name = read_str(&mut r, "tensor name")?;
            let ndim = r.read_u32::<LittleEndian>()? as usize;
            let shape = (0..ndim)
                .map(|_| r.read_u32::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let remaining = bytes.len() - r.position() as usize;
            if numel * 4 > remaining {
                return Err(Error::Format(format!("tensor {name} runs past the end of the file")));
            }
            let mut data = vec![0f32; numel];
            r.read_f32_into::<LittleEndian>(&mut data)?;
            if tensors.insert(name.clone(), (shape, data)).is_some() {
                return Err(Error::Format(format!("tensor {name} appears twice")));
            }
        }
        if (r.position() as usize) != bytes.len() {
            return Err(Error::Format("trailing bytes after the last tensor".into()));
        }

        let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let (s, data) = tensors
                .remove(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
            if s != shape {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {s:?}, expected {shape:?}"
                )));
            }
            Ok(data)
        };

        let config = header.config;
        let mut params = ModelParams::<f32>::zeros(config.skip_position, config.label_mode);
        for (name, t) in params.named_tensors_mut() {
            let data = take(&name, t.shape())?;
            t.data_mut().copy_from_slice(&data);
        }
        let mut opt_ae = header.adam_ae;
        let mut opt_disc = header.adam_disc;
        let (ae, disc) = split_named(&params);
        for (prefix, state, group) in [("ae", &mut opt_ae, &ae), ("disc", &mut opt_disc, &disc)] {
            for moment in ["m", "v"] {
                let values = group
                    .iter()
                    .map(|(name, t)| take(&format!("adam.{prefix}.{moment}.{name}"), t.shape()))
                    .collect::<Result<Vec<_>>>()?;
                match moment {
                    "m" => state.m = values,
                    _ => state.v = values,
                }
            }
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Format(format!("unexpected tensor {extra}")));
        }
        Ok(Self {
            config,
            params,
            opt_ae,
            opt_disc,
            global_step: header.global_step,
            loss_means: header.loss_means,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
