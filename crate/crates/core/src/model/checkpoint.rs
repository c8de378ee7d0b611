//! Model checkpoints on top of the WNTC container.
//!
//! Besides the model tensors a checkpoint carries a few reserved entries:
//! `meta.config` (channel_scale, upsample, reinforcement, input_channels),
//! `meta.step`, `meta.epoch`, and optionally `adam.t`, `adam.m.<param>`, `adam.v.<param>`.
//! Integers are stored as two f32 limbs of 24 bits each.

use std::path::Path;

use super::{UpsampleMode, WNetConfig};
use crate::error::{FormatError, Result};
use crate::formats::wntc;
use crate::tensor::{Parameter, Scalar};

pub use crate::formats::wntc::NamedTensor;

const LIMB: u64 = 1 << 24;
const CONFIG: &str = "meta.config";
const STEP: &str = "meta.step";
const EPOCH: &str = "meta.epoch";
const ADAM_T: &str = "adam.t";
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

impl NamedTensor {
    pub fn from_parameter<T: Scalar>(p: &Parameter<T>) -> Self {
        NamedTensor {
            name: p.name.clone(),
            dims: p.dims(),
            data: p.value.data().iter().map(|v| v.as_f64() as f32).collect(),
        }
    }
}

/// First and second Adam moments, keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    pub m: Vec<NamedTensor>,
    pub v: Vec<NamedTensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: WNetConfig,
    pub step: u64,
    /// Completed training epochs.
    pub epoch: u64,
    pub tensors: Vec<NamedTensor>,
    pub optimizer: Option<OptimizerState>,
}

fn invalid(reason: String) -> crate::error::Error {
    FormatError::Invalid { format: "WNTC", reason }.into()
}

fn encode_u64(name: &str, v: u64) -> Result<NamedTensor> {
    if v >= LIMB * LIMB {
        return Err(invalid(format!("{name} = {v} exceeds 48 bits")));
    }
    NamedTensor::new(name, vec![2], vec![(v / LIMB) as f32, (v % LIMB) as f32])
}

fn decode_int(t: &NamedTensor, i: usize, limit: u64) -> Result<u64> {
    let x = t.data[i];
    if !(x >= 0.0 && x.fract() == 0.0 && (x as u64) < limit) {
        return Err(invalid(format!("`{}` holds a non-integral or out-of-range value {x}", t.name)));
    }
    Ok(x as u64)
}

fn decode_u64(t: &NamedTensor) -> Result<u64> {
    if t.dims != [2] {
        return Err(invalid(format!("`{}` must have dims [2]", t.name)));
    }
    Ok(decode_int(t, 0, LIMB)? * LIMB + decode_int(t, 1, LIMB)?)
}

fn encode_config(c: &WNetConfig) -> Result<NamedTensor> {
    let upsample = match c.upsample {
        UpsampleMode::Nearest => 0.0,
        UpsampleMode::Transpose => 1.0,
    };
    NamedTensor::new(
        CONFIG,
        vec![4],
        vec![
            c.channel_scale as f32,
            upsample,
            if c.reinforcement_enabled { 1.0 } else { 0.0 },
            c.input_channels as f32,
        ],
    )
}

fn decode_config(t: &NamedTensor) -> Result<WNetConfig> {
    if t.dims != [4] {
        return Err(invalid(format!("`{CONFIG}` must have dims [4]")));
    }
    let upsample = match decode_int(t, 1, 2)? {
        0 => UpsampleMode::Nearest,
        _ => UpsampleMode::Transpose,
    };
    let config = WNetConfig {
        channel_scale: decode_int(t, 0, 1 << 16)? as usize,
        upsample,
        reinforcement_enabled: decode_int(t, 2, 2)? == 1,
        input_channels: decode_int(t, 3, 1 << 16)? as usize,
    };
    config.validate()?;
    Ok(config)
}

impl Checkpoint {
    pub fn to_tensors(&self) -> Result<Vec<NamedTensor>> {
        let mut out = vec![encode_config(&self.config)?, encode_u64(STEP, self.step)?, encode_u64(EPOCH, self.epoch)?];
        out.extend(self.tensors.iter().cloned());
        if let Some(opt) = &self.optimizer {
            out.push(encode_u64(ADAM_T, opt.t)?);
            for m in &opt.m {
                out.push(NamedTensor { name: format!("{ADAM_M}{}", m.name), ..m.clone() });
            }
            for v in &opt.v {
                out.push(NamedTensor { name: format!("{ADAM_V}{}", v.name), ..v.clone() });
            }
        }
        Ok(out)
    }

    pub fn from_tensors(all: Vec<NamedTensor>) -> Result<Self> {
        let mut config = None;
        let mut step = None;
        let mut epoch = None;
        let mut t = None;
        let (mut tensors, mut m, mut v) = (Vec::new(), Vec::new(), Vec::new());
        for tensor in all {
            if tensor.name == CONFIG {
                config = Some(decode_config(&tensor)?);
            } else if tensor.name == STEP {
                step = Some(decode_u64(&tensor)?);
            } else if tensor.name == EPOCH {
                epoch = Some(decode_u64(&tensor)?);
            } else if tensor.name == ADAM_T {
                t = Some(decode_u64(&tensor)?);
            } else if let Some(rest) = tensor.name.strip_prefix(ADAM_M) {
                m.push(NamedTensor { name: rest.to_string(), ..tensor });
            } else if let Some(rest) = tensor.name.strip_prefix(ADAM_V) {
                v.push(NamedTensor { name: rest.to_string(), ..tensor });
            } else if tensor.name.starts_with("meta.") || tensor.name.starts_with("adam.") {
                return Err(FormatError::UnknownTensor(tensor.name).into());
            } else {
                tensors.push(tensor);
            }
        }
        let config = config.ok_or_else(|| invalid(format!("missing `{CONFIG}`")))?;
        let optimizer = match t {
            Some(t) => Some(OptimizerState { t, m, v }),
            None if m.is_empty() && v.is_empty() => None,
            None => return Err(invalid(format!("optimizer moments without `{ADAM_T}`"))),
        };
        Ok(Checkpoint {
            config,
            step: step.unwrap_or(0),
            epoch: epoch.unwrap_or(0),
            tensors,
            optimizer,
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        wntc::encode(&self.to_tensors()?)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Checkpoint::from_tensors(wntc::decode(bytes)?)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    wntc::save(path, &ckpt.to_tensors()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_tensors(wntc::load(path)?)
}
