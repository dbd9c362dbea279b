//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "STNS"  version:u32  descriptor_len:u64  descriptor (UTF-8 JSON)
//! tensor_count:u64
//! per tensor: name_len:u64 name  kind:u8  rank:u64  shape:[u64; rank]  payload:[f64; Π shape]
//! ```
//!
//! Tensor names are `u/<k>`, `v/<k>` and `lambda/<m>`, in that order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use schmidt_tns::lattice::{build_hamiltonian, Bipartition, Hamiltonian, Lattice, ModelParams};
use schmidt_tns::schmidt::{gate_axes, Architecture, SchmidtTns, Stack, LAMBDA_AXES};
use schmidt_tns::tensor::{ParamKind, Parameter, Tensor};

use crate::config::ModelSection;
use crate::error::CliError;

pub const MAGIC: &[u8; 4] = b"STNS";
pub const VERSION: u32 = 1;
/// Largest unitarity defect accepted on load.
pub const LOAD_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Descriptor {
    pub config_hash: String,
    pub model: ModelSection,
    pub lattice: Lattice,
    pub bipartition: Bipartition,
    pub architecture: Architecture,
}

impl Descriptor {
    pub fn hamiltonian(&self) -> Result<Hamiltonian, CliError> {
        Ok(build_hamiltonian(&self.lattice, self.model.kind, ModelParams { h_x: self.model.h_x })?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub descriptor: Descriptor,
    pub state: SchmidtTns,
}

fn named(state: &SchmidtTns) -> Vec<(String, &Parameter)> {
    let mut out = Vec::new();
    for (k, p) in state.u.iter().enumerate() {
        out.push((format!("u/{k}"), p));
    }
    for (k, p) in state.v.iter().enumerate() {
        out.push((format!("v/{k}"), p));
    }
    for (m, p) in state.lambda.iter().enumerate() {
        out.push((format!("lambda/{m}"), p));
    }
    out
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let desc = serde_json::to_vec(&ck.descriptor).expect("descriptor serializes");
    buf.extend_from_slice(&(desc.len() as u64).to_le_bytes());
    buf.extend_from_slice(&desc);
    let tensors = named(&ck.state);
    buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, p) in tensors {
        buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(p.kind.code());
        let shape = p.raw.shape();
        buf.extend_from_slice(&(shape.len() as u64).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in p.raw.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

pub fn save(ck: &Checkpoint, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, encode(ck))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated while reading {what} at byte {}", self.pos)),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// A length that must fit in the bytes still unread, `unit` bytes per item.
    fn len(&mut self, unit: usize, what: &str) -> Result<usize, String> {
        let n = self.u64(what)?;
        let left = (self.bytes.len() - self.pos) as u64;
        if n.saturating_mul(unit as u64) > left {
            return Err(format!("{what} of {n} exceeds the remaining {left} bytes"));
        }
        Ok(n as usize)
    }
}

struct RawTensor {
    name: String,
    kind: u8,
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn read_tensor(r: &mut Reader) -> Result<RawTensor, String> {
    let n = r.len(1, "tensor name length")?;
    let name = String::from_utf8(r.take(n, "tensor name")?.to_vec()).map_err(|_| "tensor name is not UTF-8".to_string())?;
    let kind = r.take(1, "kind byte")?[0];
    let rank = r.len(8, "rank")?;
    let mut shape = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for _ in 0..rank {
        let d = r.u64("shape")? as usize;
        count = count.checked_mul(d).ok_or_else(|| format!("{name}: shape overflows"))?;
        shape.push(d);
    }
    if count.saturating_mul(8) > r.bytes.len() - r.pos {
        return Err(format!("{name}: payload of {count} doubles is truncated"));
    }
    let data = r
        .take(count * 8, "payload")?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(RawTensor { name, kind, shape, data })
}

fn corrupt(path: &Path, message: impl std::fmt::Display) -> CliError {
    CliError::checkpoint(path.display(), format!("corrupted: {message}"))
}

/// Parses and re-validates a checkpoint. `path` is only used in messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint, CliError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic").map_err(|e| corrupt(path, e))?;
    if magic != MAGIC {
        return Err(corrupt(path, "bad magic bytes"));
    }
    let version = r.u32("version").map_err(|e| corrupt(path, e))?;
    if version != VERSION {
        return Err(CliError::checkpoint(
            path.display(),
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let n = r.len(1, "descriptor length").map_err(|e| corrupt(path, e))?;
    let desc_bytes = r.take(n, "descriptor").map_err(|e| corrupt(path, e))?;
    let descriptor: Descriptor =
        serde_json::from_slice(desc_bytes).map_err(|e| corrupt(path, format!("descriptor: {e}")))?;
    let count = r.len(1, "tensor count").map_err(|e| corrupt(path, e))?;
    let mut raw = Vec::with_capacity(count);
    for _ in 0..count {
        raw.push(read_tensor(&mut r).map_err(|e| corrupt(path, e))?);
    }
    if r.pos != bytes.len() {
        return Err(corrupt(path, format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let arch = descriptor.architecture.clone();
    arch.validate().map_err(|e| corrupt(path, e))?;
    let n_u = arch.stack(Stack::U).gates.len();
    let n_v = arch.stack(Stack::V).gates.len();
    if raw.len() != n_u + n_v + arch.r {
        return Err(corrupt(path, format!("{} tensors, architecture needs {}", raw.len(), n_u + n_v + arch.r)));
    }
    let mut u = Vec::new();
    let mut v = Vec::new();
    let mut lambda = Vec::new();
    for (i, t) in raw.into_iter().enumerate() {
        let (expected_name, unitary) = if i < n_u {
            (format!("u/{i}"), true)
        } else if i < n_u + n_v {
            (format!("v/{}", i - n_u), true)
        } else {
            (format!("lambda/{}", i - n_u - n_v), false)
        };
        if t.name != expected_name {
            return Err(corrupt(path, format!("tensor `{}` found where `{expected_name}` belongs", t.name)));
        }
        let param = if unitary {
            let k = t.shape.len() / 2;
            let (o, inputs) = gate_axes(k);
            let kind = ParamKind::unitary(&o);
            if t.kind != kind.code() || t.shape.len() % 2 != 0 {
                return Err(corrupt(path, format!("{}: not a unitary tensor", t.name)));
            }
            let axes: Vec<String> = o.into_iter().chain(inputs).collect();
            let tensor = Tensor::new(t.shape, axes, t.data).map_err(|e| corrupt(path, format!("{}: {e}", t.name)))?;
            let p = Parameter::new(tensor, kind);
            let defect = p.unitarity_defect().map_err(|e| corrupt(path, format!("{}: {e}", t.name)))?;
            if !(defect < LOAD_TOLERANCE) {
                return Err(CliError::checkpoint(
                    path.display(),
                    format!("invariant violated: tensor `{}` has unitarity defect {defect:e}", t.name),
                ));
            }
            p
        } else {
            if t.kind != ParamKind::SquaredPositive.code() || t.shape.len() != 3 {
                return Err(corrupt(path, format!("{}: not a λ tensor", t.name)));
            }
            let tensor = Tensor::new(t.shape, LAMBDA_AXES.to_vec(), t.data)
                .map_err(|e| corrupt(path, format!("{}: {e}", t.name)))?;
            if !tensor.is_finite() {
                return Err(CliError::checkpoint(
                    path.display(),
                    format!("invariant violated: tensor `{}` is not finite", t.name),
                ));
            }
            Parameter::new(tensor, ParamKind::SquaredPositive)
        };
        if i < n_u {
            u.push(param);
        } else if i < n_u + n_v {
            v.push(param);
        } else {
            lambda.push(param);
        }
    }
    let state = SchmidtTns { arch, u, v, lambda };
    state
        .validate(LOAD_TOLERANCE)
        .map_err(|e| CliError::checkpoint(path.display(), format!("invariant violated: {e}")))?;
    Ok(Checkpoint { descriptor, state })
}

pub fn load(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::checkpoint(path.display(), e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use schmidt_tns::schmidt::init_state;

    fn sample() -> Checkpoint {
        let cfg = RunConfig::parse(
            "[model]\nkind = \"tim\"\nh_x = 0.3\n[lattice]\nsites = 8\n[architecture]\nlayers = 2\nchi = 3\n",
        )
        .unwrap();
        let p = cfg.problem().unwrap();
        Checkpoint {
            descriptor: Descriptor {
                config_hash: cfg.hash(),
                model: cfg.model.clone(),
                lattice: p.lattice,
                bipartition: p.bipartition,
                architecture: p.architecture.clone(),
            },
            state: init_state(&p.architecture, 5).unwrap(),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = sample();
        let bytes = encode(&ck);
        let back = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn every_truncation_is_reported() {
        let bytes = encode(&sample());
        for cut in (0..bytes.len()).step_by(7) {
            let err = decode(&bytes[..cut], Path::new("mem")).unwrap_err();
            assert!(err.to_string().contains("corrupted"), "{cut}: {err}");
        }
    }

    #[test]
    fn version_and_magic_are_checked() {
        let mut bytes = encode(&sample());
        bytes[4] = 9;
        assert!(decode(&bytes, Path::new("mem")).unwrap_err().to_string().contains("version"));
        bytes[0] = b'X';
        assert!(decode(&bytes, Path::new("mem")).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn perturbed_unitary_is_named() {
        let mut ck = sample();
        ck.state.v[1].raw.data_mut()[0] += 1e-3;
        let err = decode(&encode(&ck), Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("`v/1`"), "{err}");
    }
}
