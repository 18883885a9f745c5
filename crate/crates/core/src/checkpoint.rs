//! DIVMIN1 parameter checkpoints.
//!
//! A checkpoint is a flat list of named f64 tensors:
//!
//! ```text
//! magic    8 bytes   "DIVMIN1\0"
//! version  u32 LE    currently 1
//! count    u32 LE    number of entries
//! entry*   u32 LE name length, UTF-8 name,
//!          u32 LE ndim, ndim x u32 LE dims,
//!          prod(dims) x f64 LE (raw IEEE bits)
//! ```
//!
//! Values are written as raw bits, so save -> load is bitwise identity.

use crate::gaussian::GaussianPolicyParams;
use crate::mat::Mat;
use crate::mlp::{MlpDims, MlpParams};
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"DIVMIN1\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {found:?}, expected {expected:?}: not a DIVMIN1 checkpoint")]
    BadMagic { found: Vec<u8>, expected: &'static [u8] },
    #[error("unsupported checkpoint version {found}, this build reads version {expected}")]
    BadVersion { found: u32, expected: u32 },
    #[error("truncated checkpoint: needed {needed} more bytes for {context}")]
    Truncated { needed: usize, context: &'static str },
    #[error("entry name is not valid UTF-8")]
    BadName,
    #[error("missing entry `{0}`")]
    MissingEntry(String),
    #[error("entry `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("entry `{0}` contains non-finite values")]
    NonFinite(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) {
        let shape_len: usize = shape.iter().product();
        assert_eq!(shape_len, values.len(), "checkpoint entry shape/value mismatch");
        self.entries.push((name.into(), shape, values));
    }

    pub fn entries(&self) -> &[(String, Vec<usize>, Vec<f64>)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.entries
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, v)| (s.as_slice(), v.as_slice()))
    }

    fn require(&self, name: &str, shape: &[usize]) -> Result<&[f64], CheckpointError> {
        let (found_shape, values) = self
            .get(name)
            .ok_or_else(|| CheckpointError::MissingEntry(name.to_string()))?;
        if found_shape != shape {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                found: found_shape.to_vec(),
                expected: shape.to_vec(),
            });
        }
        Ok(values)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, shape, values) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(8, "magic")?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic {
                found: magic.to_vec(),
                expected: MAGIC,
            });
        }
        let version = cur.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion {
                found: version,
                expected: VERSION,
            });
        }
        let count = cur.u32("entry count")? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = cur.u32("name length")? as usize;
            let name = std::str::from_utf8(cur.take(name_len, "name")?)
                .map_err(|_| CheckpointError::BadName)?
                .to_string();
            let ndim = cur.u32("ndim")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(cur.u32("dim")? as usize);
            }
            let n: usize = shape.iter().product();
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                let raw = cur.take(8, "values")?;
                values.push(f64::from_bits(u64::from_le_bytes(raw.try_into().unwrap())));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(CheckpointError::NonFinite(name));
            }
            entries.push((name, shape, values));
        }
        Ok(Checkpoint { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn push_mlp(&mut self, prefix: &str, mlp: &MlpParams) {
        let d = mlp.dims();
        self.push(format!("{prefix}/w1"), vec![d.hidden1, d.input], mlp.w1.data().to_vec());
        self.push(format!("{prefix}/b1"), vec![d.hidden1], mlp.b1.clone());
        self.push(format!("{prefix}/w2"), vec![d.hidden2, d.hidden1], mlp.w2.data().to_vec());
        self.push(format!("{prefix}/b2"), vec![d.hidden2], mlp.b2.clone());
        self.push(format!("{prefix}/w3"), vec![d.output, d.hidden2], mlp.w3.data().to_vec());
        self.push(format!("{prefix}/b3"), vec![d.output], mlp.b3.clone());
    }

    pub fn read_mlp(&self, prefix: &str) -> Result<MlpParams, CheckpointError> {
        let w1 = self
            .get(&format!("{prefix}/w1"))
            .ok_or_else(|| CheckpointError::MissingEntry(format!("{prefix}/w1")))?;
        let (h1, input) = (w1.0[0], w1.0[1]);
        let w2 = self
            .get(&format!("{prefix}/w2"))
            .ok_or_else(|| CheckpointError::MissingEntry(format!("{prefix}/w2")))?;
        let (h2, _) = (w2.0[0], w2.0[1]);
        let w3 = self
            .get(&format!("{prefix}/w3"))
            .ok_or_else(|| CheckpointError::MissingEntry(format!("{prefix}/w3")))?;
        let output = w3.0[0];

        let dims = MlpDims { input, hidden1: h1, hidden2: h2, output };
        let mut mlp = MlpParams::zeros(dims);
        mlp.w1 = Mat::from_vec(h1, input, self.require(&format!("{prefix}/w1"), &[h1, input])?.to_vec());
        mlp.b1 = self.require(&format!("{prefix}/b1"), &[h1])?.to_vec();
        mlp.w2 = Mat::from_vec(h2, h1, self.require(&format!("{prefix}/w2"), &[h2, h1])?.to_vec());
        mlp.b2 = self.require(&format!("{prefix}/b2"), &[h2])?.to_vec();
        mlp.w3 = Mat::from_vec(output, h2, self.require(&format!("{prefix}/w3"), &[output, h2])?.to_vec());
        mlp.b3 = self.require(&format!("{prefix}/b3"), &[output])?.to_vec();
        Ok(mlp)
    }

    pub fn push_policy(&mut self, prefix: &str, policy: &GaussianPolicyParams) {
        self.push_mlp(&format!("{prefix}/mean"), &policy.mean_net);
        self.push(
            format!("{prefix}/log_std"),
            vec![policy.log_std.len()],
            policy.log_std.clone(),
        );
    }

    pub fn read_policy(&self, prefix: &str) -> Result<GaussianPolicyParams, CheckpointError> {
        let mean_net = self.read_mlp(&format!("{prefix}/mean"))?;
        let name = format!("{prefix}/log_std");
        let log_std = self
            .require(&name, &[mean_net.dims().output])?
            .to_vec();
        Ok(GaussianPolicyParams { mean_net, log_std })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated {
                needed: self.pos + n - self.bytes.len(),
                context,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, context: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }
}
