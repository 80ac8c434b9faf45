//! Device-to-adapter message carried over the bus.
//!
//! Layout (little-endian): device u32, round u64, n_samples u64, credential
//! length u32, credential bytes, input/hidden/output u32, then the
//! serialized parameter blob to the end.

use crate::fl::ModelShape;
use crate::ids::DeviceId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Submission {
    pub device_id: DeviceId,
    pub credential: Vec<u8>,
    pub round: u64,
    /// Shapes the device claims its parameters have.
    pub shape: ModelShape,
    pub n_samples: u64,
    pub params: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed submission message")]
pub struct MalformedSubmission;

impl Submission {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + self.credential.len() + self.params.len());
        out.extend_from_slice(&self.device_id.0.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.n_samples.to_le_bytes());
        out.extend_from_slice(&(self.credential.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.credential);
        for d in [self.shape.input, self.shape.hidden, self.shape.output] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.params);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MalformedSubmission> {
        let mut r = Reader(bytes);
        let device_id = DeviceId(r.u32()?);
        let round = r.u64()?;
        let n_samples = r.u64()?;
        let cred_len = r.u32()? as usize;
        let credential = r.take(cred_len)?.to_vec();
        let shape = ModelShape::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        Ok(Self { device_id, credential, round, shape, n_samples, params: r.0.to_vec() })
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MalformedSubmission> {
        if self.0.len() < n {
            return Err(MalformedSubmission);
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, MalformedSubmission> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, MalformedSubmission> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
