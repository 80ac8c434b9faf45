//! Binary parameter blob: `TFMP`, input/hidden/output as u32 LE, then every
//! weight as f64 LE in flat-vector order.

use super::{FlError, ModelParams, ModelShape};

pub const WIRE_MAGIC: &[u8; 4] = b"TFMP";
const HEADER: usize = 4 + 3 * 4;

pub fn serialize_params(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 8 * params.weights.len());
    out.extend_from_slice(WIRE_MAGIC);
    for d in [params.shape.input, params.shape.hidden, params.shape.output] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for w in &params.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

/// Inverse of [`serialize_params`]. Non-finite weights decode fine; callers
/// that care check [`ModelParams::all_finite`].
pub fn deserialize_params(bytes: &[u8]) -> Result<ModelParams, FlError> {
    if bytes.len() < HEADER || &bytes[..4] != WIRE_MAGIC {
        return Err(FlError::Malformed("missing header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let shape = ModelShape::new(dim(0), dim(1), dim(2));
    shape.validate().map_err(|_| FlError::Malformed("zero dimension"))?;
    let body = &bytes[HEADER..];
    if body.len() != 8 * shape.param_count() {
        return Err(FlError::Malformed("length does not match shape"));
    }
    let weights = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    ModelParams::new(shape, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::init_model;
    use proptest::prelude::*;

    #[test]
    fn layout() {
        let p = ModelParams::new(ModelShape::new(1, 1, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = serialize_params(&p);
        assert_eq!(b.len(), 16 + 32);
        assert_eq!(&b[..4], b"TFMP");
        assert_eq!(&b[16..24], &1.0f64.to_le_bytes());
    }

    #[test]
    fn truncated_or_padded_blobs_rejected() {
        let b = serialize_params(&init_model(1, ModelShape::new(3, 4, 2)).unwrap());
        assert!(deserialize_params(&b[..b.len() - 1]).is_err());
        let mut longer = b.clone();
        longer.push(0);
        assert!(deserialize_params(&longer).is_err());
        assert!(deserialize_params(b"TFMQ").is_err());
    }

    #[test]
    fn nan_survives_the_wire() {
        let mut p = init_model(1, ModelShape::new(2, 2, 2)).unwrap();
        p.weights[3] = f64::NAN;
        let back = deserialize_params(&serialize_params(&p)).unwrap();
        assert!(back.weights[3].is_nan());
        assert!(!back.all_finite());
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(seed in any::<u64>(), i in 1usize..6, h in 1usize..6, o in 1usize..5) {
            let p = init_model(seed, ModelShape::new(i, h, o)).unwrap();
            prop_assert_eq!(deserialize_params(&serialize_params(&p)).unwrap(), p);
        }
    }
}
