//! Binary cloud checkpoints.
//!
//! Layout (little-endian): magic `ZSPL`, version `u32`, count `u64`, then
//! means (N×3), quats (N×4), log-scales (N×3), opacity logits (N) and
//! colors (N×3), all as `f32`.

use std::fs;
use std::path::Path;

use super::{GaussianCloud, ParamGroup};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ZSPL";
pub const CHECKPOINT_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 8;

pub fn encode_checkpoint(cloud: &GaussianCloud) -> Vec<u8> {
    let n = cloud.len();
    let mut out = Vec::with_capacity(HEADER_LEN + cloud.parameter_count() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for g in ParamGroup::ALL {
        for v in cloud.group(g) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<GaussianCloud> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(origin, "missing ZSPL header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            origin,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let per_gaussian: usize = ParamGroup::ALL.iter().map(|g| g.width()).sum();
    let expected = n
        .checked_mul(per_gaussian * 4)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format(origin, "gaussian count overflows"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            origin,
            format!("expected {expected} bytes for {n} gaussians, found {}", bytes.len()),
        ));
    }

    let mut cloud = GaussianCloud {
        means: vec![[0.0; 3]; n],
        quats: vec![[0.0; 4]; n],
        log_scales: vec![[0.0; 3]; n],
        opacity_logits: vec![0.0; n],
        colors: vec![[0.0; 3]; n],
    };
    let mut floats = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    for g in ParamGroup::ALL {
        for v in cloud.group_mut(g) {
            *v = floats.next().unwrap();
        }
    }
    cloud.validate()?;
    Ok(cloud)
}

pub fn write_checkpoint(path: &Path, cloud: &GaussianCloud) -> Result<()> {
    fs::write(path, encode_checkpoint(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<GaussianCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{init_random, Aabb};

    #[test]
    fn header_layout() {
        let cloud = init_random(3, &Aabb::new([0.0; 3], [1.0; 3]), 0).unwrap();
        let bytes = encode_checkpoint(&cloud);
        assert_eq!(&bytes[..4], b"ZSPL");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 16 + 3 * 14 * 4);
        // First float is the first mean's x coordinate.
        let x = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
        assert_eq!(x, cloud.means[0][0] as f32);
    }

    #[test]
    fn quantized_cloud_round_trips_exactly() {
        let mut cloud = init_random(17, &Aabb::new([-1.0; 3], [1.0; 3]), 4).unwrap();
        cloud.quantize_f32();
        let back = decode_checkpoint(&encode_checkpoint(&cloud), Path::new("mem")).unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn empty_cloud_round_trips() {
        let cloud = GaussianCloud::default();
        let back = decode_checkpoint(&encode_checkpoint(&cloud), Path::new("mem")).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let cloud = init_random(2, &Aabb::new([0.0; 3], [1.0; 3]), 0).unwrap();
        let mut bytes = encode_checkpoint(&cloud);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
        bytes[0] = b'X';
        assert!(decode_checkpoint(&bytes, Path::new("m")).is_err());
        let mut bytes = encode_checkpoint(&cloud);
        bytes[4] = 9;
        assert!(decode_checkpoint(&bytes, Path::new("m")).is_err());
    }
}
