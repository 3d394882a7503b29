//! The standard VGG16 convolutional stack (13 conv layers in 5 blocks, all
//! 3x3 same-padding, 2x2 pooling after each block) and the binary weights
//! file it loads from.
//!
//! Weights file layout: magic `RSW1`, a little-endian u32 header length, a
//! JSON header listing `{name, shape}` per tensor, then the raw f32
//! little-endian tensor data in header order.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use super::ModelError;

/// (name, output channels) of each conv layer, grouped into pooled blocks.
pub const VGG16_BLOCKS: [&[(&str, usize)]; 5] = [
    &[("block1_conv1", 64), ("block1_conv2", 64)],
    &[("block2_conv1", 128), ("block2_conv2", 128)],
    &[("block3_conv1", 256), ("block3_conv2", 256), ("block3_conv3", 256)],
    &[("block4_conv1", 512), ("block4_conv2", 512), ("block4_conv3", 512)],
    &[("block5_conv1", 512), ("block5_conv2", 512), ("block5_conv3", 512)],
];

/// Expected tensor shapes, in file order: kernel (out, in, 3, 3) then bias.
pub fn expected_tensors() -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut in_c = 3usize;
    for block in VGG16_BLOCKS {
        for &(name, filters) in block {
            out.push((format!("{name}_kernel"), vec![filters, in_c, 3, 3]));
            out.push((format!("{name}_bias"), vec![filters]));
            in_c = filters;
        }
    }
    out
}

/// Total parameters of the conv stack (14,714,688 for standard VGG16).
pub fn conv_stack_parameter_count() -> usize {
    expected_tensors()
        .iter()
        .map(|(_, shape)| shape.iter().product::<usize>())
        .sum()
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

const MAGIC: &[u8; 4] = b"RSW1";

/// Write named tensors to the binary format.
pub fn write_tensor_file(
    path: &Path,
    tensors: &[(String, Vec<usize>, Vec<f32>)],
) -> Result<(), ModelError> {
    let header: Vec<TensorHeader> = tensors
        .iter()
        .map(|(name, shape, _)| TensorHeader { name: name.clone(), shape: shape.clone() })
        .collect();
    let header_json = serde_json::to_vec(&header).expect("header serialization");
    let mut file = std::fs::File::create(path).map_err(|e| ModelError::WeightsIo {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let io = |e: std::io::Error| ModelError::WeightsIo {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    file.write_all(MAGIC).map_err(io)?;
    file.write_all(&(header_json.len() as u32).to_le_bytes()).map_err(io)?;
    file.write_all(&header_json).map_err(io)?;
    for (_, _, data) in tensors {
        let mut bytes = Vec::with_capacity(data.len() * 4);
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&bytes).map_err(io)?;
    }
    Ok(())
}

/// Read every tensor from a file written by [`write_tensor_file`].
pub fn read_tensor_file(path: &Path) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>, ModelError> {
    let io = |reason: String| ModelError::WeightsIo { path: path.to_path_buf(), reason };
    let mut file = std::fs::File::open(path).map_err(|e| io(e.to_string()))?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(|e| io(e.to_string()))?;
    if &magic != MAGIC {
        return Err(io("bad magic; not a tensor file".to_string()));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes).map_err(|e| io(e.to_string()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json).map_err(|e| io(e.to_string()))?;
    let header: Vec<TensorHeader> =
        serde_json::from_slice(&header_json).map_err(|e| io(format!("bad header: {e}")))?;
    let mut out = Vec::with_capacity(header.len());
    for th in header {
        let count: usize = th.shape.iter().product();
        let mut bytes = vec![0u8; count * 4];
        file.read_exact(&mut bytes).map_err(|_| {
            ModelError::ShapeMismatch {
                layer: th.name.clone(),
                expected: th.shape.clone(),
                found: vec![],
            }
        })?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push((th.name, th.shape, data));
    }
    Ok(out)
}

/// Load and validate a VGG16 backbone weights file. Tensors must appear in
/// the standard order with the standard shapes; the first mismatch is
/// reported by layer name.
pub fn load_backbone_weights(
    path: &Path,
) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>, ModelError> {
    let tensors = read_tensor_file(path)?;
    let expected = expected_tensors();
    for (i, (name, shape)) in expected.iter().enumerate() {
        match tensors.get(i) {
            None => {
                return Err(ModelError::ShapeMismatch {
                    layer: name.clone(),
                    expected: shape.clone(),
                    found: vec![],
                })
            }
            Some((found_name, found_shape, _)) => {
                if found_name != name || found_shape != shape {
                    return Err(ModelError::ShapeMismatch {
                        layer: name.clone(),
                        expected: shape.clone(),
                        found: found_shape.clone(),
                    });
                }
            }
        }
    }
    Ok(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_stack_count_matches_standard_topology() {
        // independent arithmetic over the 13 standard conv layers
        let mut total = 0usize;
        let mut in_c = 3;
        for block in VGG16_BLOCKS {
            for &(_, out_c) in block {
                total += out_c * in_c * 9 + out_c;
                in_c = out_c;
            }
        }
        assert_eq!(total, 14_714_688);
        assert_eq!(conv_stack_parameter_count(), 14_714_688);
    }

    #[test]
    fn tensor_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let tensors = vec![
            ("a".to_string(), vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            ("b".to_string(), vec![2], vec![-1.5, 0.25]),
        ];
        write_tensor_file(&path, &tensors).unwrap();
        let restored = read_tensor_file(&path).unwrap();
        assert_eq!(restored, tensors);
    }

    #[test]
    fn truncated_weights_file_names_offending_layer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        // only the first tensor, with a wrong shape
        let tensors = vec![(
            "block1_conv1_kernel".to_string(),
            vec![64, 3, 3, 3],
            vec![0.0; 64 * 27],
        )];
        write_tensor_file(&path, &tensors).unwrap();
        let err = load_backbone_weights(&path).unwrap_err();
        match err {
            ModelError::ShapeMismatch { layer, .. } => {
                assert_eq!(layer, "block1_conv1_bias");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
