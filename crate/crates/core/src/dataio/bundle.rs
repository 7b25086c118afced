//! Tensor bundle container: `MTGD1` magic, a JSON manifest and a raw
//! little-endian 32-bit float payload in tensor layout order.
//!
//! Layout on disk:
//!
//! ```text
//! MTGD1\n
//! <header byte length, decimal ASCII>\n
//! <header JSON, sorted keys>
//! <payload: f32 little-endian, scale-major / row-major cells / anchor-major channels>
//! ```
//!
//! The manifest is validated against the payload length before any value is
//! read.

use serde_json::{json, Value};

use crate::anchor_codec::{GridSpecs, HeadTensor, ScaleSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8] = b"MTGD1\n";

fn header_json(specs: &GridSpecs) -> String {
    let scales: Vec<Value> = specs
        .scales
        .iter()
        .map(|s| {
            json!({
                "id": s.scale_id,
                "gw": s.grid_w,
                "gh": s.grid_h,
                "od_anchors": s.od_anchors.iter().map(|&(w, h)| json!([w, h])).collect::<Vec<_>>(),
                "gd_anchors": s.gd_anchors.iter().map(|&(w, h)| json!([w, h])).collect::<Vec<_>>(),
                "gd_angles": s.gd_angles,
            })
        })
        .collect();
    // serde_json maps are BTree-backed, so key order is sorted and stable.
    json!({
        "classes": specs.num_classes,
        "endian": "little",
        "input": [specs.input_w, specs.input_h],
        "scales": scales,
    })
    .to_string()
}

/// Serialize a tensor (values are stored as 32-bit floats).
pub fn save_bundle(h: &HeadTensor) -> Vec<u8> {
    let header = header_json(h.specs());
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(format!("{}\n", header.len()).as_bytes());
    out.extend_from_slice(header.as_bytes());
    for s in 0..h.specs().scales.len() {
        for &v in h.scale_values(s) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn parse_anchor_list(v: &Value, ctx: &str) -> Result<Vec<(f64, f64)>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::BadDocument(format!("{ctx}: expected an array")))?;
    arr.iter()
        .map(|pair| {
            let p = pair
                .as_array()
                .filter(|p| p.len() == 2)
                .ok_or_else(|| Error::BadDocument(format!("{ctx}: expected [w, h] pairs")))?;
            Ok((
                p[0].as_f64()
                    .ok_or_else(|| Error::BadDocument(format!("{ctx}: non-numeric anchor")))?,
                p[1].as_f64()
                    .ok_or_else(|| Error::BadDocument(format!("{ctx}: non-numeric anchor")))?,
            ))
        })
        .collect()
}

fn specs_from_header(header: &Value) -> Result<GridSpecs> {
    let bad = |msg: &str| Error::BadDocument(format!("bundle header: {msg}"));
    let classes = header
        .get("classes")
        .and_then(Value::as_u64)
        .ok_or_else(|| bad("missing classes"))? as usize;
    let endian = header
        .get("endian")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("missing endian"))?;
    if endian != "little" {
        return Err(bad("unsupported endianness"));
    }
    let input = header
        .get("input")
        .and_then(Value::as_array)
        .filter(|a| a.len() == 2)
        .ok_or_else(|| bad("missing input"))?;
    let input_w = input[0].as_u64().ok_or_else(|| bad("bad input width"))? as u32;
    let input_h = input[1].as_u64().ok_or_else(|| bad("bad input height"))? as u32;

    let mut scales = Vec::new();
    for (i, s) in header
        .get("scales")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing scales"))?
        .iter()
        .enumerate()
    {
        let ctx = format!("scales[{i}]");
        let grid_w = s
            .get("gw")
            .and_then(Value::as_u64)
            .ok_or_else(|| bad(&format!("{ctx}: missing gw")))? as usize;
        let grid_h = s
            .get("gh")
            .and_then(Value::as_u64)
            .ok_or_else(|| bad(&format!("{ctx}: missing gh")))? as usize;
        if grid_w == 0 || grid_h == 0 || input_w as usize % grid_w != 0 || input_h as usize % grid_h != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{ctx}: grid {grid_w}x{grid_h} does not divide input {input_w}x{input_h}"
            )));
        }
        let stride = input_w / grid_w as u32;
        if stride != input_h / grid_h as u32 {
            return Err(Error::ShapeMismatch(format!("{ctx}: non-square stride")));
        }
        let gd_angles = s
            .get("gd_angles")
            .and_then(Value::as_array)
            .ok_or_else(|| bad(&format!("{ctx}: missing gd_angles")))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| bad(&format!("{ctx}: bad angle"))))
            .collect::<Result<Vec<f64>>>()?;
        scales.push(ScaleSpec {
            scale_id: s
                .get("id")
                .and_then(Value::as_u64)
                .ok_or_else(|| bad(&format!("{ctx}: missing id")))? as u8,
            stride,
            grid_w,
            grid_h,
            od_anchors: parse_anchor_list(
                s.get("od_anchors").ok_or_else(|| bad(&format!("{ctx}: missing od_anchors")))?,
                &ctx,
            )?,
            gd_anchors: parse_anchor_list(
                s.get("gd_anchors").ok_or_else(|| bad(&format!("{ctx}: missing gd_anchors")))?,
                &ctx,
            )?,
            gd_angles,
        });
    }
    Ok(GridSpecs {
        input_w,
        input_h,
        num_classes: classes,
        scales,
    })
}

/// Deserialize a bundle produced by [`save_bundle`].
pub fn load_bundle(bytes: &[u8]) -> Result<HeadTensor> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    let newline = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::BadDocument("bundle: missing header length line".into()))?;
    let len_str = std::str::from_utf8(&rest[..newline])
        .map_err(|_| Error::BadDocument("bundle: header length is not ASCII".into()))?;
    let header_len: usize = len_str
        .trim()
        .parse()
        .map_err(|_| Error::BadDocument(format!("bundle: bad header length {len_str:?}")))?;
    let header_start = newline + 1;
    if rest.len() < header_start + header_len {
        return Err(Error::TruncatedPayload {
            expected: header_len,
            got: rest.len().saturating_sub(header_start),
        });
    }
    let header: Value = serde_json::from_slice(&rest[header_start..header_start + header_len])
        .map_err(|e| Error::BadDocument(format!("bundle header: {e}")))?;
    let specs = specs_from_header(&header)?;

    let payload = &rest[header_start + header_len..];
    let total: usize = (0..specs.scales.len()).map(|s| specs.scale_len(s)).sum();
    if payload.len() != total * 4 {
        return Err(Error::TruncatedPayload {
            expected: total * 4,
            got: payload.len(),
        });
    }

    let mut data = Vec::with_capacity(specs.scales.len());
    let mut offset = 0;
    for s in 0..specs.scales.len() {
        let n = specs.scale_len(s);
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let raw: [u8; 4] = payload[offset..offset + 4].try_into().unwrap();
            values.push(f32::from_le_bytes(raw) as f64);
            offset += 4;
        }
        data.push(values);
    }
    HeadTensor::from_values(&specs, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchor_codec::default_scale_specs;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(seed: u64) -> HeadTensor {
        let specs = default_scale_specs(64, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = HeadTensor::zeros(&specs);
        for s in 0..3 {
            for v in h.scale_values_mut(s) {
                // keep values exactly representable in f32
                *v = rng.random_range(-4.0f32..4.0f32) as f64;
            }
        }
        h
    }

    #[test]
    fn round_trip_preserves_values() {
        for seed in 0..5 {
            let h = random_tensor(seed);
            let bytes = save_bundle(&h);
            let back = load_bundle(&bytes).unwrap();
            assert_eq!(back.specs(), h.specs());
            for s in 0..3 {
                assert_eq!(back.scale_values(s), h.scale_values(s));
            }
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = save_bundle(&random_tensor(0));
        bytes[0] = b'X';
        assert!(matches!(load_bundle(&bytes), Err(Error::BadMagic)));
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = save_bundle(&random_tensor(0));
        let cut = &bytes[..bytes.len() - 8];
        assert!(matches!(
            load_bundle(cut),
            Err(Error::TruncatedPayload { .. })
        ));
    }
}
