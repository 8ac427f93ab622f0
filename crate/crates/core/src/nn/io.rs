//! Weight files: `MRMW` magic, little-endian u32 header length, JSON header,
//! then the parameters as little-endian f32.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Net, NnError, Weights};

const MAGIC: &[u8; 4] = b"MRMW";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsHeader {
    pub spec_hash: String,
    pub seed: u64,
    pub epochs: usize,
    pub n_params: usize,
}

pub fn encode_weights(header: &WeightsHeader, w: &Weights) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 4 * w.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &w.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_weights(net: &Net, bytes: &[u8]) -> Result<(WeightsHeader, Weights), NnError> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(NnError::Format("missing magic".into()));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| NnError::Format("truncated header".into()))?;
    let header: WeightsHeader =
        serde_json::from_slice(body).map_err(|e| NnError::Format(format!("header: {e}")))?;
    if header.spec_hash != net.spec_hash() {
        return Err(NnError::SpecHash {
            file: header.spec_hash,
            expected: net.spec_hash().to_string(),
        });
    }
    if header.n_params != net.n_params() {
        return Err(NnError::ParamCount {
            expected: net.n_params(),
            got: header.n_params,
        });
    }
    let raw = &bytes[8 + hlen..];
    if raw.len() != 4 * header.n_params {
        return Err(NnError::Format(format!(
            "expected {} parameter bytes, found {}",
            4 * header.n_params,
            raw.len()
        )));
    }
    let params: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let w = Weights { params };
    if !w.all_finite() {
        return Err(NnError::Format("non-finite parameter".into()));
    }
    Ok((header, w))
}

pub fn save_weights(path: impl AsRef<Path>, net: &Net, w: &Weights, seed: u64, epochs: usize) -> Result<(), NnError> {
    net.check_weights(w)?;
    let header = WeightsHeader {
        spec_hash: net.spec_hash().to_string(),
        seed,
        epochs,
        n_params: net.n_params(),
    };
    crate::util::write_atomic(path.as_ref(), &encode_weights(&header, w))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>, net: &Net) -> Result<(WeightsHeader, Weights), NnError> {
    decode_weights(net, &fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec, NetSpec};

    fn net(units: usize) -> Net {
        Net::new(NetSpec {
            input_shape: [1, 1, 3],
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units,
                    activation: Activation::Tanh,
                },
            ],
        })
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let n = net(2);
        let w = n.init_weights(123);
        save_weights(&path, &n, &w, 123, 7).unwrap();
        let (h, back) = load_weights(&path, &n).unwrap();
        assert_eq!(h.seed, 123);
        assert_eq!(h.epochs, 7);
        let bits = |w: &Weights| w.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&w));
    }

    #[test]
    fn truncated_file_is_an_error() {
        let n = net(2);
        let header = WeightsHeader {
            spec_hash: n.spec_hash().into(),
            seed: 0,
            epochs: 1,
            n_params: n.n_params(),
        };
        let mut bytes = encode_weights(&header, &n.init_weights(0));
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(decode_weights(&n, &bytes), Err(NnError::Format(_))));
        assert!(decode_weights(&n, &bytes[..10]).is_err());
    }

    #[test]
    fn wrong_spec_is_refused() {
        let a = net(2);
        let b = net(3);
        let header = WeightsHeader {
            spec_hash: a.spec_hash().into(),
            seed: 0,
            epochs: 1,
            n_params: a.n_params(),
        };
        let bytes = encode_weights(&header, &a.init_weights(0));
        assert!(matches!(decode_weights(&b, &bytes), Err(NnError::SpecHash { .. })));
    }
}
