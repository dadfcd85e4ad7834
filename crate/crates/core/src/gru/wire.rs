//! Binary model payload exchanged between clients and server.
//!
//! Layout (little-endian):
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `RFGR`                           |
//! | 4      | 4    | format version (u32)                   |
//! | 8      | 4    | hidden size `hs` (u32)                 |
//! | 12     | 4    | forecast horizon `F` (u32)             |
//! | 16     | 4·P  | parameters as f32, in [`Block`] order  |
//!
//! [`Block`]: super::Block

use super::ModelParams;
use crate::error::ModelError;

pub const MAGIC: [u8; 4] = *b"RFGR";
pub const WIRE_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

pub fn serialize(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * params.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.hidden() as u32).to_le_bytes());
    out.extend_from_slice(&(params.forecast() as u32).to_le_bytes());
    for v in params.as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn deserialize(bytes: &[u8]) -> Result<ModelParams, ModelError> {
    if bytes.len() < HEADER_LEN {
        return Err(ModelError::Truncated {
            needed: HEADER_LEN,
            got: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4-byte slice");
    let version = u32_at(bytes, 4);
    if magic != MAGIC || version != WIRE_VERSION {
        return Err(ModelError::Version { magic, version });
    }
    let hidden = u32_at(bytes, 8) as usize;
    let forecast = u32_at(bytes, 12) as usize;
    let count = ModelParams::count(hidden, forecast);
    let needed = HEADER_LEN + 4 * count;
    if bytes.len() < needed {
        return Err(ModelError::Truncated {
            needed,
            got: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(ModelError::Trailing {
            extra: bytes.len() - needed,
        });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();
    ModelParams::from_values(hidden, forecast, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn payload_size() {
        let p = ModelParams::zeros(128, 1);
        assert_eq!(serialize(&p).len(), 50_049 * 4 + HEADER_LEN);
    }

    #[test]
    fn corrupted_header() {
        let mut bytes = serialize(&ModelParams::zeros(2, 1));
        bytes[4] = 9;
        assert!(matches!(deserialize(&bytes), Err(ModelError::Version { version: 9, .. })));
        let mut bytes = serialize(&ModelParams::zeros(2, 1));
        bytes[0] = b'X';
        assert!(matches!(deserialize(&bytes), Err(ModelError::Version { .. })));
    }

    #[test]
    fn truncated_and_trailing() {
        let bytes = serialize(&ModelParams::zeros(2, 1));
        assert!(matches!(deserialize(&bytes[..10]), Err(ModelError::Truncated { .. })));
        assert!(matches!(
            deserialize(&bytes[..bytes.len() - 1]),
            Err(ModelError::Truncated { .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(deserialize(&long), Err(ModelError::Trailing { extra: 1 })));
    }

    proptest! {
        #[test]
        fn single_precision_round_trip(
            hs in 1usize..6,
            f in 1usize..3,
            seed in any::<u64>(),
        ) {
            let p = ModelParams::init(seed, hs, f).unwrap();
            let once = deserialize(&serialize(&p)).unwrap();
            let bytes = serialize(&once);
            prop_assert_eq!(&bytes, &serialize(&deserialize(&bytes).unwrap()));
            for (a, b) in p.as_slice().iter().zip(once.as_slice()) {
                prop_assert_eq!(*a as f32, *b as f32);
            }
        }
    }
}
