//! Binary checkpoint format.
//!
//! ```text
//! "ADDA"                      4 bytes
//! version                     u16 LE
//! layer table length          u32 LE, then UTF-8 lines "name d0xd1x..\n"
//! table digest                first 8 bytes of SHA-256(layer table)
//! metadata length             u32 LE, then UTF-8 JSON
//! payload                     f32 LE, layers in table order
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Module;

use super::layer_table;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ADDA";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: u32,
    pub dataset: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayerEntry {
    fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Parameters of one or more modules, flattened in layer-table order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub layers: Vec<LayerEntry>,
    pub meta: CheckpointMeta,
    pub payload: Vec<f32>,
}

fn render_table(layers: &[LayerEntry]) -> String {
    let mut s = String::new();
    for l in layers {
        let dims: Vec<String> = l.shape.iter().map(usize::to_string).collect();
        s.push_str(&l.name);
        s.push(' ');
        s.push_str(&dims.join("x"));
        s.push('\n');
    }
    s
}

fn parse_table(text: &str) -> Result<Vec<LayerEntry>> {
    text.lines()
        .map(|line| {
            let (name, dims) = line
                .split_once(' ')
                .ok_or_else(|| Error::Fingerprint(format!("bad layer line {line:?}")))?;
            let shape = dims
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Fingerprint(format!("bad layer shape {dims:?}")))?;
            Ok(LayerEntry {
                name: name.to_string(),
                shape,
            })
        })
        .collect()
}

fn digest(table: &str) -> [u8; 8] {
    let full = Sha256::digest(table.as_bytes());
    let mut out = [0u8; 8];
    out.copy_from_slice(&full[..8]);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Truncated {
                expected: self.pos.saturating_add(n),
                found: self.bytes.len(),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn capture(modules: &[&dyn Module<f32>], meta: CheckpointMeta) -> Self {
        let mut layers = Vec::new();
        let mut payload = Vec::new();
        for m in modules {
            layers.extend(layer_table(*m));
            for p in m.parameters() {
                payload.extend_from_slice(p.value().data());
            }
        }
        Checkpoint { layers, meta, payload }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerEntry::numel).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let table = render_table(&self.layers);
        let meta = serde_json::to_string(&self.meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(26 + table.len() + meta.len() + 4 * self.payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(table.len() as u32).to_le_bytes());
        out.extend_from_slice(table.as_bytes());
        out.extend_from_slice(&digest(&table));
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic(u32::from_be_bytes(magic.try_into().unwrap())));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version(version));
        }
        let table_len = r.u32()? as usize;
        let table_bytes = r.take(table_len)?;
        let stored_digest = r.take(8)?;
        let table =
            std::str::from_utf8(table_bytes).map_err(|_| Error::Fingerprint("layer table is not UTF-8".into()))?;
        if digest(table) != stored_digest {
            return Err(Error::Fingerprint("layer table digest mismatch".into()));
        }
        let layers = parse_table(table)?;
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        let count: usize = layers.iter().map(LayerEntry::numel).sum();
        let rest = &bytes[r.pos..];
        if rest.len() != 4 * count {
            return Err(Error::Truncated {
                expected: r.pos + 4 * count,
                found: bytes.len(),
            });
        }
        let payload = rest
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Checkpoint { layers, meta, payload })
    }

    /// Copies the stored values into `module`. Every parameter of the module
    /// must appear in the table with the same shape; otherwise nothing is
    /// written.
    pub fn restore<M: Module<f32> + ?Sized>(&self, module: &mut M) -> Result<()> {
        let mut offsets = Vec::new();
        for want in layer_table(module) {
            let mut offset = 0;
            let mut found = None;
            for l in &self.layers {
                if l.name == want.name {
                    found = Some((l, offset));
                    break;
                }
                offset += l.numel();
            }
            match found {
                Some((l, off)) if l.shape == want.shape => offsets.push(off),
                Some((l, _)) => {
                    return Err(Error::Fingerprint(format!(
                        "{} has shape {:?} in checkpoint, module expects {:?}",
                        want.name, l.shape, want.shape
                    )))
                }
                None => return Err(Error::Fingerprint(format!("{} missing from checkpoint", want.name))),
            }
        }
        for (p, off) in module.parameters_mut().into_iter().zip(offsets) {
            let n = p.value().numel();
            p.value_mut().data_mut().copy_from_slice(&self.payload[off..off + n]);
        }
        Ok(())
    }
}

pub fn save_checkpoint(modules: &[&dyn Module<f32>], meta: CheckpointMeta) -> Vec<u8> {
    Checkpoint::capture(modules, meta).to_bytes()
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    Checkpoint::from_bytes(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Classifier, Discriminator, Encoder};

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            seed: 42,
            epoch: 3,
            dataset: "mnist".into(),
        }
    }

    fn header_len(bytes: &[u8]) -> usize {
        let table_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let meta_at = 10 + table_len + 8;
        let meta_len = u32::from_le_bytes(bytes[meta_at..meta_at + 4].try_into().unwrap()) as usize;
        meta_at + 4 + meta_len
    }

    #[test]
    fn encoder_round_trip_is_bit_exact() {
        let enc = Encoder::<f32>::init(5);
        let bytes = save_checkpoint(&[&enc], meta());
        let ck = load_checkpoint(&bytes).unwrap();
        assert_eq!(ck.meta, meta());
        let mut other = Encoder::<f32>::init(6);
        ck.restore(&mut other).unwrap();
        for (a, b) in enc.parameters().iter().zip(other.parameters()) {
            let bits_a: Vec<u32> = a.value().data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.value().data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn byte_length_is_header_plus_payload() {
        let enc = Encoder::<f32>::init(1);
        let bytes = save_checkpoint(&[&enc], meta());
        assert_eq!(bytes.len(), header_len(&bytes) + 4 * 426_070);
    }

    #[test]
    fn corrupt_fingerprint_byte_is_rejected() {
        let enc = Encoder::<f32>::init(1);
        let mut bytes = save_checkpoint(&[&enc], meta());
        bytes[12] ^= 0x01;
        assert!(matches!(load_checkpoint(&bytes), Err(Error::Fingerprint(_))));
    }

    #[test]
    fn version_and_truncation_errors() {
        let c = Classifier::<f32>::init(1);
        let bytes = save_checkpoint(&[&c], meta());
        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(load_checkpoint(&bad_version), Err(Error::Version(9))));
        assert!(matches!(
            load_checkpoint(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(load_checkpoint(&bytes[..7]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn mismatched_module_leaves_parameters_untouched() {
        let c = Classifier::<f32>::init(1);
        let ck = load_checkpoint(&save_checkpoint(&[&c], meta())).unwrap();
        let mut d = Discriminator::<f32>::init(2);
        let before = d.clone();
        assert!(matches!(ck.restore(&mut d), Err(Error::Fingerprint(_))));
        assert_eq!(d.fc1_weight.value(), before.fc1_weight.value());
    }

    #[test]
    fn combined_checkpoint_restores_each_module() {
        let enc = Encoder::<f32>::init(3);
        let cls = Classifier::<f32>::init(3);
        let ck = load_checkpoint(&save_checkpoint(&[&enc, &cls], meta())).unwrap();
        let mut cls2 = Classifier::<f32>::init(4);
        ck.restore(&mut cls2).unwrap();
        assert_eq!(cls2.fc_weight.value(), cls.fc_weight.value());
        assert_eq!(ck.param_count(), 426_070 + 5_010);
    }
}
