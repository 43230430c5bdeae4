//! Versioned single-file model format.
//!
//! ```text
//! "WIBF" | version u16 | payload_len u64 | payload | crc32 u32
//! ```
//!
//! All integers are little-endian. The payload holds the dimension, class
//! labels, hyperparameters, training seed and one length-prefixed record per
//! tree (preorder nodes). The CRC covers every byte before it.

use std::fs;
use std::io;
use std::path::Path;

use super::{Forest, ForestError, Hyperparams, Node, Tree};

pub const MAGIC: &[u8; 4] = b"WIBF";
pub const FORMAT_VERSION: u16 = 1;

const PREFIX_LEN: usize = 4 + 2 + 8;
const NONE_U32: u32 = u32::MAX;
const TAG_SPLIT: u8 = 0;
const TAG_LEAF: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("model file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("model file checksum mismatch")]
    ChecksumMismatch,
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("invalid forest in model file: {0}")]
    Invalid(#[from] ForestError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Forest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut p = Vec::new();
        put_u32(&mut p, self.dim as u32);
        put_u32(&mut p, self.classes.len() as u32);
        for c in &self.classes {
            put_u32(&mut p, c.len() as u32);
            p.extend_from_slice(c.as_bytes());
        }
        let hp = &self.hyperparams;
        put_u32(&mut p, hp.n_trees as u32);
        put_u32(&mut p, hp.max_depth.map_or(NONE_U32, |d| d as u32));
        put_u32(&mut p, hp.min_leaf_samples as u32);
        put_u32(&mut p, hp.features_per_split.map_or(NONE_U32, |k| k as u32));
        p.push(hp.bootstrap as u8);
        p.extend_from_slice(&self.train_seed.to_le_bytes());

        put_u32(&mut p, self.trees.len() as u32);
        for tree in &self.trees {
            let mut rec = Vec::new();
            put_u32(&mut rec, tree.nodes.len() as u32);
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        rec.push(TAG_SPLIT);
                        put_u32(&mut rec, *feature);
                        rec.extend_from_slice(&threshold.to_bits().to_le_bytes());
                        put_u32(&mut rec, *left);
                        put_u32(&mut rec, *right);
                    }
                    Node::Leaf { counts } => {
                        rec.push(TAG_LEAF);
                        counts.iter().for_each(|c| put_u32(&mut rec, *c));
                    }
                }
            }
            put_u32(&mut p, rec.len() as u32);
            p.extend_from_slice(&rec);
        }

        let mut out = Vec::with_capacity(PREFIX_LEN + p.len() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        out.extend_from_slice(&p);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses a model file. Any defect is an error; a partially read forest
    /// is never returned.
    pub fn from_bytes(bytes: &[u8]) -> Result<Forest, ModelFileError> {
        if bytes.len() < 4 {
            return Err(truncated(PREFIX_LEN + 4, bytes.len()));
        }
        if &bytes[..4] != MAGIC {
            return Err(ModelFileError::BadMagic);
        }
        if bytes.len() < 6 {
            return Err(truncated(PREFIX_LEN + 4, bytes.len()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(ModelFileError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < PREFIX_LEN {
            return Err(truncated(PREFIX_LEN + 4, bytes.len()));
        }
        let payload_len = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
        let expected = usize::try_from(payload_len)
            .ok()
            .and_then(|n| n.checked_add(PREFIX_LEN + 4))
            .ok_or_else(|| ModelFileError::Malformed("payload length overflows".into()))?;
        if bytes.len() < expected {
            return Err(truncated(expected, bytes.len()));
        }
        if bytes.len() > expected {
            return Err(ModelFileError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - expected
            )));
        }
        let body = &bytes[..expected - 4];
        let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(ModelFileError::ChecksumMismatch);
        }

        let mut r = Reader {
            buf: &body[PREFIX_LEN..],
        };
        let dim = r.u32()? as usize;
        let n_classes = r.u32()? as usize;
        let mut classes = Vec::with_capacity(n_classes.min(1024));
        for _ in 0..n_classes {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            classes.push(
                String::from_utf8(raw.to_vec())
                    .map_err(|_| ModelFileError::Malformed("class label is not UTF-8".into()))?,
            );
        }
        let n_trees = r.u32()? as usize;
        let max_depth = opt(r.u32()?);
        let min_leaf_samples = r.u32()? as usize;
        let features_per_split = opt(r.u32()?);
        let bootstrap = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(ModelFileError::Malformed(format!("bootstrap flag {b}"))),
        };
        let train_seed = r.u64()?;
        let hyperparams = Hyperparams {
            n_trees,
            max_depth,
            min_leaf_samples,
            features_per_split,
            bootstrap,
        };

        let tree_count = r.u32()? as usize;
        let mut trees = Vec::with_capacity(tree_count.min(1 << 16));
        for t in 0..tree_count {
            let rec_len = r.u32()? as usize;
            let mut rec = Reader { buf: r.take(rec_len)? };
            let node_count = rec.u32()? as usize;
            let mut nodes = Vec::with_capacity(node_count.min(1 << 20));
            for _ in 0..node_count {
                nodes.push(match rec.u8()? {
                    TAG_SPLIT => Node::Split {
                        feature: rec.u32()?,
                        threshold: f64::from_bits(rec.u64()?),
                        left: rec.u32()?,
                        right: rec.u32()?,
                    },
                    TAG_LEAF => Node::Leaf {
                        counts: (0..n_classes).map(|_| rec.u32()).collect::<Result<_, _>>()?,
                    },
                    tag => return Err(ModelFileError::Malformed(format!("tree {t}: node tag {tag}"))),
                });
            }
            if !rec.buf.is_empty() {
                return Err(ModelFileError::Malformed(format!("tree {t}: record has trailing bytes")));
            }
            trees.push(Tree { nodes });
        }
        if !r.buf.is_empty() {
            return Err(ModelFileError::Malformed("payload has trailing bytes".into()));
        }
        Ok(Forest::new(trees, dim, classes, hyperparams, train_seed)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelFileError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Forest, ModelFileError> {
        Forest::from_bytes(&fs::read(path)?)
    }
}

fn truncated(expected: usize, found: usize) -> ModelFileError {
    ModelFileError::Truncated { expected, found }
}

fn opt(v: u32) -> Option<usize> {
    (v != NONE_U32).then_some(v as usize)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelFileError> {
        if self.buf.len() < n {
            return Err(ModelFileError::Malformed(format!(
                "record needs {n} bytes, {} left",
                self.buf.len()
            )));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, ModelFileError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelFileError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
