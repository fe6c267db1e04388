//! Encoder weights: seeded generation and a little-endian `f32` file format.
//!
//! File layout: `"SGRW"`, then `u32` version, `d`, `d_b`, `d_s`, `d_z`,
//! `K_p`, layer count and fusion code. Tensors follow in declared order
//! (box MLP, per layer query/key/value/message MLP, point encoder, shape
//! head, node linear), each as `u32 rows, u32 cols, u32 activation`,
//! row-major weights, then the bias.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dense::{Activation, Dense, Mlp};
use super::embedding::LabelEmbedding;
use super::{EncoderConfig, Fusion};
use crate::error::{Error, Result};

pub const WEIGHT_MAGIC: &[u8; 4] = b"SGRW";
pub const WEIGHT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GnnLayerWeights {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    /// `2D → D` (ReLU) → `D`.
    pub message: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub d: usize,
    pub d_b: usize,
    pub d_s: usize,
    pub d_z: usize,
    /// Point budget recorded in the file header.
    pub k_p: usize,
    pub fusion: Fusion,
    pub box_mlp: Dense,
    pub gnn: Vec<GnnLayerWeights>,
    pub point_encoder: Dense,
    pub shape_head: Dense,
    /// Shared map applied to fused features before node similarity.
    pub node_linear: Dense,
    pub label_embedding: LabelEmbedding,
}

impl EncoderWeights {
    /// Deterministic random weights sized for `cfg`.
    pub fn seeded(cfg: &EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let box_mlp = Dense::random(&mut rng, 3, cfg.d_b, 0.5, Activation::Tanh);
        let width = cfg.gnn_dim();
        let tdim = cfg.triplet_dim();
        let gnn = (0..cfg.gnn_layers)
            .map(|_| GnnLayerWeights {
                query: Dense::random(&mut rng, tdim, width, 1.0, Activation::Identity),
                key: Dense::random(&mut rng, tdim, width, 1.0, Activation::Identity),
                value: Dense::random(&mut rng, tdim, width, 1.0, Activation::Identity),
                message: Mlp {
                    layers: vec![
                        Dense::random(&mut rng, 2 * width, width, 2f64.sqrt(), Activation::Relu),
                        Dense::random(&mut rng, width, width, 0.5, Activation::Identity),
                    ],
                },
            })
            .collect();
        let ddim = cfg.descriptor_dim();
        let point_encoder = if ddim == cfg.d_z {
            Dense::random_orthogonal(&mut rng, ddim, Activation::Identity)
        } else {
            Dense::random(&mut rng, ddim, cfg.d_z, 1.0, Activation::Identity)
        };
        let shape_head = Dense::random(&mut rng, cfg.d_z, cfg.d_s, 0.5, Activation::Tanh);
        let node_linear = Dense::random_orthogonal(&mut rng, cfg.fused_dim(), Activation::Identity);
        Self {
            d: cfg.d,
            d_b: cfg.d_b,
            d_s: cfg.d_s,
            d_z: cfg.d_z,
            k_p: cfg.k_p,
            fusion: cfg.fusion,
            box_mlp,
            gnn,
            point_encoder,
            shape_head,
            node_linear,
            label_embedding: LabelEmbedding::Hashed,
        }
    }

    /// Checks that every tensor has the shape `cfg` expects.
    pub fn check(&self, cfg: &EncoderConfig) -> Result<()> {
        let mismatch = |what: &'static str, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { what, expected, got })
            }
        };
        mismatch("weights d", cfg.d, self.d)?;
        mismatch("weights d_b", cfg.d_b, self.d_b)?;
        mismatch("weights d_s", cfg.d_s, self.d_s)?;
        mismatch("weights d_z", cfg.d_z, self.d_z)?;
        mismatch("gnn layer count", cfg.gnn_layers, self.gnn.len())?;
        if cfg.fusion != self.fusion {
            return Err(Error::Config(format!(
                "weights were built for {:?} fusion, config asks for {:?}",
                self.fusion, cfg.fusion
            )));
        }
        let shape = |what: &'static str, l: &Dense, i: usize, o: usize| {
            mismatch(what, i, l.input_dim())?;
            mismatch(what, o, l.output_dim())
        };
        shape("box mlp", &self.box_mlp, 3, cfg.d_b)?;
        let (w, t) = (cfg.gnn_dim(), cfg.triplet_dim());
        for l in &self.gnn {
            shape("query", &l.query, t, w)?;
            shape("key", &l.key, t, w)?;
            shape("value", &l.value, t, w)?;
            mismatch("message mlp depth", 2, l.message.layers.len())?;
            shape("message mlp", &l.message.layers[0], 2 * w, w)?;
            shape("message mlp", &l.message.layers[1], w, w)?;
        }
        shape("point encoder", &self.point_encoder, cfg.descriptor_dim(), cfg.d_z)?;
        shape("shape head", &self.shape_head, cfg.d_z, cfg.d_s)?;
        shape("node linear", &self.node_linear, cfg.fused_dim(), cfg.fused_dim())
    }

    fn tensors(&self) -> Vec<&Dense> {
        let mut v = vec![&self.box_mlp];
        for l in &self.gnn {
            v.extend([&l.query, &l.key, &l.value]);
            v.extend(l.message.layers.iter());
        }
        v.extend([&self.point_encoder, &self.shape_head, &self.node_linear]);
        v
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHT_MAGIC);
        let fusion = match self.fusion {
            Fusion::Late => 0u32,
            Fusion::Early => 1,
        };
        for v in [
            WEIGHT_VERSION,
            self.d as u32,
            self.d_b as u32,
            self.d_s as u32,
            self.d_z as u32,
            self.k_p as u32,
            self.gnn.len() as u32,
            fusion,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for t in self.tensors() {
            for v in [t.output_dim() as u32, t.input_dim() as u32, t.activation.code()] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for r in 0..t.output_dim() {
                for c in 0..t.input_dim() {
                    out.extend_from_slice(&(t.weight[(r, c)] as f32).to_le_bytes());
                }
            }
            for b in t.bias.iter() {
                out.extend_from_slice(&(*b as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        if rd.take(4)? != WEIGHT_MAGIC {
            return Err(Error::WeightFormat("bad magic".into()));
        }
        let version = rd.u32()?;
        if version != WEIGHT_VERSION {
            return Err(Error::WeightFormat(format!("unsupported version {version}")));
        }
        let d = rd.u32()? as usize;
        let d_b = rd.u32()? as usize;
        let d_s = rd.u32()? as usize;
        let d_z = rd.u32()? as usize;
        let k_p = rd.u32()? as usize;
        let layers = rd.u32()? as usize;
        let fusion = match rd.u32()? {
            0 => Fusion::Late,
            1 => Fusion::Early,
            c => return Err(Error::WeightFormat(format!("unknown fusion code {c}"))),
        };
        let box_mlp = rd.dense()?;
        let mut gnn = Vec::with_capacity(layers);
        for _ in 0..layers {
            gnn.push(GnnLayerWeights {
                query: rd.dense()?,
                key: rd.dense()?,
                value: rd.dense()?,
                message: Mlp {
                    layers: vec![rd.dense()?, rd.dense()?],
                },
            });
        }
        let point_encoder = rd.dense()?;
        let shape_head = rd.dense()?;
        let node_linear = rd.dense()?;
        if rd.pos != bytes.len() {
            return Err(Error::WeightFormat(format!("{} trailing bytes", bytes.len() - rd.pos)));
        }
        Ok(Self {
            d,
            d_b,
            d_s,
            d_z,
            k_p,
            fusion,
            box_mlp,
            gnn,
            point_encoder,
            shape_head,
            node_linear,
            label_embedding: LabelEmbedding::Hashed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::WeightFormat("file truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }

    fn dense(&mut self) -> Result<Dense> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let code = self.u32()?;
        let act =
            Activation::from_code(code).ok_or_else(|| Error::WeightFormat(format!("unknown activation {code}")))?;
        if rows.saturating_mul(cols) > self.bytes.len() {
            return Err(Error::WeightFormat("tensor larger than file".into()));
        }
        let mut w = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                w[(r, c)] = self.f32()?;
            }
        }
        let mut b = DVector::zeros(rows);
        for r in 0..rows {
            b[r] = self.f32()?;
        }
        Ok(Dense::new(w, b, act))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_is_deterministic_and_consistent() {
        let cfg = EncoderConfig::default();
        let a = EncoderWeights::seeded(&cfg, 11);
        assert_eq!(a, EncoderWeights::seeded(&cfg, 11));
        assert_ne!(a, EncoderWeights::seeded(&cfg, 12));
        a.check(&cfg).unwrap();
    }

    #[test]
    fn file_round_trip_is_exact() {
        let cfg = EncoderConfig {
            gnn_layers: 2,
            ..EncoderConfig::default()
        };
        let w = EncoderWeights::seeded(&cfg, 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        w.save(&p).unwrap();
        assert_eq!(EncoderWeights::load(&p).unwrap(), w);
    }

    #[test]
    fn corrupt_files_rejected() {
        let cfg = EncoderConfig::default();
        let bytes = EncoderWeights::seeded(&cfg, 3).to_bytes();
        assert!(EncoderWeights::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(EncoderWeights::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(EncoderWeights::from_bytes(&long).is_err());
    }

    #[test]
    fn header_fields_little_endian() {
        let cfg = EncoderConfig::default();
        let bytes = EncoderWeights::seeded(&cfg, 0).to_bytes();
        assert_eq!(&bytes[0..4], b"SGRW");
        let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        assert_eq!(field(0), WEIGHT_VERSION);
        assert_eq!(field(1), 64);
        assert_eq!(field(5), 256);
    }
}
