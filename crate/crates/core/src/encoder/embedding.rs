//! Deterministic label embedding and sinusoidal scalar embedding.
//!
//! Labels are normalized (trimmed, lowercased, empty → `"none"`), hashed with
//! 64-bit FNV-1a, and the hash seeds a SplitMix64 stream whose outputs are
//! mapped to `[-1, 1)` and normalized to a unit vector.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub const EMPTY_LABEL_TOKEN: &str = "none";

pub fn normalize_label(label: &str) -> String {
    let t = label.trim().to_lowercase();
    if t.is_empty() {
        EMPTY_LABEL_TOKEN.to_string()
    } else {
        t
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 step; also used to derive per-node seeds.
#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a global seed with a key (node id, stream tag) into a new seed.
pub fn derive_seed(seed: u64, key: u64) -> u64 {
    let mut s = seed ^ key.wrapping_mul(0xd605_bbb5_8c8a_bd3b);
    splitmix64(&mut s)
}

/// Unit vector in `R^dim` determined by the normalized label.
pub fn sem_embed(label: &str, dim: usize) -> DVector<f64> {
    let mut state = fnv1a64(normalize_label(label).as_bytes());
    let mut v = DVector::from_fn(dim, |_, _| {
        let bits = splitmix64(&mut state) >> 11;
        bits as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    });
    let n = v.norm();
    if n > 0.0 {
        v /= n;
    }
    v
}

/// Label → vector lookup: the hashed embedding, or a user table (for
/// exported language-model vectors) with hashed fallback for unknown labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub enum LabelEmbedding {
    #[default]
    Hashed,
    Table(BTreeMap<String, Vec<f64>>),
}

impl LabelEmbedding {
    /// Loads a JSON object `{"label": [floats...], ...}`.
    pub fn from_json(text: &str) -> crate::Result<Self> {
        let raw: BTreeMap<String, Vec<f64>> = serde_json::from_str(text)?;
        Ok(LabelEmbedding::Table(
            raw.into_iter().map(|(k, v)| (normalize_label(&k), v)).collect(),
        ))
    }

    pub fn embed(&self, label: &str, dim: usize) -> DVector<f64> {
        match self {
            LabelEmbedding::Hashed => sem_embed(label, dim),
            LabelEmbedding::Table(t) => match t.get(&normalize_label(label)) {
                Some(v) if v.len() == dim => {
                    let v = DVector::from_column_slice(v);
                    let n = v.norm();
                    if n > 0.0 {
                        v / n
                    } else {
                        v
                    }
                }
                _ => sem_embed(label, dim),
            },
        }
    }
}

/// `[sin(v / base^(0/dims)), cos(..), sin(v / base^(2/dims)), cos(..), ...]`.
pub fn sinusoidal_embed(value: f64, dims: usize, period_base: f64) -> DVector<f64> {
    assert!(dims.is_multiple_of(2), "sinusoidal embedding needs an even dimension");
    assert!(period_base > 0.0, "period base must be positive");
    let mut out = DVector::zeros(dims);
    write_sinusoidal(value, period_base, out.as_mut_slice());
    out
}

/// In-place variant of [`sinusoidal_embed`].
pub fn write_sinusoidal(value: f64, period_base: f64, out: &mut [f64]) {
    let dims = out.len();
    for m in 0..dims / 2 {
        let div = period_base.powf(2.0 * m as f64 / dims as f64);
        let (s, c) = (value / div).sin_cos();
        out[2 * m] = s;
        out[2 * m + 1] = c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_value_alternates() {
        let e = sinusoidal_embed(0.0, 8, 10000.0);
        for m in 0..4 {
            assert_eq!(e[2 * m], 0.0);
            assert_eq!(e[2 * m + 1], 1.0);
        }
    }

    #[test]
    fn four_dim_reference_values() {
        let e = sinusoidal_embed(1.0, 4, 100.0);
        let want = [1.0_f64.sin(), 1.0_f64.cos(), 0.1_f64.sin(), 0.1_f64.cos()];
        for (g, w) in e.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn entries_bounded() {
        for v in [-1e6, -3.2, 0.7, 123.4, 1e9] {
            assert!(sinusoidal_embed(v, 16, 50.0).iter().all(|x| x.abs() <= 1.0));
        }
    }

    #[test]
    #[should_panic]
    fn odd_dims_rejected() {
        sinusoidal_embed(1.0, 5, 10.0);
    }

    #[test]
    fn sem_embed_is_unit_and_case_insensitive() {
        let a = sem_embed("Chair", 48);
        let b = sem_embed("  chair ", 48);
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_label_uses_none_token() {
        assert_eq!(sem_embed("", 16), sem_embed("none", 16));
    }

    #[test]
    fn distinct_labels_nearly_orthogonal() {
        let labels = ["chair", "sofa", "table", "lamp", "bed", "door"];
        for a in labels {
            for b in labels {
                if a != b {
                    assert!(sem_embed(a, 48).dot(&sem_embed(b, 48)).abs() < 0.6);
                }
            }
        }
    }

    #[test]
    fn table_lookup_with_fallback() {
        let t = LabelEmbedding::from_json(r#"{"Chair": [3.0, 4.0]}"#).unwrap();
        let v = t.embed("chair", 2);
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
        assert_eq!(t.embed("sofa", 2), sem_embed("sofa", 2));
    }
}
