//! Embedding providers, cosine scoring and the on-disk embedding store.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::distort::DistortionSpec;
use crate::error::{Error, Result};
use crate::imgcore::{resize_bilinear, to_grayscale, Image};

/// Canonical extractor input edge length.
pub const TOY_INPUT: u32 = 96;
const TOY_GRID: usize = 12;
const TOY_CELL: usize = 8;
pub const TOY_BLOCKS: usize = TOY_GRID * TOY_GRID;
pub const TOY_BINS: usize = 16;
pub const TOY_DIM: usize = TOY_BLOCKS + TOY_BINS;

/// Norms below this are treated as zero by [`safe_cosine`].
pub const ZERO_NORM: f64 = 1e-12;

/// Fixed-length vector of finite f32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimMismatch {
                expected: 1,
                found: 0,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f32) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * c).collect())
    }
}

/// Anything that turns an image into a fixed-dimension embedding.
///
/// Implementations must be deterministic and callable from many threads.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, img: &Image) -> Result<EmbeddingVector>;
}

/// Hand-crafted desk-scale extractor: block intensities plus a gradient
/// orientation histogram.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyExtractor;

/// Toy features before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyFeatures {
    /// 12x12 grid of 8x8 block means, scaled to [0, 1].
    pub blocks: Vec<f64>,
    /// Gradient magnitude summed per orientation bin.
    pub hist: Vec<f64>,
}

/// Grayscale, resize to 96x96, then block means and a 16-bin
/// magnitude-weighted orientation histogram of central differences.
pub fn toy_features(img: &Image) -> Result<ToyFeatures> {
    let gray = resize_bilinear(&to_grayscale(img), TOY_INPUT, TOY_INPUT)?;
    let n = TOY_INPUT as usize;
    let px = gray.pixels();

    let mut blocks = vec![0.0; TOY_BLOCKS];
    for by in 0..TOY_GRID {
        for bx in 0..TOY_GRID {
            let mut sum = 0u32;
            for y in by * TOY_CELL..(by + 1) * TOY_CELL {
                for x in bx * TOY_CELL..(bx + 1) * TOY_CELL {
                    sum += px[y * n + x] as u32;
                }
            }
            blocks[by * TOY_GRID + bx] = sum as f64 / (TOY_CELL * TOY_CELL) as f64 / 255.0;
        }
    }

    let mut hist = vec![0.0; TOY_BINS];
    let two_pi = 2.0 * std::f64::consts::PI;
    for y in 1..n - 1 {
        for x in 1..n - 1 {
            let gx = (px[y * n + x + 1] as f64 - px[y * n + x - 1] as f64) / 2.0;
            let gy = (px[(y + 1) * n + x] as f64 - px[(y - 1) * n + x] as f64) / 2.0;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let theta = libm::atan2(gy, gx) + std::f64::consts::PI;
            let bin = ((theta / two_pi * TOY_BINS as f64) as usize).min(TOY_BINS - 1);
            hist[bin] += mag;
        }
    }
    Ok(ToyFeatures { blocks, hist })
}

fn l2_normalized(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < ZERO_NORM {
        v.to_vec()
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

/// The toy embedding: each sub-vector is L2-normalized on its own so the
/// gradient histogram carries as much weight as the intensity layout, then
/// the 160-dim concatenation is normalized. An all-black image yields the
/// zero vector.
pub fn toy_embed(img: &Image) -> Result<EmbeddingVector> {
    let f = toy_features(img)?;
    let mut joined = l2_normalized(&f.blocks);
    joined.extend(l2_normalized(&f.hist));
    EmbeddingVector::new(l2_normalized(&joined).into_iter().map(|v| v as f32).collect())
}

impl EmbeddingProvider for ToyExtractor {
    fn name(&self) -> &str {
        "toy"
    }

    fn dim(&self) -> usize {
        TOY_DIM
    }

    fn embed(&self, img: &Image) -> Result<EmbeddingVector> {
        toy_embed(img)
    }
}

// ---------------------------------------------------------------------------
// Similarity
// ---------------------------------------------------------------------------

/// `a·b / (‖a‖‖b‖)`, computed in f64.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity that substitutes the unit vector `e₁` for any
/// zero-norm input. The flag reports whether a substitution happened.
pub fn safe_cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<(f64, bool)> {
    let unit = |dim: usize| {
        let mut v = vec![0.0f32; dim];
        v[0] = 1.0;
        EmbeddingVector(v)
    };
    let mut substituted = false;
    let fa;
    let a = if a.norm() < ZERO_NORM {
        substituted = true;
        fa = unit(a.dim());
        &fa
    } else {
        a
    };
    let fb;
    let b = if b.norm() < ZERO_NORM {
        substituted = true;
        fb = unit(b.dim());
        &fb
    } else {
        b
    };
    Ok((cosine_similarity(a, b)?, substituted))
}

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

pub const STORE_MAGIC: &[u8; 4] = b"EMB1";

/// Store key for an image under a distortion: the bare image id for
/// `Identity`, otherwise `image_id@descriptor` (e.g. `img7@blur:2.2`).
pub fn store_key(image_id: &str, spec: &DistortionSpec) -> String {
    match spec {
        DistortionSpec::Identity => image_id.to_string(),
        _ => format!("{image_id}@{}", spec.descriptor()),
    }
}

/// Keyed embeddings of a single dimension, iterated in key order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    entries: BTreeMap<String, EmbeddingVector>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, v: EmbeddingVector) -> Result<()> {
        let key = key.into();
        if v.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: v.dim(),
            });
        }
        if key.len() > u16::MAX as usize {
            return Err(Error::Store(format!("key longer than {} bytes", u16::MAX)));
        }
        if self.entries.contains_key(&key) {
            return Err(Error::DuplicateKey(key));
        }
        self.entries.insert(key, v);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&EmbeddingVector> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Binary `EMB1` encoding (all integers and floats little-endian).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.len() * (self.dim * 4 + 16));
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (key, v) in &self.entries {
            out.extend_from_slice(&(key.len() as u16).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            for x in v.values() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        struct Cursor<'a>(&'a [u8]);
        impl<'a> Cursor<'a> {
            fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
                if self.0.len() < n {
                    return Err(Error::Store(format!("truncated file while reading {what}")));
                }
                let (head, tail) = self.0.split_at(n);
                self.0 = tail;
                Ok(head)
            }
            fn u32(&mut self, what: &str) -> Result<u32> {
                Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
            }
        }

        let mut cur = Cursor(bytes);
        if cur.take(4, "magic")? != STORE_MAGIC {
            return Err(Error::Store("bad magic (expected EMB1)".into()));
        }
        let dim = cur.u32("dim")? as usize;
        if dim == 0 {
            return Err(Error::Store("dimension must be positive".into()));
        }
        let count = cur.u32("count")?;
        let mut store = Self::new(dim);
        for i in 0..count {
            let klen = u16::from_le_bytes(cur.take(2, "key length")?.try_into().unwrap());
            let key = std::str::from_utf8(cur.take(klen as usize, "key")?)
                .map_err(|_| Error::Store(format!("record {i}: key is not UTF-8")))?
                .to_string();
            let raw = cur.take(dim * 4, "vector")?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.insert(key, EmbeddingVector::new(values)?)?;
        }
        if !cur.0.is_empty() {
            return Err(Error::Store(format!("{} trailing bytes", cur.0.len())));
        }
        Ok(store)
    }

    /// CSV with header `key,v0,...,v{dim-1}`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["key".to_string()];
        header.extend((0..self.dim).map(|i| format!("v{i}")));
        w.write_record(&header)?;
        for (key, v) in &self.entries {
            let mut row = vec![key.clone()];
            // `{:?}` on f32 is the shortest round-tripping decimal.
            row.extend(v.values().iter().map(|x| format!("{x:?}")));
            w.write_record(&row)?;
        }
        w.into_inner()
            .map_err(|e| Error::Store(format!("csv flush: {e}")))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r.headers()?.clone();
        if header.get(0) != Some("key") || header.len() < 2 {
            return Err(Error::Store("CSV header must be key,v0,...".into()));
        }
        for (i, name) in header.iter().skip(1).enumerate() {
            if name != format!("v{i}") {
                return Err(Error::Store(format!("unexpected CSV column {name:?}")));
            }
        }
        let mut store = Self::new(header.len() - 1);
        for record in r.records() {
            let record = record?;
            let key = record.get(0).unwrap_or_default().to_string();
            let values = record
                .iter()
                .skip(1)
                .map(|t| {
                    t.trim()
                        .parse::<f32>()
                        .map_err(|_| Error::Store(format!("key {key:?}: bad value {t:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            store.insert(key, EmbeddingVector::new(values)?)?;
        }
        Ok(store)
    }

    /// Write binary, or CSV when the path ends in `.csv`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = if path.extension().is_some_and(|e| e == "csv") {
            self.to_csv()?
        } else {
            self.to_bytes()
        };
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Read either encoding, chosen by content.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"key,") {
            Self::from_csv(&bytes)
        } else {
            Self::from_bytes(&bytes)
        }
    }
}
