//! Motion-primitive vocabulary: k-means over per-step ego-frame Δ-poses.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::binio::{read_file, sha256, write_file, BinReader, BinWriter, FormatError};
use crate::geom::{integrate, DeltaPose, GeomError, Pose2D};
use crate::sim::FUTURE_STEPS;

pub type TokenId = u32;

/// Tokens per 1.0 s action block.
pub const BLOCK_LEN: usize = 10;
pub const MAX_BLOCKS: usize = FUTURE_STEPS / BLOCK_LEN;
pub const CODEBOOK_FORMAT_VERSION: u32 = 1;
const MAGIC: [u8; 4] = *b"LCCB";

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("cannot fit a codebook on empty data")]
    Empty,
    #[error("non-finite Δ-pose at index {0}")]
    NonFinite(usize),
    #[error("vocabulary size must be at least 1")]
    ZeroVocab,
    #[error("expected {expected} poses, got {found}")]
    Length { expected: usize, found: usize },
    #[error("token {token} is outside the action range [0, {vocab})")]
    NotAction { token: TokenId, vocab: usize },
    #[error("K={0} exceeds the 6 full 1.0 s blocks in a 64-step horizon (K*10 <= 64)")]
    TooManyBlocks(usize),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Exactly 10 action tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionBlock(pub [TokenId; BLOCK_LEN]);

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub codes: Vec<DeltaPose>,
    /// Divisors applied per dimension (dx, dy, dyaw) before measuring distances.
    pub feature_scales: [f64; 3],
    pub fit_seed: u64,
    pub data_hash: [u8; 32],
    /// k-means objective after every assignment step, in scaled units.
    pub objective: Vec<f64>,
}

fn scaled(d: &DeltaPose, s: &[f64; 3]) -> [f64; 3] {
    [d.dx / s[0], d.dy / s[1], d.dyaw / s[2]]
}

fn sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    x * x + y * y + z * z
}

fn nearest(z: &[f64; 3], centers: &[[f64; 3]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = sq(z, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

pub fn deltas_hash(deltas: &[DeltaPose]) -> [u8; 32] {
    let mut w = BinWriter::raw();
    for d in deltas {
        w.put_f64s(&d.to_array());
    }
    sha256(&w.into_inner())
}

/// Fits V codes with k-means++ seeding and Lloyd iterations.
///
/// Each dimension is divided by its standard deviation. A dimension with zero variance falls
/// back to unit metres for dx/dy and to `yaw_scale` metres per radian for dyaw. Codes whose
/// values coincide are collapsed, so the result may hold fewer than `v` entries.
pub fn fit_codebook(
    deltas: &[DeltaPose],
    v: usize,
    seed: u64,
    iters: usize,
    yaw_scale: f64,
) -> Result<Codebook, CodecError> {
    if deltas.is_empty() {
        return Err(CodecError::Empty);
    }
    if v == 0 {
        return Err(CodecError::ZeroVocab);
    }
    if let Some(i) = deltas.iter().position(|d| !d.is_finite()) {
        return Err(CodecError::NonFinite(i));
    }
    let n = deltas.len() as f64;
    let mut scales = [1.0, 1.0, 1.0 / yaw_scale];
    for (k, scale) in scales.iter_mut().enumerate() {
        let mean = deltas.iter().map(|d| d.to_array()[k]).sum::<f64>() / n;
        let var = deltas.iter().map(|d| (d.to_array()[k] - mean).powi(2)).sum::<f64>() / n;
        if var.sqrt() > 1e-12 {
            *scale = var.sqrt();
        }
    }
    let pts: Vec<[f64; 3]> = deltas.iter().map(|d| scaled(d, &scales)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centers: Vec<[f64; 3]> = vec![pts[rng.random_range(0..pts.len())]];
    let mut d2: Vec<f64> = pts.iter().map(|p| sq(p, &centers[0])).collect();
    while centers.len() < v {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut r = rng.random::<f64>() * total;
        let mut pick = pts.len() - 1;
        for (i, w) in d2.iter().enumerate() {
            if r < *w {
                pick = i;
                break;
            }
            r -= w;
        }
        let c = pts[pick];
        centers.push(c);
        for (p, d) in pts.iter().zip(d2.iter_mut()) {
            *d = d.min(sq(p, &c));
        }
    }

    let mut assign = vec![usize::MAX; pts.len()];
    let mut dist = vec![0.0; pts.len()];
    let mut objective = Vec::new();
    for _ in 0..iters.max(1) {
        let mut changed = false;
        for (i, p) in pts.iter().enumerate() {
            let (c, d) = nearest(p, &centers);
            changed |= assign[i] != c;
            assign[i] = c;
            dist[i] = d;
        }
        objective.push(dist.iter().sum());
        if !changed && objective.len() > 1 {
            break;
        }
        // running means stay exact when a cluster holds identical points
        let mut means = vec![[0.0; 3]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &c) in pts.iter().zip(&assign) {
            counts[c] += 1;
            for k in 0..3 {
                means[c][k] += (p[k] - means[c][k]) / counts[c] as f64;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            if counts[c] > 0 {
                *center = means[c];
            }
        }
        // empty clusters take the point currently farthest from its center
        for c in 0..centers.len() {
            if counts[c] == 0 {
                let far = (0..pts.len())
                    .map(|i| (i, sq(&pts[i], &centers[assign[i]])))
                    .fold((0, -1.0), |best, x| if x.1 > best.1 { x } else { best })
                    .0;
                centers[c] = pts[far];
                assign[far] = c;
                counts[c] = 1;
            }
        }
    }

    let mut codes: Vec<DeltaPose> = Vec::with_capacity(centers.len());
    for c in &centers {
        let d = DeltaPose::new(c[0] * scales[0], c[1] * scales[1], c[2] * scales[2]);
        if !codes.contains(&d) {
            codes.push(d);
        }
    }
    Ok(Codebook { codes, feature_scales: scales, fit_seed: seed, data_hash: deltas_hash(deltas), objective })
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Squared distance under the fitting metric.
    pub fn distance2(&self, a: &DeltaPose, b: &DeltaPose) -> f64 {
        sq(&scaled(a, &self.feature_scales), &scaled(b, &self.feature_scales))
    }

    /// Nearest code, ties to the lowest index.
    pub fn quantize(&self, d: &DeltaPose) -> TokenId {
        let z = scaled(d, &self.feature_scales);
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.codes.iter().enumerate() {
            let dist = sq(&z, &scaled(c, &self.feature_scales));
            if dist < best.1 {
                best = (i, dist);
            }
        }
        best.0 as TokenId
    }

    pub fn code(&self, t: TokenId) -> Result<DeltaPose, CodecError> {
        self.codes
            .get(t as usize)
            .copied()
            .ok_or(CodecError::NotAction { token: t, vocab: self.codes.len() })
    }

    /// Tokenizes a 64-pose trajectory that starts from the identity pose.
    pub fn encode(&self, traj: &[Pose2D]) -> Result<Vec<TokenId>, CodecError> {
        if traj.len() != FUTURE_STEPS {
            return Err(CodecError::Length { expected: FUTURE_STEPS, found: traj.len() });
        }
        Ok(trajectory_deltas(traj).iter().map(|d| self.quantize(d)).collect())
    }

    pub fn lookup(&self, tokens: &[TokenId]) -> Result<Vec<DeltaPose>, CodecError> {
        tokens.iter().map(|&t| self.code(t)).collect()
    }

    pub fn decode(&self, tokens: &[TokenId], start: &Pose2D) -> Result<Vec<Pose2D>, CodecError> {
        Ok(integrate(start, &self.lookup(tokens)?)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new(MAGIC, CODEBOOK_FORMAT_VERSION);
        w.put_u32(self.codes.len() as u32);
        w.put_f64s(&self.feature_scales);
        w.put_u64(self.fit_seed);
        w.put_bytes(&self.data_hash);
        w.put_u32(self.objective.len() as u32);
        w.put_f64s(&self.objective);
        for c in &self.codes {
            w.put_f64s(&c.to_array());
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, CodecError> {
        let mut r = BinReader::open(data, MAGIC, CODEBOOK_FORMAT_VERSION)?;
        let v = r.u32()? as usize;
        let s = r.f64s(3)?;
        let fit_seed = r.u64()?;
        let data_hash: [u8; 32] = r.bytes(32)?.try_into().unwrap();
        let n = r.u32()? as usize;
        let objective = r.f64s(n)?;
        let raw = r.f64s(3 * v)?;
        r.expect_end()?;
        let codes = raw.chunks_exact(3).map(|c| DeltaPose::new(c[0], c[1], c[2])).collect();
        Ok(Self { codes, feature_scales: [s[0], s[1], s[2]], fit_seed, data_hash, objective })
    }

    /// Content digest, used to tie checkpoints to the codebook they were trained with.
    pub fn hash(&self) -> [u8; 32] {
        sha256(&self.to_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<(), CodecError> {
        Ok(write_file(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, CodecError> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Per-step Δ-poses of a trajectory starting at the identity pose.
pub fn trajectory_deltas(traj: &[Pose2D]) -> Vec<DeltaPose> {
    let mut prev = Pose2D::IDENTITY;
    traj.iter()
        .map(|p| {
            let d = DeltaPose::between(&prev, p);
            prev = *p;
            d
        })
        .collect()
}

/// Block `t` covers tokens `[10t, 10t + 10)`.
pub fn slice_blocks(tokens: &[TokenId], k: usize) -> Result<Vec<ActionBlock>, CodecError> {
    if k > MAX_BLOCKS {
        return Err(CodecError::TooManyBlocks(k));
    }
    if tokens.len() < k * BLOCK_LEN {
        return Err(CodecError::Length { expected: k * BLOCK_LEN, found: tokens.len() });
    }
    Ok((0..k).map(|t| ActionBlock(tokens[t * BLOCK_LEN..(t + 1) * BLOCK_LEN].try_into().unwrap())).collect())
}
