//! Hash-encoded color field: multiresolution hash grid features feeding a
//! one-hidden-layer ReLU MLP with logistic output, mapping surface points in
//! `[0,1]^3` to RGB in `[0,1]^3`.
//!
//! All parameters live in one flat `f64` vector with the layout
//!
//! ```text
//! [ level 0 table | ... | level L-1 table | W1 | b1 | W2 | b2 ]
//! ```
//!
//! where each table is `table_size × features_per_level` row-major, `W1` is
//! `hidden × (levels·features)` row-major and `W2` is `3 × hidden`.

use std::io::{Read, Write};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{Mesh, Vec3};

/// Spatial hash multipliers, one per axis.
const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];
const CHECKPOINT_MAGIC: &[u8; 4] = b"PTCF";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid field config: {0}")]
    Config(String),
    #[error("{0} upstream gradients for {1} points")]
    UpstreamCount(usize, usize),
    #[error("non-finite upstream gradient at point {0}")]
    NonFiniteUpstream(usize),
    #[error("gradient buffer has {got} entries, field has {expected} parameters")]
    GradientSize { got: usize, expected: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub levels: u32,
    pub features_per_level: u32,
    pub log2_table_size: u32,
    pub base_resolution: u32,
    pub max_resolution: u32,
    pub hidden: u32,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            levels: 12,
            features_per_level: 2,
            log2_table_size: 16,
            base_resolution: 16,
            max_resolution: 2048,
            hidden: 32,
        }
    }
}

impl FieldConfig {
    pub fn table_size(&self) -> usize {
        1usize << self.log2_table_size
    }

    pub fn encoding_width(&self) -> usize {
        (self.levels * self.features_per_level) as usize
    }

    /// Grid resolution of every level: a geometric sequence from
    /// `base_resolution` ending exactly at `max_resolution`.
    pub fn resolutions(&self) -> Result<Vec<u32>, FieldError> {
        self.validate()?;
        Ok(self.resolutions_unchecked())
    }

    fn resolutions_unchecked(&self) -> Vec<u32> {
        let l = self.levels as usize;
        if l == 1 {
            return vec![self.max_resolution];
        }
        let growth = (self.max_resolution as f64 / self.base_resolution as f64).powf(1.0 / (l - 1) as f64);
        let mut out: Vec<u32> = (0..l)
            .map(|i| (self.base_resolution as f64 * growth.powi(i as i32)).round() as u32)
            .collect();
        out[0] = self.base_resolution;
        out[l - 1] = self.max_resolution;
        out
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let bad = |m: &str| Err(FieldError::Config(m.to_string()));
        if self.levels == 0 || self.features_per_level == 0 || self.hidden == 0 {
            return bad("levels, features_per_level and hidden must be positive");
        }
        if self.log2_table_size == 0 || self.log2_table_size > 24 {
            return bad("log2_table_size must be in 1..=24");
        }
        if self.base_resolution == 0 || self.max_resolution < self.base_resolution {
            return bad("need 0 < base_resolution <= max_resolution");
        }
        let res = self.resolutions_unchecked();
        if res.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FieldError::Config(format!("resolutions not strictly increasing: {res:?}")));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let tables = self.levels as usize * self.table_size() * self.features_per_level as usize;
        let h = self.hidden as usize;
        tables + h * self.encoding_width() + h + 3 * h + 3
    }
}

/// Maps a mesh bounding box onto `[0.05, 0.95]^3`, axis by axis. Flat axes
/// map to 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointNormalizer {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for PointNormalizer {
    /// Identity-like mapping of `[0,1]^3` onto `[0.05, 0.95]^3`.
    fn default() -> Self {
        PointNormalizer {
            min: [0.0; 3],
            max: [1.0; 3],
        }
    }
}

impl PointNormalizer {
    pub const MARGIN: f64 = 0.05;

    pub fn fit(mesh: &Mesh) -> Self {
        match mesh.bounds() {
            Some((lo, hi)) => PointNormalizer {
                min: lo.into(),
                max: hi.into(),
            },
            None => PointNormalizer::default(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        let mut out = Vec3::zeros();
        for k in 0..3 {
            let span = self.max[k] - self.min[k];
            out[k] = if span > 0.0 {
                Self::MARGIN + (1.0 - 2.0 * Self::MARGIN) * (p[k] - self.min[k]) / span
            } else {
                0.5
            };
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalStats {
    /// Points that fell outside `[0,1]^3` and were clamped.
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorField {
    config: FieldConfig,
    resolutions: Vec<u32>,
    params: Vec<f64>,
    normalizer: PointNormalizer,
}

/// Hash-grid lookups for one point: per level, 8 table rows and weights.
struct Encoding {
    rows: Vec<[usize; 8]>,
    weights: Vec<[f64; 8]>,
    features: Vec<f64>,
}

impl ColorField {
    /// Hash features uniform in ±1e-4, `W1` normal with std `sqrt(2/fan_in)`,
    /// output layer and biases zero, so every point starts at gray 0.5.
    pub fn new(config: FieldConfig, seed: u64) -> Result<Self, FieldError> {
        let mut field = ColorField::zeroed(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (tables, w1, _, _, _) = field.layout();
        for p in &mut field.params[tables.clone()] {
            *p = rng.random_range(-1e-4..=1e-4);
        }
        let std = (2.0 / config.encoding_width() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for p in &mut field.params[w1] {
            *p = normal.sample(&mut rng);
        }
        Ok(field)
    }

    pub fn zeroed(config: FieldConfig) -> Result<Self, FieldError> {
        let resolutions = config.resolutions()?;
        Ok(ColorField {
            config,
            resolutions,
            params: vec![0.0; config.parameter_count()],
            normalizer: PointNormalizer::default(),
        })
    }

    pub fn from_params(config: FieldConfig, params: Vec<f64>) -> Result<Self, FieldError> {
        let mut f = ColorField::zeroed(config)?;
        if params.len() != f.params.len() {
            return Err(FieldError::Config(format!(
                "{} parameters supplied, layout needs {}",
                params.len(),
                f.params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(FieldError::Config("non-finite parameter".into()));
        }
        f.params = params;
        Ok(f)
    }

    pub fn with_normalizer(mut self, normalizer: PointNormalizer) -> Self {
        self.normalizer = normalizer;
        self
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn resolutions(&self) -> &[u32] {
        &self.resolutions
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn normalizer(&self) -> &PointNormalizer {
        &self.normalizer
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Parameter index ranges: tables, W1, b1, W2, b2.
    pub fn layout(&self) -> ParamLayout {
        let c = &self.config;
        let h = c.hidden as usize;
        let t_end = c.levels as usize * c.table_size() * c.features_per_level as usize;
        let w1_end = t_end + h * c.encoding_width();
        let b1_end = w1_end + h;
        let w2_end = b1_end + 3 * h;
        (0..t_end, t_end..w1_end, w1_end..b1_end, b1_end..w2_end, w2_end..w2_end + 3)
    }

    fn corner_row(&self, level: usize, res: u32, c: [u32; 3]) -> usize {
        let t = self.config.table_size();
        let side = res as u64 + 1;
        let idx = if side * side * side <= t as u64 {
            (c[0] as u64 + side * (c[1] as u64 + side * c[2] as u64)) as usize
        } else {
            let h = c[0].wrapping_mul(PRIMES[0]) ^ c[1].wrapping_mul(PRIMES[1]) ^ c[2].wrapping_mul(PRIMES[2]);
            h as usize & (t - 1)
        };
        level * t + idx
    }

    fn encode(&self, p: &Vec3) -> Encoding {
        let f = self.config.features_per_level as usize;
        let levels = self.config.levels as usize;
        let mut enc = Encoding {
            rows: Vec::with_capacity(levels),
            weights: Vec::with_capacity(levels),
            features: vec![0.0; levels * f],
        };
        for (l, &res) in self.resolutions.iter().enumerate() {
            let mut cell = [0u32; 3];
            let mut frac = [0.0; 3];
            for k in 0..3 {
                let x = p[k] * res as f64;
                let i = (x.floor().max(0.0) as u32).min(res - 1);
                cell[k] = i;
                frac[k] = x - i as f64;
            }
            let mut rows = [0usize; 8];
            let mut weights = [0.0; 8];
            for corner in 0..8 {
                let mut c = cell;
                let mut w = 1.0;
                for k in 0..3 {
                    if corner >> k & 1 == 1 {
                        c[k] += 1;
                        w *= frac[k];
                    } else {
                        w *= 1.0 - frac[k];
                    }
                }
                let row = self.corner_row(l, res, c);
                rows[corner] = row;
                weights[corner] = w;
                for j in 0..f {
                    enc.features[l * f + j] += w * self.params[row * f + j];
                }
            }
            enc.rows.push(rows);
            enc.weights.push(weights);
        }
        enc
    }

    /// Hidden pre-activations and the output logits.
    fn mlp(&self, features: &[f64]) -> (Vec<f64>, [f64; 3]) {
        let (_, w1, b1, w2, b2) = self.layout();
        let (w1, b1, w2, b2) = (&self.params[w1], &self.params[b1], &self.params[w2], &self.params[b2]);
        let h = self.config.hidden as usize;
        let n_in = features.len();
        let pre: Vec<f64> = (0..h)
            .map(|j| b1[j] + w1[j * n_in..(j + 1) * n_in].iter().zip(features).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let mut out = [0.0; 3];
        for (o, val) in out.iter_mut().enumerate() {
            *val = b2[o]
                + (0..h)
                    .map(|j| w2[o * h + j] * pre[j].max(0.0))
                    .sum::<f64>();
        }
        (pre, out)
    }

    fn clamp_point(p: &Vec3, stats: &mut EvalStats) -> Vec3 {
        let q = p.map(|c| if c.is_nan() { 0.5 } else { c.clamp(0.0, 1.0) });
        if q != *p {
            stats.clamped += 1;
        }
        q
    }

    pub fn eval_point(&self, p: &Vec3) -> [f64; 3] {
        let mut stats = EvalStats::default();
        let p = Self::clamp_point(p, &mut stats);
        let enc = self.encode(&p);
        let (_, logits) = self.mlp(&enc.features);
        logits.map(logistic)
    }

    /// RGB at points already in `[0,1]^3`; others are clamped and counted.
    pub fn eval(&self, points: &[Vec3]) -> (Vec<[f64; 3]>, EvalStats) {
        let clamped = points
            .iter()
            .filter(|p| p.iter().any(|c| !(0.0..=1.0).contains(c)))
            .count();
        let rgb = if points.len() >= 4096 {
            points.par_iter().map(|p| self.eval_point(p)).collect()
        } else {
            points.iter().map(|p| self.eval_point(p)).collect()
        };
        (rgb, EvalStats { clamped })
    }

    /// Evaluates mesh-space points through the stored normalizer.
    pub fn eval_mesh_points(&self, points: &[Vec3]) -> Vec<[f64; 3]> {
        let normalized: Vec<Vec3> = points.iter().map(|p| self.normalizer.apply(p)).collect();
        self.eval(&normalized).0
    }

    /// Accumulates into `grad` the exact gradient of `Σᵢ upstreamᵢ · rgbᵢ`
    /// with respect to every parameter, and returns the forward colors.
    pub fn eval_with_grad(
        &self,
        points: &[Vec3],
        upstream: &[[f64; 3]],
        grad: &mut [f64],
    ) -> Result<(Vec<[f64; 3]>, EvalStats), FieldError> {
        if upstream.len() != points.len() {
            return Err(FieldError::UpstreamCount(upstream.len(), points.len()));
        }
        if grad.len() != self.params.len() {
            return Err(FieldError::GradientSize {
                got: grad.len(),
                expected: self.params.len(),
            });
        }
        if let Some(i) = upstream.iter().position(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(FieldError::NonFiniteUpstream(i));
        }
        let (_, w1r, b1r, w2r, b2r) = self.layout();
        let h = self.config.hidden as usize;
        let f = self.config.features_per_level as usize;
        let n_in = self.config.encoding_width();
        let mut stats = EvalStats::default();
        let mut colors = Vec::with_capacity(points.len());
        let mut d_pre = vec![0.0; h];
        let mut d_feat = vec![0.0; n_in];
        for (p, g) in points.iter().zip(upstream) {
            let p = Self::clamp_point(p, &mut stats);
            let enc = self.encode(&p);
            let (pre, logits) = self.mlp(&enc.features);
            let rgb = logits.map(logistic);
            colors.push(rgb);
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let dz: [f64; 3] = std::array::from_fn(|o| g[o] * rgb[o] * (1.0 - rgb[o]));
            for o in 0..3 {
                grad[b2r.start + o] += dz[o];
                for j in 0..h {
                    grad[w2r.start + o * h + j] += dz[o] * pre[j].max(0.0);
                }
            }
            let w2 = &self.params[w2r.clone()];
            for j in 0..h {
                d_pre[j] = if pre[j] > 0.0 {
                    (0..3).map(|o| w2[o * h + j] * dz[o]).sum()
                } else {
                    0.0
                };
            }
            d_feat.iter_mut().for_each(|x| *x = 0.0);
            let w1 = &self.params[w1r.clone()];
            for j in 0..h {
                if d_pre[j] == 0.0 {
                    continue;
                }
                grad[b1r.start + j] += d_pre[j];
                let row = &w1[j * n_in..(j + 1) * n_in];
                for k in 0..n_in {
                    grad[w1r.start + j * n_in + k] += d_pre[j] * enc.features[k];
                    d_feat[k] += d_pre[j] * row[k];
                }
            }
            for l in 0..enc.rows.len() {
                for corner in 0..8 {
                    let base = enc.rows[l][corner] * f;
                    let w = enc.weights[l][corner];
                    for j in 0..f {
                        grad[base + j] += w * d_feat[l * f + j];
                    }
                }
            }
        }
        Ok((colors, stats))
    }

    /// Vertex colors of `mesh` under this field.
    pub fn vertex_colors(&self, mesh: &Mesh) -> Vec<Vec3> {
        self.eval_mesh_points(mesh.vertices())
            .into_iter()
            .map(Vec3::from)
            .collect()
    }

    /// Writes the checkpoint container (see `docs/formats.md`).
    pub fn write_checkpoint<W: Write>(&self, out: &mut W, precision: Precision, step: u64) -> Result<(), FieldError> {
        let c = &self.config;
        out.write_all(CHECKPOINT_MAGIC)?;
        for v in [
            CHECKPOINT_VERSION,
            precision.code(),
            c.levels,
            c.features_per_level,
            c.log2_table_size,
            c.base_resolution,
            c.max_resolution,
            c.hidden,
        ] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&step.to_le_bytes())?;
        for v in self.normalizer.min.iter().chain(&self.normalizer.max) {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&(self.params.len() as u64).to_le_bytes())?;
        let mut body = Vec::with_capacity(self.params.len() * 8);
        for &p in &self.params {
            match precision {
                Precision::F32 => body.extend_from_slice(&(p as f32).to_le_bytes()),
                Precision::F64 => body.extend_from_slice(&p.to_le_bytes()),
            }
        }
        out.write_all(&body)?;
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self, precision: Precision, step: u64) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_checkpoint(&mut out, precision, step).expect("write to Vec");
        out
    }

    /// Reads a checkpoint; returns the field and its recorded step.
    pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<(ColorField, u64), FieldError> {
        let bad = |m: &str| FieldError::Checkpoint(m.to_string());
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u32s = [0u32; 8];
        for v in &mut u32s {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            *v = u32::from_le_bytes(b);
        }
        let [version, precision, levels, features_per_level, log2_table_size, base_resolution, max_resolution, hidden] =
            u32s;
        if version != CHECKPOINT_VERSION {
            return Err(FieldError::Checkpoint(format!("unsupported version {version}")));
        }
        let precision = Precision::from_code(precision).ok_or_else(|| bad("unknown precision code"))?;
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8)?;
        let step = u64::from_le_bytes(b8);
        let mut bounds = [0.0; 6];
        for v in &mut bounds {
            input.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        input.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        let config = FieldConfig {
            levels,
            features_per_level,
            log2_table_size,
            base_resolution,
            max_resolution,
            hidden,
        };
        config.validate()?;
        if count != config.parameter_count() {
            return Err(bad("parameter count does not match config"));
        }
        let width = match precision {
            Precision::F32 => 4,
            Precision::F64 => 8,
        };
        let mut body = vec![0u8; count * width];
        input.read_exact(&mut body)?;
        let params = body
            .chunks_exact(width)
            .map(|c| match precision {
                Precision::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
                Precision::F64 => f64::from_le_bytes(c.try_into().unwrap()),
            })
            .collect();
        let field = ColorField::from_params(config, params)?.with_normalizer(PointNormalizer {
            min: [bounds[0], bounds[1], bounds[2]],
            max: [bounds[3], bounds[4], bounds[5]],
        });
        Ok((field, step))
    }
}

/// Index ranges of tables, W1, b1, W2 and b2 in the parameter vector.
pub type ParamLayout = (Range<usize>, Range<usize>, Range<usize>, Range<usize>, Range<usize>);

/// Storage precision of checkpoint parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    fn code(self) -> u32 {
        match self {
            Precision::F32 => 1,
            Precision::F64 => 2,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(Precision::F32),
            2 => Some(Precision::F64),
            _ => None,
        }
    }
}

/// Logistic squashing. Its slope stays above 1e-4 for |z| <= 9.2.
#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;

    /// About 100 parameters: 2 levels × 16 entries × 2 features + a 4-unit MLP.
    pub(crate) fn small_config() -> FieldConfig {
        FieldConfig {
            levels: 2,
            features_per_level: 2,
            log2_table_size: 4,
            base_resolution: 2,
            max_resolution: 8,
            hidden: 4,
        }
    }

    fn randomized(config: FieldConfig, seed: u64) -> ColorField {
        let mut f = ColorField::zeroed(config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in f.params_mut() {
            *p = rng.random_range(-1.0..1.0);
        }
        f
    }

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    #[test]
    fn default_config_resolutions() {
        let r = FieldConfig::default().resolutions().unwrap();
        assert_eq!(r.len(), 12);
        assert_eq!(r[0], 16);
        assert_eq!(*r.last().unwrap(), 2048);
        assert!(r.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn parameter_layout_is_consistent() {
        let c = small_config();
        assert_eq!(c.parameter_count(), 64 + 16 + 4 + 12 + 3);
        let f = ColorField::zeroed(c).unwrap();
        let (t, w1, b1, w2, b2) = f.layout();
        assert_eq!(t.end, w1.start);
        assert_eq!(b2.end, f.parameter_count());
        assert_eq!((w1.len(), b1.len(), w2.len(), b2.len()), (16, 4, 12, 3));
    }

    #[test]
    fn bad_configs_rejected() {
        let mut c = small_config();
        c.max_resolution = 2;
        c.base_resolution = 2;
        assert!(c.validate().is_err());
        c = small_config();
        c.levels = 0;
        assert!(ColorField::zeroed(c).is_err());
    }

    #[test]
    fn fresh_field_is_gray() {
        let f = ColorField::new(FieldConfig::default(), 3).unwrap();
        let (rgb, stats) = f.eval(&random_points(50, 1));
        assert_eq!(stats.clamped, 0);
        for c in rgb {
            assert_eq!(c, [0.5; 3]);
        }
    }

    #[test]
    fn eval_is_deterministic() {
        let f = randomized(small_config(), 4);
        let p = Vec3::new(0.3, 0.6, 0.9);
        assert_eq!(f.eval_point(&p), f.eval_point(&p));
    }

    #[test]
    fn equal_corner_features_give_equal_outputs() {
        // One level, dense grid: set all 8 corners of a finest cell equal.
        let config = FieldConfig {
            levels: 1,
            features_per_level: 2,
            log2_table_size: 10,
            base_resolution: 4,
            max_resolution: 4,
            hidden: 3,
        };
        let mut f = randomized(config, 9);
        let cell = [1u32, 2, 0];
        for corner in 0..8u32 {
            let c = [cell[0] + (corner & 1), cell[1] + (corner >> 1 & 1), cell[2] + (corner >> 2 & 1)];
            let row = f.corner_row(0, 4, c);
            f.params_mut()[row * 2] = 0.7;
            f.params_mut()[row * 2 + 1] = -0.3;
        }
        let a = f.eval_point(&Vec3::new(0.26, 0.51, 0.01));
        let b = f.eval_point(&Vec3::new(0.49, 0.74, 0.24));
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_points_are_clamped_and_counted() {
        let f = randomized(small_config(), 1);
        let (rgb, stats) = f.eval(&[Vec3::new(1.5, 0.5, 0.5), Vec3::new(0.2, 0.2, 0.2)]);
        assert_eq!(stats.clamped, 1);
        assert_eq!(rgb[0], f.eval_point(&Vec3::new(1.0, 0.5, 0.5)));
    }

    #[test]
    fn eval_is_continuous_across_cell_boundaries() {
        let f = randomized(small_config(), 5);
        let boundary = 0.5;
        let a = f.eval_point(&Vec3::new(boundary - 1e-10, 0.3, 0.7));
        let b = f.eval_point(&Vec3::new(boundary + 1e-10, 0.3, 0.7));
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut f = randomized(small_config(), 11);
        assert!((90..=110).contains(&f.parameter_count()));
        let points = random_points(7, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let upstream: Vec<[f64; 3]> = (0..7)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let objective = |f: &ColorField| -> f64 {
            f.eval(&points)
                .0
                .iter()
                .zip(&upstream)
                .map(|(c, g)| c[0] * g[0] + c[1] * g[1] + c[2] * g[2])
                .sum()
        };
        let mut grad = vec![0.0; f.parameter_count()];
        f.eval_with_grad(&points, &upstream, &mut grad).unwrap();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for i in 0..f.parameter_count() {
            let orig = f.params()[i];
            f.params_mut()[i] = orig + h;
            let plus = objective(&f);
            f.params_mut()[i] = orig - h;
            let minus = objective(&f);
            f.params_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let f = randomized(small_config(), 1);
        let pts = random_points(5, 1);
        let mut grad = vec![0.0; f.parameter_count()];
        f.eval_with_grad(&pts, &[[0.0; 3]; 5], &mut grad).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_upstream_rejected() {
        let f = randomized(small_config(), 1);
        let mut grad = vec![0.0; f.parameter_count()];
        let err = f.eval_with_grad(&random_points(2, 1), &[[0.0; 3], [f64::NAN, 0.0, 0.0]], &mut grad);
        assert!(matches!(err, Err(FieldError::NonFiniteUpstream(1))));
    }

    #[test]
    fn checkpoint_round_trips() {
        let f = randomized(small_config(), 8).with_normalizer(PointNormalizer {
            min: [-1.0, -2.0, -3.0],
            max: [1.0, 2.0, 3.0],
        });
        let bytes = f.to_checkpoint_bytes(Precision::F64, 42);
        let (back, step) = ColorField::read_checkpoint(&mut bytes.as_slice()).unwrap();
        assert_eq!(step, 42);
        assert_eq!(back, f);

        // f32 storage: one quantization, then stable.
        let bytes32 = f.to_checkpoint_bytes(Precision::F32, 1);
        let (q, _) = ColorField::read_checkpoint(&mut bytes32.as_slice()).unwrap();
        assert_eq!(q.to_checkpoint_bytes(Precision::F32, 1), bytes32);
        assert!(ColorField::read_checkpoint(&mut &bytes32[..bytes32.len() - 1]).is_err());
    }

    #[test]
    fn normalizer_maps_bbox_into_margin_cube() {
        let m = crate::fixtures::icosphere(1);
        let n = PointNormalizer::fit(&m);
        for v in m.vertices() {
            let p = n.apply(v);
            assert!(p.iter().all(|c| (0.05 - 1e-12..=0.95 + 1e-12).contains(c)));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn outputs_stay_in_unit_cube(seed in 0u64..1000, scale in 0.1f64..1000.0) {
            let mut f = randomized(small_config(), seed);
            for p in f.params_mut() {
                *p *= scale;
            }
            for c in f.eval(&random_points(8, seed)).0 {
                prop_assert!(c.iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }

        #[test]
        fn gradient_is_additive_over_batches(seed in 0u64..1000) {
            let f = randomized(small_config(), seed);
            let pts = random_points(10, seed + 1);
            let up: Vec<[f64; 3]> = pts.iter().map(|p| [p.x - 0.5, p.y, -p.z]).collect();
            let n = f.parameter_count();
            let mut whole = vec![0.0; n];
            f.eval_with_grad(&pts, &up, &mut whole).unwrap();
            let mut a = vec![0.0; n];
            let mut b = vec![0.0; n];
            f.eval_with_grad(&pts[..4], &up[..4], &mut a).unwrap();
            f.eval_with_grad(&pts[4..], &up[4..], &mut b).unwrap();
            for i in 0..n {
                prop_assert!((whole[i] - (a[i] + b[i])).abs() <= 1e-12 * (1.0 + whole[i].abs()));
            }
        }
    }
}
