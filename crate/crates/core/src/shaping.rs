//! Progressive L1 pruning and dynamic mean-based clipping, applied per layer.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ShapingError {
    #[error("pruning rate {0} outside [0, 1)")]
    Rate(f64),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("clip factor must be positive, got {0}")]
    ClipFactor(f64),
    #[error("mean of an empty layer")]
    EmptyLayer,
    #[error("layer {layer}: {expected} mask entries for {found} weights")]
    Shape {
        layer: usize,
        expected: usize,
        found: usize,
    },
}

pub type Result<T> = std::result::Result<T, ShapingError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipConfig {
    pub alpha: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self { alpha: 3.0 }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_finite() && self.alpha > 0.0 {
            Ok(())
        } else {
            Err(ShapingError::ClipFactor(self.alpha))
        }
    }
}

/// Linear ramp from `p0` at round `t_eff` to `p_target` at round `t_target`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSchedule {
    pub p0: f64,
    pub p_target: f64,
    pub t_eff: u32,
    pub t_target: u32,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        Self {
            p0: 0.20,
            p_target: 0.50,
            t_eff: 40,
            t_target: 300,
        }
    }
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p0 && self.p0 <= self.p_target && self.p_target < 1.0) {
            return Err(ShapingError::Schedule(format!(
                "need 0 <= p0 ({}) <= p_target ({}) < 1",
                self.p0, self.p_target
            )));
        }
        if self.t_eff >= self.t_target {
            return Err(ShapingError::Schedule(format!(
                "t_eff ({}) must precede t_target ({})",
                self.t_eff, self.t_target
            )));
        }
        Ok(())
    }
}

/// Pruning rate for round `t`, held at `p_target` past `t_target`.
pub fn prune_rate(schedule: &PruneSchedule, t: u32) -> f64 {
    if t >= schedule.t_target {
        return schedule.p_target;
    }
    let progress =
        (t as f64 - schedule.t_eff as f64) / (schedule.t_target as f64 - schedule.t_eff as f64);
    progress.max(0.0) * (schedule.p_target - schedule.p0) + schedule.p0
}

/// Number of entries pruned from a layer of `count` weights at rate `p`.
///
/// A 1e-9 nudge keeps decimal rates such as 0.29 * 100 from flooring low.
pub fn pruned_count(p: f64, count: usize) -> usize {
    ((p * count as f64 + 1e-9).floor() as usize).min(count)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneMask {
    pub layers: Vec<Vec<bool>>,
    pub rate_used: f64,
}

impl PruneMask {
    pub fn all_ones(sizes: &[usize]) -> Self {
        Self {
            layers: sizes.iter().map(|&n| vec![true; n]).collect(),
            rate_used: 0.0,
        }
    }

    pub fn zero_count(&self, layer: usize) -> usize {
        self.layers[layer].iter().filter(|&&keep| !keep).count()
    }

    /// Packs a layer's mask as little-endian bits (bit `i % 8` of byte `i / 8`).
    pub fn pack_layer(&self, layer: usize) -> Vec<u8> {
        pack_bits(&self.layers[layer])
    }
}

pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], len: usize) -> Vec<bool> {
    (0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

/// Zeroes the `floor(p * n)` smallest-magnitude entries of each layer.
/// Ties go to the lower flat index.
pub fn build_mask<L: AsRef<[f64]>>(weights: &[L], p: f64) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&p) {
        return Err(ShapingError::Rate(p));
    }
    let layers = weights
        .iter()
        .map(|layer| layer_mask(layer.as_ref(), p))
        .collect();
    Ok(PruneMask {
        layers,
        rate_used: p,
    })
}

fn layer_mask(w: &[f64], p: f64) -> Vec<bool> {
    let k = pruned_count(p, w.len());
    let mut keep = vec![true; w.len()];
    if k == 0 {
        return keep;
    }
    let mut order: Vec<usize> = (0..w.len()).collect();
    let cmp = |&a: &usize, &b: &usize| w[a].abs().total_cmp(&w[b].abs()).then(a.cmp(&b));
    if k < w.len() {
        order.select_nth_unstable_by(k - 1, cmp);
    }
    for &i in &order[..k] {
        keep[i] = false;
    }
    keep
}

/// Mask that zeroes every weight; `build_mask` only accepts rates below one.
pub fn full_prune_mask<L: AsRef<[f64]>>(weights: &[L]) -> PruneMask {
    PruneMask {
        layers: weights
            .iter()
            .map(|l| vec![false; l.as_ref().len()])
            .collect(),
        rate_used: 1.0,
    }
}

pub fn apply_mask<L: AsRef<[f64]>>(weights: &[L], mask: &PruneMask) -> Result<Vec<Vec<f64>>> {
    if weights.len() != mask.layers.len() {
        return Err(ShapingError::Shape {
            layer: weights.len().min(mask.layers.len()),
            expected: mask.layers.len(),
            found: weights.len(),
        });
    }
    weights
        .iter()
        .zip(&mask.layers)
        .enumerate()
        .map(|(layer, (w, m))| {
            let w = w.as_ref();
            if w.len() != m.len() {
                return Err(ShapingError::Shape {
                    layer,
                    expected: m.len(),
                    found: w.len(),
                });
            }
            Ok(w.iter()
                .zip(m)
                .map(|(&x, &keep)| if keep { x } else { 0.0 })
                .collect())
        })
        .collect()
}

/// Mean absolute value over all entries, zeros included.
pub fn mean_abs(layer: &[f64]) -> Result<f64> {
    if layer.is_empty() {
        return Err(ShapingError::EmptyLayer);
    }
    Ok(layer.iter().map(|x| x.abs()).sum::<f64>() / layer.len() as f64)
}

/// Clamps a layer into `[-alpha * mu, alpha * mu]`, `mu` taken before clamping.
/// An all-zero layer comes back unchanged.
pub fn clip_update(layer: &[f64], cfg: &ClipConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mu = mean_abs(layer)?;
    if mu == 0.0 {
        return Ok(layer.to_vec());
    }
    let bound = cfg.alpha * mu;
    Ok(layer.iter().map(|&x| x.clamp(-bound, bound)).collect())
}
