//! Gradient inversion: recover a training input from its parameter gradient
//! by cosine gradient matching with a total-variation prior.

mod bench;
mod image;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{GradientSet, LayerKind, Model, NnError, Tensor};
use crate::shaping::{apply_mask, build_mask, full_prune_mask, ShapingError};

pub use bench::{
    blob_image, run_sweep, square_side, tiny_benchmark, write_sweep_csv, SweepRow, TinyBenchmark,
};
pub use image::{mse, psnr, read_pgm, total_variation, write_pgm};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("observed gradient is all zero; cosine similarity is undefined")]
    ZeroGradient,
    #[error("invalid attack config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("image needs at least 2 pixels per axis, got {0:?}")]
    TooSmall(Vec<usize>),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Shaping(#[from] ShapingError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AttackError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackInit {
    #[default]
    RandomUniform,
    Zeros,
    GroundTruth,
}

/// Update rule for the candidate input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackOptimizer {
    /// `x -= step_size * grad`.
    #[default]
    Gd,
    /// Adam moments on the input gradient, `step_size` as the learning rate.
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub tv_weight: f64,
    pub steps: u32,
    pub step_size: f64,
    pub init: AttackInit,
    /// Fraction of the victim gradient pruned before the attacker sees it.
    pub prune_rate: f64,
    pub fd_epsilon: f64,
    /// Stop after this many consecutive steps without a new best objective.
    pub patience: u32,
    pub optimizer: AttackOptimizer,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            tv_weight: 0.0,
            steps: 2000,
            step_size: 10.0,
            init: AttackInit::RandomUniform,
            prune_rate: 0.0,
            fd_epsilon: 1e-4,
            patience: 50,
            optimizer: AttackOptimizer::Gd,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AttackError::Config(m));
        if !(self.tv_weight >= 0.0 && self.tv_weight.is_finite()) {
            return bad(format!("tv_weight must be >= 0, got {}", self.tv_weight));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!(
                "step_size must be positive, got {}",
                self.step_size
            ));
        }
        if !(self.fd_epsilon > 0.0) {
            return bad(format!(
                "fd_epsilon must be positive, got {}",
                self.fd_epsilon
            ));
        }
        if !(0.0..=1.0).contains(&self.prune_rate) {
            return bad(format!("prune_rate {} not in [0, 1]", self.prune_rate));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionResult {
    pub x_hat: Tensor,
    pub objective_trace: Vec<f64>,
    pub best_objective: f64,
    /// `None` without ground truth; `+inf` for an exact match.
    pub psnr: Option<f64>,
    pub mse: Option<f64>,
    pub steps_used: u32,
    pub early_stopped: bool,
}

fn as_batch(x: &Tensor) -> Result<Tensor> {
    Ok(Tensor::new(vec![1, x.len()], x.data().to_vec())?)
}

/// Per-sample gradient of `model` at `(x, y)`, with the smallest fraction
/// `prune_rate` of each tensor zeroed. A rate of 1 zeroes everything.
pub fn victim_gradient(
    model: &Model,
    x: &Tensor,
    y: usize,
    prune_rate: f64,
) -> Result<GradientSet> {
    let (_, g) = model.loss_and_grad(&as_batch(x)?, &[y])?;
    if prune_rate <= 0.0 {
        return Ok(g);
    }
    let layers: Vec<&[f64]> = g.grads.iter().map(Tensor::data).collect();
    let mask = if prune_rate >= 1.0 {
        full_prune_mask(&layers)
    } else {
        build_mask(&layers, prune_rate)?
    };
    let pruned = apply_mask(&layers, &mask)?;
    Ok(GradientSet {
        grads: g
            .grads
            .iter()
            .zip(pruned)
            .map(|(t, d)| Tensor::new(t.shape().to_vec(), d))
            .collect::<std::result::Result<_, _>>()?,
    })
}

fn check_g_star(model: &Model, g_star: &GradientSet) -> Result<f64> {
    if g_star.grads.len() != model.num_tensors()
        || g_star
            .grads
            .iter()
            .zip(model.params())
            .any(|(g, p)| g.shape() != p.shape())
    {
        return Err(AttackError::Shape(
            "gradient does not match the model".into(),
        ));
    }
    let norm = g_star.norm();
    if norm == 0.0 {
        return Err(AttackError::ZeroGradient);
    }
    Ok(norm)
}

fn cosine_term(
    model: &Model,
    x: &Tensor,
    y: usize,
    g_star: &GradientSet,
    g_star_norm: f64,
) -> Result<f64> {
    let (_, g) = model.loss_and_grad(&as_batch(x)?, &[y])?;
    let inner: f64 = g
        .grads
        .iter()
        .zip(&g_star.grads)
        .map(|(a, b)| dot(a.data(), b.data()))
        .sum();
    let norm = g.norm();
    if norm == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - inner / (norm * g_star_norm))
}

/// `1 - cos(grad(x, y), g_star) + tv_weight * TV(x)`.
///
/// A zero candidate gradient counts as cosine similarity 0.
pub fn gradient_matching_objective(
    model: &Model,
    x: &Tensor,
    y: usize,
    g_star: &GradientSet,
    tv_weight: f64,
) -> Result<f64> {
    let norm = check_g_star(model, g_star)?;
    let tv = if tv_weight == 0.0 {
        0.0
    } else {
        tv_weight * total_variation(x)?
    };
    Ok(cosine_term(model, x, y, g_star, norm)? + tv)
}

/// Subgradient of anisotropic TV over the trailing two axes.
fn tv_gradient(x: &Tensor) -> Vec<f64> {
    let shape = x.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let d = x.data();
    let mut g = vec![0.0; d.len()];
    for plane in 0..d.len() / (h * w) {
        let o = plane * h * w;
        for r in 0..h {
            for c in 0..w {
                let i = o + r * w + c;
                if c + 1 < w {
                    let s = sign(d[i] - d[i + 1]);
                    g[i] += s;
                    g[i + 1] -= s;
                }
                if r + 1 < h {
                    let s = sign(d[i] - d[i + w]);
                    g[i] += s;
                    g[i + w] -= s;
                }
            }
        }
    }
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Central-difference gradient of the objective with respect to `x`.
pub fn fd_input_gradient(
    model: &Model,
    x: &Tensor,
    y: usize,
    g_star: &GradientSet,
    tv_weight: f64,
    eps: f64,
) -> Result<Vec<f64>> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = gradient_matching_objective(model, &probe, y, g_star, tv_weight)?;
        probe.data_mut()[i] = orig - eps;
        let down = gradient_matching_objective(model, &probe, y, g_star, tv_weight)?;
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * eps));
    }
    Ok(out)
}

/// Exact input gradient for a single dense layer under softmax cross-entropy.
///
/// With `r = softmax(Wx + b) - e_y`, the parameter gradient is `(r x^T, r)`.
pub fn linear_input_gradient(
    model: &Model,
    x: &Tensor,
    y: usize,
    g_star: &GradientSet,
    tv_weight: f64,
) -> Result<Vec<f64>> {
    let (n, c) = match model.schema().layers()[0].kind {
        LayerKind::Dense { inputs, outputs } if model.schema().is_linear() => (inputs, outputs),
        _ => {
            return Err(AttackError::Config(
                "analytic path needs a linear victim".into(),
            ))
        }
    };
    let gs_norm = check_g_star(model, g_star)?;
    let w = model.params()[0].data();
    let b = model.params()[1].data();
    let (gw, gb) = (g_star.grads[0].data(), g_star.grads[1].data());
    let xv = x.data();
    let z: Vec<f64> = (0..c)
        .map(|k| b[k] + dot(&w[k * n..(k + 1) * n], xv))
        .collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    let p: Vec<f64> = e.iter().map(|v| v / total).collect();
    let mut r = p.clone();
    r[y] -= 1.0;
    // u = G* x + b*, the partial of <g, g*> with respect to r.
    let u: Vec<f64> = (0..c)
        .map(|k| gb[k] + dot(&gw[k * n..(k + 1) * n], xv))
        .collect();
    let jac = |v: &[f64]| -> Vec<f64> {
        let pv: f64 = p.iter().zip(v).map(|(a, b)| a * b).sum();
        (0..c).map(|k| p[k] * (v[k] - pv)).collect()
    };
    let wt = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for k in 0..c {
            for (o, wv) in out.iter_mut().zip(&w[k * n..(k + 1) * n]) {
                *o += v[k] * wv;
            }
        }
        out
    };
    let a: f64 = r.iter().zip(&u).map(|(x, y)| x * y).sum();
    let r2: f64 = r.iter().map(|v| v * v).sum();
    let x2: f64 = xv.iter().map(|v| v * v).sum();
    let bb = r2 * (x2 + 1.0);
    if bb == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut da = wt(&jac(&u));
    for k in 0..c {
        for (o, g) in da.iter_mut().zip(&gw[k * n..(k + 1) * n]) {
            *o += r[k] * g;
        }
    }
    let jr = wt(&jac(&r));
    let sb = bb.sqrt();
    let mut grad: Vec<f64> = (0..n)
        .map(|i| {
            let db = 2.0 * r2 * xv[i] + 2.0 * (x2 + 1.0) * jr[i];
            -(da[i] / (sb * gs_norm) - a * db / (2.0 * bb * sb * gs_norm))
        })
        .collect();
    if tv_weight != 0.0 {
        total_variation(x)?;
        for (g, t) in grad.iter_mut().zip(tv_gradient(x)) {
            *g += tv_weight * t;
        }
    }
    Ok(grad)
}

const IMPROVEMENT_TOL: f64 = 1e-12;

/// Projected gradient descent on the matching objective; returns the best iterate.
pub fn run_attack(
    model: &Model,
    g_star: &GradientSet,
    y: usize,
    cfg: &AttackConfig,
    shape: &[usize],
    x_star: Option<&Tensor>,
) -> Result<ReconstructionResult> {
    cfg.validate()?;
    check_g_star(model, g_star)?;
    let n: usize = shape.iter().product();
    if n != model.schema().input_size() {
        return Err(AttackError::Shape(format!(
            "image shape {shape:?} does not match {} model inputs",
            model.schema().input_size()
        )));
    }
    if let Some(xs) = x_star {
        if xs.shape() != shape {
            return Err(AttackError::Shape("ground truth shape differs".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = match cfg.init {
        AttackInit::RandomUniform => (0..n).map(|_| rng.random::<f64>()).collect(),
        AttackInit::Zeros => vec![0.0; n],
        AttackInit::GroundTruth => x_star
            .ok_or_else(|| AttackError::Config("ground-truth init needs the target".into()))?
            .data()
            .to_vec(),
    };
    let mut x = Tensor::new(shape.to_vec(), init)?;
    let linear = model.schema().is_linear();
    let objective = |x: &Tensor| gradient_matching_objective(model, x, y, g_star, cfg.tv_weight);

    let mut best_x = x.clone();
    let mut best = objective(&x)?;
    let mut trace = Vec::new();
    let mut stale = 0;
    let mut early_stopped = false;
    let mut steps_used = 0;
    let (mut m1, mut m2) = (vec![0.0; n], vec![0.0; n]);
    let (b1, b2) = (0.9f64, 0.999f64);
    for step in 1..=cfg.steps {
        let grad = if linear {
            linear_input_gradient(model, &x, y, g_star, cfg.tv_weight)?
        } else {
            fd_input_gradient(model, &x, y, g_star, cfg.tv_weight, cfg.fd_epsilon)?
        };
        match cfg.optimizer {
            AttackOptimizer::Gd => {
                for (v, g) in x.data_mut().iter_mut().zip(&grad) {
                    *v = (*v - cfg.step_size * g).clamp(0.0, 1.0);
                }
            }
            AttackOptimizer::Adam => {
                let (c1, c2) = (1.0 - b1.powi(step as i32), 1.0 - b2.powi(step as i32));
                for (i, v) in x.data_mut().iter_mut().enumerate() {
                    m1[i] = b1 * m1[i] + (1.0 - b1) * grad[i];
                    m2[i] = b2 * m2[i] + (1.0 - b2) * grad[i] * grad[i];
                    let upd = (m1[i] / c1) / ((m2[i] / c2).sqrt() + 1e-12);
                    *v = (*v - cfg.step_size * upd).clamp(0.0, 1.0);
                }
            }
        }
        let f = objective(&x)?;
        trace.push(f);
        steps_used += 1;
        // Rounding-level wobble near an optimum is not progress.
        if f < best - IMPROVEMENT_TOL {
            best = f;
            best_x = x.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                early_stopped = true;
                break;
            }
        }
    }
    let (psnr_v, mse_v) = match x_star {
        Some(xs) => (Some(psnr(&best_x, xs)?), Some(mse(&best_x, xs)?)),
        None => (None, None),
    };
    Ok(ReconstructionResult {
        x_hat: best_x,
        objective_trace: trace,
        best_objective: best,
        psnr: psnr_v,
        mse: mse_v,
        steps_used,
        early_stopped,
    })
}

/// Closed-form input recovery for a linear victim: any gradient row with a
/// nonzero bias gradient equals `r_k x`.
pub fn analytic_linear_recovery(g_star: &GradientSet) -> Result<Vec<f64>> {
    let gw = &g_star.grads[0];
    let gb = g_star.grads[1].data();
    let n = gw.shape()[1];
    let k = (0..gb.len())
        .max_by(|&a, &b| gb[a].abs().total_cmp(&gb[b].abs()))
        .filter(|&k| gb[k] != 0.0)
        .ok_or(AttackError::ZeroGradient)?;
    Ok(gw.data()[k * n..(k + 1) * n]
        .iter()
        .map(|v| v / gb[k])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelSchema;

    fn image(side: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            vec![side, side],
            (0..side * side).map(|_| rng.random()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn self_match_is_zero_plus_tv() {
        let model = Model::init(ModelSchema::tiny_conv(8, 2, 4).unwrap(), 3);
        let x = image(8, 1);
        let g = victim_gradient(&model, &x, 2, 0.0).unwrap();
        let f0 = gradient_matching_objective(&model, &x, 2, &g, 0.0).unwrap();
        assert!(f0.abs() < 1e-12, "{f0}");
        let f = gradient_matching_objective(&model, &x, 2, &g, 0.5).unwrap();
        assert!((f - f0 - 0.5 * total_variation(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn scale_invariance() {
        let model = Model::init(ModelSchema::tiny_conv(8, 2, 4).unwrap(), 3);
        let g = victim_gradient(&model, &image(8, 1), 1, 0.0).unwrap();
        let x = image(8, 2);
        let a = gradient_matching_objective(&model, &x, 1, &g, 0.01).unwrap();
        let mut g7 = g.clone();
        g7.scale(7.5);
        let b = gradient_matching_objective(&model, &x, 1, &g7, 0.01).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn fully_pruned_gradient_is_an_error() {
        let model = Model::init(ModelSchema::tiny_conv(8, 2, 4).unwrap(), 3);
        let x = image(8, 1);
        let g = victim_gradient(&model, &x, 0, 1.0).unwrap();
        assert_eq!(g.norm(), 0.0);
        assert!(matches!(
            gradient_matching_objective(&model, &x, 0, &g, 0.0),
            Err(AttackError::ZeroGradient)
        ));
        let cfg = AttackConfig::default();
        assert!(run_attack(&model, &g, 0, &cfg, &[8, 8], Some(&x)).is_err());
    }

    #[test]
    fn ground_truth_init_is_fixed_point() {
        let model = Model::init(ModelSchema::tiny_conv(8, 2, 4).unwrap(), 5);
        let x = image(8, 9);
        let g = victim_gradient(&model, &x, 3, 0.0).unwrap();
        let cfg = AttackConfig {
            init: AttackInit::GroundTruth,
            tv_weight: 0.0,
            steps: 3,
            ..AttackConfig::default()
        };
        let r = run_attack(&model, &g, 3, &cfg, &[8, 8], Some(&x)).unwrap();
        assert_eq!(r.x_hat, x);
        assert_eq!(r.psnr, Some(f64::INFINITY));
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let model = Model::init(ModelSchema::mlp(&[16, 5]).unwrap(), 8);
        let g = victim_gradient(&model, &image(4, 1), 3, 0.0).unwrap();
        let x = image(4, 2);
        let a = linear_input_gradient(&model, &x, 3, &g, 0.0).unwrap();
        let f = fd_input_gradient(&model, &x, 3, &g, 0.0, 1e-6).unwrap();
        for (p, q) in a.iter().zip(&f) {
            assert!((p - q).abs() <= 1e-6 * (1.0 + q.abs()), "{p} vs {q}");
        }
    }

    #[test]
    fn analytic_recovery_is_exact() {
        let model = Model::init(ModelSchema::mlp(&[16, 5]).unwrap(), 8);
        let x = image(4, 4);
        let g = victim_gradient(&model, &x, 1, 0.0).unwrap();
        let rec = analytic_linear_recovery(&g).unwrap();
        for (a, b) in rec.iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn config_guards() {
        assert!(AttackConfig::default().validate().is_ok());
        for bad in [
            AttackConfig {
                steps: 0,
                ..Default::default()
            },
            AttackConfig {
                step_size: 0.0,
                ..Default::default()
            },
            AttackConfig {
                tv_weight: -1.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
