use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    optimizer_step, GradientSet, Model, NnError, OptimizerState, Result, Tensor, TrainConfig,
};
use crate::data::DataView;
use crate::par::derive_seed;

const EVAL_BATCH: usize = 256;

fn gather(view: &DataView<'_>, idx: &[usize], buf: &mut Vec<f64>, labels: &mut Vec<usize>) {
    buf.clear();
    labels.clear();
    for &i in idx {
        buf.extend_from_slice(view.sample(i));
        labels.push(view.label(i));
    }
}

/// Minibatch training from `model`; returns the final local weights.
///
/// Optimizer state starts fresh on every call.
pub fn local_train(model: &Model, shard: DataView<'_>, cfg: &TrainConfig) -> Result<Vec<Tensor>> {
    Ok(local_train_with_loss(model, shard, cfg)?.0)
}

/// As `local_train`, also returning the mean minibatch loss (NaN when no step ran).
pub fn local_train_with_loss(
    model: &Model,
    shard: DataView<'_>,
    cfg: &TrainConfig,
) -> Result<(Vec<Tensor>, f64)> {
    cfg.validate()?;
    if shard.is_empty() {
        return Err(NnError::EmptyData);
    }
    if shard.dataset().features() != model.schema().input_size() {
        return Err(NnError::Shape(format!(
            "dataset has {} features, model expects {}",
            shard.dataset().features(),
            model.schema().input_size()
        )));
    }
    let mut model = model.clone();
    let mut state = OptimizerState::new(&model);
    let mut grads = GradientSet::zeros_like(&model);
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let (mut buf, mut labels) = (Vec::new(), Vec::new());
    let (mut loss_sum, mut steps) = (0.0, 0usize);
    for epoch in 0..cfg.local_epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            &[u64::from(epoch)],
        )));
        for chunk in order.chunks(cfg.batch_size) {
            gather(&shard, chunk, &mut buf, &mut labels);
            for g in &mut grads.grads {
                g.data_mut().fill(0.0);
            }
            let (loss, _) = model.backprop(&buf, &labels, &mut grads, false);
            if !loss.is_finite() {
                return Err(NnError::NonFinite);
            }
            loss_sum += loss;
            steps += 1;
            optimizer_step(&mut model, &grads, &mut state, cfg)?;
        }
    }
    let mean = if steps == 0 {
        f64::NAN
    } else {
        loss_sum / steps as f64
    };
    Ok((model.params().to_vec(), mean))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `(accuracy, mean cross-entropy)` over the view.
pub fn evaluate(model: &Model, data: DataView<'_>) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(NnError::EmptyData);
    }
    if data.dataset().features() != model.schema().input_size() {
        return Err(NnError::Shape("dataset does not match model input".into()));
    }
    let classes = model.schema().classes();
    let (mut buf, mut labels) = (Vec::new(), Vec::new());
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut correct, mut loss) = (0usize, 0.0);
    for chunk in idx.chunks(EVAL_BATCH) {
        gather(&data, chunk, &mut buf, &mut labels);
        let acts = model.forward_raw(&buf, chunk.len());
        let logits = acts.last().unwrap();
        for (b, &y) in labels.iter().enumerate() {
            let z = &logits[b * classes..(b + 1) * classes];
            if y >= classes {
                return Err(NnError::Label(y, classes));
            }
            if argmax(z) == y {
                correct += 1;
            }
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - z[y];
        }
    }
    let n = data.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::nn::{ModelSchema, OptimizerKind};

    fn toy() -> Dataset {
        Dataset::new(
            vec![0.5, -1.0, 1.5, 0.25, -0.75, 2.0, 0.0, 1.0],
            2,
            vec![0, 1, 1, 0],
            2,
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let m = Model::init(ModelSchema::mlp(&[2, 3, 2]).unwrap(), 1);
        let cfg = TrainConfig {
            local_epochs: 0,
            ..TrainConfig::default()
        };
        let d = toy();
        assert_eq!(local_train(&m, d.view(), &cfg).unwrap(), m.params());
    }

    #[test]
    fn full_batch_sgd_matches_gradient_step() {
        let m = Model::init(ModelSchema::mlp(&[2, 2]).unwrap(), 4);
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            weight_decay: 0.0,
            batch_size: 4,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let d = toy();
        let out = local_train(&m, d.view(), &cfg).unwrap();
        let (_, g) = m.loss_and_grad(d.inputs(), d.labels()).unwrap();
        for (i, t) in out.iter().enumerate() {
            for (k, v) in t.data().iter().enumerate() {
                let expect = m.params()[i].data()[k] - 0.1 * g.grads[i].data()[k];
                assert!((v - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_clients_identical_weights() {
        let m = Model::init(ModelSchema::mlp(&[2, 3, 2]).unwrap(), 9);
        let d = toy();
        let cfg = TrainConfig {
            batch_size: 2,
            local_epochs: 3,
            ..TrainConfig::default()
        };
        assert_eq!(
            local_train(&m, d.view(), &cfg).unwrap(),
            local_train(&m, d.view(), &cfg).unwrap()
        );
    }

    #[test]
    fn empty_shard_rejected() {
        let m = Model::zeros(ModelSchema::mlp(&[2, 2]).unwrap());
        let d = toy();
        let none: [usize; 0] = [];
        assert!(matches!(
            local_train(&m, d.view_of(&none), &TrainConfig::default()),
            Err(NnError::EmptyData)
        ));
        assert!(evaluate(&m, d.view_of(&none)).is_err());
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let m = Model::zeros(ModelSchema::mlp(&[2, 2]).unwrap());
        let d = toy();
        let (acc, loss) = evaluate(&m, d.view()).unwrap();
        let zeros = d.labels().iter().filter(|&&l| l == 0).count() as f64;
        assert_eq!(acc, zeros / d.len() as f64);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn oracle_model_is_perfect() {
        // Logit k = x0 when k = label; construct features that encode the label.
        let d = Dataset::new(vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0], 2, vec![1, 0, 1], 2).unwrap();
        let mut m = Model::zeros(ModelSchema::mlp(&[2, 2]).unwrap());
        m.unflatten_layer(0, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(evaluate(&m, d.view()).unwrap().0, 1.0);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0; 4]), 0);
    }
}
