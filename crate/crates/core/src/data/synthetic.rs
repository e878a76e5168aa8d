use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DataError, Dataset, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub count: usize,
    pub features: usize,
    pub classes: usize,
    /// Distance of each class centre from the origin, in noise standard deviations.
    pub separation: f64,
}

/// Unit-variance Gaussian clusters around random centres; sample `i` has label `i % classes`.
pub fn gen_synthetic(spec: SyntheticSpec, seed: u64) -> Result<Dataset> {
    let SyntheticSpec {
        count,
        features,
        classes,
        separation,
    } = spec;
    if classes == 0 || features == 0 || count < classes {
        return Err(DataError::Invalid(format!("bad synthetic spec {spec:?}")));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(DataError::Invalid(format!("bad separation {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut centres = Vec::with_capacity(classes * features);
    for _ in 0..classes {
        let dir: Vec<f64> = (0..features).map(|_| normal()).collect();
        let norm = dir
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        centres.extend(dir.iter().map(|v| v / norm * separation));
    }
    let mut inputs = Vec::with_capacity(count * features);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % classes;
        let centre = &centres[class * features..(class + 1) * features];
        inputs.extend(centre.iter().map(|c| c + normal()));
        labels.push(class);
    }
    Dataset::new(inputs, features, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_labelled() {
        let spec = SyntheticSpec {
            count: 30,
            features: 4,
            classes: 3,
            separation: 2.0,
        };
        let a = gen_synthetic(spec, 5).unwrap();
        assert_eq!(a, gen_synthetic(spec, 5).unwrap());
        assert_ne!(a, gen_synthetic(spec, 6).unwrap());
        assert_eq!(&a.labels()[..4], &[0, 1, 2, 0]);
    }

    #[test]
    fn one_sample_per_class() {
        let spec = SyntheticSpec {
            count: 4,
            features: 2,
            classes: 4,
            separation: 1.0,
        };
        assert_eq!(gen_synthetic(spec, 0).unwrap().labels(), &[0, 1, 2, 3]);
        assert!(gen_synthetic(SyntheticSpec { count: 3, ..spec }, 0).is_err());
    }
}
