use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionStrategy {
    Iid,
    LabelShards,
}

/// Per-client index lists into one dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub clients: Vec<Vec<usize>>,
    pub strategy: PartitionStrategy,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Shuffled split into sizes `floor(f*n)` and the remainder.
pub fn split_train_validation(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if dataset.is_empty() {
        return Err(DataError::Empty);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::Invalid(format!(
            "split fraction {fraction} not in (0, 1)"
        )));
    }
    let idx = shuffled(dataset.len(), seed);
    let cut = (fraction * dataset.len() as f64).floor() as usize;
    Ok((dataset.subset(&idx[..cut])?, dataset.subset(&idx[cut..])?))
}

fn check_clients(dataset: &Dataset, num_clients: usize) -> Result<()> {
    if num_clients == 0 {
        return Err(DataError::Invalid("need at least one client".into()));
    }
    if num_clients > dataset.len() {
        return Err(DataError::Invalid(format!(
            "{num_clients} clients for {} samples",
            dataset.len()
        )));
    }
    Ok(())
}

/// Shuffled round-robin; shard sizes differ by at most one.
pub fn partition_iid(dataset: &Dataset, num_clients: usize, seed: u64) -> Result<Partition> {
    check_clients(dataset, num_clients)?;
    let mut clients = vec![Vec::new(); num_clients];
    for (k, i) in shuffled(dataset.len(), seed).into_iter().enumerate() {
        clients[k % num_clients].push(i);
    }
    Ok(Partition {
        clients,
        strategy: PartitionStrategy::Iid,
    })
}

/// Client `c` holds classes `c*k .. c*k+k` (mod class count); each class's
/// samples are dealt round-robin among its holders.
pub fn partition_label_shards(
    dataset: &Dataset,
    num_clients: usize,
    classes_per_client: usize,
    seed: u64,
) -> Result<Partition> {
    check_clients(dataset, num_clients)?;
    let classes = dataset.classes();
    if classes_per_client == 0 || classes_per_client > classes {
        return Err(DataError::Invalid(format!(
            "classes_per_client {classes_per_client} not in [1, {classes}]"
        )));
    }
    if num_clients * classes_per_client < classes {
        return Err(DataError::Invalid(format!(
            "{num_clients} clients x {classes_per_client} classes cannot cover {classes} classes"
        )));
    }
    let mut holders = vec![Vec::new(); classes];
    for c in 0..num_clients {
        for j in 0..classes_per_client {
            let class = (c * classes_per_client + j) % classes;
            if !holders[class].contains(&c) {
                holders[class].push(c);
            }
        }
    }
    let mut dealt = vec![0usize; classes];
    let mut clients = vec![Vec::new(); num_clients];
    for i in shuffled(dataset.len(), seed) {
        let class = dataset.label(i);
        let h = &holders[class];
        clients[h[dealt[class] % h.len()]].push(i);
        dealt[class] += 1;
    }
    Ok(Partition {
        clients,
        strategy: PartitionStrategy::LabelShards,
    })
}
