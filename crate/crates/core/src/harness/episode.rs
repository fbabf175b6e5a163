use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::Dataset;
use crate::error::{Error, Result};
use crate::template::Task;

/// Record indices of one K-shot trial.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub seed: u64,
    pub k: usize,
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    /// Every record in neither train nor dev, in dataset order.
    pub test: Vec<usize>,
}

/// Stratified sampling without replacement: K train and K dev records per
/// class, the rest is test.
pub fn sample_episode(dataset: &Dataset, task: &Task, k: usize, seed: u64) -> Result<Episode> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let classes = dataset.classes(task)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for (c, label) in task.verbalizer.labels().enumerate() {
        let mut members: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == c).collect();
        if members.len() < 2 * k {
            return Err(Error::Sampling {
                class: label.to_string(),
                needed: 2 * k,
                available: members.len(),
            });
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..k]);
        dev.extend_from_slice(&members[k..2 * k]);
    }
    let mut taken = vec![false; dataset.len()];
    for &i in train.iter().chain(&dev) {
        taken[i] = true;
    }
    let test = (0..dataset.len()).filter(|&i| !taken[i]).collect();
    Ok(Episode {
        seed,
        k,
        train,
        dev,
        test,
    })
}
