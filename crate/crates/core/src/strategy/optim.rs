use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TrainablePlan;
use crate::error::{Error, Result};
use crate::tensor::ParameterStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip over the plan's trainable entries.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    indices: Vec<usize>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// First and second moments, held only for the plan's trainable entries.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Number of scalars with moment buffers.
    pub fn tracked_scalars(&self) -> usize {
        self.moments.values().map(|m| m.indices.len()).sum()
    }
}

/// One Adam update of the plan's trainable entries from the gradients in
/// `store`. Entries outside the plan are never written.
pub fn optimizer_step(
    plan: &TrainablePlan,
    store: &mut ParameterStore,
    cfg: &AdamConfig,
    state: &mut AdamState,
) -> Result<()> {
    let names: Vec<String> = plan.trainable_names().map(str::to_string).collect();
    for name in &names {
        let t = store.tensor(name)?;
        if t.grad().is_none() {
            return Err(Error::Training(format!("no gradient for plan parameter `{name}`")));
        }
        if !state.moments.contains_key(name) {
            let indices = plan.trainability(name).trainable_indices(t.shape());
            let n = indices.len();
            state.moments.insert(
                name.clone(),
                Moments {
                    indices,
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                },
            );
        }
    }

    let scale = match cfg.clip_norm {
        Some(max) => {
            let mut sq = 0.0;
            for name in &names {
                let g = store.tensor(name)?.grad().unwrap_or_default();
                sq += state.moments[name].indices.iter().map(|&i| g[i] * g[i]).sum::<f64>();
            }
            let norm = sq.sqrt();
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for name in &names {
        let mom = state.moments.get_mut(name).expect("moments allocated above");
        let tensor = store.tensor_mut(name)?;
        let g: Vec<f64> = mom
            .indices
            .iter()
            .map(|&i| tensor.grad().unwrap_or_default()[i] * scale)
            .collect();
        let data = tensor.data_mut();
        for (k, &i) in mom.indices.iter().enumerate() {
            mom.m[k] = cfg.beta1 * mom.m[k] + (1.0 - cfg.beta1) * g[k];
            mom.v[k] = cfg.beta2 * mom.v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = mom.m[k] / c1;
            let v_hat = mom.v[k] / c2;
            data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::{HeadKind, StrategyKind};
    use crate::tensor::{Tensor, Trainability};
    use std::collections::BTreeSet;

    fn plan(entries: &[(&str, Trainability)]) -> TrainablePlan {
        TrainablePlan {
            kind: StrategyKind::FineTune,
            head: HeadKind::Classifier,
            uses_soft_prompt: false,
            uses_prefixes: false,
            label_ids: Vec::new(),
            entries: entries.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    fn store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("a", Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap()).unwrap();
        s.insert("b", Tensor::matrix(3, 2, vec![1.0; 6]).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store();
        let p = plan(&[("a", Trainability::Full)]);
        s.tensor_mut("a").unwrap().accumulate_grad(&[0.0; 3]).unwrap();
        let before = s.clone();
        let mut st = AdamState::new();
        for _ in 0..5 {
            optimizer_step(&p, &mut s, &AdamConfig::default(), &mut st).unwrap();
        }
        assert_eq!(s.tensor("a").unwrap().data(), before.tensor("a").unwrap().data());
    }

    #[test]
    fn constant_gradient_matches_closed_form() {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::scalar(0.5)).unwrap();
        let p = plan(&[("w", Trainability::Full)]);
        let cfg = AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        };
        let g = 0.3;
        let mut st = AdamState::new();
        for t in 1..=20 {
            s.zero_grad();
            s.tensor_mut("w").unwrap().accumulate_grad(&[g]).unwrap();
            optimizer_step(&p, &mut s, &cfg, &mut st).unwrap();
            // bias-corrected moments equal g and g^2 exactly in real arithmetic
            let expect = 0.5 - t as f64 * cfg.lr * g / (g.abs() + cfg.eps);
            assert!((s.tensor("w").unwrap().item() - expect).abs() < 1e-12, "step {t}");
        }
    }

    #[test]
    fn frozen_parameter_untouched_despite_gradient() {
        let mut s = store();
        let p = plan(&[("a", Trainability::Full), ("b", Trainability::Frozen)]);
        s.tensor_mut("a").unwrap().accumulate_grad(&[1.0; 3]).unwrap();
        s.tensor_mut("b").unwrap().accumulate_grad(&[5.0; 6]).unwrap();
        let before = s.tensor("b").unwrap().to_le_bytes();
        let mut st = AdamState::new();
        optimizer_step(&p, &mut s, &AdamConfig::default(), &mut st).unwrap();
        assert_eq!(s.tensor("b").unwrap().to_le_bytes(), before);
        assert_ne!(s.tensor("a").unwrap().data(), &[1.0, -2.0, 3.0]);
        assert_eq!(st.tracked_scalars(), 3);
    }

    #[test]
    fn row_restricted_updates_only_listed_rows() {
        let mut s = store();
        let p = plan(&[("b", Trainability::Rows(BTreeSet::from([1])))]);
        s.tensor_mut("b").unwrap().accumulate_grad(&[1.0; 6]).unwrap();
        let mut st = AdamState::new();
        optimizer_step(&p, &mut s, &AdamConfig::default(), &mut st).unwrap();
        let d = s.tensor("b").unwrap().data();
        assert_eq!(&d[0..2], &[1.0, 1.0]);
        assert!(d[2] < 1.0 && d[3] < 1.0);
        assert_eq!(&d[4..6], &[1.0, 1.0]);
        assert_eq!(st.tracked_scalars(), 2);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = store();
        let p = plan(&[("a", Trainability::Full)]);
        let mut st = AdamState::new();
        assert!(matches!(
            optimizer_step(&p, &mut s, &AdamConfig::default(), &mut st),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn clipping_scales_the_step() {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::scalar(0.0)).unwrap();
        let p = plan(&[("w", Trainability::Full)]);
        let cfg = AdamConfig {
            lr: 0.1,
            clip_norm: Some(1.0),
            ..AdamConfig::default()
        };
        s.tensor_mut("w").unwrap().accumulate_grad(&[100.0]).unwrap();
        let mut st = AdamState::new();
        optimizer_step(&p, &mut s, &cfg, &mut st).unwrap();
        // first Adam step moves by lr * g / (|g| + eps) with g clipped to 1
        assert!((s.tensor("w").unwrap().item() + 0.1 / (1.0 + 1e-8)).abs() < 1e-12);
    }
}
