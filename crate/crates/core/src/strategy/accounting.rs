use serde::Serialize;

use super::{HeadKind, Strategy, TrainablePlan};
use crate::model::{base_layout, classifier_layout, prefix_layout, soft_prompt_layout, ModelConfig, ParamSpec};

/// Trainable scalar counts split the way parameter-efficiency tables report them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Breakdown {
    /// Word and position embeddings plus the soft prompt.
    pub embedding_layers: u64,
    /// Encoder blocks plus per-layer prefixes.
    pub transformer_layers: u64,
    /// LM head and classifier head.
    pub head_layers: u64,
    pub total: u64,
}

/// Parameters a model prepared for `strategy` would hold, without allocating them.
pub fn strategy_layout(cfg: &ModelConfig, strategy: &Strategy, n_classes: usize) -> Vec<ParamSpec> {
    let mut layout = base_layout(cfg);
    if strategy.uses_soft_prompt() {
        layout.extend(soft_prompt_layout(cfg, strategy.prompt_length));
    }
    if strategy.uses_prefixes() {
        layout.extend(prefix_layout(cfg, strategy.prompt_length));
    }
    if strategy.kind.head() == HeadKind::Classifier {
        layout.extend(classifier_layout(cfg, n_classes));
    }
    layout
}

/// Sums the plan's trainable entries over `layout`, bucketed by name prefix.
pub fn count_trainable(plan: &TrainablePlan, layout: &[ParamSpec]) -> Breakdown {
    let mut b = Breakdown::default();
    for p in layout {
        let n = plan.trainability(&p.name).count(&p.shape) as u64;
        if p.name.starts_with("embeddings.") || p.name.starts_with("soft_prompt.") {
            b.embedding_layers += n;
        } else if p.name.starts_with("blocks.") || p.name.starts_with("prefix.") {
            b.transformer_layers += n;
        } else {
            b.head_layers += n;
        }
        b.total += n;
    }
    b
}

/// Count in millions rounded to three decimals, e.g. `1.052M`.
pub fn millions(n: u64) -> String {
    format!("{:.3}M", n as f64 / 1e6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, LM_DECODER_W};
    use crate::strategy::{build_plan, StrategyKind};

    fn large() -> ModelConfig {
        ModelConfig::roberta_large_shapes()
    }

    #[test]
    fn prompt_tuning_large_shapes() {
        let s = Strategy::new(StrategyKind::PromptTune, 25);
        let layout = strategy_layout(&large(), &s, 2);
        let b = count_trainable(&build_plan(&s, &layout, &[]).unwrap(), &layout);
        assert_eq!(b.embedding_layers, 25 * 1024);
        assert_eq!(b.transformer_layers, 0);
        assert_eq!(b.head_layers, (1024 * 1024 + 1024) + (1024 * 2 + 2));
        assert_eq!(millions(b.embedding_layers), "0.026M");
        assert_eq!(millions(b.head_layers), "1.052M");
    }

    #[test]
    fn stt_large_shapes() {
        let s = Strategy::new(StrategyKind::Stt, 25);
        let layout = strategy_layout(&large(), &s, 2);
        let b = count_trainable(&build_plan(&s, &layout, &[100, 200]).unwrap(), &layout);
        assert_eq!(b.embedding_layers, 25_600);
        assert_eq!(b.head_layers, (1024 * 1024 + 1024) + 2 * 1024 + (2 * 1024 + 2));
        assert_eq!(millions(b.head_layers), "1.054M");
    }

    #[test]
    fn prefix_large_shapes_use_direct_rows() {
        let s = Strategy::new(StrategyKind::PrefixTune, 25);
        let layout = strategy_layout(&large(), &s, 2);
        let b = count_trainable(&build_plan(&s, &layout, &[]).unwrap(), &layout);
        assert_eq!(b.transformer_layers, 2 * 24 * 25 * 1024);
        assert_eq!(b.embedding_layers, 0);
    }

    #[test]
    fn finetune_counts_every_scalar() {
        let mut m = init_model(ModelConfig::toy(64), 1).unwrap();
        let s = Strategy::new(StrategyKind::FineTune, 0);
        s.prepare_model(&mut m, 2, 1).unwrap();
        let layout = m.layout();
        assert_eq!(layout, strategy_layout(&m.config, &s, 2));
        let b = count_trainable(&build_plan(&s, &layout, &[]).unwrap(), &layout);
        let mut enumerated = 0u64;
        for p in m.store.iter() {
            for _ in p.tensor.data() {
                enumerated += 1;
            }
        }
        assert_eq!(b.total, enumerated);
        assert_eq!(b.total, (b.embedding_layers + b.transformer_layers + b.head_layers));
    }

    #[test]
    fn stt_toy_matches_enumeration() {
        let mut m = init_model(ModelConfig::toy(64), 1).unwrap();
        let s = Strategy::new(StrategyKind::Stt, 5);
        s.prepare_model(&mut m, 2, 1).unwrap();
        let plan = crate::strategy::plan_for_model(&s, &mut m, &[30, 40]).unwrap();
        let b = count_trainable(&plan, &m.layout());
        let mut enumerated = 0u64;
        for p in m.store.iter() {
            let d = if p.tensor.shape().len() == 2 {
                p.tensor.shape()[1]
            } else {
                1
            };
            for i in 0..p.tensor.numel() {
                let counted = match &p.trainable {
                    crate::tensor::Trainability::Frozen => false,
                    crate::tensor::Trainability::Full => true,
                    crate::tensor::Trainability::Rows(r) => r.contains(&(i / d)),
                };
                enumerated += counted as u64;
            }
        }
        assert_eq!(b.total, enumerated);
        assert_eq!(b.total, 5 * 16 + (16 * 16 + 16 + 32) + 2 * 16 + 2);
        assert!(m.store.contains(LM_DECODER_W));
    }
}
