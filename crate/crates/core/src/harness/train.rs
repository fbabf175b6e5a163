use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::data::Dataset;
use super::episode::Episode;
use super::metrics::score;
use super::{Metric, RunConfig};
use crate::error::{Error, Result};
use crate::model::MlmModel;
use crate::strategy::{
    class_logits, loss_and_grads, optimizer_step, plan_for_model, AdamConfig, AdamState, Strategy, TrainablePlan,
};
use crate::template::{PromptedInput, Task};
use crate::tensor::{Tape, Tensor};
use crate::vocab::Vocab;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainTrace {
    /// Loss of every optimizer step.
    pub losses: Vec<f64>,
    /// `(step, dev metric)` for every dev evaluation.
    pub dev_evals: Vec<(usize, f64)>,
}

pub struct EpisodeOutcome {
    /// Model holding the selected checkpoint.
    pub model: MlmModel,
    pub plan: TrainablePlan,
    pub trace: TrainTrace,
    /// Step of the selected checkpoint; 0 is the untrained initialization.
    pub best_step: usize,
    pub best_dev: Option<f64>,
}

/// Templated inputs with class indices, truncated to `max_len` tokens.
pub fn encode_examples(
    dataset: &Dataset,
    indices: &[usize],
    task: &Task,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<(PromptedInput, usize)>> {
    indices
        .iter()
        .map(|&i| {
            let r = dataset.records.get(i).ok_or(Error::Index {
                what: "dataset",
                index: i,
                len: dataset.len(),
            })?;
            let class = task
                .verbalizer
                .class_of(&r.label)
                .ok_or_else(|| Error::Config(format!("label `{}` is not defined by task `{}`", r.label, task.name)))?;
            let input = task
                .template
                .instantiate_within(&r.s1, r.s2.as_deref(), vocab, max_len)?;
            Ok((input, class))
        })
        .collect()
}

/// Token budget left for the templated text under `strategy`.
pub fn text_budget(model: &MlmModel, strategy: &Strategy) -> Result<usize> {
    let reserved = if strategy.uses_soft_prompt() {
        strategy.prompt_length
    } else {
        0
    };
    model
        .config
        .max_positions
        .checked_sub(reserved)
        .filter(|&b| b >= 3)
        .ok_or_else(|| {
            Error::Config(format!(
                "prompt length {} leaves no room in {} positions",
                strategy.prompt_length, model.config.max_positions
            ))
        })
}

/// Predicted class (first maximum) for each example.
pub fn predict(model: &MlmModel, plan: &TrainablePlan, examples: &[(PromptedInput, usize)]) -> Result<Vec<usize>> {
    examples
        .iter()
        .map(|(input, _)| {
            let mut tape = Tape::new();
            let logits = class_logits(&mut tape, model, plan, input)?;
            let v = tape.value(logits).data();
            let mut best = 0;
            for (i, x) in v.iter().enumerate() {
                if *x > v[best] {
                    best = i;
                }
            }
            Ok(best)
        })
        .collect()
}

pub fn evaluate(
    model: &MlmModel,
    plan: &TrainablePlan,
    examples: &[(PromptedInput, usize)],
    metric: Metric,
) -> Result<f64> {
    let predicted = predict(model, plan, examples)?;
    let gold: Vec<usize> = examples.iter().map(|(_, c)| *c).collect();
    score(metric, &predicted, &gold, plan.n_classes(model)?)
}

/// Trainable tensors saved at a dev checkpoint.
type Snapshot = Vec<(String, Tensor)>;

fn snapshot(model: &MlmModel, plan: &TrainablePlan) -> Result<Snapshot> {
    plan.trainable_names()
        .map(|n| Ok((n.to_string(), model.store.tensor(n)?.clone())))
        .collect()
}

fn restore(model: &mut MlmModel, saved: Snapshot) -> Result<()> {
    for (name, t) in saved {
        model.store.tensor_mut(&name)?.data_mut().copy_from_slice(t.data());
    }
    Ok(())
}

/// Adapts a copy of `pretrained` to the episode's train split with exactly
/// `cfg.steps` optimizer steps, evaluating on dev every `dev_eval_every`
/// steps (and after the last step) and keeping the best checkpoint, earliest
/// on ties.
pub fn train_episode(
    pretrained: &MlmModel,
    task: &Task,
    vocab: &Vocab,
    dataset: &Dataset,
    episode: &Episode,
    strategy: &Strategy,
    cfg: &RunConfig,
) -> Result<EpisodeOutcome> {
    cfg.validate()?;
    let mut model = pretrained.clone();
    let n_classes = task.verbalizer.len();
    strategy.prepare_model(&mut model, n_classes, episode.seed)?;
    let label_ids = task.verbalizer.label_word_ids(vocab)?;
    let plan = plan_for_model(strategy, &mut model, &label_ids)?;
    let budget = text_budget(&model, strategy)?;
    let train = encode_examples(dataset, &episode.train, task, vocab, budget)?;
    let dev = encode_examples(dataset, &episode.dev, task, vocab, budget)?;
    if train.is_empty() {
        return Err(Error::Training("empty train split".into()));
    }

    let adam = AdamConfig {
        lr: cfg.lr,
        clip_norm: cfg.clip_norm,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(episode.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut trace = TrainTrace::default();
    let mut best: Option<(f64, usize, Snapshot)> = None;

    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..train.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(train[order[cursor]].clone());
            cursor += 1;
        }
        model.store.zero_grad();
        let loss = loss_and_grads(&mut model, &plan, &batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        optimizer_step(&plan, &mut model.store, &adam, &mut state)?;
        trace.losses.push(loss);

        if step % cfg.dev_eval_every == 0 || step == cfg.steps {
            let metric = if dev.is_empty() {
                0.0
            } else {
                evaluate(&model, &plan, &dev, task.metric)?
            };
            trace.dev_evals.push((step, metric));
            if cfg.select_on_dev && best.as_ref().is_none_or(|(m, _, _)| metric > *m) {
                best = Some((metric, step, snapshot(&model, &plan)?));
            }
        }
    }
    model.store.zero_grad();

    let (best_step, best_dev) = match best {
        Some((metric, step, saved)) => {
            restore(&mut model, saved)?;
            (step, Some(metric))
        }
        None => (cfg.steps, trace.dev_evals.last().map(|&(_, m)| m)),
    };
    Ok(EpisodeOutcome {
        model,
        plan,
        trace,
        best_step,
        best_dev,
    })
}
