//! Trainable plans and losses for fine-tuning, prompt-tuning, prefix-tuning
//! and soft template tuning (STT).

mod accounting;
mod optim;

pub use accounting::{count_trainable, millions, strategy_layout, Breakdown};
pub use optim::{optimizer_step, AdamConfig, AdamState};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    class_logits_cls, class_logits_mlm, compose_input, forward_encoder, MlmModel, ParamSpec, PromptPlacement,
    CLS_DENSE_B, CLS_DENSE_W, CLS_OUT_B, CLS_OUT_W, LM_DECODER_B, LM_DECODER_W, LM_DENSE_B, LM_DENSE_W, LM_LN_BIAS,
    LM_LN_GAIN, SOFT_PROMPT,
};
use crate::template::PromptedInput;
use crate::tensor::{ParameterStore, Tape, Trainability, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "finetune")]
    FineTune,
    #[serde(rename = "prompt")]
    PromptTune,
    #[serde(rename = "prefix")]
    PrefixTune,
    #[serde(rename = "stt")]
    Stt,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::FineTune,
        StrategyKind::PromptTune,
        StrategyKind::PrefixTune,
        StrategyKind::Stt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::FineTune => "finetune",
            StrategyKind::PromptTune => "prompt",
            StrategyKind::PrefixTune => "prefix",
            StrategyKind::Stt => "stt",
        }
    }

    /// Identifier stored in checkpoint headers. Zero is reserved for a
    /// pre-trained backbone.
    pub fn id(self) -> u8 {
        match self {
            StrategyKind::FineTune => 1,
            StrategyKind::PromptTune => 2,
            StrategyKind::PrefixTune => 3,
            StrategyKind::Stt => 4,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        StrategyKind::ALL.into_iter().find(|k| k.id() == id)
    }

    pub fn head(self) -> HeadKind {
        match self {
            StrategyKind::Stt => HeadKind::LmRestricted,
            _ => HeadKind::Classifier,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown strategy `{s}` (expected finetune, prompt, prefix or stt)"
            ))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    Classifier,
    LmRestricted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    /// Soft prompt length for prompt-tuning and STT, prefix length for
    /// prefix-tuning. Ignored by fine-tuning.
    pub prompt_length: usize,
    /// Whether STT also updates the LM head.
    pub stt_head_trainable: bool,
    #[serde(default)]
    pub placement: PromptPlacement,
}

impl Strategy {
    pub fn new(kind: StrategyKind, prompt_length: usize) -> Self {
        Strategy {
            kind,
            prompt_length,
            stt_head_trainable: true,
            placement: PromptPlacement::AfterCls,
        }
    }

    /// Prompt-tuning and prefix-tuning need at least one prompt row. STT
    /// accepts zero, which leaves LM-head-only tuning.
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            StrategyKind::PromptTune | StrategyKind::PrefixTune if self.prompt_length == 0 => Err(Error::Config(
                format!("{} needs a prompt length of at least 1", self.kind),
            )),
            StrategyKind::Stt if self.prompt_length == 0 && !self.stt_head_trainable => Err(Error::Config(
                "stt with no prompt and a frozen LM head has nothing to train".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn uses_soft_prompt(&self) -> bool {
        matches!(self.kind, StrategyKind::PromptTune | StrategyKind::Stt) && self.prompt_length > 0
    }

    pub fn uses_prefixes(&self) -> bool {
        self.kind == StrategyKind::PrefixTune
    }

    /// Attaches the structures this strategy trains, discarding any others.
    /// Soft prompts, prefixes and classifier heads are freshly initialized
    /// from `seed`.
    pub fn prepare_model(&self, model: &mut MlmModel, n_classes: usize, seed: u64) -> Result<()> {
        self.validate()?;
        model.detach_adapters();
        if self.uses_soft_prompt() {
            model.attach_soft_prompt(self.prompt_length, self.placement, seed)?;
        }
        if self.uses_prefixes() {
            model.attach_prefixes(self.prompt_length, seed.wrapping_add(1))?;
        }
        if self.kind.head() == HeadKind::Classifier {
            model.attach_classifier(n_classes, seed.wrapping_add(2))?;
        }
        Ok(())
    }
}

/// The exact set of parameters a strategy updates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainablePlan {
    pub kind: StrategyKind,
    pub head: HeadKind,
    pub uses_soft_prompt: bool,
    pub uses_prefixes: bool,
    /// Verbalizer word ids for the LM head; empty for classifier heads.
    pub label_ids: Vec<usize>,
    /// Trainability of every parameter in the layout the plan was built from.
    pub entries: BTreeMap<String, Trainability>,
}

impl TrainablePlan {
    pub fn trainability(&self, name: &str) -> &Trainability {
        self.entries.get(name).unwrap_or(&Trainability::Frozen)
    }

    /// Names of parameters with at least one trainable entry.
    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|(_, t)| t.is_trainable())
            .map(|(n, _)| n.as_str())
    }

    pub fn n_classes(&self, model: &MlmModel) -> Result<usize> {
        match self.head {
            HeadKind::LmRestricted => Ok(self.label_ids.len()),
            HeadKind::Classifier => model
                .n_classes
                .ok_or_else(|| Error::Plan("model has no classifier head".into())),
        }
    }
}

fn require(layout: &[ParamSpec], name: &str, kind: StrategyKind) -> Result<()> {
    if layout.iter().any(|p| p.name == name) {
        Ok(())
    } else {
        Err(Error::Plan(format!(
            "{kind} needs parameter `{name}`; prepare the model first"
        )))
    }
}

/// Builds the plan for `strategy` over the parameters in `layout`.
pub fn build_plan(strategy: &Strategy, layout: &[ParamSpec], label_ids: &[usize]) -> Result<TrainablePlan> {
    strategy.validate()?;
    let kind = strategy.kind;
    let mut entries: BTreeMap<String, Trainability> =
        layout.iter().map(|p| (p.name.clone(), Trainability::Frozen)).collect();
    let mut train = |name: &str, t: Trainability| {
        entries.insert(name.to_string(), t);
    };
    let classifier = [CLS_DENSE_W, CLS_DENSE_B, CLS_OUT_W, CLS_OUT_B];
    match kind {
        StrategyKind::FineTune => {
            for n in classifier {
                require(layout, n, kind)?;
            }
            for p in layout {
                train(&p.name, Trainability::Full);
            }
        }
        StrategyKind::PromptTune => {
            require(layout, SOFT_PROMPT, kind)?;
            train(SOFT_PROMPT, Trainability::Full);
            for n in classifier {
                require(layout, n, kind)?;
                train(n, Trainability::Full);
            }
        }
        StrategyKind::PrefixTune => {
            let prefixes: Vec<&ParamSpec> = layout.iter().filter(|p| p.name.starts_with("prefix.")).collect();
            if prefixes.is_empty() {
                return Err(Error::Plan(
                    "prefix needs per-layer prefixes; prepare the model first".into(),
                ));
            }
            for p in prefixes {
                train(&p.name, Trainability::Full);
            }
            for n in classifier {
                require(layout, n, kind)?;
                train(n, Trainability::Full);
            }
        }
        StrategyKind::Stt => {
            if label_ids.is_empty() {
                return Err(Error::Plan("stt needs at least one label word".into()));
            }
            if strategy.prompt_length > 0 {
                require(layout, SOFT_PROMPT, kind)?;
                train(SOFT_PROMPT, Trainability::Full);
            }
            if strategy.stt_head_trainable {
                let decoder = layout
                    .iter()
                    .find(|p| p.name == LM_DECODER_W)
                    .ok_or_else(|| Error::Plan(format!("stt needs parameter `{LM_DECODER_W}`")))?;
                if let Some(&bad) = label_ids.iter().find(|&&i| i >= decoder.shape[0]) {
                    return Err(Error::Plan(format!("label word id {bad} outside the vocabulary")));
                }
                let rows: std::collections::BTreeSet<usize> = label_ids.iter().copied().collect();
                for n in [LM_DENSE_W, LM_DENSE_B, LM_LN_GAIN, LM_LN_BIAS] {
                    require(layout, n, kind)?;
                    train(n, Trainability::Full);
                }
                train(LM_DECODER_W, Trainability::Rows(rows.clone()));
                train(LM_DECODER_B, Trainability::Rows(rows));
            }
        }
    }
    Ok(TrainablePlan {
        kind,
        head: kind.head(),
        uses_soft_prompt: strategy.uses_soft_prompt(),
        uses_prefixes: strategy.uses_prefixes(),
        label_ids: if kind == StrategyKind::Stt {
            label_ids.to_vec()
        } else {
            Vec::new()
        },
        entries,
    })
}

/// Builds the plan over the model's current parameters and applies it.
pub fn plan_for_model(strategy: &Strategy, model: &mut MlmModel, label_ids: &[usize]) -> Result<TrainablePlan> {
    let plan = build_plan(strategy, &model.layout(), label_ids)?;
    apply_plan(&plan, &mut model.store)?;
    Ok(plan)
}

/// Freezes every parameter outside the plan and marks plan entries trainable.
pub fn apply_plan(plan: &TrainablePlan, store: &mut ParameterStore) -> Result<()> {
    store.freeze_all();
    for (name, t) in &plan.entries {
        if t.is_trainable() {
            store.set_trainability(name, t.clone())?;
        }
    }
    Ok(())
}

/// Records the forward pass for one example and returns its class logits.
pub fn class_logits(tape: &mut Tape, model: &MlmModel, plan: &TrainablePlan, input: &PromptedInput) -> Result<Var> {
    let soft = if plan.uses_soft_prompt {
        Some(
            model
                .soft_prompt
                .as_ref()
                .ok_or_else(|| Error::Plan("plan uses a soft prompt the model does not have".into()))?,
        )
    } else {
        None
    };
    let composed = compose_input(tape, model, input, soft)?;
    let hidden = forward_encoder(tape, model, composed.hidden, composed.attn_len, plan.uses_prefixes)?;
    match plan.head {
        HeadKind::LmRestricted => class_logits_mlm(tape, model, hidden, composed.mask_index, &plan.label_ids),
        HeadKind::Classifier => class_logits_cls(tape, model, hidden, composed.cls_index),
    }
}

/// Mean cross-entropy of the batch under the plan's head.
pub fn strategy_loss(
    tape: &mut Tape,
    model: &MlmModel,
    plan: &TrainablePlan,
    batch: &[(PromptedInput, usize)],
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let n_classes = plan.n_classes(model)?;
    let mut losses = Vec::with_capacity(batch.len());
    for (input, label) in batch {
        if *label >= n_classes {
            return Err(Error::Arity(format!(
                "label index {label} for a {n_classes}-class head"
            )));
        }
        let logits = class_logits(tape, model, plan, input)?;
        losses.push(tape.cross_entropy(logits, *label)?);
    }
    tape.mean_of(&losses)
}

/// Forward, backward, and gradient write-back for one batch. Every
/// trainable parameter of the plan ends up with a gradient buffer, zero if
/// the loss does not reach it.
pub fn loss_and_grads(model: &mut MlmModel, plan: &TrainablePlan, batch: &[(PromptedInput, usize)]) -> Result<f64> {
    let mut tape = Tape::new();
    for name in plan.trainable_names() {
        tape.param(&model.store, name)?;
    }
    let loss = strategy_loss(&mut tape, model, plan, batch)?;
    tape.backward(loss)?;
    let value = tape.value(loss).item();
    tape.write_param_grads(&mut model.store)?;
    Ok(value)
}

/// SHA-256 of the bytes of every entry the plan leaves frozen, keyed by
/// parameter name. Row-restricted parameters hash their frozen rows only.
pub fn frozen_fingerprints(plan: &TrainablePlan, store: &ParameterStore) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for p in store.iter() {
        let t = plan.trainability(&p.name);
        let data = p.tensor.data();
        let mut hasher = Sha256::new();
        match t {
            Trainability::Full => continue,
            Trainability::Frozen => hasher.update(p.tensor.to_le_bytes()),
            Trainability::Rows(_) => {
                let trainable: std::collections::HashSet<usize> =
                    t.trainable_indices(p.tensor.shape()).into_iter().collect();
                for (i, x) in data.iter().enumerate() {
                    if !trainable.contains(&i) {
                        hasher.update(x.to_le_bytes());
                    }
                }
            }
        }
        let digest = hasher.finalize();
        out.insert(p.name.clone(), digest.iter().map(|b| format!("{b:02x}")).collect());
    }
    out
}
