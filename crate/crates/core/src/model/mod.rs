//! Toy transformer masked language model.
//!
//! Parameters live in a single [`ParameterStore`] under dotted names. The
//! backbone (`embeddings.*`, `blocks.*`, `lm_head.*`) is created by
//! [`init_model`]; adaptation structures (`soft_prompt.*`, `prefix.*`,
//! `classifier.*`) are attached per episode.

mod forward;

pub use forward::{class_logits_cls, class_logits_mlm, compose_input, forward_encoder, mlm_token_logits, Composed};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ops::LAYER_NORM_EPS, ParameterStore, Tensor};
use crate::vocab::SPECIALS;

pub const INIT_STD: f64 = 0.02;

pub const WORD_EMBEDDINGS: &str = "embeddings.word";
pub const POSITION_EMBEDDINGS: &str = "embeddings.position";
pub const SOFT_PROMPT: &str = "soft_prompt.embeddings";
pub const LM_DENSE_W: &str = "lm_head.dense.weight";
pub const LM_DENSE_B: &str = "lm_head.dense.bias";
pub const LM_LN_GAIN: &str = "lm_head.ln.gain";
pub const LM_LN_BIAS: &str = "lm_head.ln.bias";
pub const LM_DECODER_W: &str = "lm_head.decoder.weight";
pub const LM_DECODER_B: &str = "lm_head.decoder.bias";
pub const CLS_DENSE_W: &str = "classifier.dense.weight";
pub const CLS_DENSE_B: &str = "classifier.dense.bias";
pub const CLS_OUT_W: &str = "classifier.out.weight";
pub const CLS_OUT_B: &str = "classifier.out.bias";

pub fn block_param(layer: usize, part: &str) -> String {
    format!("blocks.{layer}.{part}")
}

pub fn prefix_key(layer: usize) -> String {
    format!("prefix.{layer}.key")
}

pub fn prefix_value(layer: usize) -> String {
    format!("prefix.{layer}.value")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden: usize,
    pub ffn_mult: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// Small default used by tests and the CLI.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            n_layers: 2,
            n_heads: 2,
            hidden: 16,
            ffn_mult: 4,
            vocab_size,
            max_positions: 64,
            layer_norm_eps: LAYER_NORM_EPS,
        }
    }

    /// The shapes of a 24-layer, 1024-wide encoder with a 50,265-word
    /// vocabulary. Used only for parameter accounting.
    pub fn roberta_large_shapes() -> Self {
        Self {
            n_layers: 24,
            n_heads: 16,
            hidden: 1024,
            ffn_mult: 4,
            vocab_size: 50_265,
            max_positions: 514,
            layer_norm_eps: LAYER_NORM_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.n_heads == 0 || !self.hidden.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "hidden size {} must be a positive multiple of n_heads {}",
                self.hidden, self.n_heads
            )));
        }
        if self.ffn_mult == 0 || self.max_positions == 0 {
            return Err(Error::Config("ffn_mult and max_positions must be positive".into()));
        }
        if self.vocab_size <= SPECIALS.len() {
            return Err(Error::Config(format!(
                "vocab_size {} leaves no room for ordinary words",
                self.vocab_size
            )));
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.n_heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.hidden * self.ffn_mult
    }
}

/// Name and shape of one parameter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

fn spec(name: impl Into<String>, shape: &[usize]) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        shape: shape.to_vec(),
    }
}

/// Backbone parameters in creation order.
pub fn base_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (d, f, v) = (cfg.hidden, cfg.ffn_dim(), cfg.vocab_size);
    let mut out = vec![
        spec(WORD_EMBEDDINGS, &[v, d]),
        spec(POSITION_EMBEDDINGS, &[cfg.max_positions, d]),
    ];
    for l in 0..cfg.n_layers {
        out.push(spec(block_param(l, "ln1.gain"), &[d]));
        out.push(spec(block_param(l, "ln1.bias"), &[d]));
        for proj in ["q", "k", "v", "o"] {
            out.push(spec(block_param(l, &format!("attn.{proj}.weight")), &[d, d]));
            out.push(spec(block_param(l, &format!("attn.{proj}.bias")), &[d]));
        }
        out.push(spec(block_param(l, "ln2.gain"), &[d]));
        out.push(spec(block_param(l, "ln2.bias"), &[d]));
        out.push(spec(block_param(l, "ffn.up.weight"), &[d, f]));
        out.push(spec(block_param(l, "ffn.up.bias"), &[f]));
        out.push(spec(block_param(l, "ffn.down.weight"), &[f, d]));
        out.push(spec(block_param(l, "ffn.down.bias"), &[d]));
    }
    out.extend([
        spec(LM_DENSE_W, &[d, d]),
        spec(LM_DENSE_B, &[d]),
        spec(LM_LN_GAIN, &[d]),
        spec(LM_LN_BIAS, &[d]),
        spec(LM_DECODER_W, &[v, d]),
        spec(LM_DECODER_B, &[v]),
    ]);
    out
}

pub fn soft_prompt_layout(cfg: &ModelConfig, prompt_len: usize) -> Vec<ParamSpec> {
    if prompt_len == 0 {
        return Vec::new();
    }
    vec![spec(SOFT_PROMPT, &[prompt_len, cfg.hidden])]
}

pub fn prefix_layout(cfg: &ModelConfig, prefix_len: usize) -> Vec<ParamSpec> {
    if prefix_len == 0 {
        return Vec::new();
    }
    (0..cfg.n_layers)
        .flat_map(|l| {
            [
                spec(prefix_key(l), &[prefix_len, cfg.hidden]),
                spec(prefix_value(l), &[prefix_len, cfg.hidden]),
            ]
        })
        .collect()
}

pub fn classifier_layout(cfg: &ModelConfig, n_classes: usize) -> Vec<ParamSpec> {
    let d = cfg.hidden;
    vec![
        spec(CLS_DENSE_W, &[d, d]),
        spec(CLS_DENSE_B, &[d]),
        spec(CLS_OUT_W, &[d, n_classes]),
        spec(CLS_OUT_B, &[n_classes]),
    ]
}

/// Where the soft prompt block sits relative to `[CLS]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptPlacement {
    #[default]
    AfterCls,
    BeforeCls,
}

/// Soft prompt metadata. The embeddings are the store entry [`SOFT_PROMPT`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SoftPrompt {
    /// Vocabulary words sampled when the prompt was created. Kept as
    /// metadata; the embeddings are randomly initialized.
    pub sampled_word_ids: Vec<usize>,
    pub placement: PromptPlacement,
}

impl SoftPrompt {
    pub fn len(&self) -> usize {
        self.sampled_word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sampled_word_ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlmModel {
    pub config: ModelConfig,
    pub store: ParameterStore,
    pub soft_prompt: Option<SoftPrompt>,
    pub prefix_len: Option<usize>,
    pub n_classes: Option<usize>,
}

fn init_tensor(name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    if name.ends_with(".gain") {
        Tensor::filled(shape, 1.0)
    } else if name.ends_with(".bias") {
        Tensor::zeros(shape)
    } else {
        Tensor::randn(shape, INIT_STD, rng)
    }
}

/// Deterministic initialization: Gaussian(0, 0.02) weights, zero biases,
/// unit layer-norm gains.
pub fn init_model(config: ModelConfig, seed: u64) -> Result<MlmModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    for p in base_layout(&config) {
        store.insert(p.name.clone(), init_tensor(&p.name, &p.shape, &mut rng))?;
    }
    Ok(MlmModel {
        config,
        store,
        soft_prompt: None,
        prefix_len: None,
        n_classes: None,
    })
}

impl MlmModel {
    /// Names and shapes of every parameter currently in the store.
    pub fn layout(&self) -> Vec<ParamSpec> {
        self.store
            .iter()
            .map(|p| spec(p.name.clone(), p.tensor.shape()))
            .collect()
    }

    fn insert_fresh(&mut self, specs: Vec<ParamSpec>, rng: &mut ChaCha8Rng) -> Result<()> {
        for p in specs {
            self.store.remove(&p.name);
            self.store.insert(p.name.clone(), init_tensor(&p.name, &p.shape, rng))?;
        }
        Ok(())
    }

    /// Creates a soft prompt of `len` embeddings, replacing any existing one.
    pub fn attach_soft_prompt(&mut self, len: usize, placement: PromptPlacement, seed: u64) -> Result<()> {
        self.store.remove(SOFT_PROMPT);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = self.config.vocab_size - SPECIALS.len();
        let sampled_word_ids = (0..len).map(|_| SPECIALS.len() + rng.random_range(0..words)).collect();
        self.insert_fresh(soft_prompt_layout(&self.config, len), &mut rng)?;
        self.soft_prompt = Some(SoftPrompt {
            sampled_word_ids,
            placement,
        });
        Ok(())
    }

    /// Creates per-layer key and value prefixes of `len` rows.
    pub fn attach_prefixes(&mut self, len: usize, seed: u64) -> Result<()> {
        self.detach_prefixes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.insert_fresh(prefix_layout(&self.config, len), &mut rng)?;
        self.prefix_len = Some(len);
        Ok(())
    }

    pub fn attach_classifier(&mut self, n_classes: usize, seed: u64) -> Result<()> {
        if n_classes == 0 {
            return Err(Error::Config("classifier needs at least one class".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.insert_fresh(classifier_layout(&self.config, n_classes), &mut rng)?;
        self.n_classes = Some(n_classes);
        Ok(())
    }

    pub fn detach_prefixes(&mut self) {
        for l in 0..self.config.n_layers {
            self.store.remove(&prefix_key(l));
            self.store.remove(&prefix_value(l));
        }
        self.prefix_len = None;
    }

    /// Removes every adaptation structure, leaving the backbone.
    pub fn detach_adapters(&mut self) {
        self.store.remove(SOFT_PROMPT);
        self.soft_prompt = None;
        self.detach_prefixes();
        for name in [CLS_DENSE_W, CLS_DENSE_B, CLS_OUT_W, CLS_OUT_B] {
            self.store.remove(name);
        }
        self.n_classes = None;
    }

    pub fn soft_prompt_len(&self) -> usize {
        self.soft_prompt.as_ref().map_or(0, SoftPrompt::len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_parameters() {
        let a = init_model(ModelConfig::toy(64), 3).unwrap();
        let b = init_model(ModelConfig::toy(64), 3).unwrap();
        assert_eq!(a, b);
        let c = init_model(ModelConfig::toy(64), 4).unwrap();
        assert_ne!(
            a.store.tensor(WORD_EMBEDDINGS).unwrap(),
            c.store.tensor(WORD_EMBEDDINGS).unwrap()
        );
    }

    #[test]
    fn names_enumerate_exactly_the_configured_blocks() {
        let m = init_model(ModelConfig::toy(64), 0).unwrap();
        let mut blocks: Vec<&str> = m
            .store
            .names()
            .filter_map(|n| n.strip_prefix("blocks."))
            .map(|n| n.split('.').next().unwrap())
            .collect();
        blocks.dedup();
        assert_eq!(blocks, ["0", "1"]);
    }

    #[test]
    fn init_conventions() {
        let m = init_model(ModelConfig::toy(64), 0).unwrap();
        assert!(m
            .store
            .tensor("blocks.0.ln1.gain")
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 1.0));
        assert!(m.store.tensor(LM_DECODER_B).unwrap().data().iter().all(|&x| x == 0.0));
        let w = m.store.tensor(WORD_EMBEDDINGS).unwrap().data();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        assert!((std - INIT_STD).abs() < 0.002, "{std}");
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut cfg = ModelConfig::toy(64);
        cfg.n_heads = 3;
        assert!(matches!(init_model(cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn adapters_attach_and_detach() {
        let mut m = init_model(ModelConfig::toy(64), 0).unwrap();
        let base = m.store.len();
        m.attach_soft_prompt(5, PromptPlacement::AfterCls, 1).unwrap();
        m.attach_prefixes(3, 2).unwrap();
        m.attach_classifier(2, 3).unwrap();
        assert_eq!(m.store.len(), base + 1 + 4 + 4);
        assert_eq!(m.soft_prompt.as_ref().unwrap().len(), 5);
        assert!(m
            .soft_prompt
            .as_ref()
            .unwrap()
            .sampled_word_ids
            .iter()
            .all(|&i| (5..64).contains(&i)));
        m.detach_adapters();
        assert_eq!(m.store.len(), base);
        assert_eq!(m, init_model(ModelConfig::toy(64), 0).unwrap());
    }
}
