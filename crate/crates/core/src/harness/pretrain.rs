use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_encoder, mlm_token_logits, MlmModel, LM_DECODER_W, POSITION_EMBEDDINGS, WORD_EMBEDDINGS};
use crate::strategy::{optimizer_step, AdamConfig, AdamState, HeadKind, StrategyKind, TrainablePlan};
use crate::tensor::{Tape, Tensor, Trainability, Var};
use crate::vocab::{encode, Vocab, CLS_ID, MASK_ID, SEP_ID};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub mask_rate: f64,
    pub seed: u64,
    /// When positive, half of the training sentences get a block of
    /// 1..=gap_max small random rows inserted after `[CLS]`, so the encoder
    /// sees shifted text positions like those a soft prompt produces.
    pub gap_max: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 5000,
            batch_size: 8,
            lr: 1e-3,
            mask_rate: 0.15,
            seed: 0,
            gap_max: 0,
        }
    }
}

/// Token ids `[CLS] sentence [SEP]`, cut to `max_len`.
fn encode_sentences(corpus: &[String], vocab: &Vocab, max_len: usize) -> Vec<Vec<usize>> {
    corpus
        .iter()
        .map(|s| {
            let mut ids = vec![CLS_ID];
            ids.extend(encode(s, vocab).into_iter().take(max_len.saturating_sub(2)));
            ids.push(SEP_ID);
            ids
        })
        .collect()
}

/// Draws mask positions among the sentence tokens (never `[CLS]`/`[SEP]`);
/// empty draws are repeated.
fn draw_mask(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<usize> {
    loop {
        let picked: Vec<usize> = (1..len - 1).filter(|_| rng.random::<f64>() < rate).collect();
        if !picked.is_empty() || len <= 2 {
            return picked;
        }
    }
}

fn embed(tape: &mut Tape, model: &MlmModel, ids: &[usize], gap: Option<Tensor>) -> Result<Var> {
    let words = tape.param(&model.store, WORD_EMBEDDINGS)?;
    let x = match gap {
        None => tape.gather_rows(words, ids)?,
        Some(rows) => {
            let cls = tape.gather_rows(words, &ids[..1])?;
            let rest = tape.gather_rows(words, &ids[1..])?;
            let gap = tape.constant(rows);
            tape.concat_rows(&[cls, gap, rest])?
        }
    };
    let n = tape.value(x).shape()[0];
    let positions: Vec<usize> = (0..n).collect();
    let pos = tape.param(&model.store, POSITION_EMBEDDINGS)?;
    let pos = tape.gather_rows(pos, &positions)?;
    tape.add(x, pos)
}

/// Cross-entropy terms at the masked positions of one sentence.
fn masked_losses(
    tape: &mut Tape,
    model: &MlmModel,
    ids: &[usize],
    masked: &[usize],
    gap: Option<Tensor>,
    tied: bool,
) -> Result<Vec<Var>> {
    let shift = gap.as_ref().map_or(0, |g| g.shape()[0]);
    let mut input = ids.to_vec();
    for &p in masked {
        input[p] = MASK_ID;
    }
    let h = embed(tape, model, &input, gap)?;
    let n = tape.value(h).shape()[0];
    let h = forward_encoder(tape, model, h, n, false)?;
    let positions: Vec<usize> = masked.iter().map(|&p| p + shift).collect();
    let logits = mlm_token_logits(tape, model, h, &positions, tied)?;
    let mut out = Vec::with_capacity(masked.len());
    for (row, &p) in masked.iter().enumerate() {
        let l = tape.gather_rows(logits, &[row])?;
        out.push(tape.cross_entropy(l, ids[p])?);
    }
    Ok(out)
}

fn pretrain_plan(model: &MlmModel) -> TrainablePlan {
    TrainablePlan {
        kind: StrategyKind::FineTune,
        head: HeadKind::LmRestricted,
        uses_soft_prompt: false,
        uses_prefixes: false,
        label_ids: Vec::new(),
        entries: model
            .store
            .names()
            .map(|n| {
                let t = if n == LM_DECODER_W {
                    Trainability::Frozen
                } else {
                    Trainability::Full
                };
                (n.to_string(), t)
            })
            .collect(),
    }
}

/// Masked-language-model pre-training with the decoder tied to the word
/// embeddings. At the end the decoder weights become an untied copy of the
/// embedding table. Returns the per-step losses.
pub fn pretrain_mlm(model: &mut MlmModel, vocab: &Vocab, corpus: &[String], cfg: &PretrainConfig) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::Config("pre-training corpus is empty".into()));
    }
    if !(cfg.mask_rate > 0.0 && cfg.mask_rate <= 1.0) {
        return Err(Error::Config(format!(
            "mask rate must lie in (0, 1], got {}; a zero rate never selects a position",
            cfg.mask_rate
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if vocab.len() != model.config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} entries, model expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    model.detach_adapters();
    let max_len = model.config.max_positions - cfg.gap_max;
    let sentences: Vec<Vec<usize>> = encode_sentences(corpus, vocab, max_len)
        .into_iter()
        .filter(|s| s.len() > 2)
        .collect();
    if sentences.is_empty() {
        return Err(Error::Config("corpus has no tokens".into()));
    }
    let plan = pretrain_plan(model);
    crate::strategy::apply_plan(&plan, &mut model.store)?;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = model.config.hidden;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        model.store.zero_grad();
        let mut tape = Tape::new();
        for name in plan.trainable_names() {
            tape.param(&model.store, name)?;
        }
        let mut terms = Vec::new();
        for _ in 0..cfg.batch_size {
            let ids = &sentences[rng.random_range(0..sentences.len())];
            let masked = draw_mask(&mut rng, ids.len(), cfg.mask_rate);
            let gap = (cfg.gap_max > 0 && rng.random_bool(0.5)).then(|| {
                let g = rng.random_range(1..=cfg.gap_max);
                Tensor::randn(&[g, d], crate::model::INIT_STD, &mut rng)
            });
            terms.extend(masked_losses(&mut tape, model, ids, &masked, gap, true)?);
        }
        let loss = tape.mean_of(&terms)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss: value });
        }
        tape.backward(loss)?;
        tape.write_param_grads(&mut model.store)?;
        optimizer_step(&plan, &mut model.store, &adam, &mut state)?;
        losses.push(value);
        if step % 500 == 0 {
            log::info!("pretrain step {step}: loss {value:.4}");
        }
    }
    model.store.zero_grad();
    let snapshot = model.store.tensor(WORD_EMBEDDINGS)?.data().to_vec();
    model
        .store
        .tensor_mut(LM_DECODER_W)?
        .data_mut()
        .copy_from_slice(&snapshot);
    model.store.freeze_all();
    Ok(losses)
}

/// Masked-token perplexity with masks drawn from `seed`. `tied` selects
/// the word embeddings as decoder, as during pre-training.
pub fn masked_perplexity(
    model: &MlmModel,
    vocab: &Vocab,
    corpus: &[String],
    mask_rate: f64,
    seed: u64,
    tied: bool,
) -> Result<f64> {
    if !(mask_rate > 0.0 && mask_rate <= 1.0) {
        return Err(Error::Config(format!("mask rate must lie in (0, 1], got {mask_rate}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut count = 0usize;
    for ids in encode_sentences(corpus, vocab, model.config.max_positions) {
        if ids.len() <= 2 {
            continue;
        }
        let masked = draw_mask(&mut rng, ids.len(), mask_rate);
        let mut tape = Tape::new();
        for l in masked_losses(&mut tape, model, &ids, &masked, None, tied)? {
            total += tape.value(l).item();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config("held-out corpus has no tokens".into()));
    }
    Ok((total / count as f64).exp())
}
