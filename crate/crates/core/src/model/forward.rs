use super::*;
use crate::template::PromptedInput;
use crate::tensor::{Tape, Var};

/// Embedded input sequence ready for the encoder.
#[derive(Clone, Copy, Debug)]
pub struct Composed {
    pub hidden: Var,
    pub len: usize,
    pub mask_index: usize,
    pub cls_index: usize,
    pub attn_len: usize,
}

/// Embeds `prompted` and splices in the soft prompt block, then adds
/// positional embeddings over the whole composed sequence.
pub fn compose_input(
    tape: &mut Tape,
    model: &MlmModel,
    prompted: &PromptedInput,
    soft: Option<&SoftPrompt>,
) -> Result<Composed> {
    let t = prompted.len();
    let m = soft.map_or(0, SoftPrompt::len);
    let n = t + m;
    if t < 2 {
        return Err(Error::Contract("prompted input must hold [CLS] and [SEP]".into()));
    }
    if n > model.config.max_positions {
        return Err(Error::Contract(format!(
            "composed length {n} exceeds {} positions; truncate the sentences when instantiating",
            model.config.max_positions
        )));
    }
    let words = tape.param(&model.store, WORD_EMBEDDINGS)?;
    let (x, mask_index, cls_index) = match soft.filter(|s| !s.is_empty()) {
        None => (tape.gather_rows(words, &prompted.ids)?, prompted.mask_index, 0),
        Some(sp) => {
            let z = tape.param(&model.store, SOFT_PROMPT)?;
            match sp.placement {
                PromptPlacement::AfterCls => {
                    let cls = tape.gather_rows(words, &prompted.ids[..1])?;
                    let rest = tape.gather_rows(words, &prompted.ids[1..])?;
                    let shift = if prompted.mask_index >= 1 { m } else { 0 };
                    (tape.concat_rows(&[cls, z, rest])?, prompted.mask_index + shift, 0)
                }
                PromptPlacement::BeforeCls => {
                    let tok = tape.gather_rows(words, &prompted.ids)?;
                    (tape.concat_rows(&[z, tok])?, prompted.mask_index + m, m)
                }
            }
        }
    };
    let positions: Vec<usize> = (0..n).collect();
    let pos_table = tape.param(&model.store, POSITION_EMBEDDINGS)?;
    let pos = tape.gather_rows(pos_table, &positions)?;
    let hidden = tape.add(x, pos)?;
    Ok(Composed {
        hidden,
        len: n,
        mask_index,
        cls_index,
        attn_len: n,
    })
}

fn linear(tape: &mut Tape, model: &MlmModel, x: Var, weight: &str, bias: &str) -> Result<Var> {
    let w = tape.param(&model.store, weight)?;
    let b = tape.param(&model.store, bias)?;
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

fn layer_norm(tape: &mut Tape, model: &MlmModel, x: Var, gain: &str, bias: &str) -> Result<Var> {
    let g = tape.param(&model.store, gain)?;
    let b = tape.param(&model.store, bias)?;
    tape.layer_norm_rows(x, g, b, model.config.layer_norm_eps)
}

/// Runs the pre-layer-norm encoder blocks over `hidden`. Positions at or
/// beyond `attn_len` are padding and are never attended to. With
/// `use_prefixes`, each layer's keys and values are extended by that layer's
/// prefix rows.
pub fn forward_encoder(
    tape: &mut Tape,
    model: &MlmModel,
    hidden: Var,
    attn_len: usize,
    use_prefixes: bool,
) -> Result<Var> {
    let cfg = &model.config;
    let (t, d) = tape.value(hidden).as_matrix_dims();
    if d != cfg.hidden {
        return Err(Error::Shape {
            op: "forward_encoder",
            left: tape.value(hidden).shape().to_vec(),
            right: vec![t, cfg.hidden],
        });
    }
    if attn_len == 0 || attn_len > t {
        return Err(Error::Index {
            what: "attention length",
            index: attn_len,
            len: t,
        });
    }
    let prefix_len = if use_prefixes {
        model
            .prefix_len
            .ok_or_else(|| Error::Contract("model has no prefixes attached".into()))?
    } else {
        0
    };
    let key_mask: Option<Vec<bool>> = (attn_len < t).then(|| {
        std::iter::repeat_n(true, prefix_len)
            .chain((0..t).map(|j| j < attn_len))
            .collect()
    });
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut x = hidden;
    for l in 0..cfg.n_layers {
        let p = |part: &str| block_param(l, part);
        let a = layer_norm(tape, model, x, &p("ln1.gain"), &p("ln1.bias"))?;
        let q = linear(tape, model, a, &p("attn.q.weight"), &p("attn.q.bias"))?;
        let mut k = linear(tape, model, a, &p("attn.k.weight"), &p("attn.k.bias"))?;
        let mut v = linear(tape, model, a, &p("attn.v.weight"), &p("attn.v.bias"))?;
        if prefix_len > 0 {
            let pk = tape.param(&model.store, &prefix_key(l))?;
            let pv = tape.param(&model.store, &prefix_value(l))?;
            k = tape.concat_rows(&[pk, k])?;
            v = tape.concat_rows(&[pv, v])?;
        }
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let (qh, kh, vh) = if cfg.n_heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh)?,
                    tape.slice_cols(k, h * dh, dh)?,
                    tape.slice_cols(v, h * dh, dh)?,
                )
            };
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale)?;
            let probs = tape.softmax_rows(scores, key_mask.as_deref())?;
            heads.push(tape.matmul(probs, vh)?);
        }
        let attn = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let o = linear(tape, model, attn, &p("attn.o.weight"), &p("attn.o.bias"))?;
        x = tape.add(x, o)?;

        let b = layer_norm(tape, model, x, &p("ln2.gain"), &p("ln2.bias"))?;
        let up = linear(tape, model, b, &p("ffn.up.weight"), &p("ffn.up.bias"))?;
        let up = tape.gelu(up)?;
        let down = linear(tape, model, up, &p("ffn.down.weight"), &p("ffn.down.bias"))?;
        x = tape.add(x, down)?;
    }
    Ok(x)
}

fn select_row(tape: &mut Tape, hidden: Var, index: usize) -> Result<Var> {
    let (rows, _) = tape.value(hidden).as_matrix_dims();
    if index >= rows {
        return Err(Error::Index {
            what: "hidden sequence",
            index,
            len: rows,
        });
    }
    tape.gather_rows(hidden, &[index])
}

/// Dense, GELU, and layer norm of the LM head.
fn lm_transform(tape: &mut Tape, model: &MlmModel, h: Var) -> Result<Var> {
    let t = linear(tape, model, h, LM_DENSE_W, LM_DENSE_B)?;
    let t = tape.gelu(t)?;
    layer_norm(tape, model, t, LM_LN_GAIN, LM_LN_BIAS)
}

/// Class logits from the LM head at the mask position, restricted to the
/// decoder rows of the label words. A softmax over the result normalizes
/// over the label set only.
pub fn class_logits_mlm(
    tape: &mut Tape,
    model: &MlmModel,
    hidden: Var,
    mask_index: usize,
    label_ids: &[usize],
) -> Result<Var> {
    if label_ids.is_empty() {
        return Err(Error::Verbalizer("no label words".into()));
    }
    if let Some(&bad) = label_ids.iter().find(|&&i| i >= model.config.vocab_size) {
        return Err(Error::Index {
            what: "vocabulary",
            index: bad,
            len: model.config.vocab_size,
        });
    }
    let h = select_row(tape, hidden, mask_index)?;
    let t = lm_transform(tape, model, h)?;
    let decoder = tape.param(&model.store, LM_DECODER_W)?;
    let rows = tape.gather_rows(decoder, label_ids)?;
    let logits = tape.matmul_nt(t, rows)?;
    let bias = tape.param(&model.store, LM_DECODER_B)?;
    let bias = tape.gather_rows(bias, label_ids)?;
    tape.add_bias(logits, bias)
}

/// Full-vocabulary logits at `positions`. With `tied`, the word embedding
/// table stands in for the decoder weights.
pub fn mlm_token_logits(
    tape: &mut Tape,
    model: &MlmModel,
    hidden: Var,
    positions: &[usize],
    tied: bool,
) -> Result<Var> {
    let h = tape.gather_rows(hidden, positions)?;
    let t = lm_transform(tape, model, h)?;
    let decoder = tape.param(&model.store, if tied { WORD_EMBEDDINGS } else { LM_DECODER_W })?;
    let logits = tape.matmul_nt(t, decoder)?;
    let bias = tape.param(&model.store, LM_DECODER_B)?;
    tape.add_bias(logits, bias)
}

/// Classifier head at the `[CLS]` position: dense, tanh, projection.
pub fn class_logits_cls(tape: &mut Tape, model: &MlmModel, hidden: Var, cls_index: usize) -> Result<Var> {
    let h = select_row(tape, hidden, cls_index)?;
    let t = linear(tape, model, h, CLS_DENSE_W, CLS_DENSE_B)?;
    let t = tape.tanh(t)?;
    linear(tape, model, t, CLS_OUT_W, CLS_OUT_B)
}
