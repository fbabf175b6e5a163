use std::fs;
use std::path::{Path, PathBuf};

use stt_core::checkpoint::{load_checkpoint, save_checkpoint};
use stt_core::harness::{
    generate_synthetic_task, k_trend, load_corpus, masked_perplexity, pretrain_mlm, run_protocol, sample_episode,
    seed_offset_from_env, shifted_seeds, sweep_k, sweep_prompt_length, Dataset, Experiment, PretrainConfig, RunConfig,
    SynthSpec, VocabSpec,
};
use stt_core::model::{init_model, MlmModel, ModelConfig, PromptPlacement};
use stt_core::strategy::{build_plan, count_trainable, strategy_layout, Strategy, StrategyKind};
use stt_core::template::{Task, TaskSet, TASK_FILE_VERSION};
use stt_core::vocab::{build_vocab, Vocab, SPECIALS};
use stt_core::{Error, Result};

use crate::args::{AdaptArgs, Cli, Command, CountArgs, DataArgs, GenArgs, PretrainArgs, RunArgs, SweepArgs, SweepKind};
use crate::report::{adapt_text, count_text, sweep_csv, sweep_summary, AdaptReport};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Adapt(a) => adapt(a),
        Command::Sweep(a) => sweep(a),
        Command::CountParams(a) => count_params(a),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ))
    }
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn gen(a: &GenArgs) -> Result<()> {
    let spec = SynthSpec {
        seed: a.seed,
        n_examples: a.n,
        n_classes: a.classes,
        strength: a.strength,
        corpus_size: a.corpus_size,
        verdict_rate: a.verdict_rate,
        vocab: VocabSpec::default(),
    };
    let task = generate_synthetic_task(&spec).map_err(|e| match e {
        Error::Generation(msg) => Error::Config(msg),
        other => other,
    })?;
    prepare_out_dir(&a.out)?;
    write(&a.out.join("dataset.tsv"), task.dataset.to_tsv())?;
    let mut corpus = task.corpus.join("\n");
    corpus.push('\n');
    write(&a.out.join("corpus.txt"), corpus)?;
    let set = TaskSet {
        version: TASK_FILE_VERSION,
        tasks: vec![task.task],
    };
    write(&a.out.join("task.toml"), set.to_toml())?;
    println!(
        "wrote {} examples and {} corpus sentences to {}",
        task.dataset.len(),
        task.corpus.len(),
        a.out.display()
    );
    Ok(())
}

/// Template words and label words of every task, one line per task.
fn task_words(set: &TaskSet) -> Vec<String> {
    set.tasks
        .iter()
        .map(|t| {
            let template = t
                .template
                .replace("<S1>", " ")
                .replace("<S2>", " ")
                .replace("[MASK]", " ");
            let words: Vec<&str> = t.labels.iter().map(|(_, w)| w.as_str()).collect();
            format!("{template} {}", words.join(" "))
        })
        .collect()
}

fn pretrain(a: &PretrainArgs) -> Result<()> {
    require_file(&a.corpus)?;
    if let Some(p) = &a.task_config {
        require_file(p)?;
    }
    prepare_out_dir(&a.out)?;
    let corpus = load_corpus(&a.corpus)?;
    let extra = match &a.task_config {
        Some(p) => task_words(&TaskSet::load(p)?),
        None => Vec::new(),
    };
    if !(0.0..1.0).contains(&a.heldout_fraction) {
        return Err(Error::Config("held-out fraction must lie in [0, 1)".into()));
    }
    let n_held = ((corpus.len() as f64) * a.heldout_fraction).round() as usize;
    let n_held = n_held.min(corpus.len().saturating_sub(1));
    let (train, held) = corpus.split_at(corpus.len() - n_held);
    let held = if held.is_empty() { train } else { held };

    let all: Vec<&String> = corpus.iter().chain(&extra).collect();
    let vocab = build_vocab(&all, a.max_vocab)?;
    let config = ModelConfig {
        n_layers: a.layers,
        n_heads: a.heads,
        hidden: a.hidden,
        ffn_mult: a.ffn_mult,
        vocab_size: vocab.len(),
        max_positions: a.max_positions,
        layer_norm_eps: stt_core::tensor::ops::LAYER_NORM_EPS,
    };
    let cfg = PretrainConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        lr: a.lr,
        mask_rate: a.mask_rate,
        seed: a.seed,
        gap_max: a.gap_max,
    };
    if cfg.gap_max + 3 > config.max_positions {
        return Err(Error::Config("gap_max leaves no room for text".into()));
    }
    let mut model = init_model(config, a.seed)?;
    let eval_seed = a.seed.wrapping_add(1);
    let before = masked_perplexity(&model, &vocab, held, a.mask_rate, eval_seed, true)?;
    let losses = pretrain_mlm(&mut model, &vocab, train, &cfg)?;
    let after = masked_perplexity(&model, &vocab, held, a.mask_rate, eval_seed, false)?;
    let ckpt = a.out.join("model.ckpt");
    save_checkpoint(&model, None, &ckpt)?;
    vocab.save(&a.out.join("vocab.txt"))?;
    println!("vocabulary: {} entries", vocab.len());
    if let Some(last) = losses.last() {
        println!("final training loss: {last:.4}");
    }
    println!("held-out masked-token perplexity: before {before:.4}, after {after:.4}");
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

struct Loaded {
    model: MlmModel,
    vocab: Vocab,
    task: Task,
    dataset: Dataset,
    test: Option<Dataset>,
}

fn vocab_path(d: &DataArgs) -> PathBuf {
    d.vocab.clone().unwrap_or_else(|| {
        d.checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("vocab.txt")
    })
}

/// Validates every input path, then loads them.
fn load_data(d: &DataArgs, out: &Path) -> Result<Loaded> {
    let vocab_file = vocab_path(d);
    for p in [&d.checkpoint, &d.dataset, &vocab_file]
        .into_iter()
        .chain(d.task_config.as_ref())
        .chain(d.test.as_ref())
    {
        require_file(p)?;
    }
    prepare_out_dir(out)?;

    let set = match &d.task_config {
        Some(p) => TaskSet::load(p)?,
        None => TaskSet::bundled(),
    };
    let task = match (&d.task, set.tasks.as_slice()) {
        (Some(name), _) => set.get(name)?,
        (None, [only]) => only.build()?,
        (None, _) => return Err(Error::Config("the task config holds several tasks; pass --task".into())),
    };
    let (model, _) = load_checkpoint(&d.checkpoint)?;
    let vocab = Vocab::load(&vocab_file)?;
    if vocab.len() != model.config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} entries but the checkpoint expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    task.verbalizer.label_word_ids(&vocab)?;
    let dataset = Dataset::load_tsv(&task.name, &d.dataset, task.arity, d.header)?;
    dataset.validate(&task)?;
    let test = match &d.test {
        Some(p) => {
            let t = Dataset::load_tsv(&task.name, p, task.arity, d.header)?;
            t.validate(&task)?;
            Some(t)
        }
        None => None,
    };
    Ok(Loaded {
        model,
        vocab,
        task,
        dataset,
        test,
    })
}

fn strategy_from(kind: StrategyKind, r: &RunArgs) -> Strategy {
    Strategy {
        kind,
        prompt_length: r.prompt_length,
        stt_head_trainable: !r.no_train_lm_head,
        placement: if r.prompt_before_cls {
            PromptPlacement::BeforeCls
        } else {
            PromptPlacement::AfterCls
        },
    }
}

fn run_config(r: &RunArgs, offset: i64) -> RunConfig {
    RunConfig {
        steps: r.steps,
        batch_size: r.batch_size,
        lr: r.lr,
        prompt_length: r.prompt_length,
        seeds: shifted_seeds(&r.seeds, offset),
        dev_eval_every: r.dev_eval_every,
        select_on_dev: !r.no_dev_selection,
        clip_norm: r.clip_norm,
        jobs: r.jobs,
    }
}

/// Rejects settings that would only fail after training started.
fn preflight(l: &Loaded, strategies: &[Strategy], ks: &[usize], cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    for s in strategies {
        s.validate()?;
        if s.uses_soft_prompt() && s.prompt_length + 3 > l.model.config.max_positions {
            return Err(Error::Config(format!(
                "prompt length {} does not fit in {} positions",
                s.prompt_length, l.model.config.max_positions
            )));
        }
    }
    for &k in ks {
        sample_episode(&l.dataset, &l.task, k, cfg.seeds[0])?;
    }
    Ok(())
}

fn adapt(a: &AdaptArgs) -> Result<()> {
    let l = load_data(&a.data, &a.out)?;
    let offset = seed_offset_from_env()?;
    let cfg = run_config(&a.run, offset);
    let strategy = strategy_from(a.run.strategy.into(), &a.run);
    preflight(&l, &[strategy], &[a.run.k], &cfg)?;
    let exp = Experiment {
        model: &l.model,
        task: &l.task,
        vocab: &l.vocab,
        dataset: &l.dataset,
        test_set: l.test.as_ref(),
    };
    let report = run_protocol(&exp, &strategy, a.run.k, &cfg)?;
    let full = AdaptReport {
        strategy: &strategy,
        config: &cfg,
        seed_offset: offset,
        report: &report,
    };
    let json = serde_json::to_string_pretty(&full).map_err(|e| Error::Contract(e.to_string()))?;
    write(&a.out.join("report.json"), json + "\n")?;
    let text = adapt_text(&report);
    write(&a.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let l = load_data(&a.data, &a.out)?;
    let offset = seed_offset_from_env()?;
    let cfg = run_config(&a.run, offset);
    let exp = Experiment {
        model: &l.model,
        task: &l.task,
        vocab: &l.vocab,
        dataset: &l.dataset,
        test_set: l.test.as_ref(),
    };
    let (rows, x_name) = match a.kind {
        SweepKind::PromptLength => {
            if a.lengths.is_empty() {
                return Err(Error::Config("prompt-length grid is empty".into()));
            }
            let base = strategy_from(a.run.strategy.into(), &a.run);
            let grid: Vec<Strategy> = a
                .lengths
                .iter()
                .map(|&m| Strategy {
                    prompt_length: m,
                    ..base
                })
                .collect();
            preflight(&l, &grid, &[a.run.k], &cfg)?;
            (sweep_prompt_length(&exp, &base, a.run.k, &a.lengths, &cfg)?, "M")
        }
        SweepKind::K => {
            if a.ks.is_empty() {
                return Err(Error::Config("K grid is empty".into()));
            }
            let kinds = if a.strategies.is_empty() {
                vec![a.run.strategy]
            } else {
                a.strategies.clone()
            };
            let strategies: Vec<Strategy> = kinds.into_iter().map(|k| strategy_from(k.into(), &a.run)).collect();
            preflight(&l, &strategies, &a.ks, &cfg)?;
            (sweep_k(&exp, &strategies, &a.ks, &cfg)?, "K")
        }
    };
    let csv = sweep_csv(&rows).map_err(|e| Error::Contract(e.to_string()))?;
    write(&a.out.join("sweep.csv"), csv)?;
    let json = serde_json::to_string_pretty(&rows).map_err(|e| Error::Contract(e.to_string()))?;
    write(&a.out.join("sweep.json"), json + "\n")?;
    let mut summary = sweep_summary(&rows, x_name);
    if a.kind == SweepKind::K {
        let mut names: Vec<&str> = rows.iter().map(|r| r.strategy.as_str()).collect();
        names.dedup();
        for s in names {
            match k_trend(&rows, s) {
                Some(rho) => summary.push_str(&format!("spearman(K, mean) for {s}: {rho:.3}\n")),
                None => summary.push_str(&format!("spearman(K, mean) for {s}: undefined (constant)\n")),
            }
        }
    }
    write(&a.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

/// Breakdown for the given flags; also used by the acceptance tests.
pub fn count_breakdown(a: &CountArgs) -> Result<(Strategy, stt_core::strategy::Breakdown)> {
    let config = if a.roberta_large_shapes {
        ModelConfig::roberta_large_shapes()
    } else if let Some(p) = &a.checkpoint {
        load_checkpoint(p)?.0.config
    } else {
        ModelConfig::toy(a.vocab_size)
    };
    config.validate()?;
    let kind: StrategyKind = a.strategy.into();
    let strategy = Strategy {
        kind,
        prompt_length: a.prompt_length,
        stt_head_trainable: !a.no_train_lm_head,
        placement: PromptPlacement::AfterCls,
    };
    let n_words = a.label_words.unwrap_or(a.classes);
    if SPECIALS.len() + n_words > config.vocab_size {
        return Err(Error::Config(format!(
            "{n_words} label words do not fit in a vocabulary of {}",
            config.vocab_size
        )));
    }
    let label_ids: Vec<usize> = (SPECIALS.len()..SPECIALS.len() + n_words).collect();
    let layout = strategy_layout(&config, &strategy, a.classes);
    let plan = build_plan(&strategy, &layout, &label_ids)?;
    Ok((strategy, count_trainable(&plan, &layout)))
}

fn count_params(a: &CountArgs) -> Result<()> {
    let (strategy, b) = count_breakdown(a)?;
    if a.json {
        let json = serde_json::to_string_pretty(&b).map_err(|e| Error::Contract(e.to_string()))?;
        println!("{json}");
    } else {
        print!("{}", count_text(strategy.kind.as_str(), &b, a.roberta_large_shapes));
    }
    Ok(())
}
