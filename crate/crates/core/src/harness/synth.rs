use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Record};
use super::Metric;
use crate::error::{Error, Result};
use crate::template::TaskConfig;

/// Label names and label words of generated tasks, in class order.
pub const SYNTH_LABELS: [(&str, &str); 3] = [("positive", "great"), ("negative", "terrible"), ("neutral", "okay")];
pub const SYNTH_TEMPLATE: &str = "<S1> it was [MASK] .";
pub const SYNTH_TASK_NAME: &str = "synthetic";

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Word lists of the generating grammar.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSpec {
    /// Class-indicative adjectives, one list per class.
    pub class_words: Vec<Vec<String>>,
    pub determiners: Vec<String>,
    pub nouns: Vec<String>,
    pub verbs: Vec<String>,
    pub modifiers: Vec<String>,
}

impl Default for VocabSpec {
    fn default() -> Self {
        VocabSpec {
            class_words: vec![
                words(&[
                    "good",
                    "lovely",
                    "brilliant",
                    "charming",
                    "superb",
                    "delightful",
                    "wonderful",
                    "moving",
                ]),
                words(&["bad", "awful", "boring", "dull", "clumsy", "tedious", "painful", "weak"]),
                words(&[
                    "ordinary", "average", "plain", "modest", "typical", "standard", "routine", "usual",
                ]),
            ],
            // A small filler vocabulary keeps the content-to-verdict association
            // learnable within a few thousand pre-training steps.
            determiners: words(&["the"]),
            nouns: words(&["film", "movie", "story", "plot"]),
            verbs: words(&["is", "seems"]),
            modifiers: words(&["very", "quite"]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_examples: usize,
    pub n_classes: usize,
    /// Probability that an adjective slot draws from the example's own class
    /// list rather than from a uniformly chosen class.
    pub strength: f64,
    pub corpus_size: usize,
    /// Fraction of corpus sentences followed by a verdict clause
    /// `it was <label word> .` matching the sentence's class.
    pub verdict_rate: f64,
    pub vocab: VocabSpec,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 1,
            n_examples: 600,
            n_classes: 2,
            strength: 1.0,
            corpus_size: 4000,
            verdict_rate: 1.0,
            vocab: VocabSpec::default(),
        }
    }
}

#[derive(Debug)]
pub struct SynthTask {
    pub dataset: Dataset,
    pub corpus: Vec<String>,
    pub task: TaskConfig,
}

impl SynthSpec {
    pub fn min_examples(&self) -> usize {
        20 * self.n_classes
    }

    fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.n_classes) {
            return Err(Error::Generation(format!(
                "n_classes must be 2 or 3, got {}",
                self.n_classes
            )));
        }
        if self.n_examples < self.min_examples() {
            return Err(Error::Generation(format!(
                "need at least {} examples for {} classes, got {}",
                self.min_examples(),
                self.n_classes,
                self.n_examples
            )));
        }
        if !(0.0..=1.0).contains(&self.strength) || !(0.0..=1.0).contains(&self.verdict_rate) {
            return Err(Error::Generation("strength and verdict rate must lie in [0, 1]".into()));
        }
        let v = &self.vocab;
        if v.class_words.len() < self.n_classes || v.class_words[..self.n_classes].iter().any(Vec::is_empty) {
            return Err(Error::Generation("every class needs at least one content word".into()));
        }
        if v.determiners.is_empty() || v.nouns.is_empty() || v.verbs.is_empty() {
            return Err(Error::Generation(
                "determiners, nouns and verbs must be nonempty".into(),
            ));
        }
        Ok(())
    }

    fn clause(&self, rng: &mut ChaCha8Rng, class: usize) -> String {
        let v = &self.vocab;
        let mut out = vec![
            v.determiners.choose(rng).expect("nonempty").as_str(),
            v.nouns.choose(rng).expect("nonempty").as_str(),
            v.verbs.choose(rng).expect("nonempty").as_str(),
        ];
        if !v.modifiers.is_empty() && rng.random_bool(0.5) {
            out.push(v.modifiers.choose(rng).expect("nonempty"));
        }
        let source = if rng.random::<f64>() < self.strength {
            class
        } else {
            rng.random_range(0..self.n_classes)
        };
        out.push(v.class_words[source].choose(rng).expect("nonempty"));
        out.join(" ")
    }

    fn sentence(&self, rng: &mut ChaCha8Rng, class: usize) -> String {
        let first = self.clause(rng, class);
        if rng.random_bool(0.5) {
            format!("{first} and {}", self.clause(rng, class))
        } else {
            first
        }
    }
}

/// Generates a labeled dataset and an unlabeled pre-training corpus from
/// the same grammar. Output depends only on `spec`.
pub fn generate_synthetic_task(spec: &SynthSpec) -> Result<SynthTask> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut classes: Vec<usize> = (0..spec.n_examples).map(|i| i % spec.n_classes).collect();
    classes.shuffle(&mut rng);
    let records = classes
        .into_iter()
        .map(|c| Record {
            s1: spec.sentence(&mut rng, c),
            s2: None,
            label: SYNTH_LABELS[c].0.to_string(),
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_c0de);
    let corpus = (0..spec.corpus_size)
        .map(|_| {
            let c = rng.random_range(0..spec.n_classes);
            let s = spec.sentence(&mut rng, c);
            if rng.random::<f64>() < spec.verdict_rate {
                format!("{s} it was {} .", SYNTH_LABELS[c].1)
            } else {
                s
            }
        })
        .collect();

    let task = TaskConfig {
        name: SYNTH_TASK_NAME.to_string(),
        template: SYNTH_TEMPLATE.to_string(),
        labels: SYNTH_LABELS[..spec.n_classes]
            .iter()
            .map(|(l, w)| (l.to_string(), w.to_string()))
            .collect(),
        metric: Metric::Accuracy,
        arity: 1,
    };
    Ok(SynthTask {
        dataset: Dataset {
            task: SYNTH_TASK_NAME.to_string(),
            records,
        },
        corpus,
        task,
    })
}

/// Same dataset with labels permuted across records.
pub fn shuffle_labels(dataset: &Dataset, seed: u64) -> Dataset {
    let mut labels: Vec<String> = dataset.records.iter().map(|r| r.label.clone()).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Dataset {
        task: dataset.task.clone(),
        records: dataset
            .records
            .iter()
            .zip(labels)
            .map(|(r, label)| Record { label, ..r.clone() })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::normalize;
    use std::collections::HashMap;

    /// Per-class word counts from `train`, then argmax of summed counts.
    fn bag_of_words_accuracy(train: &[Record], test: &[Record]) -> f64 {
        let mut counts: HashMap<(String, String), f64> = HashMap::new();
        for r in train {
            for w in normalize(&r.s1) {
                *counts.entry((w, r.label.clone())).or_default() += 1.0;
            }
        }
        let labels: Vec<String> = {
            let mut l: Vec<String> = train.iter().map(|r| r.label.clone()).collect();
            l.sort();
            l.dedup();
            l
        };
        let correct = test
            .iter()
            .filter(|r| {
                let words = normalize(&r.s1);
                let score = |l: &String| -> f64 {
                    words
                        .iter()
                        .map(|w| {
                            let own = counts.get(&(w.clone(), l.clone())).copied().unwrap_or(0.0);
                            let all: f64 = labels
                                .iter()
                                .map(|m| counts.get(&(w.clone(), m.clone())).copied().unwrap_or(0.0))
                                .sum();
                            ((own + 0.1) / (all + 0.1 * labels.len() as f64)).ln()
                        })
                        .sum()
                };
                let best = labels
                    .iter()
                    .max_by(|a, b| score(a).partial_cmp(&score(b)).unwrap())
                    .unwrap();
                *best == r.label
            })
            .count();
        correct as f64 / test.len() as f64
    }

    #[test]
    fn full_strength_is_separable() {
        for n_classes in [2, 3] {
            let t = generate_synthetic_task(&SynthSpec {
                n_classes,
                n_examples: 600,
                ..SynthSpec::default()
            })
            .unwrap();
            let (train, test) = t.dataset.records.split_at(300);
            assert_eq!(bag_of_words_accuracy(train, test), 1.0);
        }
    }

    #[test]
    fn zero_strength_is_chance() {
        let t = generate_synthetic_task(&SynthSpec {
            strength: 0.0,
            n_examples: 4000,
            ..SynthSpec::default()
        })
        .unwrap();
        let (train, test) = t.dataset.records.split_at(2000);
        let acc = bag_of_words_accuracy(train, test);
        assert!((acc - 0.5).abs() < 0.05, "{acc}");
    }

    #[test]
    fn deterministic_and_balanced() {
        let spec = SynthSpec::default();
        let a = generate_synthetic_task(&spec).unwrap();
        let b = generate_synthetic_task(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.corpus, b.corpus);
        let pos = a.dataset.records.iter().filter(|r| r.label == "positive").count();
        assert_eq!(pos, 300);
        assert!(a.task.build().is_ok());
        let other = generate_synthetic_task(&SynthSpec { seed: 2, ..spec }).unwrap();
        assert_ne!(a.dataset, other.dataset);
    }

    #[test]
    fn corpus_carries_verdicts() {
        let half = SynthSpec {
            verdict_rate: 0.5,
            ..SynthSpec::default()
        };
        let t = generate_synthetic_task(&half).unwrap();
        let with = t.corpus.iter().filter(|s| s.contains(" it was ")).count();
        assert!(with > 1500 && with < 2500, "{with}");
        let all = generate_synthetic_task(&SynthSpec::default()).unwrap();
        assert!(all.corpus.iter().all(|s| s.contains(" it was ")));
        for s in t.corpus.iter().filter(|s| s.ends_with("it was great .")) {
            assert!(SynthSpec::default().vocab.class_words[0]
                .iter()
                .any(|w| s.contains(w.as_str())));
        }
    }

    #[test]
    fn invalid_specs() {
        let small = SynthSpec {
            n_examples: 39,
            ..SynthSpec::default()
        };
        let err = generate_synthetic_task(&small).unwrap_err();
        assert!(err.to_string().contains("40"), "{err}");
        let mut empty = SynthSpec::default();
        empty.vocab.class_words[1].clear();
        assert!(matches!(generate_synthetic_task(&empty), Err(Error::Generation(_))));
        let four = SynthSpec {
            n_classes: 4,
            ..SynthSpec::default()
        };
        assert!(generate_synthetic_task(&four).is_err());
    }

    #[test]
    fn shuffled_labels_keep_counts() {
        let t = generate_synthetic_task(&SynthSpec::default()).unwrap();
        let s = shuffle_labels(&t.dataset, 5);
        let pos = s.records.iter().filter(|r| r.label == "positive").count();
        assert_eq!(pos, 300);
        assert_ne!(s, t.dataset);
    }
}
