//! Corpus BLEU, exact-match accuracy, detection accuracy and bootstrap
//! confidence intervals for a test split.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::BiasedRecord;
use crate::detector::{select_top_word, DetectorInput};
use crate::model::Model;
use crate::text::BleuStats;
use crate::{Error, Result};

pub const BLEU_ORDER: usize = 4;

/// Fraction of outputs identical to their reference token for token.
pub fn exact_match_accuracy<S: AsRef<str>>(
    outputs: &[Vec<S>],
    references: &[Vec<S>],
) -> Result<f64> {
    if outputs.len() != references.len() {
        return Err(Error::LengthMismatch {
            expected: references.len(),
            found: outputs.len(),
        });
    }
    if outputs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = outputs
        .iter()
        .zip(references)
        .filter(|(o, r)| same_tokens(o, r))
        .count();
    Ok(hits as f64 / outputs.len() as f64)
}

fn same_tokens<S: AsRef<str>>(a: &[S], b: &[S]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.as_ref() == y.as_ref())
}

/// Whether the highest-probability word of each sentence was the changed one.
/// Every sentence must have exactly one labeled word.
pub fn detection_hits(probabilities: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<Vec<bool>> {
    if probabilities.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            found: probabilities.len(),
        });
    }
    probabilities
        .iter()
        .zip(labels)
        .map(|(p, l)| {
            if p.len() != l.len() {
                return Err(Error::LengthMismatch {
                    expected: l.len(),
                    found: p.len(),
                });
            }
            if l.iter().filter(|&&v| v == 1).count() != 1 {
                return Err(Error::Config(
                    "detection accuracy needs exactly one changed word".into(),
                ));
            }
            Ok(l[select_top_word(p)?] == 1)
        })
        .collect()
}

pub fn detection_accuracy(probabilities: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<f64> {
    let hits = detection_hits(probabilities, labels)?;
    if hits.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
    pub level: f64,
}

/// Percentile bootstrap: evaluates `metric` on `resamples` index samples of
/// size `n` drawn with replacement and returns the central `level` interval.
pub fn bootstrap_ci<F>(
    n: usize,
    metric: F,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<Interval>
where
    F: Fn(&[usize]) -> f64,
{
    if n < 2 {
        return Err(Error::Config(format!(
            "bootstrap needs at least 2 examples, got {n}"
        )));
    }
    if resamples == 0 || !(0.0..1.0).contains(&level) {
        return Err(Error::Config(
            "bootstrap needs resamples > 0 and level in [0, 1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = vec![0usize; n];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            sample.iter_mut().for_each(|i| *i = rng.gen_range(0..n));
            metric(&sample)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let last = (resamples - 1) as f64;
    Ok(Interval {
        low: stats[(tail * last).floor() as usize],
        high: stats[((1.0 - tail) * last).ceil() as usize],
        level,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub ci: Interval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub n_examples: usize,
    /// Corpus BLEU-4 in `[0, 1]`.
    pub bleu: Metric,
    pub accuracy: Metric,
    pub detection_accuracy: Option<Metric>,
    pub config: serde_json::Value,
}

fn with_point(value: f64, ci: Interval) -> Metric {
    // a percentile interval can miss a skewed point estimate; keep it inside
    Metric {
        value,
        ci: Interval {
            low: ci.low.min(value),
            high: ci.high.max(value),
            level: ci.level,
        },
    }
}

fn pooled_bleu(stats: &[BleuStats], idx: &[usize]) -> f64 {
    let mut pooled = BleuStats::default();
    for &i in idx {
        pooled.add(&stats[i]);
    }
    pooled.corpus_score()
}

fn mean_of(hits: &[bool], idx: &[usize]) -> f64 {
    idx.iter().filter(|&&i| hits[i]).count() as f64 / idx.len() as f64
}

/// Per-sentence detector probabilities and gold labels.
pub type Detections<'a> = (&'a [Vec<f64>], &'a [Vec<u8>]);

/// Scores decoded outputs against references. `detection` holds per-sentence
/// probabilities and labels when the system has a detector.
pub fn evaluate_outputs(
    system: &str,
    outputs: &[Vec<String>],
    references: &[Vec<String>],
    detection: Option<Detections<'_>>,
    cfg: &EvalConfig,
    config: serde_json::Value,
) -> Result<EvalReport> {
    exact_match_accuracy(outputs, references)?;
    let n = outputs.len();
    let stats: Vec<BleuStats> = outputs
        .iter()
        .zip(references)
        .map(|(o, r)| BleuStats::new(o, r, BLEU_ORDER))
        .collect();
    let all: Vec<usize> = (0..n).collect();
    let matches: Vec<bool> = outputs
        .iter()
        .zip(references)
        .map(|(o, r)| same_tokens(o, r))
        .collect();
    let bleu = with_point(
        pooled_bleu(&stats, &all),
        bootstrap_ci(
            n,
            |idx| pooled_bleu(&stats, idx),
            cfg.resamples,
            cfg.level,
            cfg.seed,
        )?,
    );
    let accuracy = with_point(
        mean_of(&matches, &all),
        bootstrap_ci(
            n,
            |idx| mean_of(&matches, idx),
            cfg.resamples,
            cfg.level,
            cfg.seed,
        )?,
    );
    let detection_accuracy = match detection {
        Some((p, labels)) => {
            let hits = detection_hits(p, labels)?;
            Some(with_point(
                mean_of(&hits, &all),
                bootstrap_ci(
                    n,
                    |idx| mean_of(&hits, idx),
                    cfg.resamples,
                    cfg.level,
                    cfg.seed,
                )?,
            ))
        }
        None => None,
    };
    Ok(EvalReport {
        system: system.to_string(),
        n_examples: n,
        bleu,
        accuracy,
        detection_accuracy,
        config,
    })
}

impl EvalReport {
    /// One JSON object per line: a header, then one line per metric.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = serde_json::json!({
            "system": self.system,
            "n_examples": self.n_examples,
            "config": self.config,
        });
        writeln!(out, "{header}").expect("string write");
        let mut metric = |name: &str, m: &Metric| {
            let line = serde_json::json!({
                "metric": name,
                "value": m.value,
                "ci_low": m.ci.low,
                "ci_high": m.ci.high,
                "level": m.ci.level,
            });
            writeln!(out, "{line}").expect("string write");
        };
        metric("bleu", &self.bleu);
        metric("accuracy", &self.accuracy);
        if let Some(d) = &self.detection_accuracy {
            metric("detection_accuracy", d);
        }
        out
    }

    /// Human-readable table with BLEU and accuracy on a 0-100 scale.
    pub fn table(&self) -> String {
        let mut out = format!("{} ({} examples)\n", self.system, self.n_examples);
        let mut row = |name: &str, m: &Metric| {
            writeln!(
                out,
                "  {name:<20} {:>6.2}  [{:>6.2}, {:>6.2}]",
                100.0 * m.value,
                100.0 * m.ci.low,
                100.0 * m.ci.high
            )
            .expect("string write");
        };
        row("BLEU", &self.bleu);
        row("accuracy", &self.accuracy);
        if let Some(d) = &self.detection_accuracy {
            row("detection accuracy", d);
        }
        out
    }
}

/// Bootstrap interval of `accuracy(a) - accuracy(b)` for two systems scored
/// on the same examples; both are resampled with shared indices.
pub fn accuracy_difference(a: &[bool], b: &[bool], cfg: &EvalConfig) -> Result<Metric> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let all: Vec<usize> = (0..a.len()).collect();
    let diff = |idx: &[usize]| mean_of(a, idx) - mean_of(b, idx);
    Ok(with_point(
        diff(&all),
        bootstrap_ci(a.len(), diff, cfg.resamples, cfg.level, cfg.seed)?,
    ))
}

/// Per-example exact-match outcomes.
pub fn exact_matches<S: AsRef<str>>(
    outputs: &[Vec<S>],
    references: &[Vec<S>],
) -> Result<Vec<bool>> {
    exact_match_accuracy(outputs, references)?;
    Ok(outputs
        .iter()
        .zip(references)
        .map(|(o, r)| same_tokens(o, r))
        .collect())
}

/// Systems that need no model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    SourceCopy,
    TargetCopy,
}

pub fn baseline_outputs(baseline: Baseline, test: &[BiasedRecord]) -> Vec<Vec<String>> {
    test.iter()
        .map(|r| match baseline {
            Baseline::SourceCopy => r.src_tokens.clone(),
            Baseline::TargetCopy => r.tgt_tokens.clone(),
        })
        .collect()
}

/// Decoded outputs and, for modular systems, detector probabilities.
pub struct Decoded {
    pub outputs: Vec<Vec<String>>,
    pub probabilities: Option<Vec<Vec<f64>>>,
}

pub fn decode_split(model: &Model, test: &[BiasedRecord]) -> Result<Decoded> {
    let system = model
        .system()
        .ok_or_else(|| Error::Config("evaluation needs a system checkpoint".into()))?;
    let decode = model.meta.run.decode;
    let mut outputs = Vec::with_capacity(test.len());
    let mut probabilities = Vec::with_capacity(test.len());
    for r in test {
        let out = system.neutralize(
            &model.store,
            &model.vocab,
            model.lexicons(),
            &r.src_tokens,
            &r.category,
            None,
            &decode,
        )?;
        outputs.push(out.output);
        if let Some(p) = out.detector {
            probabilities.push(p);
        }
    }
    let probabilities =
        (probabilities.len() == test.len() && !test.is_empty()).then_some(probabilities);
    Ok(Decoded {
        outputs,
        probabilities,
    })
}

fn single_label(test: &[BiasedRecord]) -> bool {
    test.iter()
        .all(|r| r.labels.iter().filter(|&&l| l == 1).count() == 1)
}

/// Decodes every test pair and scores the outputs.
pub fn evaluate_system(
    model: &Model,
    test: &[BiasedRecord],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyInput);
    }
    let decoded = decode_split(model, test)?;
    let references: Vec<Vec<String>> = test.iter().map(|r| r.tgt_tokens.clone()).collect();
    let labels: Vec<Vec<u8>> = test.iter().map(|r| r.labels.clone()).collect();
    let detection = match &decoded.probabilities {
        Some(p) if single_label(test) => Some((p.as_slice(), labels.as_slice())),
        Some(_) => {
            log::warn!("test split has sentences without exactly one changed word; skipping detection accuracy");
            None
        }
        None => None,
    };
    let config = serde_json::json!({
        "run": model.meta.run,
        "eval": cfg,
    });
    let name = format!("{:?}", model.meta.run.mode).to_lowercase();
    evaluate_outputs(&name, &decoded.outputs, &references, detection, cfg, config)
}

/// Scores a baseline on a test split.
pub fn evaluate_baseline(
    baseline: Baseline,
    test: &[BiasedRecord],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let outputs = baseline_outputs(baseline, test);
    let references: Vec<Vec<String>> = test.iter().map(|r| r.tgt_tokens.clone()).collect();
    let name = serde_json::to_value(baseline)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default();
    evaluate_outputs(
        &name,
        &outputs,
        &references,
        None,
        cfg,
        serde_json::json!({ "eval": cfg }),
    )
}

/// Detector probabilities for each test sentence.
pub fn detect_split(model: &Model, test: &[BiasedRecord]) -> Result<Vec<Vec<f64>>> {
    let system = model.system();
    test.iter()
        .map(|r| {
            let input =
                DetectorInput::new(&model.vocab, model.lexicons(), &r.src_tokens, &r.category);
            match (&model.arch, system) {
                (crate::model::Architecture::Detector(d), _) => d.detect(&model.store, &input),
                (_, Some(s)) => s
                    .detect(&model.store, &input)?
                    .ok_or_else(|| Error::Config("this system has no detector".into())),
                _ => Err(Error::Config("this checkpoint has no detector".into())),
            }
        })
        .collect()
}
