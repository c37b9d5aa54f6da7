//! The training recipe end to end: masked-token pretraining of contextual
//! encoders, detector training, denoising pretraining, assembly and joint
//! fine-tuning.

use npov_autograd::encoder::{masked_lm_pretrain, ContextualEncoder, MlmConfig, MlmHead};
use npov_autograd::ParamStore;

use crate::config::RunConfig;
use crate::corpus::{BiasedRecord, NeutralRecord};
use crate::detector::{train_detector, DetectorInput, DetectorReport, LabeledExample, Lexicon};
use crate::editor::{pretrain_autoencoder, PretrainReport};
use crate::evaluation::{evaluate_system, EvalConfig, EvalReport};
use crate::model::{copy_matching, Architecture, Model, ModelKind};
use crate::systems::{fine_tune, EditExample, FineTuneReport, JoinMode, Mode, System, JOIN};
use crate::vocab::{Vocab, MASK};
use crate::{Error, Result};

/// Vocabulary over every sentence and category of the given splits.
pub fn build_vocab(biased: &[BiasedRecord], neutral: &[NeutralRecord], cap: usize) -> Vocab {
    let sentences = biased
        .iter()
        .flat_map(|r| [r.src_tokens.as_slice(), r.tgt_tokens.as_slice()])
        .chain(neutral.iter().map(|r| r.tokens.as_slice()));
    let mut cats: Vec<&str> = biased
        .iter()
        .map(|r| r.category.as_str())
        .chain(neutral.iter().map(|r| r.category.as_str()))
        .filter(|c| !c.is_empty())
        .collect();
    cats.sort_unstable();
    cats.dedup();
    Vocab::build(sentences, cats, cap)
}

/// Progress callback: stage name, step, loss.
pub type Progress<'a> = &'a mut dyn FnMut(&str, usize, f64);

/// Masked-token pretraining of `encoder` (whose parameters live in `store`)
/// on category-prefixed neutral sentences.
pub fn pretrain_encoder(
    store: &mut ParamStore<f32>,
    encoder: &ContextualEncoder,
    vocab: &Vocab,
    neutral: &[NeutralRecord],
    run: &RunConfig,
    progress: Progress<'_>,
) -> Result<Vec<f64>> {
    if run.mlm.steps == 0 || neutral.is_empty() {
        return Ok(Vec::new());
    }
    let corpus: Vec<Vec<usize>> = neutral
        .iter()
        .filter(|r| !r.tokens.is_empty())
        .map(|r| {
            let mut ids = vec![vocab.category_id(&r.category)];
            ids.extend(vocab.encode(&r.tokens));
            ids
        })
        .collect();
    // the head lives in a scratch store so it never reaches a checkpoint
    let mut scratch = store.clone();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(run.mlm.optim.seed);
    let head = MlmHead::new(
        &mut scratch,
        "mlm.head",
        encoder.config.dim,
        vocab.len(),
        &mut rng,
    )?;
    let cfg = MlmConfig {
        mask_prob: run.mlm.mask_prob,
        steps: run.mlm.steps,
        batch: run.mlm.optim.batch,
        lr: run.mlm.optim.lr,
        max_grad_norm: run.mlm.optim.max_grad_norm,
        seed: run.mlm.optim.seed,
        mask_id: MASK,
        protected: vocab.reserved_ids(),
    };
    let report = masked_lm_pretrain(&mut scratch, encoder, &head, &corpus, &cfg)?;
    for (i, l) in report.losses.iter().enumerate() {
        progress("mlm", i, *l);
    }
    copy_matching(&scratch, store)?;
    Ok(report.losses)
}

pub fn labeled_examples(
    vocab: &Vocab,
    lexicons: &[Lexicon],
    records: &[BiasedRecord],
) -> Vec<LabeledExample> {
    records
        .iter()
        .map(|r| LabeledExample {
            input: DetectorInput::new(vocab, lexicons, &r.src_tokens, &r.category),
            labels: r.labels.clone(),
        })
        .collect()
}

/// Masked-token pretraining on the neutral split, then supervised training
/// on labeled pairs.
pub fn train_detector_model(
    vocab: Vocab,
    lexicons: Vec<Lexicon>,
    labeled: &[BiasedRecord],
    neutral: &[NeutralRecord],
    run: &RunConfig,
    progress: Progress<'_>,
) -> Result<(Model, DetectorReport)> {
    let mut model = Model::new(ModelKind::Detector, run.clone(), vocab, lexicons)?;
    let Architecture::Detector(det) = model.arch.clone() else {
        unreachable!("detector model")
    };
    pretrain_encoder(
        &mut model.store,
        &det.encoder,
        &model.vocab,
        neutral,
        run,
        progress,
    )?;
    let data = labeled_examples(&model.vocab, model.lexicons(), labeled);
    let report = train_detector(
        &mut model.store,
        &det,
        &data,
        run.detector_training.epochs,
        &run.detector_training.optim,
        |epoch, _| {
            let _: () = log::info!("detector epoch {epoch} done");
            Ok(())
        },
    )?;
    for (i, l) in report.epoch_losses.iter().enumerate() {
        progress("detector", i, *l);
    }
    Ok((model, report))
}

fn neutral_columns(neutral: &[NeutralRecord]) -> (Vec<Vec<String>>, Vec<String>) {
    neutral
        .iter()
        .filter(|r| !r.tokens.is_empty())
        .map(|r| (r.tokens.clone(), r.category.clone()))
        .unzip()
}

/// Denoising pretraining of the editor (modular) or of the whole concurrent
/// system, which first gets masked-token pretraining of its encoder.
pub fn pretrain_editor_model(
    vocab: Vocab,
    lexicons: Vec<Lexicon>,
    neutral: &[NeutralRecord],
    mode: Mode,
    run: &RunConfig,
    progress: Progress<'_>,
) -> Result<(Model, PretrainReport)> {
    let (sentences, categories) = neutral_columns(neutral);
    if sentences.is_empty() {
        return Err(Error::EmptyInput);
    }
    let steps = run.pretraining.steps_for(sentences.len());
    let kind = match mode {
        Mode::Modular => ModelKind::Editor,
        Mode::Concurrent => ModelKind::ConcurrentPretrained,
    };
    let mut model = Model::new(kind, run.clone(), vocab, lexicons)?;
    let arch = model.arch.clone();
    let mut on_step = |step: usize, loss: f64, _: &ParamStore<f32>| {
        progress("pretrain", step, loss);
        Ok(())
    };
    let report = match &arch {
        Architecture::Editor(editor) => pretrain_autoencoder(
            &mut model.store,
            editor,
            &model.vocab,
            &sentences,
            &categories,
            &run.noise,
            &run.loss,
            steps,
            &run.pretraining.optim,
            &mut on_step,
        )?,
        Architecture::System(System::Concurrent(c)) => {
            let mut quiet = |_: &str, _: usize, _: f64| {};
            pretrain_encoder(
                &mut model.store,
                &c.encoder,
                &model.vocab,
                neutral,
                run,
                &mut quiet,
            )?;
            pretrain_autoencoder(
                &mut model.store,
                c,
                &model.vocab,
                &sentences,
                &categories,
                &run.noise,
                &run.loss,
                steps,
                &run.pretraining.optim,
                &mut on_step,
            )?
        }
        _ => unreachable!("editor or concurrent model"),
    };
    Ok((model, report))
}

/// A fresh system of `run.mode` initialized from pretrained parts. A modular
/// system needs a detector and an editor; a concurrent one its pretrained
/// self.
pub fn assemble(run: &RunConfig, parts: &[&Model]) -> Result<Model> {
    let first = parts.first().ok_or(Error::EmptyInput)?;
    for p in parts {
        if p.vocab != first.vocab {
            return Err(Error::Config(
                "pretrained parts use different vocabularies".into(),
            ));
        }
        if p.meta.lexicons != first.meta.lexicons {
            return Err(Error::Config(
                "pretrained parts use different lexicons".into(),
            ));
        }
    }
    let mut model = Model::new(
        ModelKind::System,
        run.clone(),
        first.vocab.clone(),
        first.meta.lexicons.clone(),
    )?;
    let has = |k: ModelKind| parts.iter().any(|p| p.meta.kind == k);
    let needed: &[ModelKind] = match run.mode {
        Mode::Modular => &[ModelKind::Detector, ModelKind::Editor],
        Mode::Concurrent => &[ModelKind::ConcurrentPretrained],
    };
    if let Some(missing) = needed.iter().find(|k| !has(**k)) {
        return Err(Error::Config(format!(
            "missing pretrained {missing:?} checkpoint"
        )));
    }
    let mut copied = 0;
    for p in parts {
        copied += copy_matching(&p.store, &mut model.store)?;
    }
    let join = format!("{JOIN}.");
    let expected = model
        .store
        .names()
        .iter()
        .filter(|n| !n.starts_with(&join))
        .count();
    if copied != expected {
        return Err(Error::Config(format!(
            "pretrained parts cover {copied} of {expected} parameters"
        )));
    }
    Ok(model)
}

/// Joint fine-tuning on biased pairs.
pub fn fine_tune_model(
    model: &mut Model,
    pairs: &[BiasedRecord],
    progress: Progress<'_>,
) -> Result<FineTuneReport> {
    let system = model
        .system()
        .cloned()
        .ok_or_else(|| Error::Config("fine-tuning needs a system checkpoint".into()))?;
    let run = model.meta.run.clone();
    let data = EditExample::from_records(&model.vocab, model.lexicons(), pairs, run.loss.alpha);
    let steps = run.fine_tuning.steps_for(data.len());
    fine_tune(
        &mut model.store,
        &system,
        &data,
        steps,
        &run.fine_tuning_optim(system.mode()),
        &run.loss,
        |step, loss, _| {
            progress("fine-tune", step, loss);
            Ok(())
        },
    )
}

/// The generated corpus and run settings of the reference synthetic run:
/// enough training pairs that both systems generalize instead of memorizing,
/// and a longer denoising stage than the epoch default.
pub fn synthetic_preset() -> (crate::synthetic::SyntheticConfig, RunConfig) {
    let data = crate::synthetic::SyntheticConfig {
        train_pairs: 4000,
        ..Default::default()
    };
    let mut run = RunConfig::default().with_seed(0);
    run.pretraining.steps = Some(1000);
    (data, run)
}

/// Everything trained by [`train_synthetic`].
pub struct SyntheticRun {
    pub corpus: crate::synthetic::SyntheticCorpus,
    pub detector: Model,
    pub modular: Model,
    pub concurrent: Model,
    pub modular_report: FineTuneReport,
    pub concurrent_report: FineTuneReport,
}

/// The full recipe on a generated corpus: detector, editor and concurrent
/// pretraining, then fine-tuning of both systems.
pub fn train_synthetic(
    data: &crate::synthetic::SyntheticConfig,
    run: &RunConfig,
    progress: Progress<'_>,
) -> Result<SyntheticRun> {
    let corpus = crate::synthetic::generate(data);
    let vocab = build_vocab(&corpus.train, &corpus.neutral, run.vocab_cap);
    let lexicons = crate::detector::bundled_lexicons();
    let (detector, _) = train_detector_model(
        vocab.clone(),
        lexicons.clone(),
        &corpus.train,
        &corpus.neutral,
        run,
        progress,
    )?;
    let (editor, _) = pretrain_editor_model(
        vocab.clone(),
        lexicons.clone(),
        &corpus.neutral,
        Mode::Modular,
        run,
        progress,
    )?;
    let (concurrent_pre, _) = pretrain_editor_model(
        vocab,
        lexicons,
        &corpus.neutral,
        Mode::Concurrent,
        run,
        progress,
    )?;
    let modular_run = RunConfig {
        mode: Mode::Modular,
        ..run.clone()
    };
    let mut modular = assemble(&modular_run, &[&detector, &editor])?;
    let modular_report = fine_tune_model(&mut modular, &corpus.train, progress)?;
    let concurrent_run = RunConfig {
        mode: Mode::Concurrent,
        ..run.clone()
    };
    let mut concurrent = assemble(&concurrent_run, &[&concurrent_pre])?;
    let concurrent_report = fine_tune_model(&mut concurrent, &corpus.train, progress)?;
    Ok(SyntheticRun {
        corpus,
        detector,
        modular,
        concurrent,
        modular_report,
        concurrent_report,
    })
}

/// Gate and concat systems trained from the same pretrained parts and scored
/// on the same split.
pub struct Ablation {
    pub gate: Model,
    pub concat: Model,
    pub gate_report: EvalReport,
    pub concat_report: EvalReport,
}

impl Ablation {
    /// Both reports, one table after the other.
    pub fn table(&self) -> String {
        format!("{}{}", self.gate_report.table(), self.concat_report.table())
    }
}

pub fn concat_ablation(
    run: &RunConfig,
    detector: &Model,
    editor: &Model,
    train: &[BiasedRecord],
    test: &[BiasedRecord],
    eval: &EvalConfig,
    progress: Progress<'_>,
) -> Result<Ablation> {
    let mut trained = Vec::with_capacity(2);
    for join in [JoinMode::Gate, JoinMode::Concat] {
        let cfg = RunConfig {
            mode: Mode::Modular,
            join,
            ..run.clone()
        };
        let mut model = assemble(&cfg, &[detector, editor])?;
        fine_tune_model(&mut model, train, progress)?;
        let mut report = evaluate_system(&model, test, eval)?;
        report.system = format!(
            "modular-{}",
            if join == JoinMode::Gate {
                "gate"
            } else {
                "concat"
            }
        );
        trained.push((model, report));
    }
    let (concat, concat_report) = trained.pop().expect("two runs");
    let (gate, gate_report) = trained.pop().expect("two runs");
    Ok(Ablation {
        gate,
        concat,
        gate_report,
        concat_report,
    })
}
