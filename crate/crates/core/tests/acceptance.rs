//! Acceptance suite: every criterion runs at its stated tolerance and prints
//! one pass/fail line. The process exits non-zero if any criterion fails.

#[path = "common/bleu_oracle.rs"]
mod bleu_oracle;
#[path = "common/corpus_fixture.rs"]
mod corpus_fixture;
#[allow(dead_code)]
#[path = "common/tiny.rs"]
mod tiny;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use npov::beam::{beam_search, greedy, BeamConfig, MarkovModel};
use npov::detector::DetectorInput;
use npov::editor::{
    beam_decode, corrupt, lambda_weights, pretrain_autoencoder, reconstruction_accuracy,
    step_weights, target_ids, CopySource, Editor, EditorConfig, LossConfig, NoiseConfig,
    PRETRAIN_LR,
};
use npov::evaluation::{
    accuracy_difference, decode_split, detect_split, detection_accuracy, evaluate_baseline,
    exact_match_accuracy, exact_matches, Baseline, EvalConfig,
};
use npov::model::{file_digest, Model};
use npov::pipeline::{synthetic_preset, train_synthetic, SyntheticRun};
use npov::service::{router, ApiSession};
use npov::systems::{
    fine_tune, Control, DecodeConfig, EditExample, JoinMode, MergeRule, Mode, System,
};
use npov::text::{bleu_words, corpus_bleu_words};
use npov::train::OptimConfig;
use npov::vocab::{Vocab, EOS, SOS};
use npov_autograd::gradcheck::{check_blocks, check_ops};
use npov_autograd::{Graph, ParamStore};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn within(limit: Duration, start: Instant, detail: String) -> Outcome {
    let took = start.elapsed();
    check(
        took < limit,
        format!(
            "{detail}; {:.1}s of {}s",
            took.as_secs_f64(),
            limit.as_secs()
        ),
    )
}

fn a1_gradients() -> Outcome {
    let start = Instant::now();
    let (mut worst, mut cases) = (0.0f64, 0usize);
    let mut failures = Vec::new();
    for seed in 0..20 {
        let ops = check_ops(seed, 1e-4).map_err(|e| e.to_string())?;
        let blocks = check_blocks(seed, 1e-4).map_err(|e| e.to_string())?;
        for (name, err) in ops.into_iter().chain(blocks) {
            cases += 1;
            worst = worst.max(err);
            if err.is_nan() || err >= 1e-3 {
                failures.push(format!("seed {seed} {name} {err:.2e}"));
            }
        }
    }
    if !failures.is_empty() {
        return Err(failures.join(", "));
    }
    within(
        Duration::from_secs(120),
        start,
        format!("{cases} checks over 20 seeds, worst relative error {worst:.2e}"),
    )
}

fn a2_corpus() -> Outcome {
    let start = Instant::now();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    corpus_fixture::check_fixture(a.path(), b.path())?;
    within(
        Duration::from_secs(10),
        start,
        "splits, reject reasons and statistics match the oracle".into(),
    )
}

fn a3_bleu() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lexicon = [
        "the", "a", "cat", "dog", "sat", "on", "mat", "red", "ran", "far",
    ];
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<&str> {
        (0..rng.gen_range(1..12))
            .map(|_| *lexicon.choose(rng).unwrap())
            .collect()
    };
    let pairs: Vec<(Vec<&str>, Vec<&str>)> = (0..50)
        .map(|_| (sentence(&mut rng), sentence(&mut rng)))
        .collect();
    let mut worst = 0.0f64;
    for (c, r) in &pairs {
        worst = worst.max((bleu_words(c, r, 4) - bleu_oracle::sentence(c, r)).abs());
    }
    let corpus = corpus_bleu_words(&pairs, 4).map_err(|e| e.to_string())?;
    let corpus_gap = (corpus - bleu_oracle::corpus(&pairs)).abs();
    if worst >= 1e-9 || corpus_gap >= 1e-9 {
        return Err(format!(
            "sentence gap {worst:.2e}, corpus gap {corpus_gap:.2e}"
        ));
    }
    within(
        Duration::from_secs(5),
        start,
        format!("50 pairs, sentence gap {worst:.1e}, corpus gap {corpus_gap:.1e}"),
    )
}

fn a4_noise() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = NoiseConfig { k: 3, p_drop: 0.25 };
    let (mut worst, mut kept, mut total) = (0usize, 0usize, 0usize);
    for _ in 0..10_000 {
        let n = rng.gen_range(5..30);
        let x: Vec<usize> = (0..n).collect();
        let c = corrupt(&x, &cfg, &mut rng);
        let perm = c
            .order
            .iter()
            .enumerate()
            .map(|(j, &i)| j.abs_diff(i))
            .max()
            .unwrap_or(0);
        let survivors: Vec<usize> = c
            .order
            .iter()
            .zip(&c.kept)
            .filter(|(_, &k)| k)
            .map(|(&i, _)| i)
            .collect();
        let mut sorted = survivors.clone();
        sorted.sort_unstable();
        let surv = survivors
            .iter()
            .enumerate()
            .map(|(j, i)| j.abs_diff(sorted.binary_search(i).unwrap()))
            .max()
            .unwrap_or(0);
        worst = worst.max(perm).max(surv);
        kept += c.tokens.len();
        total += n;
    }
    let rate = kept as f64 / total as f64;
    if worst > 3 || !(0.73..=0.77).contains(&rate) {
        return Err(format!("max displacement {worst}, survival {rate:.4}"));
    }
    within(
        Duration::from_secs(30),
        start,
        format!("max displacement {worst}, survival {rate:.4}"),
    )
}

fn a5_autoencoder() -> Outcome {
    let start = Instant::now();
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/autoencoder/sentences.txt"
    );
    let corpus: Vec<Vec<String>> = std::fs::read_to_string(path)
        .map_err(|e| e.to_string())?
        .lines()
        .map(words)
        .collect();
    let vocab = Vocab::build(corpus.iter().map(Vec::as_slice), [], 1000);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let cfg = EditorConfig::default();
    let editor = Editor::new(&mut store, "editor", vocab.len(), &cfg, &mut rng)
        .map_err(|e| e.to_string())?;
    let optim = OptimConfig {
        seed: 0,
        lr: PRETRAIN_LR,
        ..OptimConfig::default()
    };
    pretrain_autoencoder(
        &mut store,
        &editor,
        &vocab,
        &corpus,
        &[],
        &NoiseConfig::default(),
        &LossConfig::default(),
        500,
        &optim,
        |_, _, _| Ok(()),
    )
    .map_err(|e| e.to_string())?;
    let acc = reconstruction_accuracy(&store, &editor, &vocab, &corpus, &[])
        .map_err(|e| e.to_string())?;
    if corpus.len() != 64 || cfg.hidden != 64 || acc < 0.95 {
        return Err(format!(
            "{} sentences, h = {}, accuracy {acc:.4}",
            corpus.len(),
            cfg.hidden
        ));
    }
    within(
        Duration::from_secs(600),
        start,
        format!("reconstruction accuracy {acc:.4} after 500 steps at h = 64"),
    )
}

fn a6_synthetic(trained: &SyntheticRun, took: Duration) -> Outcome {
    let test = &trained.corpus.test;
    let vocab = trained.detector.vocab.len();
    let labels: Vec<Vec<u8>> = test.iter().map(|r| r.labels.clone()).collect();
    let probs = detect_split(&trained.detector, test).map_err(|e| e.to_string())?;
    let top = detection_accuracy(&probs, &labels).map_err(|e| e.to_string())?;
    let refs: Vec<Vec<String>> = test.iter().map(|r| r.tgt_tokens.clone()).collect();
    let exact = |m: &Model| -> Result<f64, String> {
        let out = decode_split(m, test).map_err(|e| e.to_string())?.outputs;
        exact_match_accuracy(&out, &refs).map_err(|e| e.to_string())
    };
    let (modular, concurrent) = (exact(&trained.modular)?, exact(&trained.concurrent)?);
    let detail = format!(
        "vocab {vocab}, {} test pairs, detector top-word {top:.3}, modular exact {modular:.3}, concurrent exact {concurrent:.3}; {:.0}s of 1800s",
        test.len(),
        took.as_secs_f64()
    );
    check(
        vocab <= 300
            && test.len() == 200
            && top >= 0.90
            && modular >= 0.80
            && concurrent >= 0.80
            && took < Duration::from_secs(1800),
        detail,
    )
}

fn a7_join() -> Outcome {
    let (model, corpus) = tiny::tiny_model(Mode::Modular, JoinMode::Gate);
    let Some(System::Modular(m)) = model.system() else {
        return Err("modular system expected".into());
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut state_gap, mut offset_gap) = (0.0f64, 0.0f64);
    let v = model.store.get(m.join).value.to_f64_vec();
    for r in corpus.test.iter().take(10) {
        let w = &r.src_tokens;
        let input = DetectorInput::new(&model.vocab, model.lexicons(), w, &r.category);
        let src = model.vocab.encode_source(w);
        let beam = BeamConfig {
            width: 4,
            max_len: w.len() + 10,
            start: SOS,
            end: EOS,
        };
        let zeros = vec![0.0; w.len()];
        let mut g = Graph::inference(&model.store);
        let plain = m
            .editor
            .encode(&mut g, &src.ids, 0.0)
            .map_err(|e| e.to_string())?;
        let h = g.value(plain.states).to_f64_vec();
        let a = beam_decode(
            &mut g,
            &m.editor.decoder,
            plain,
            CopySource::from(&src),
            &beam,
        )
        .map_err(|e| e.to_string())?;
        let (gated, _) = m
            .encode(&mut g, &input, &src, Some(&zeros), 0.0)
            .map_err(|e| e.to_string())?;
        let b = beam_decode(
            &mut g,
            &m.editor.decoder,
            gated,
            CopySource::from(&src),
            &beam,
        )
        .map_err(|e| e.to_string())?;
        if a.tokens != b.tokens {
            return Err(format!("p = 0 decoding differs on {:?}", r.src_raw));
        }
        for (x, y) in [
            (a.state.lstm.h, b.state.lstm.h),
            (a.state.lstm.c, b.state.lstm.c),
        ] {
            for (p, q) in g.value(x).to_f64_vec().iter().zip(g.value(y).to_f64_vec()) {
                state_gap = state_gap.max((p - q).abs());
            }
        }
        let p: Vec<f64> = (0..w.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (joined, _) = m
            .encode(&mut g, &input, &src, Some(&p), 0.0)
            .map_err(|e| e.to_string())?;
        let h2 = g.value(joined.states).to_f64_vec();
        for (i, pi) in p.iter().enumerate() {
            for (k, vk) in v.iter().enumerate() {
                offset_gap =
                    offset_gap.max((h2[i * v.len() + k] - h[i * v.len() + k] - pi * vk).abs());
            }
        }
    }

    let (mut ablation, corpus) = tiny::tiny_model(Mode::Modular, JoinMode::Concat);
    let run = ablation.meta.run.clone();
    let data = EditExample::from_records(
        &ablation.vocab,
        ablation.lexicons(),
        &corpus.train,
        run.loss.alpha,
    );
    let system = ablation.system().cloned().ok_or("system expected")?;
    let report = fine_tune(
        &mut ablation.store,
        &system,
        &data,
        5,
        &run.fine_tuning.optim,
        &run.loss,
        |_, _, _| Ok(()),
    )
    .map_err(|e| e.to_string())?;
    let frozen = report.detector_grad_norms.iter().all(|&n| n == 0.0);
    check(
        state_gap < 1e-6 && offset_gap < 1e-7 && frozen,
        format!(
            "p = 0 decodes token-identical with state gap {state_gap:.1e}; offset gap {offset_gap:.1e}; concat detector gradients zero over {} steps: {frozen}",
            report.detector_grad_norms.len()
        ),
    )
}

fn a8_control(trained: &SyntheticRun) -> Outcome {
    let model = &trained.modular;
    let system = model.system().ok_or("system expected")?;
    let (mut targeted, mut silenced, mut refs, mut srcs) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for r in &trained.corpus.test {
        let marker = r
            .labels
            .iter()
            .position(|&l| l == 1)
            .ok_or("unlabeled pair")?;
        let mut on = vec![0.0; r.src_tokens.len()];
        on[marker] = 1.0;
        let off = vec![0.0; r.src_tokens.len()];
        for (values, out) in [(&on, &mut targeted), (&off, &mut silenced)] {
            let control = Control {
                values,
                merge: MergeRule::Replace,
            };
            let n = system
                .neutralize(
                    &model.store,
                    &model.vocab,
                    model.lexicons(),
                    &r.src_tokens,
                    &r.category,
                    Some(control),
                    &model.meta.run.decode,
                )
                .map_err(|e| e.to_string())?;
            out.push(n.output);
        }
        refs.push(r.tgt_tokens.clone());
        srcs.push(r.src_tokens.clone());
    }
    let on = exact_match_accuracy(&targeted, &refs).map_err(|e| e.to_string())?;
    let off = exact_match_accuracy(&silenced, &srcs).map_err(|e| e.to_string())?;
    check(
        on >= 0.70 && off >= 0.70,
        format!("p = 1 on marker gives the planted edit {on:.3}; p = 0 gives the source {off:.3}"),
    )
}

fn a9_loss() -> Outcome {
    let vocab = Vocab::build(
        [words("he exposed described the truth a of").as_slice()],
        [],
        100,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f64>::new();
    let cfg = EditorConfig {
        embed: 5,
        hidden: 5,
        dropout: 0.0,
    };
    let editor = Editor::new(&mut store, "editor", vocab.len(), &cfg, &mut rng)
        .map_err(|e| e.to_string())?;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).value.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let mut gap = 0.0f64;
    for (s, t) in [
        ("he exposed the truth", "he described the truth"),
        ("he exposed the truth", "he the truth"),
    ] {
        let (s, t) = (words(s), words(t));
        let src = vocab.encode_source(&s);
        let tgt = target_ids(&vocab, &t, &src);
        let copy = CopySource::from(&src);
        // reference: per-step negative log-likelihood and coverage summed outside the graph
        let mut g = Graph::inference(&store);
        let enc = editor
            .encode(&mut g, &src.ids, 0.0)
            .map_err(|e| e.to_string())?;
        let mut state = editor.decoder.initial_state(&mut g, &enc);
        let (mut expect, mut prev) = (0.0, SOS);
        for &y in &tgt {
            let out = editor
                .decoder
                .step(&mut g, &enc, &copy, prev, &state, 0.0, None)
                .map_err(|e| e.to_string())?;
            expect += -g.value(out.dist).data()[y].ln() + g.value(out.coverage_penalty).item();
            state = out.state;
            prev = y;
        }
        let w = step_weights(&s, &t, 1.0);
        let mut g = Graph::new(&store);
        let enc = editor
            .encode(&mut g, &src.ids, 0.0)
            .map_err(|e| e.to_string())?;
        let l = editor
            .decoder
            .sequence_loss(&mut g, &enc, &copy, &tgt, &w, 1.0, 0.0)
            .map_err(|e| e.to_string())?;
        gap = gap.max((g.value(l).item() - expect).abs());
    }
    let fig = lambda_weights(
        &words("he exposed the truth"),
        &words("he described the truth"),
        1.3,
    );
    let table = lambda_weights(
        &words("jewish forces overcome arab militants ."),
        &words("jewish forces overcome arab forces ."),
        1.3,
    );
    check(
        gap < 1e-9 && fig == [1.0, 1.3, 1.0, 1.0] && table == [1.0; 6],
        format!(
            "alpha = 1 gap {gap:.1e}; exposed -> described {fig:?}; militants -> forces {table:?}"
        ),
    )
}

fn a10_statistics(trained: &SyntheticRun) -> Outcome {
    let mut contains = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let hits: Vec<bool> = (0..200).map(|_| rng.gen_bool(0.6)).collect();
        let cfg = EvalConfig {
            resamples: 1000,
            level: 0.95,
            seed: trial,
        };
        let d = accuracy_difference(&hits, &hits, &cfg).map_err(|e| e.to_string())?;
        if d.ci.low <= 0.0 && 0.0 <= d.ci.high {
            contains += 1;
        }
    }
    let test = &trained.corpus.test;
    let outputs = decode_split(&trained.modular, test)
        .map_err(|e| e.to_string())?
        .outputs;
    let refs: Vec<Vec<String>> = test.iter().map(|r| r.tgt_tokens.clone()).collect();
    let hits = exact_matches(&outputs, &refs).map_err(|e| e.to_string())?;
    let cfg = EvalConfig::default();
    let same = accuracy_difference(&hits, &hits, &cfg).map_err(|e| e.to_string())?;
    let every_pair_changes = test.iter().all(|r| r.src_tokens != r.tgt_tokens);
    let copy = evaluate_baseline(Baseline::SourceCopy, test, &cfg).map_err(|e| e.to_string())?;
    check(
        contains >= 95 && same.ci.low <= 0.0 && 0.0 <= same.ci.high && every_pair_changes && copy.accuracy.value == 0.0,
        format!(
            "interval covers 0 in {contains} of 100 trials; modular against itself [{:.3}, {:.3}]; source copy accuracy {}",
            same.ci.low, same.ci.high, copy.accuracy.value
        ),
    )
}

fn a11_beam() -> Outcome {
    const START: usize = 3;
    const END: usize = 2;
    const MAX_LEN: usize = 4;
    let cfg = |width| BeamConfig {
        width,
        max_len: MAX_LEN,
        start: START,
        end: END,
    };
    // every output the search may produce: up to three words then the end token, or four words
    let mut sequences = vec![vec![END]];
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for len in 1..=MAX_LEN {
        frontier = frontier
            .iter()
            .flat_map(|p| [0, 1].map(|w| [p.as_slice(), &[w]].concat()))
            .collect();
        for s in &frontier {
            sequences.push(if len < MAX_LEN {
                [s.as_slice(), &[END]].concat()
            } else {
                s.clone()
            });
        }
    }
    let (mut found, mut greedy_equal) = (0, 0);
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let row: Vec<f64> = (0..3).map(|_| rng.gen_range(0.01..1.0)).collect();
                let z: f64 = row.iter().sum();
                row.iter().map(|p| (p / z).ln()).collect()
            })
            .collect();
        let score = |seq: &[usize]| {
            let mut prev = START;
            seq.iter()
                .map(|&t| std::mem::replace(&mut prev, t))
                .zip(seq)
                .map(|(p, &t)| table[p][t])
                .sum::<f64>()
        };
        let best = sequences
            .iter()
            .max_by(|a, b| score(a).total_cmp(&score(b)))
            .unwrap();
        let mut m = MarkovModel {
            table: table.clone(),
        };
        let hyp = beam_search(&mut m, (), &cfg(4)).map_err(|e| e.to_string())?;
        if &hyp.tokens == best && (hyp.logprob - score(best)).abs() < 1e-12 {
            found += 1;
        }
        let b = beam_search(&mut m, (), &cfg(1)).map_err(|e| e.to_string())?;
        let g = greedy(&mut m, (), &cfg(1)).map_err(|e| e.to_string())?;
        if b.tokens == g.tokens && b.logprob == g.logprob {
            greedy_equal += 1;
        }
    }
    check(
        found == 50 && greedy_equal == 50 && sequences.len() == 31,
        format!("width 4 finds the exhaustive argmax in {found} of 50; width 1 equals greedy in {greedy_equal} of 50"),
    )
}

async fn call(s: &Arc<ApiSession>, uri: &str, body: &str) -> Result<(StatusCode, Vec<u8>), String> {
    let req = Request::builder()
        .method("POST")
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .map_err(|e| e.to_string())?;
    let resp = router(s.clone())
        .oneshot(req)
        .await
        .map_err(|e| e.to_string())?;
    let status = resp.status();
    Ok((
        status,
        to_bytes(resp.into_body(), usize::MAX)
            .await
            .map_err(|e| e.to_string())?
            .to_vec(),
    ))
}

/// Output ids and detector probabilities per probe sentence.
type Probe = Vec<(Vec<usize>, Vec<f64>)>;

fn a12_persistence(trained: &SyntheticRun) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let probe = |m: &Model| -> Result<Probe, String> {
        let system = m.system().ok_or("system expected")?;
        trained.corpus.test[..20]
            .iter()
            .map(|r| {
                let out = system
                    .neutralize(
                        &m.store,
                        &m.vocab,
                        m.lexicons(),
                        &r.src_tokens,
                        &r.category,
                        None,
                        &DecodeConfig::default(),
                    )
                    .map_err(|e| e.to_string())?;
                Ok((out.output_ids, out.probabilities.unwrap_or_default()))
            })
            .collect()
    };
    let mut session = None;
    for (name, model) in [
        ("modular", &trained.modular),
        ("concurrent", &trained.concurrent),
    ] {
        let path = dir.path().join(format!("{name}.ckpt"));
        model.save(&path).map_err(|e| e.to_string())?;
        let back = Model::load(&path).map_err(|e| e.to_string())?;
        if probe(model)? != probe(&back)? || back.meta != model.meta {
            return Err(format!("{name} checkpoint changes probe outputs"));
        }
        if name == "modular" {
            session = Some(Arc::new(ApiSession::new(
                back,
                file_digest(&path).map_err(|e| e.to_string())?,
            )));
        }
    }
    let session = session.ok_or("no session")?;

    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(async {
        let headline = "john mccain exposed as an unprincipled politician";
        let body = json!({ "text": headline, "category": "politics" }).to_string();
        let (status, first) = call(&session, "/api/detect", &body).await?;
        let (_, again) = call(&session, "/api/detect", &body).await?;
        let detect: Value = serde_json::from_slice(&first).map_err(|e| e.to_string())?;
        let n = detect["tokens"].as_array().map_or(0, Vec::len);
        let aligned = detect["probabilities"].as_array().map_or(0, Vec::len) == n && n == 7;
        let mut control = vec![0.0; n];
        control[2] = 1.0;
        let req = json!({ "text": headline, "category": "politics", "control": control }).to_string();
        let (status2, a) = call(&session, "/api/neutralize", &req).await?;
        let (_, b) = call(&session, "/api/neutralize", &req).await?;
        let out: Value = serde_json::from_slice(&a).map_err(|e| e.to_string())?;
        let same_tokens = out["tokens"] == detect["tokens"] && out["probabilities"].as_array().map_or(0, Vec::len) == n;
        let output = out["output_text"].as_str().unwrap_or_default().to_string();
        check(
            status == StatusCode::OK && status2 == StatusCode::OK && first == again && a == b && aligned && same_tokens,
            format!("both checkpoints round-trip on 20 probes; {n} tokens aligned, repeats identical, output {output:?}"),
        )
    })
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut run = |id: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        println!(
            "{id} {} {}",
            if outcome.is_ok() { "PASS" } else { "FAIL" },
            outcome.as_ref().unwrap_or_else(|e| e)
        );
        results.push((id, outcome));
    };
    run("A1", &mut a1_gradients);
    run("A2", &mut a2_corpus);
    run("A3", &mut a3_bleu);
    run("A4", &mut a4_noise);
    run("A5", &mut a5_autoencoder);
    run("A7", &mut a7_join);
    run("A9", &mut a9_loss);
    run("A11", &mut a11_beam);

    let start = Instant::now();
    let (data, config) = synthetic_preset();
    let trained = train_synthetic(&data, &config, &mut |_, _, _| {});
    let took = start.elapsed();
    match trained {
        Ok(trained) => {
            run("A6", &mut || a6_synthetic(&trained, took));
            run("A8", &mut || a8_control(&trained));
            run("A10", &mut || a10_statistics(&trained));
            run("A12", &mut || a12_persistence(&trained));
        }
        Err(e) => {
            for id in ["A6", "A8", "A10", "A12"] {
                run(id, &mut || Err(format!("synthetic training failed: {e}")));
            }
        }
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|(_, o)| o.is_err())
        .map(|(id, _)| *id)
        .collect();
    println!(
        "{} of {} criteria pass",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(" "));
        std::process::exit(1);
    }
}
