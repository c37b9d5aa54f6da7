//! The two end-to-end neutralizers. MODULAR gates the editor's encoder
//! states with the detector's probabilities; CONCURRENT feeds a contextual
//! encoder straight into the decoder.

use npov_autograd::encoder::{ContextualEncoder, EncoderConfig, Positions};
use npov_autograd::nn::{Linear, LstmState, INIT_SCALE};
use npov_autograd::optim::Adam;
use npov_autograd::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beam::BeamConfig;
use crate::corpus::BiasedRecord;
use crate::detector::{Detector, DetectorConfig, DetectorInput, Lexicon};
use crate::editor::{
    beam_decode, step_weights, target_ids, CopySource, Decoder, Editor, EditorConfig, Encoded,
    LossConfig, Seq2Seq,
};
use crate::train::{train_batch, Batches, OptimConfig};
use crate::vocab::{SourceIds, Vocab, EOS, SOS};
use crate::{Error, Result};

pub const DETECTOR: &str = "detector";
pub const EDITOR: &str = "editor";
pub const JOIN: &str = "join";
pub const CONCURRENT: &str = "concurrent";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Modular,
    Concurrent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JoinMode {
    /// `h'_i = h_i + p_i · v`.
    Gate,
    /// Frozen detector states concatenated to the encoder states.
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeRule {
    /// Use the supplied distribution as is.
    Replace,
    /// Elementwise maximum with the detector's distribution.
    Max,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Config(format!("unknown mode {s:?} (modular or concurrent)")))
    }
}

impl std::str::FromStr for JoinMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Config(format!("unknown join mode {s:?} (gate or concat)")))
    }
}

impl std::str::FromStr for MergeRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Config(format!("unknown merge rule {s:?} (replace or max)")))
    }
}

/// `H' = H + p · v` for `H: [n, h]`, `p: [n, 1]`, `v: [1, h]`.
pub fn join_states<T: Real>(g: &mut Graph<T>, states: Var, p: Var, v: Var) -> Result<Var> {
    let n = g.shape(states)[0];
    if g.shape(p) != [n, 1] {
        return Err(Error::LengthMismatch {
            expected: n,
            found: g.shape(p)[0],
        });
    }
    let gated = g.mul(p, v)?;
    Ok(g.add(states, gated)?)
}

/// Combines a user-supplied distribution with the detector's.
pub fn merge_control(p: &[f64], control: &[f64], rule: MergeRule) -> Result<Vec<f64>> {
    if p.len() != control.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            found: control.len(),
        });
    }
    if let Some(bad) = control.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::Config(format!("control value {bad} outside [0, 1]")));
    }
    Ok(match rule {
        MergeRule::Replace => control.to_vec(),
        MergeRule::Max => p.iter().zip(control).map(|(a, b)| a.max(*b)).collect(),
    })
}

#[derive(Clone, Debug)]
pub struct ModularSystem {
    pub detector: Detector,
    pub editor: Editor,
    pub join_mode: JoinMode,
    /// Join vector `v`, initialized to zeros.
    pub join: ParamId,
    /// `2h`-to-`h` projection used by the concat ablation.
    pub concat: Option<Linear>,
}

impl ModularSystem {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        vocab: usize,
        feature_dim: usize,
        detector: &DetectorConfig,
        editor: &EditorConfig,
        join_mode: JoinMode,
        rng: &mut R,
    ) -> Result<Self> {
        let det = Detector::new(store, DETECTOR, vocab, feature_dim, detector, rng)?;
        let ed = Editor::new(store, EDITOR, vocab, editor, rng)?;
        let join = store.add_zeros(format!("{JOIN}.v"), &[1, editor.hidden])?;
        let concat = match join_mode {
            JoinMode::Gate => None,
            JoinMode::Concat => Some(Linear::new(
                store,
                &format!("{JOIN}.concat"),
                editor.hidden + detector.dim,
                editor.hidden,
                true,
                rng,
            )?),
        };
        Ok(Self {
            detector: det,
            editor: ed,
            join_mode,
            join,
            concat,
        })
    }

    /// Encodes the source and joins it with the detector. `p_override`
    /// replaces the detector probabilities in the gate. Returns the encoding
    /// and the probabilities that were used.
    pub fn encode<T: Real>(
        &self,
        g: &mut Graph<T>,
        input: &DetectorInput,
        src: &SourceIds,
        p_override: Option<&[f64]>,
        dropout: f64,
    ) -> Result<(Encoded, Var)> {
        if input.len() != src.ids.len() {
            return Err(Error::LengthMismatch {
                expected: src.ids.len(),
                found: input.len(),
            });
        }
        let n = src.ids.len();
        let mut enc = self.editor.encode(g, &src.ids, dropout)?;
        match (self.join_mode, &self.concat) {
            (JoinMode::Gate, _) => {
                let p = match p_override {
                    Some(p) => {
                        if p.len() != n {
                            return Err(Error::LengthMismatch {
                                expected: n,
                                found: p.len(),
                            });
                        }
                        g.constant(Tensor::new(&[n, 1], p.iter().map(|&v| T::of(v)).collect())?)
                    }
                    None => {
                        let out = self.detector.forward(g, input)?;
                        g.sigmoid(out.logits)
                    }
                };
                let v = g.param(self.join);
                enc.states = join_states(g, enc.states, p, v)?;
                Ok((enc, p))
            }
            (JoinMode::Concat, Some(proj)) => {
                // the detector is frozen: run it apart and bring in constants
                let (states, p) = {
                    let mut side = Graph::inference(g.store());
                    let out = self.detector.forward(&mut side, input)?;
                    let p = side.sigmoid(out.logits);
                    (side.value(out.states).clone(), side.value(p).clone())
                };
                let b = g.constant(states);
                let joined = g.concat(&[enc.states, b], 1)?;
                enc.states = proj.forward(g, joined)?;
                Ok((enc, g.constant(p)))
            }
            (JoinMode::Concat, None) => Err(Error::Config("concat join without projection".into())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConcurrentConfig {
    /// Contextual encoder width `b`.
    pub dim: usize,
    pub layers: usize,
    pub encoder_dropout: f64,
    pub max_len: usize,
    pub positions: PositionMode,
}

/// How the concurrent encoder sees token order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionMode {
    None,
    Learned,
    Sinusoidal,
}

impl From<PositionMode> for Positions {
    fn from(p: PositionMode) -> Self {
        match p {
            PositionMode::None => Positions::None,
            PositionMode::Learned => Positions::Learned,
            PositionMode::Sinusoidal => Positions::Sinusoidal,
        }
    }
}

impl Default for ConcurrentConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            encoder_dropout: 0.1,
            max_len: 128,
            positions: PositionMode::Learned,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConcurrentSystem {
    pub encoder: ContextualEncoder,
    pub w_h: Linear,
    pub w_c0: Linear,
    pub w_h0: Linear,
    pub decoder: Decoder,
    pub dropout: f64,
}

impl ConcurrentSystem {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        vocab: usize,
        cfg: &ConcurrentConfig,
        editor: &EditorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut enc_cfg = EncoderConfig::new(vocab, cfg.dim);
        enc_cfg.layers = cfg.layers;
        enc_cfg.dropout = cfg.encoder_dropout;
        enc_cfg.max_len = cfg.max_len + 1;
        enc_cfg.positions = cfg.positions.into();
        let (b, h) = (cfg.dim, editor.hidden);
        let encoder =
            ContextualEncoder::new(store, &format!("{CONCURRENT}.encoder"), enc_cfg, rng)?;
        let w_h = Linear::new(store, &format!("{CONCURRENT}.w_h"), b, h, false, rng)?;
        let w_c0 = Linear::new(store, &format!("{CONCURRENT}.w_c0"), b, h, false, rng)?;
        let w_h0 = Linear::new(store, &format!("{CONCURRENT}.w_h0"), b, h, false, rng)?;
        let embedding = store.add_uniform(
            format!("{CONCURRENT}.embedding"),
            &[vocab, editor.embed],
            INIT_SCALE,
            rng,
        )?;
        let decoder = Decoder::new(
            store,
            &format!("{CONCURRENT}.decoder"),
            embedding,
            editor.embed,
            h,
            vocab,
            rng,
        )?;
        Ok(Self {
            encoder,
            w_h,
            w_c0,
            w_h0,
            decoder,
            dropout: editor.dropout,
        })
    }

    /// `H = B W_H` over the category token and the source; the initial
    /// decoder state comes from the mean of `B`.
    pub fn encode<T: Real>(&self, g: &mut Graph<T>, ids: &[usize]) -> Result<Encoded> {
        if ids.len() < 2 {
            return Err(Error::EmptyInput);
        }
        let b = self.encoder.encode(g, ids)?;
        let states = self.w_h.forward(g, b)?;
        let mean = g.mean_axis(b, 0)?;
        let n = g.shape(mean).iter().product::<usize>();
        let mean = g.reshape(mean, &[1, n])?;
        let c = self.w_c0.forward(g, mean)?;
        let h = self.w_h0.forward(g, mean)?;
        Ok(Encoded {
            states,
            init: LstmState { h, c },
        })
    }
}

impl Seq2Seq for ConcurrentSystem {
    fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    fn dropout(&self) -> f64 {
        self.dropout
    }

    fn encode_source<T: Real>(
        &self,
        g: &mut Graph<T>,
        vocab: &Vocab,
        src: &SourceIds,
        category: &str,
        _: f64,
    ) -> Result<(Encoded, CopySource)> {
        let (ids, copy) = concurrent_source(vocab.category_id(category), src);
        Ok((self.encode(g, &ids)?, copy))
    }
}

/// Category id followed by the source ids, with matching copy ids.
pub fn concurrent_source(category_id: usize, src: &SourceIds) -> (Vec<usize>, CopySource) {
    let ids = std::iter::once(category_id)
        .chain(src.ids.iter().copied())
        .collect();
    let ext = std::iter::once(category_id)
        .chain(src.ext.iter().copied())
        .collect();
    (
        ids,
        CopySource {
            ext,
            oovs: src.oovs.len(),
        },
    )
}

#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
pub enum System {
    Modular(ModularSystem),
    Concurrent(ConcurrentSystem),
}

/// One training pair in model-ready form.
#[derive(Clone, Debug)]
pub struct EditExample {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub category: String,
    pub detector_input: DetectorInput,
    pub src: SourceIds,
    pub targets: Vec<usize>,
    pub weights: Vec<f64>,
}

impl EditExample {
    pub fn new(
        vocab: &Vocab,
        lexicons: &[Lexicon],
        source: &[String],
        target: &[String],
        category: &str,
        alpha: f64,
    ) -> Self {
        let src = vocab.encode_source(source);
        Self {
            detector_input: DetectorInput::new(vocab, lexicons, source, category),
            targets: target_ids(vocab, target, &src),
            weights: step_weights(source, target, alpha),
            src,
            source: source.to_vec(),
            target: target.to_vec(),
            category: category.to_string(),
        }
    }

    pub fn from_records(
        vocab: &Vocab,
        lexicons: &[Lexicon],
        records: &[BiasedRecord],
        alpha: f64,
    ) -> Vec<Self> {
        records
            .iter()
            .map(|r| {
                Self::new(
                    vocab,
                    lexicons,
                    &r.src_tokens,
                    &r.tgt_tokens,
                    &r.category,
                    alpha,
                )
            })
            .collect()
    }
}

/// A decoded rewrite with the probabilities that steered it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Neutralization {
    pub output: Vec<String>,
    pub output_ids: Vec<usize>,
    pub logprob: f64,
    /// Probabilities used by the join (detector output after any control);
    /// `None` for systems without a detector.
    pub probabilities: Option<Vec<f64>>,
    /// Raw detector output before any control.
    pub detector: Option<Vec<f64>>,
    /// Attention over the source at each output step.
    pub attention: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Control<'a> {
    pub values: &'a [f64],
    pub merge: MergeRule,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub beam: usize,
    /// Output cap is the source length plus this.
    pub extra_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam: 4,
            extra_len: 10,
        }
    }
}

fn attention_trace(
    g: &mut Graph<f32>,
    decoder: &Decoder,
    enc: &Encoded,
    src: &CopySource,
    tokens: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let mut state = decoder.initial_state(g, enc);
    let mut prev = SOS;
    let mut rows = Vec::with_capacity(tokens.len());
    for &t in tokens {
        let out = decoder.step(g, enc, src, prev, &state, 0.0, None)?;
        rows.push(g.value(out.attention).to_f64_vec());
        state = out.state;
        prev = t;
    }
    Ok(rows)
}

impl System {
    pub fn mode(&self) -> Mode {
        match self {
            System::Modular(_) => Mode::Modular,
            System::Concurrent(_) => Mode::Concurrent,
        }
    }

    pub fn detector(&self) -> Option<&Detector> {
        match self {
            System::Modular(m) => Some(&m.detector),
            System::Concurrent(_) => None,
        }
    }

    /// Weighted editing loss of one example under teacher forcing.
    pub fn loss<T: Real>(
        &self,
        g: &mut Graph<T>,
        ex: &EditExample,
        loss: &LossConfig,
    ) -> Result<Var> {
        match self {
            System::Modular(m) => {
                let dropout = m.editor.config.dropout;
                let (enc, _) = m.encode(g, &ex.detector_input, &ex.src, None, dropout)?;
                m.editor.decoder.sequence_loss(
                    g,
                    &enc,
                    &CopySource::from(&ex.src),
                    &ex.targets,
                    &ex.weights,
                    loss.coverage_weight,
                    dropout,
                )
            }
            System::Concurrent(c) => {
                let (ids, copy) = concurrent_source(ex.detector_input.ids[0], &ex.src);
                let enc = c.encode(g, &ids)?;
                c.decoder.sequence_loss(
                    g,
                    &enc,
                    &copy,
                    &ex.targets,
                    &ex.weights,
                    loss.coverage_weight,
                    c.dropout,
                )
            }
        }
    }

    /// Detector probabilities, for systems that have a detector.
    pub fn detect(
        &self,
        store: &ParamStore<f32>,
        input: &DetectorInput,
    ) -> Result<Option<Vec<f64>>> {
        match self {
            System::Modular(m) => Ok(Some(m.detector.detect(store, input)?)),
            System::Concurrent(_) => Ok(None),
        }
    }

    /// Beam-decodes a rewrite of `words`. Control vectors only apply to the
    /// modular system.
    #[allow(clippy::too_many_arguments)]
    pub fn neutralize(
        &self,
        store: &ParamStore<f32>,
        vocab: &Vocab,
        lexicons: &[Lexicon],
        words: &[String],
        category: &str,
        control: Option<Control<'_>>,
        cfg: &DecodeConfig,
    ) -> Result<Neutralization> {
        if words.is_empty() {
            return Err(Error::EmptyInput);
        }
        let src = vocab.encode_source(words);
        let input = DetectorInput::new(vocab, lexicons, words, category);
        let beam = BeamConfig {
            width: cfg.beam,
            max_len: words.len() + cfg.extra_len,
            start: SOS,
            end: EOS,
        };
        let mut g = Graph::inference(store);
        let (hyp, attention, probabilities, detector, decoder_src) = match self {
            System::Modular(m) => {
                let raw = m.detector.detect(store, &input)?;
                let used = match &control {
                    Some(c) => merge_control(&raw, c.values, c.merge)?,
                    None => raw.clone(),
                };
                let override_p = control.as_ref().map(|_| used.as_slice());
                let (enc, _) = m.encode(&mut g, &input, &src, override_p, 0.0)?;
                let copy = CopySource::from(&src);
                let hyp = beam_decode(&mut g, &m.editor.decoder, enc, copy.clone(), &beam)?;
                let att = attention_trace(&mut g, &m.editor.decoder, &enc, &copy, &hyp.tokens)?;
                (hyp, att, Some(used), Some(raw), src.clone())
            }
            System::Concurrent(c) => {
                if control.is_some() {
                    return Err(Error::Config(
                        "control vectors need a modular system".into(),
                    ));
                }
                let (ids, copy) = concurrent_source(vocab.category_id(category), &src);
                let enc = c.encode(&mut g, &ids)?;
                let hyp = beam_decode(&mut g, &c.decoder, enc, copy.clone(), &beam)?;
                let att = attention_trace(&mut g, &c.decoder, &enc, &copy, &hyp.tokens)?;
                (hyp, att, None, None, src.clone())
            }
        };
        let output_ids = hyp.content(EOS).to_vec();
        let output = output_ids
            .iter()
            .map(|&id| vocab.decode_ext(id, &decoder_src))
            .collect();
        Ok(Neutralization {
            output,
            output_ids,
            logprob: hyp.logprob,
            probabilities,
            detector,
            attention,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct FineTuneReport {
    pub losses: Vec<f64>,
    /// Gradient norm over detector parameters at each step (zero for
    /// systems without a trainable detector).
    pub detector_grad_norms: Vec<f64>,
}

/// Joint training on the weighted editing loss. In the concat ablation the
/// detector stays frozen.
pub fn fine_tune<F>(
    store: &mut ParamStore<f32>,
    system: &System,
    data: &[EditExample],
    steps: usize,
    optim: &OptimConfig,
    loss: &LossConfig,
    mut on_step: F,
) -> Result<FineTuneReport>
where
    F: FnMut(usize, f64, &ParamStore<f32>) -> Result<()>,
{
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let System::Modular(m) = system {
        store.set_frozen(&format!("{DETECTOR}."), m.join_mode == JoinMode::Concat);
    }
    let mut adam = Adam::new(optim.lr);
    let mut batches = Batches::new(data.len(), optim.seed);
    let mut report = FineTuneReport::default();
    let prefix = format!("{DETECTOR}.");
    for step in 0..steps {
        let batch = batches.next_batch(optim.batch);
        let l = train_batch(store, &mut adam, &batch, optim, step as u64, |g, i| {
            system.loss(g, &data[i], loss)
        })?;
        report.losses.push(l);
        report.detector_grad_norms.push(store.grad_norm(&prefix));
        on_step(step, l, store)?;
    }
    Ok(report)
}
