//! Checkpointed models: parameters plus everything needed to rebuild the
//! architecture and tokenize input (run config, vocabulary, lexicons).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use npov_autograd::checkpoint::Container;
use npov_autograd::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::detector::{feature_dim, Detector, Lexicon};
use crate::editor::Editor;
use crate::systems::{ConcurrentSystem, ModularSystem, System, DETECTOR, EDITOR};
use crate::vocab::Vocab;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// A trained detector on its own.
    Detector,
    /// A denoising-pretrained editor on its own.
    Editor,
    /// A full concurrent system before fine-tuning.
    ConcurrentPretrained,
    /// A fine-tuned neutralization system of `run.mode`.
    System,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub kind: ModelKind,
    pub run: RunConfig,
    pub vocab: Vec<String>,
    pub lexicons: Vec<Lexicon>,
}

/// The architecture a checkpoint holds.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
pub enum Architecture {
    Detector(Detector),
    Editor(Editor),
    System(System),
}

#[derive(Clone, Debug)]
pub struct Model {
    pub meta: ModelMeta,
    pub vocab: Vocab,
    pub store: ParamStore<f32>,
    pub arch: Architecture,
}

/// Builds the parameters of `kind` with fresh initial values.
pub fn build(
    kind: ModelKind,
    run: &RunConfig,
    vocab: usize,
    lexicons: usize,
) -> Result<(ParamStore<f32>, Architecture)> {
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut store = ParamStore::new();
    let fdim = feature_dim(lexicons);
    let arch = match kind {
        ModelKind::Detector => Architecture::Detector(Detector::new(
            &mut store,
            DETECTOR,
            vocab,
            fdim,
            &run.detector,
            &mut rng,
        )?),
        ModelKind::Editor => Architecture::Editor(Editor::new(
            &mut store,
            EDITOR,
            vocab,
            &run.editor,
            &mut rng,
        )?),
        ModelKind::ConcurrentPretrained => Architecture::System(System::Concurrent(
            ConcurrentSystem::new(&mut store, vocab, &run.concurrent, &run.editor, &mut rng)?,
        )),
        ModelKind::System => Architecture::System(match run.mode {
            crate::systems::Mode::Modular => System::Modular(ModularSystem::new(
                &mut store,
                vocab,
                fdim,
                &run.detector,
                &run.editor,
                run.join,
                &mut rng,
            )?),
            crate::systems::Mode::Concurrent => System::Concurrent(ConcurrentSystem::new(
                &mut store,
                vocab,
                &run.concurrent,
                &run.editor,
                &mut rng,
            )?),
        }),
    };
    Ok((store, arch))
}

/// Copies every parameter of `from` whose name also exists in `to`.
/// Returns how many were copied.
pub fn copy_matching(from: &ParamStore<f32>, to: &mut ParamStore<f32>) -> Result<usize> {
    let mut n = 0;
    for (_, p) in from.iter() {
        if to.id(&p.name).is_some() {
            to.load(&p.name, p.value.clone())?;
            n += 1;
        }
    }
    Ok(n)
}

impl Model {
    pub fn new(
        kind: ModelKind,
        run: RunConfig,
        vocab: Vocab,
        lexicons: Vec<Lexicon>,
    ) -> Result<Self> {
        let (store, arch) = build(kind, &run, vocab.len(), lexicons.len())?;
        Ok(Self {
            meta: ModelMeta {
                kind,
                run,
                vocab: vocab.tokens().to_vec(),
                lexicons,
            },
            vocab,
            store,
            arch,
        })
    }

    pub fn lexicons(&self) -> &[Lexicon] {
        &self.meta.lexicons
    }

    pub fn system(&self) -> Option<&System> {
        match &self.arch {
            Architecture::System(s) => Some(s),
            _ => None,
        }
    }

    pub fn to_container(&self) -> Container {
        let config = serde_json::to_string(&self.meta).expect("metadata serializes");
        Container::from_store(config, &self.store)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_str(&c.config)
            .map_err(|e| Error::Config(format!("checkpoint metadata: {e}")))?;
        let vocab = Vocab::from_tokens(meta.vocab.clone())?;
        let (mut store, arch) = build(meta.kind, &meta.run, vocab.len(), meta.lexicons.len())?;
        c.restore(&mut store)?;
        Ok(Self {
            meta,
            vocab,
            store,
            arch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_container().write(BufWriter::new(file))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_container(&Container::read(BufReader::new(file))?)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
