//! Scoring a trained model on a corpus, optionally after reordering every
//! unit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusError, CorpusTask};
use crate::metrics::{auc, macro_f1};
use crate::model::{Example, GaModel, ModelError};
use crate::pdg::build_pdg;
use crate::symmetry::{apply, sample_reordering};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub task: CorpusTask,
    pub examples: usize,
    /// Macro-F1 over units, tokens, or pairs (similar when cosine > 0).
    pub f1: Option<f64>,
    /// Pairs only.
    pub auc: Option<f64>,
    pub percent: u32,
    pub perm_seed: u64,
    /// Predicted classes in example order (flattened over tokens for the
    /// token task).
    pub predictions: Vec<usize>,
    /// Pair cosines, in example order.
    pub scores: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn argmax(v: &[f64]) -> usize {
    // First maximum wins, so ties resolve the same way everywhere.
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Scores `model` on `corpus`. With `percent > 0` every unit is first
/// reordered by the sampler (seeded from `perm_seed`, one draw per unit in
/// file order) and its features rebuilt from the reordered text.
pub fn evaluate(model: &GaModel, corpus: &Corpus, percent: u32, perm_seed: u64) -> Result<Evaluation, EvalError> {
    let vocab = model.config().vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
    let examples = corpus.examples_with(&vocab, |unit| {
        let seed: u64 = rng.gen();
        if percent == 0 {
            return Ok(unit.clone());
        }
        let perm = sample_reordering(&build_pdg(unit), percent, seed)?;
        Ok(apply(&perm, unit)?)
    })?;
    let mut predictions = Vec::new();
    let mut gold = Vec::new();
    let mut scores = Vec::new();
    let mut similar = Vec::new();
    for ex in &examples {
        match ex {
            Example::Unit { features, label } => {
                predictions.push(argmax(&model.predict_unit(features)?));
                gold.push(*label);
            }
            Example::Token { features, labels } => {
                let logits = model.token_head(&model.encode(features)?);
                predictions.extend((0..logits.rows).map(|r| argmax(logits.row(r))));
                gold.extend(labels);
            }
            Example::Pair { left, right, similar: s } => {
                let sim = model.pair_similarity(&model.encode(left)?, &model.encode(right)?)?;
                scores.push(sim.cosine);
                predictions.push(usize::from(sim.cosine > 0.0));
                gold.push(usize::from(*s));
                similar.push(*s);
            }
        }
    }
    Ok(Evaluation {
        task: corpus.manifest.task,
        examples: examples.len(),
        f1: macro_f1(&predictions, &gold),
        auc: if similar.is_empty() { None } else { auc(&scores, &similar) },
        percent,
        perm_seed,
        predictions,
        scores,
    })
}
