use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Features, GaModel, Mat, ModelError, Precision, Session};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// One label per token, from the token head.
    Token,
    /// One label per unit, from the pooling head.
    Unit,
    /// Similar / dissimilar unit pairs, from the pair head.
    Pair,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Example {
    Token { features: Features, labels: Vec<usize> },
    Unit { features: Features, label: usize },
    Pair { left: Features, right: Features, similar: bool },
}

impl Example {
    pub fn task(&self) -> Task {
        match self {
            Example::Token { .. } => Task::Token,
            Example::Unit { .. } => Task::Unit,
            Example::Pair { .. } => Task::Pair,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Dissimilar pairs are penalised only above this cosine.
    pub margin: f64,
    /// Shuffling seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 8,
            batch_size: 16,
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            margin: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean training loss of each epoch, measured during the epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

/// Loss of one example and its gradient, one entry per parameter slot
/// (`None` where the example does not reach a tensor). Always wide precision.
pub fn example_loss(model: &GaModel, ex: &Example, margin: f64) -> Result<(f64, Vec<Option<Mat>>), ModelError> {
    let mut s = Session::new(model, Precision::Wide);
    let loss = match ex {
        Example::Token { features, labels } => {
            let e = s.encode(features)?;
            let logits = s.token_head(e);
            s.tape.cross_entropy(logits, labels.clone())
        }
        Example::Unit { features, label } => {
            let e = s.encode(features)?;
            let logits = s.pool_head(e)?;
            s.tape.cross_entropy(logits, vec![*label])
        }
        Example::Pair { left, right, similar } => {
            let a = s.encode(left)?;
            let b = s.encode(right)?;
            let (c, _) = s.pair_cosine(a, b)?;
            s.tape.pair_loss(c, *similar, margin)
        }
    };
    let value = s.tape.value(loss).data[0];
    let grads = s.tape.backward(loss);
    let mut out: Vec<Option<Mat>> = vec![None; model.params().len()];
    for (slot, g) in grads.params() {
        out[slot] = Some(g.clone());
    }
    Ok((value, out))
}

fn check(model: &GaModel, examples: &[Example]) -> Result<Task, ModelError> {
    let first = examples.first().ok_or(ModelError::EmptyCorpus)?.task();
    let classes = model.config().classes;
    for (index, ex) in examples.iter().enumerate() {
        if ex.task() != first {
            return Err(ModelError::Example {
                index,
                detail: format!("{:?} example in a {:?} corpus", ex.task(), first),
            });
        }
        let labels: &[usize] = match ex {
            Example::Token { features, labels } => {
                if labels.len() != features.len() {
                    return Err(ModelError::Example {
                        index,
                        detail: format!("{} labels for {} tokens", labels.len(), features.len()),
                    });
                }
                labels
            }
            Example::Unit { label, .. } => std::slice::from_ref(label),
            Example::Pair { .. } => &[],
        };
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(ModelError::Label { index, label, classes });
        }
    }
    Ok(first)
}

/// Seeded mini-batch Adam. Examples are visited in a shuffled order per epoch
/// and gradients are accumulated in batch order, so a fixed seed and corpus
/// reproduce the same parameters bit for bit.
pub fn train(mut model: GaModel, examples: &[Example], cfg: &TrainConfig) -> Result<(GaModel, TrainTrace), ModelError> {
    check(&model, examples)?;
    if cfg.batch_size == 0 {
        return Err(ModelError::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shapes: Vec<(usize, usize)> = model.params().iter().map(Mat::shape).collect();
    let zeros = || shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect::<Vec<_>>();
    let (mut m1, mut m2) = (zeros(), zeros());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut trace = TrainTrace {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        steps: 0,
    };

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = zeros();
            for &i in batch {
                let (loss, grads) = example_loss(&model, &examples[i], cfg.margin)?;
                epoch_total += loss;
                for (a, g) in acc.iter_mut().zip(grads) {
                    if let Some(g) = g {
                        a.add_assign(&g);
                    }
                }
            }
            trace.steps += 1;
            let t = trace.steps as i32;
            let scale = 1.0 / batch.len() as f64;
            let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
            for (slot, g) in acc.iter().enumerate() {
                let p = &mut model.params_mut()[slot];
                for k in 0..g.data.len() {
                    let gk = g.data[k] * scale;
                    let a = &mut m1[slot].data[k];
                    *a = cfg.beta1 * *a + (1.0 - cfg.beta1) * gk;
                    let b = &mut m2[slot].data[k];
                    *b = cfg.beta2 * *b + (1.0 - cfg.beta2) * gk * gk;
                    let step = (m1[slot].data[k] / c1) / ((m2[slot].data[k] / c2).sqrt() + cfg.epsilon);
                    p.data[k] -= cfg.learning_rate * step;
                }
            }
        }
        trace.epoch_loss.push(epoch_total / examples.len() as f64);
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse;
    use crate::model::ModelConfig;
    use crate::vocab::Vocab;

    fn feats(src: &str) -> Features {
        Features::from_unit(&parse(src).unwrap(), &Vocab::standard())
    }

    fn small() -> GaModel {
        GaModel::new(ModelConfig {
            seed: 1,
            ..ModelConfig::small()
        })
        .unwrap()
    }

    #[test]
    fn memorises_one_example() {
        let ex = vec![Example::Unit {
            features: feats("a = 1; b = a + 2; store b"),
            label: 1,
        }];
        let cfg = TrainConfig {
            epochs: 300,
            batch_size: 1,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let (m, _) = train(small(), &ex, &cfg).unwrap();
        let (loss, _) = example_loss(&m, &ex[0], 0.0).unwrap();
        assert!(loss < 1e-3, "loss {loss}");
    }

    #[test]
    fn training_is_deterministic() {
        let ex: Vec<Example> = ["a = 1", "a = 1; a = 2", "b = 3; a = b", "x = 1; y = x"]
            .iter()
            .enumerate()
            .map(|(i, s)| Example::Unit {
                features: feats(s),
                label: i % 2,
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let (a, ta) = train(small(), &ex, &cfg).unwrap();
        let (b, tb) = train(small(), &ex, &cfg).unwrap();
        assert_eq!(ta, tb);
        for (x, y) in a.params().iter().zip(b.params()) {
            assert!(x.data.iter().zip(&y.data).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn rejects_bad_corpora() {
        assert_eq!(
            train(small(), &[], &TrainConfig::default()).unwrap_err(),
            ModelError::EmptyCorpus
        );
        let bad = vec![Example::Unit {
            features: feats("a = 1"),
            label: 5,
        }];
        assert!(matches!(
            train(small(), &bad, &TrainConfig::default()),
            Err(ModelError::Label { label: 5, .. })
        ));
        let mixed = vec![
            Example::Unit {
                features: feats("a = 1"),
                label: 0,
            },
            Example::Token {
                features: feats("a = 1"),
                labels: vec![0, 0, 0],
            },
        ];
        assert!(matches!(
            train(small(), &mixed, &TrainConfig::default()),
            Err(ModelError::Example { index: 1, .. })
        ));
    }

    #[test]
    fn unused_bias_bucket_has_zero_gradient() {
        let m = small();
        let ex = Example::Token {
            features: feats("a = 1; b = a"),
            labels: vec![0, 1, 0, 1, 0, 1],
        };
        let (_, grads) = example_loss(&m, &ex, 0.0).unwrap();
        let bias = grads[m.layout().layers[0].bias].as_ref().unwrap();
        // The two instructions sit at most one hop apart.
        let far = m.config().max_distance_bucket as usize;
        assert_eq!(bias.get(0, far), 0.0);
        assert!(bias.get(0, 0) != 0.0);
    }

    #[test]
    fn pair_examples_train() {
        let ex = vec![
            Example::Pair {
                left: feats("x = 2; y = 4"),
                right: feats("y = 4; x = 2"),
                similar: true,
            },
            Example::Pair {
                left: feats("x = 2; y = 4"),
                right: feats("a = load; store a; halt"),
                similar: false,
            },
        ];
        let (_, trace) = train(small(), &ex, &TrainConfig::default()).unwrap();
        assert!(trace.epoch_loss.last().unwrap() <= &trace.epoch_loss[0]);
    }
}
