use serde::{Deserialize, Serialize};

use super::{history_text, ActionKind, PolicyError};
use crate::corpus::Conversation;
use crate::encoding::Embedder;

/// Logistic ask/answer classifier over the history embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtxPredParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CtxPredConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for CtxPredConfig {
    fn default() -> Self {
        CtxPredConfig {
            epochs: 200,
            learning_rate: 0.5,
            l2: 1e-4,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl CtxPredParams {
    pub fn probability_ask(&self, features: &[f64]) -> f64 {
        let z = self.bias
            + self
                .weights
                .iter()
                .zip(features)
                .map(|(w, x)| w * x)
                .sum::<f64>();
        sigmoid(z)
    }
}

/// Full-batch gradient descent on the logistic loss. The bias starts at the
/// log prior odds so an all-zero feature vector predicts the majority class.
pub fn train_ctxpred(
    examples: &[(Vec<f64>, bool)],
    cfg: &CtxPredConfig,
) -> Result<CtxPredParams, PolicyError> {
    let positives = examples.iter().filter(|(_, y)| *y).count();
    if positives == 0 {
        return Err(PolicyError::DegenerateLabels("answer"));
    }
    if positives == examples.len() {
        return Err(PolicyError::DegenerateLabels("ask"));
    }
    let dim = examples[0].0.len();
    if let Some((x, _)) = examples.iter().find(|(x, _)| x.len() != dim) {
        return Err(PolicyError::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    let n = examples.len() as f64;
    let prior = positives as f64 / n;
    let mut p = CtxPredParams {
        weights: vec![0.0; dim],
        bias: (prior / (1.0 - prior)).ln(),
    };
    for _ in 0..cfg.epochs {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (x, y) in examples {
            let err = p.probability_ask(x) - if *y { 1.0 } else { 0.0 };
            gb += err;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += err * xi;
            }
        }
        p.bias -= cfg.learning_rate * gb / n;
        for (w, g) in p.weights.iter_mut().zip(&gw) {
            *w -= cfg.learning_rate * (g / n + cfg.l2 * *w);
        }
    }
    Ok(p)
}

/// Asks when the predicted probability of asking is at least one half.
pub fn ctxpred_action(features: &[f64], params: &CtxPredParams) -> ActionKind {
    if params.probability_ask(features) >= 0.5 {
        ActionKind::Ask
    } else {
        ActionKind::Answer
    }
}

/// One example per conversation prefix: after the first `j` clarifying
/// questions and their feedback, the label is "ask" iff the conversation
/// still has a clarifying question left.
pub fn ctxpred_examples<'a, I>(conversations: I, embedder: &Embedder) -> Vec<(Vec<f64>, bool)>
where
    I: IntoIterator<Item = &'a Conversation>,
{
    let mut out = Vec::new();
    for conv in conversations {
        let cqs = conv.clarifying_question_indices();
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for j in 0..=cqs.len() {
            let features = if pairs.is_empty() {
                vec![0.0; embedder.dim()]
            } else {
                embedder.embed(&history_text(&pairs))
            };
            out.push((features, j < cqs.len()));
            if let Some(&i) = cqs.get(j) {
                pairs.push((
                    conv.turns[i].text.as_str(),
                    conv.feedback_for(i).unwrap_or_default(),
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::IdfTable;

    #[test]
    fn threshold_is_inclusive() {
        let mk = |bias: f64| CtxPredParams { weights: vec![0.0], bias };
        let logit = |p: f64| (p / (1.0 - p)).ln();
        assert_eq!(ctxpred_action(&[1.0], &mk(logit(0.7))), ActionKind::Ask);
        assert_eq!(ctxpred_action(&[1.0], &mk(0.0)), ActionKind::Ask);
        assert_eq!(ctxpred_action(&[1.0], &mk(logit(0.3))), ActionKind::Answer);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let cfg = CtxPredConfig::default();
        assert_eq!(
            train_ctxpred(&[(vec![1.0], true), (vec![0.0], true)], &cfg),
            Err(PolicyError::DegenerateLabels("ask"))
        );
        assert_eq!(
            train_ctxpred(&[(vec![1.0], false)], &cfg),
            Err(PolicyError::DegenerateLabels("answer"))
        );
    }

    #[test]
    fn separable_fixture_trains_well() {
        // label = x0 > x1 on a grid, margin kept away from the boundary
        let mut ex = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                let (a, b) = (i as f64 / 19.0, j as f64 / 19.0);
                if (a - b).abs() < 0.1 {
                    continue;
                }
                ex.push((vec![a, b], a > b));
            }
        }
        let p = train_ctxpred(&ex, &CtxPredConfig { epochs: 2000, learning_rate: 2.0, l2: 0.0 }).unwrap();
        let correct = ex
            .iter()
            .filter(|(x, y)| (ctxpred_action(x, &p) == ActionKind::Ask) == *y)
            .count();
        assert!(correct as f64 / ex.len() as f64 > 0.95);
    }

    #[test]
    fn zero_features_predict_prior() {
        let ex = vec![
            (vec![0.0, 0.0], true),
            (vec![0.0, 0.0], true),
            (vec![0.0, 0.0], true),
            (vec![0.0, 0.0], false),
        ];
        let p = train_ctxpred(&ex, &CtxPredConfig::default()).unwrap();
        assert!((p.probability_ask(&[0.0, 0.0]) - 0.75).abs() < 1e-9);
        assert_eq!(ctxpred_action(&[0.0, 0.0], &p), ActionKind::Ask);
    }

    #[test]
    fn prefixes_label_round_one_ask() {
        let convs = vec![
            Conversation::from_alternating("a", &["q", "cq1", "fb1", "ans"]),
            Conversation::from_alternating("b", &["q", "cq1", "fb1", "cq2", "fb2", "ans"]),
        ];
        let e = Embedder::new(IdfTable::from_documents(["q cq1 fb1 ans"]).unwrap(), 16).unwrap();
        let ex = ctxpred_examples(&convs, &e);
        let labels: Vec<bool> = ex.iter().map(|(_, y)| *y).collect();
        assert_eq!(labels, vec![true, false, true, true, false]);
        assert!(ex[0].0.iter().all(|&x| x == 0.0));
        assert!(ex[2].0.iter().all(|&x| x == 0.0));
        assert_eq!(ex[1].0, e.embed("cq1 [SEP] fb1"));
    }
}
