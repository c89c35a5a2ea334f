use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DecisionState, PolicyError, StateLayout};

pub const DEFAULT_HIDDEN: usize = 256;

/// Two-layer network `W2 · relu(W1 · s + b1) + b2` with two linear outputs,
/// the estimated returns of answering and of asking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnParams {
    pub input_dim: usize,
    pub hidden: usize,
    /// Row-major `hidden × input_dim`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major `2 × hidden`.
    pub w2: Vec<f64>,
    pub b2: [f64; 2],
}

/// Intermediate values kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub out: [f64; 2],
}

/// Gradient with the same shape as [`DqnParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct DqnGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: [f64; 2],
}

impl DqnGrad {
    pub fn zeros_like(p: &DqnParams) -> Self {
        DqnGrad {
            w1: vec![0.0; p.w1.len()],
            b1: vec![0.0; p.b1.len()],
            w2: vec![0.0; p.w2.len()],
            b2: [0.0; 2],
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.w1.iter_mut().for_each(|x| *x *= k);
        self.b1.iter_mut().for_each(|x| *x *= k);
        self.w2.iter_mut().for_each(|x| *x *= k);
        self.b2.iter_mut().for_each(|x| *x *= k);
    }
}

impl DqnParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        DqnParams {
            input_dim,
            hidden,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; 2 * hidden],
            b2: [0.0; 2],
        }
    }

    /// Weights uniform in `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`
    /// per layer; biases zero.
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = DqnParams::zeros(input_dim, hidden);
        let a1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        p.w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..=a1));
        let a2 = (6.0 / (hidden + 2) as f64).sqrt();
        p.w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..=a2));
        p
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 2
    }

    pub fn is_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .all(|x| x.is_finite())
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache, PolicyError> {
        if x.len() != self.input_dim {
            return Err(PolicyError::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut pre = self.b1.clone();
        for (col, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (row, p) in pre.iter_mut().enumerate() {
                *p += self.w1[row * self.input_dim + col] * xv;
            }
        }
        let hidden: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
        let mut out = self.b2;
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
            *o += row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
        }
        Ok(ForwardCache { pre, hidden, out })
    }

    pub fn forward(&self, x: &[f64]) -> Result<[f64; 2], PolicyError> {
        Ok(self.forward_cached(x)?.out)
    }

    /// Accumulates `d(out)/d(params)ᵀ · d_out` into `grad`.
    pub fn backward(&self, x: &[f64], cache: &ForwardCache, d_out: [f64; 2], grad: &mut DqnGrad) {
        let h = self.hidden;
        let mut d_hidden = vec![0.0; h];
        for (k, &d) in d_out.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.b2[k] += d;
            for j in 0..h {
                grad.w2[k * h + j] += d * cache.hidden[j];
                d_hidden[j] += d * self.w2[k * h + j];
            }
        }
        for (j, dh) in d_hidden.iter_mut().enumerate() {
            if cache.pre[j] <= 0.0 {
                *dh = 0.0;
            }
        }
        for (j, &dh) in d_hidden.iter().enumerate() {
            grad.b1[j] += dh;
        }
        for (col, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (j, &dh) in d_hidden.iter().enumerate() {
                if dh != 0.0 {
                    grad.w1[j * self.input_dim + col] += dh * xv;
                }
            }
        }
    }
}

/// `(q_answer, q_ask)` for a decision state.
pub fn dqn_forward(state: &DecisionState, params: &DqnParams) -> Result<[f64; 2], PolicyError> {
    params.forward(&state.values)
}

const CHECKPOINT_FORMAT: &str = "convrisk-dqn";
const CHECKPOINT_VERSION: u32 = 1;

/// JSON checkpoint: a header describing the state layout followed by the
/// flat parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DqnCheckpoint {
    pub format: String,
    pub version: u32,
    pub layout: StateLayout,
    pub hidden_width: usize,
    pub params: DqnParams,
}

impl DqnCheckpoint {
    pub fn new(layout: StateLayout, params: DqnParams) -> Self {
        DqnCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layout,
            hidden_width: params.hidden,
            params,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PolicyError> {
        let c: DqnCheckpoint =
            serde_json::from_str(s).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                c.format, c.version
            )));
        }
        let p = &c.params;
        let consistent = p.input_dim == c.layout.total_len()
            && p.hidden == c.hidden_width
            && p.w1.len() == p.hidden * p.input_dim
            && p.b1.len() == p.hidden
            && p.w2.len() == 2 * p.hidden;
        if !consistent {
            return Err(PolicyError::Checkpoint("parameter shapes do not match header".into()));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::FeatureMask;

    /// Dense textbook evaluation, independent of the sparse path.
    fn brute_force(p: &DqnParams, x: &[f64]) -> [f64; 2] {
        let mut h = vec![0.0; p.hidden];
        for j in 0..p.hidden {
            let mut z = p.b1[j];
            for i in 0..p.input_dim {
                z += p.w1[j * p.input_dim + i] * x[i];
            }
            h[j] = if z > 0.0 { z } else { 0.0 };
        }
        let mut out = [0.0; 2];
        for k in 0..2 {
            out[k] = p.b2[k];
            for j in 0..p.hidden {
                out[k] += p.w2[k * p.hidden + j] * h[j];
            }
        }
        out
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut p = DqnParams::zeros(5, 3);
        p.b2 = [0.3, -0.1];
        assert_eq!(p.forward(&[1.0, -2.0, 0.0, 4.0, 9.0]).unwrap(), [0.3, -0.1]);
    }

    #[test]
    fn hand_computed_piecewise_linear() {
        // W1 = I (2x2), W2 = [[1, 2], [-1, 1]], b = 0
        let mut p = DqnParams::zeros(2, 2);
        p.w1 = vec![1.0, 0.0, 0.0, 1.0];
        p.w2 = vec![1.0, 2.0, -1.0, 1.0];
        // s = (1, -1): hidden = (1, 0) -> (1, -1)
        assert_eq!(p.forward(&[1.0, -1.0]).unwrap(), [1.0, -1.0]);
        // 2s = (2, -2): hidden = (2, 0) -> (2, -2), linear in the active region
        assert_eq!(p.forward(&[2.0, -2.0]).unwrap(), [2.0, -2.0]);
        // s = (1, 3): hidden = (1, 3) -> (7, 2)
        assert_eq!(p.forward(&[1.0, 3.0]).unwrap(), [7.0, 2.0]);
    }

    #[test]
    fn dead_relu_returns_bias() {
        let mut p = DqnParams::zeros(3, 4);
        p.w1.iter_mut().for_each(|w| *w = 1.0);
        p.b1.iter_mut().for_each(|b| *b = -10.0);
        p.w2.iter_mut().for_each(|w| *w = 5.0);
        p.b2 = [0.25, 0.75];
        assert_eq!(p.forward(&[1.0, 2.0, 3.0]).unwrap(), [0.25, 0.75]);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..20 {
            let mut p = DqnParams::init(7, 5, seed);
            p.b1.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            p.b2 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let x: Vec<f64> = (0..7)
                .map(|i| if i % 3 == 0 { 0.0 } else { rng.random_range(-2.0..2.0) })
                .collect();
            let a = p.forward(&x).unwrap();
            let b = brute_force(&p, &x);
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn init_properties() {
        let a = DqnParams::init(30, 10, 3);
        assert_eq!(a, DqnParams::init(30, 10, 3));
        assert_ne!(a, DqnParams::init(30, 10, 4));
        assert!(a.b1.iter().all(|&b| b == 0.0) && a.b2 == [0.0, 0.0]);
        let bound1 = (6.0f64 / 40.0).sqrt();
        assert!(a.w1.iter().all(|w| w.abs() <= bound1));
        let bound2 = (6.0f64 / 12.0).sqrt();
        assert!(a.w2.iter().all(|w| w.abs() <= bound2));
    }

    #[test]
    fn dimension_checked() {
        let p = DqnParams::zeros(4, 2);
        assert!(matches!(p.forward(&[0.0; 3]), Err(PolicyError::DimensionMismatch { .. })));
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let layout = StateLayout::new(8, FeatureMask::ScoreOnly);
        let p = DqnParams::init(layout.total_len(), 6, 1);
        let c = DqnCheckpoint::new(layout, p);
        let back = DqnCheckpoint::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let mut bad = c.clone();
        bad.params.b1.pop();
        assert!(DqnCheckpoint::from_json(&bad.to_json()).is_err());
        let mut wrong_version = c;
        wrong_version.version = 99;
        assert!(DqnCheckpoint::from_json(&wrong_version.to_json()).is_err());
    }
}
