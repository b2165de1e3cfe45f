//! Sentence-level shared-private fusion and intent classification.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::nn::Linear;
use crate::params::ParamStore;
use crate::rng::Rng;

/// Self-attention pools for global and local encodings plus the intent
/// classifier over their concatenation.
#[derive(Clone, Debug)]
pub struct IntentHead {
    pub global_pool: Linear,
    pub local_pool: Linear,
    pub classifier: Linear,
}

impl IntentHead {
    pub fn new(store: &mut ParamStore, width: usize, num_intents: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            global_pool: Linear::new(store, "intent.pool_global", width, 1, true, rng)?,
            local_pool: Linear::new(store, "intent.pool_local", width, 1, true, rng)?,
            classifier: Linear::new(store, "intent.classifier", 2 * width, num_intents, false, rng)?,
        })
    }

    /// Returns `(c^g, c^l)`.
    pub fn pool(&self, tape: &mut Tape, store: &ParamStore, g: Var, l: Var) -> Result<(Var, Var)> {
        let cg = attention_pool(tape, store, &self.global_pool, g)?;
        let cl = attention_pool(tape, store, &self.local_pool, l)?;
        Ok((cg, cl))
    }

    /// Intent distribution `softmax(W c^m)` for `c^m = c^g ⊕ c^l`.
    pub fn predict(&self, tape: &mut Tape, store: &ParamStore, cg: Var, cl: Var) -> Result<Var> {
        let cm = fuse(tape, cg, cl)?;
        let logits = self.classifier.forward(tape, store, cm)?;
        Ok(tape.softmax_rows(logits))
    }
}

/// `a_i = w·g_i + b`, `p = softmax(a)`, `c = Σ p_i g_i`.
pub fn attention_pool(tape: &mut Tape, store: &ParamStore, score: &Linear, g: Var) -> Result<Var> {
    let n = tape.value(g).rows();
    let a = score.forward(tape, store, g)?;
    let a = tape.reshape(a, &[n])?;
    let p = tape.softmax_rows(a);
    tape.matmul(p, g)
}

pub fn fuse(tape: &mut Tape, cg: Var, cl: Var) -> Result<Var> {
    tape.concat(&[cg, cl])
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn pool_with(w: &[f64], b: f64, rows: &[Vec<f64>]) -> Vec<f64> {
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "p", w.len(), 1, true, &mut Rng::seed(0)).unwrap();
        store.get_mut(lin.weight).data_mut().copy_from_slice(w);
        store.get_mut(lin.bias.unwrap()).data_mut()[0] = b;
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::matrix(rows).unwrap());
        let c = attention_pool(&mut tape, &store, &lin, g).unwrap();
        tape.value(c).data().to_vec()
    }

    #[test]
    fn single_row_pools_to_itself() {
        assert_eq!(pool_with(&[3.0, -2.0], 0.7, &[vec![1.5, -0.5]]), vec![1.5, -0.5]);
    }

    #[test]
    fn equal_scores_give_mean() {
        let c = pool_with(&[0.0, 0.0], 0.3, &[vec![1.0, 4.0], vec![3.0, 0.0]]);
        assert_eq!(c, vec![2.0, 2.0]);
    }

    #[test]
    fn hand_weighted_pool() {
        // scores come out as (0, ln 3) via the first coordinate
        let ln3 = 3f64.ln();
        let rows = vec![vec![0.0, 2.0], vec![ln3, -4.0]];
        let c = pool_with(&[1.0, 0.0], 0.0, &rows);
        let expected = [0.25 * 0.0 + 0.75 * ln3, 0.25 * 2.0 + 0.75 * -4.0];
        for (a, b) in c.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_concatenates() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![3.0]));
        let z = tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let m = fuse(&mut tape, a, b).unwrap();
        assert_eq!(tape.value(m).data(), &[1.0, 2.0, 3.0]);
        let m = fuse(&mut tape, a, z).unwrap();
        assert_eq!(&tape.value(m).data()[..2], &[1.0, 2.0]);
        assert_eq!(tape.value(m).len(), 5);
    }

    #[test]
    fn zero_classifier_is_uniform_and_picks_label_zero() {
        let mut store = ParamStore::new();
        let head = IntentHead::new(&mut store, 2, 4, &mut Rng::seed(1)).unwrap();
        store.get_mut(head.classifier.weight).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::matrix(&[vec![0.2, 0.4], vec![1.0, -1.0]]).unwrap());
        let (cg, cl) = head.pool(&mut tape, &store, g, g).unwrap();
        let y = head.predict(&mut tape, &store, cg, cl).unwrap();
        let y = tape.value(y).data();
        assert!(y.iter().all(|&p| p == 0.25));
        assert_eq!(argmax(y), 0);
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_ignores_constant_shift() {
        let v = [0.1, 2.0, -1.0, 2.0];
        let shifted: Vec<f64> = v.iter().map(|x| x + 17.5).collect();
        assert_eq!(argmax(&v), 1);
        assert_eq!(argmax(&shifted), 1);
    }
}
