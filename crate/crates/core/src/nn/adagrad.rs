use super::model::{ParamGrads, Parameterized};

pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
pub const DEFAULT_EPSILON: f64 = 1e-10;

/// Adagrad: `acc += g²; w -= lr · g / (√acc + ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adagrad {
    pub learning_rate: f64,
    pub epsilon: f64,
    accumulators: Vec<Vec<f64>>,
}

impl Adagrad {
    pub fn new(learning_rate: f64, epsilon: f64, shapes: &[Vec<usize>]) -> Self {
        Self {
            learning_rate,
            epsilon,
            accumulators: ParamGrads::zeros(shapes).tensors,
        }
    }

    pub fn for_model(model: &impl Parameterized, learning_rate: f64) -> Self {
        Self::new(learning_rate, DEFAULT_EPSILON, &model.shapes())
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accumulators
    }

    pub fn step(&mut self, model: &mut impl Parameterized, grads: &ParamGrads) {
        self.step_tensors(model.tensors_mut(), grads);
    }

    pub fn step_tensors(&mut self, params: Vec<&mut [f64]>, grads: &ParamGrads) {
        assert_eq!(params.len(), grads.tensors.len(), "parameter/gradient tensor count");
        for ((p, g), acc) in params.into_iter().zip(&grads.tensors).zip(&mut self.accumulators) {
            assert_eq!(p.len(), g.len(), "parameter/gradient shape");
            for ((w, &g), a) in p.iter_mut().zip(g).zip(acc.iter_mut()) {
                if g != 0.0 {
                    *a += g * g;
                    *w -= self.learning_rate * g / (a.sqrt() + self.epsilon);
                }
            }
        }
    }
}
