//! Minimal differentiable split model: embeddings, dense layers, sigmoid
//! output and binary cross-entropy, with hand-written backprop that exposes
//! the cut-layer gradient.

mod adagrad;
mod dense;
mod embedding;
pub mod linalg;
mod model;

use serde::{Deserialize, Serialize};

pub use adagrad::{Adagrad, DEFAULT_EPSILON, DEFAULT_LEARNING_RATE};
pub use dense::{Activation, Dense, DenseStack, StackTrace, UpstreamGrad};
pub use embedding::{Embedding, EmbeddingTable, EMBEDDING_INIT_STD};
pub use model::{
    bce_loss, BackwardResult, ClientModel, CutActivation, CutGradient, ParamGrads, Parameterized, Scaler,
    ServerFeatures, ServerModel, PROB_CLAMP,
};

/// Layer widths of both halves of the split model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub embed_dim: usize,
    pub cut_width: usize,
    pub server_hidden: Vec<usize>,
    pub client_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            cut_width: 32,
            server_hidden: vec![128, 64],
            client_hidden: vec![256, 128],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn small_models(seed: u64) -> (ServerModel, ClientModel) {
        let mut rng = stream(seed, Stream::Init);
        let scalers = vec![Scaler { mean: 0.5, std: 2.0 }];
        let server = ServerModel::init(&[4, 3], scalers, 3, &[5], 4, &mut rng).unwrap();
        let client = ClientModel::init(4, &[3, 2], 3, &[6, 5], &mut rng).unwrap();
        (server, client)
    }

    fn server_x() -> ServerFeatures {
        ServerFeatures {
            categorical: vec![2, 1],
            numeric: vec![1.7],
        }
    }

    #[test]
    fn zero_trunk_gives_zero_activation() {
        let (mut server, _) = small_models(1);
        for t in server.trunk_mut().layers_mut() {
            t.weights.fill(0.0);
            t.bias.fill(0.0);
        }
        let a = server.forward(&server_x()).unwrap();
        assert_eq!(a.as_slice(), &[0.0; 4]);
    }

    #[test]
    fn identity_trunk_returns_embedding_row() {
        let mut rng = stream(3, Stream::Init);
        let emb = EmbeddingTable::normal(&[5], 4, &mut rng);
        let server = ServerModel::new(emb.clone(), vec![], DenseStack::identity()).unwrap();
        let x = ServerFeatures {
            categorical: vec![3],
            numeric: vec![],
        };
        assert_eq!(server.cut_width(), 4);
        assert_eq!(server.forward(&x).unwrap().as_slice(), emb.tables()[0].row(3));

        // and the row gradient is the cut gradient verbatim
        let g = CutGradient::new(vec![0.1, -0.2, 0.3, 0.4]).unwrap();
        let grads = server.backward(&x, &g).unwrap();
        assert_eq!(&grads.tensors[0][12..16], g.as_slice());
        assert!(grads.tensors[0][..12].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_index_is_schema_violation() {
        let (server, client) = small_models(1);
        let bad = ServerFeatures {
            categorical: vec![4, 0],
            numeric: vec![0.0],
        };
        assert!(matches!(server.forward(&bad), Err(crate::Error::Schema(_))));
        let a = CutActivation::zeros(4);
        assert!(matches!(client.forward(&a, &[0, 2]), Err(crate::Error::Schema(_))));
    }

    #[test]
    fn half_probability_costs_ln2() {
        let (_, mut client) = small_models(2);
        let last = client.head_mut().layers_mut().last_mut().unwrap();
        last.weights.fill(0.0);
        last.bias.fill(0.0);
        let a = CutActivation::new(vec![0.3, 0.1, -0.2, 0.9]).unwrap();
        for y in [0, 1] {
            let (p, loss) = client.forward_loss(&a, &[1, 0], y).unwrap();
            assert_eq!(p, 0.5);
            assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_head_blocks_the_cut_gradient() {
        let (_, mut client) = small_models(2);
        for l in client.head_mut().layers_mut() {
            l.weights.fill(0.0);
        }
        let a = CutActivation::new(vec![0.3, 0.1, -0.2, 0.9]).unwrap();
        let r = client.backward(&a, &[1, 0], 1).unwrap();
        assert!(r.cut_gradient.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_head_closed_form() {
        let mut rng = stream(4, Stream::Init);
        let emb = EmbeddingTable::normal(&[3], 2, &mut rng);
        let layer = Dense::glorot(3 + 2, 1, Activation::Sigmoid, &mut rng);
        let w = layer.weights.clone();
        let client = ClientModel::new(3, emb, DenseStack::new(vec![layer]).unwrap()).unwrap();
        let a = CutActivation::new(vec![0.4, -1.1, 0.7]).unwrap();
        for y in [0u8, 1] {
            let r = client.backward(&a, &[2], y).unwrap();
            let expected: Vec<f64> = w[..3].iter().map(|wi| (r.probability - y as f64) * wi).collect();
            assert_eq!(r.cut_gradient.as_slice(), expected.as_slice());
        }
    }

    #[test]
    fn zero_cut_gradient_gives_zero_server_grads() {
        let (server, _) = small_models(5);
        let grads = server.backward(&server_x(), &CutGradient::zeros(4)).unwrap();
        assert!(grads.is_zero());
        let short = CutGradient::zeros(3);
        assert!(server.backward(&server_x(), &short).is_err());
    }

    #[test]
    fn cut_gradient_shortcut_matches_full_backward() {
        let (server, client) = small_models(6);
        let a = server.forward(&server_x()).unwrap();
        let full = client.backward(&a, &[2, 1], 1).unwrap();
        assert_eq!(client.cut_gradient(&a, &[2, 1], 1).unwrap(), full.cut_gradient);
        assert_eq!(full.client_grads.tensors.len(), client.shapes().len());
        for (g, s) in full.client_grads.tensors.iter().zip(client.shapes()) {
            assert_eq!(g.len(), s.iter().product::<usize>());
        }
    }

    #[test]
    fn forward_and_backward_are_deterministic() {
        let (s1, c1) = small_models(7);
        let (s2, c2) = small_models(7);
        let a1 = s1.forward(&server_x()).unwrap();
        let a2 = s2.forward(&server_x()).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(
            c1.backward(&a1, &[0, 1], 0).unwrap(),
            c2.backward(&a2, &[0, 1], 0).unwrap()
        );
    }

    #[test]
    fn loss_is_non_negative() {
        for p in [0.0, 1e-9, 0.3, 0.5, 0.999, 1.0] {
            for y in [0, 1] {
                assert!(bce_loss(p, y) >= 0.0);
            }
        }
        assert!(bce_loss(1.0, 1) < 1e-6);
    }
}
