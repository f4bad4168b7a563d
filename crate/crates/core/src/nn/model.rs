use serde::{Deserialize, Serialize};

use super::dense::{Activation, DenseStack, StackTrace, UpstreamGrad};
use super::embedding::EmbeddingTable;
use super::linalg::sigmoid;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the log.
pub const PROB_CLAMP: f64 = 1e-7;

/// Binary cross-entropy with the probability clamped before the log.
pub fn bce_loss(p: f64, label: u8) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

macro_rules! finite_vector {
    ($(#[$doc:meta])* $name:ident, $what:literal) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Result<Self> {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidConfig(concat!("non-finite ", $what).into()));
                }
                Ok(Self(values))
            }

            pub fn zeros(d: usize) -> Self {
                Self(vec![0.0; d])
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }
        }
    };
}

finite_vector!(
    /// Server output at the cut layer, sent to the client.
    CutActivation,
    "cut activation"
);
finite_vector!(
    /// Loss gradient w.r.t. the cut activation, sent back to the server.
    CutGradient,
    "cut gradient"
);

/// Gradients laid out exactly like a model's parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub tensors: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros(shapes: &[Vec<usize>]) -> Self {
        Self {
            tensors: shapes.iter().map(|s| vec![0.0; s.iter().product()]).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            for v in t {
                *v *= factor;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.fill(0.0);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|&v| v == 0.0)
    }
}

/// Uniform access to a model's trainable tensors (embeddings first, then
/// each dense layer's weights and bias).
pub trait Parameterized {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    fn shapes(&self) -> Vec<Vec<usize>>;

    fn zero_grads(&self) -> ParamGrads {
        ParamGrads::zeros(&self.shapes())
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Train-split standardisation of one numeric server feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: f64,
    pub std: f64,
}

impl Scaler {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for v in values.into_iter().filter(|v| v.is_finite()) {
            n += 1;
            sum += v;
            sq += v * v;
        }
        if n == 0 {
            return Self { mean: 0.0, std: 1.0 };
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

/// Server-side inputs of one sample, in schema order of the server's
/// categorical and numeric features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerFeatures {
    pub categorical: Vec<u32>,
    pub numeric: Vec<f64>,
}

/// Server sub-model: embeddings and standardised numerics → trunk → cut
/// activation of width `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerModel {
    embeddings: EmbeddingTable,
    scalers: Vec<Scaler>,
    trunk: DenseStack,
    cut_width: usize,
}

impl ServerModel {
    pub fn new(embeddings: EmbeddingTable, scalers: Vec<Scaler>, trunk: DenseStack) -> Result<Self> {
        let input = embeddings.width() + scalers.len();
        if let Some(i) = trunk.input_dim() {
            if i != input {
                return Err(Error::DimensionMismatch {
                    expected: input,
                    actual: i,
                    context: "server trunk input",
                });
            }
        }
        if input == 0 {
            return Err(Error::Schema("server model has no inputs".into()));
        }
        let cut_width = trunk.output_dim(input);
        Ok(Self {
            embeddings,
            scalers,
            trunk,
            cut_width,
        })
    }

    /// Glorot/normal initialisation; every trunk layer is ReLU, the last one
    /// producing the `cut_width` activation.
    pub fn init(
        cardinalities: &[usize],
        scalers: Vec<Scaler>,
        embed_dim: usize,
        hidden: &[usize],
        cut_width: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let embeddings = EmbeddingTable::normal(cardinalities, embed_dim, rng);
        let mut widths = vec![embeddings.width() + scalers.len()];
        widths.extend_from_slice(hidden);
        widths.push(cut_width);
        let trunk = DenseStack::glorot(&widths, Activation::Relu, Activation::Relu, rng);
        Self::new(embeddings, scalers, trunk)
    }

    pub fn cut_width(&self) -> usize {
        self.cut_width
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.embeddings
    }

    pub fn scalers(&self) -> &[Scaler] {
        &self.scalers
    }

    pub fn trunk(&self) -> &DenseStack {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut DenseStack {
        &mut self.trunk
    }

    pub fn embeddings_mut(&mut self) -> &mut EmbeddingTable {
        &mut self.embeddings
    }

    /// Concatenated trunk input.
    pub fn input(&self, x: &ServerFeatures) -> Result<Vec<f64>> {
        self.embeddings.check(&x.categorical)?;
        if x.numeric.len() != self.scalers.len() {
            return Err(Error::DimensionMismatch {
                expected: self.scalers.len(),
                actual: x.numeric.len(),
                context: "server numeric feature count",
            });
        }
        let mut input = Vec::with_capacity(self.embeddings.width() + self.scalers.len());
        self.embeddings.lookup_into(&x.categorical, &mut input);
        for (v, s) in x.numeric.iter().zip(&self.scalers) {
            if !v.is_finite() {
                return Err(Error::Schema("non-finite numeric server feature".into()));
            }
            input.push(s.apply(*v));
        }
        Ok(input)
    }

    pub fn forward(&self, x: &ServerFeatures) -> Result<CutActivation> {
        CutActivation::new(self.trunk.forward(&self.input(x)?))
    }

    pub fn forward_traced(&self, x: &ServerFeatures) -> Result<(CutActivation, StackTrace)> {
        let trace = self.trunk.forward_traced(self.input(x)?);
        Ok((CutActivation::new(trace.output().to_vec())?, trace))
    }

    /// Parameter gradients for one sample given its cut gradient.
    pub fn backward(&self, x: &ServerFeatures, cut_gradient: &CutGradient) -> Result<ParamGrads> {
        let (_, trace) = self.forward_traced(x)?;
        let mut grads = self.zero_grads();
        self.backward_into(x, &trace, cut_gradient, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates this sample's parameter gradients into `grads`.
    pub fn backward_into(
        &self,
        x: &ServerFeatures,
        trace: &StackTrace,
        cut_gradient: &CutGradient,
        grads: &mut ParamGrads,
    ) -> Result<()> {
        if cut_gradient.len() != self.cut_width {
            return Err(Error::DimensionMismatch {
                expected: self.cut_width,
                actual: cut_gradient.len(),
                context: "cut gradient width",
            });
        }
        let n_emb = self.embeddings.len();
        let (emb_grads, dense_grads) = grads.tensors.split_at_mut(n_emb);
        let d_input = self
            .trunk
            .backward(trace, UpstreamGrad::Output(cut_gradient.as_slice()), Some(dense_grads));
        self.embeddings
            .accumulate_grads(&x.categorical, &d_input[..self.embeddings.width()], emb_grads);
        Ok(())
    }
}

impl Parameterized for ServerModel {
    fn tensors(&self) -> Vec<&[f64]> {
        self.embeddings.tensors().chain(self.trunk.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.embeddings.tensors_mut().chain(self.trunk.tensors_mut()).collect()
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        self.embeddings.shapes().chain(self.trunk.shapes()).collect()
    }
}

/// Result of one client backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardResult {
    pub cut_gradient: CutGradient,
    pub client_grads: ParamGrads,
    pub loss: f64,
    pub probability: f64,
}

/// Client sub-model: `concat(a_c, client embeddings)` → head → sigmoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientModel {
    cut_width: usize,
    embeddings: EmbeddingTable,
    head: DenseStack,
}

impl ClientModel {
    pub fn new(cut_width: usize, embeddings: EmbeddingTable, head: DenseStack) -> Result<Self> {
        let input = cut_width + embeddings.width();
        match head.input_dim() {
            Some(i) if i == input => {}
            Some(i) => {
                return Err(Error::DimensionMismatch {
                    expected: input,
                    actual: i,
                    context: "client head input",
                })
            }
            None => return Err(Error::InvalidConfig("client head needs at least one layer".into())),
        }
        let last = head.layers().last().expect("non-empty head");
        if last.out_dim != 1 || last.activation != Activation::Sigmoid {
            return Err(Error::InvalidConfig(
                "client head must end in a single sigmoid unit".into(),
            ));
        }
        Ok(Self {
            cut_width,
            embeddings,
            head,
        })
    }

    /// Hidden layers ReLU, output a single sigmoid unit.
    pub fn init(
        cut_width: usize,
        cardinalities: &[usize],
        embed_dim: usize,
        hidden: &[usize],
        rng: &mut Rng,
    ) -> Result<Self> {
        let embeddings = EmbeddingTable::normal(cardinalities, embed_dim, rng);
        let mut widths = vec![cut_width + embeddings.width()];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let head = DenseStack::glorot(&widths, Activation::Relu, Activation::Sigmoid, rng);
        Self::new(cut_width, embeddings, head)
    }

    pub fn cut_width(&self) -> usize {
        self.cut_width
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.embeddings
    }

    pub fn embeddings_mut(&mut self) -> &mut EmbeddingTable {
        &mut self.embeddings
    }

    pub fn head(&self) -> &DenseStack {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut DenseStack {
        &mut self.head
    }

    pub fn input(&self, a_c: &CutActivation, features: &[u32]) -> Result<Vec<f64>> {
        if a_c.len() != self.cut_width {
            return Err(Error::DimensionMismatch {
                expected: self.cut_width,
                actual: a_c.len(),
                context: "cut activation width",
            });
        }
        self.embeddings.check(features)?;
        let mut input = Vec::with_capacity(self.cut_width + self.embeddings.width());
        input.extend_from_slice(a_c.as_slice());
        self.embeddings.lookup_into(features, &mut input);
        Ok(input)
    }

    fn logit(&self, trace: &StackTrace) -> f64 {
        trace.pre.last().expect("non-empty head")[0]
    }

    pub fn forward(&self, a_c: &CutActivation, features: &[u32]) -> Result<f64> {
        Ok(self.head.forward(&self.input(a_c, features)?)[0])
    }

    /// `(probability, loss)`
    pub fn forward_loss(&self, a_c: &CutActivation, features: &[u32], label: u8) -> Result<(f64, f64)> {
        check_label(label)?;
        let p = self.forward(a_c, features)?;
        Ok((p, bce_loss(p, label)))
    }

    pub fn backward(&self, a_c: &CutActivation, features: &[u32], label: u8) -> Result<BackwardResult> {
        let mut client_grads = self.zero_grads();
        let (cut_gradient, loss, probability) = self.backward_into(a_c, features, label, &mut client_grads)?;
        Ok(BackwardResult {
            cut_gradient,
            client_grads,
            loss,
            probability,
        })
    }

    /// Accumulates parameter gradients into `grads`; returns
    /// `(cut_gradient, loss, probability)`.
    pub fn backward_into(
        &self,
        a_c: &CutActivation,
        features: &[u32],
        label: u8,
        grads: &mut ParamGrads,
    ) -> Result<(CutGradient, f64, f64)> {
        check_label(label)?;
        let trace = self.head.forward_traced(self.input(a_c, features)?);
        let p = sigmoid(self.logit(&trace));
        let delta = [p - label as f64];
        let n_emb = self.embeddings.len();
        let (emb_grads, dense_grads) = grads.tensors.split_at_mut(n_emb);
        let d_input = self
            .head
            .backward(&trace, UpstreamGrad::PreActivation(&delta), Some(dense_grads));
        self.embeddings
            .accumulate_grads(features, &d_input[self.cut_width..], emb_grads);
        let cut = CutGradient::new(d_input[..self.cut_width].to_vec())?;
        Ok((cut, bce_loss(p, label), p))
    }

    /// Cut gradient only, skipping parameter gradients.
    pub fn cut_gradient(&self, a_c: &CutActivation, features: &[u32], label: u8) -> Result<CutGradient> {
        check_label(label)?;
        let trace = self.head.forward_traced(self.input(a_c, features)?);
        let p = sigmoid(self.logit(&trace));
        let delta = [p - label as f64];
        let d_input = self.head.backward(&trace, UpstreamGrad::PreActivation(&delta), None);
        CutGradient::new(d_input[..self.cut_width].to_vec())
    }
}

impl Parameterized for ClientModel {
    fn tensors(&self) -> Vec<&[f64]> {
        self.embeddings.tensors().chain(self.head.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.embeddings.tensors_mut().chain(self.head.tensors_mut()).collect()
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        self.embeddings.shapes().chain(self.head.shapes()).collect()
    }
}

fn check_label(label: u8) -> Result<()> {
    if label > 1 {
        return Err(Error::Schema(format!("label {label} is not binary")));
    }
    Ok(())
}
