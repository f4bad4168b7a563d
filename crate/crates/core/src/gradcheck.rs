//! Central finite-difference checks of the hand-written backward passes.
//!
//! Coordinates whose perturbation flips the sign of any ReLU pre-activation
//! sit on a kink where the derivative is undefined; they are counted and
//! skipped rather than compared.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{
    bce_loss, Activation, ClientModel, CutActivation, DenseStack, Parameterized, Scaler, ServerFeatures, ServerModel,
    StackTrace,
};
use crate::protocol::{ActivationMessage, GradientMessage};
use crate::rng::{stream, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub step: f64,
    pub relative: f64,
    /// Absolute tolerance used when the analytic value is below `small`.
    pub absolute: f64,
    pub small: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            step: 1e-5,
            relative: 1e-4,
            absolute: 1e-7,
            small: 1e-6,
        }
    }
}

impl Tolerance {
    /// Relative error of one coordinate, or `None` when the absolute rule
    /// applies and is met.
    fn error(&self, analytic: f64, numeric: f64) -> Option<f64> {
        let diff = (analytic - numeric).abs();
        if analytic.abs() < self.small && diff <= self.absolute {
            return None;
        }
        Some(diff / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE))
    }
}

/// Outcome of checking a set of coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub failures: usize,
    pub max_relative_error: f64,
    /// Location of the largest relative error, e.g. `client.tensor[3][17]`.
    pub worst: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }

    pub fn merge(&mut self, other: &Self) {
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
        self.failures += other.failures;
        if other.max_relative_error > self.max_relative_error {
            self.max_relative_error = other.max_relative_error;
            self.worst = other.worst.clone();
        }
    }

    fn record(&mut self, tol: &Tolerance, analytic: f64, numeric: f64, at: impl FnOnce() -> String) {
        self.checked += 1;
        if let Some(e) = tol.error(analytic, numeric) {
            if e > tol.relative {
                self.failures += 1;
            }
            if e > self.max_relative_error {
                self.max_relative_error = e;
                self.worst = Some(at());
            }
        }
    }
}

fn relu_pattern(stack: &DenseStack, trace: &StackTrace, out: &mut Vec<bool>) {
    for (layer, z) in stack.layers().iter().zip(&trace.pre) {
        if layer.activation == Activation::Relu {
            out.extend(z.iter().map(|&v| v > 0.0));
        }
    }
}

/// Loss and ReLU sign pattern of the full split model on one sample.
fn probe(
    server: &ServerModel,
    client: &ClientModel,
    x: &ServerFeatures,
    features: &[u32],
    label: u8,
) -> Result<(f64, Vec<bool>)> {
    let (a_c, s_trace) = server.forward_traced(x)?;
    let (loss, mut pattern) = probe_client(client, &a_c, features, label)?;
    relu_pattern(server.trunk(), &s_trace, &mut pattern);
    Ok((loss, pattern))
}

fn probe_client(client: &ClientModel, a_c: &CutActivation, features: &[u32], label: u8) -> Result<(f64, Vec<bool>)> {
    let trace = client.head().forward_traced(client.input(a_c, features)?);
    let p = trace.output()[0];
    let mut pattern = Vec::new();
    relu_pattern(client.head(), &trace, &mut pattern);
    Ok((bce_loss(p, label), pattern))
}

/// Central difference around `x0`. `eval(v)` moves the coordinate to `v` and
/// probes; the coordinate is put back to `x0` afterwards.
fn central<F>(x0: f64, h: f64, mut eval: F) -> Result<Option<f64>>
where
    F: FnMut(f64) -> Result<(f64, Vec<bool>)>,
{
    let (_, base) = eval(x0)?;
    let (lp, pp) = eval(x0 + h)?;
    let (lm, pm) = eval(x0 - h)?;
    eval(x0)?;
    if pp != base || pm != base {
        return Ok(None);
    }
    Ok(Some((lp - lm) / (2.0 * h)))
}

/// Checks every client parameter and every cut-activation coordinate
/// against finite differences of the client loss.
pub fn check_client(
    client: &ClientModel,
    a_c: &CutActivation,
    features: &[u32],
    label: u8,
    tol: &Tolerance,
) -> Result<GradCheckReport> {
    let analytic = client.backward(a_c, features, label)?;
    let mut report = GradCheckReport::default();
    let mut model = client.clone();

    for (t, grad) in analytic.client_grads.tensors.iter().enumerate() {
        for (i, &g) in grad.iter().enumerate() {
            let x0 = model.tensors()[t][i];
            let numeric = central(x0, tol.step, |v| {
                model.tensors_mut()[t][i] = v;
                probe_client(&model, a_c, features, label)
            })?;
            match numeric {
                Some(n) => report.record(tol, g, n, || format!("client.tensor[{t}][{i}]")),
                None => report.skipped_kinks += 1,
            }
        }
    }

    let mut a = a_c.as_slice().to_vec();
    for (i, &g) in analytic.cut_gradient.as_slice().iter().enumerate() {
        let x0 = a[i];
        let numeric = central(x0, tol.step, |v| {
            a[i] = v;
            probe_client(client, &CutActivation::new(a.clone())?, features, label)
        })?;
        match numeric {
            Some(n) => report.record(tol, g, n, || format!("a_c[{i}]")),
            None => report.skipped_kinks += 1,
        }
    }
    Ok(report)
}

/// Checks the server parameters against finite differences of the total
/// split-model loss, with the analytic gradient assembled from the message
/// exchange: activation out, cut gradient back, server backward.
pub fn check_composite(
    server: &ServerModel,
    client: &ClientModel,
    x: &ServerFeatures,
    features: &[u32],
    label: u8,
    tol: &Tolerance,
) -> Result<GradCheckReport> {
    let (a_c, trace) = server.forward_traced(x)?;
    let sent = ActivationMessage { sample_id: 0, a_c };
    let back = client.backward(&sent.a_c, features, label)?;
    let reply = GradientMessage {
        sample_id: sent.sample_id,
        cut_gradient: back.cut_gradient,
    };
    let mut grads = server.zero_grads();
    server.backward_into(x, &trace, &reply.cut_gradient, &mut grads)?;

    let mut report = GradCheckReport::default();
    let mut model = server.clone();
    for (t, grad) in grads.tensors.iter().enumerate() {
        for (i, &g) in grad.iter().enumerate() {
            let x0 = model.tensors()[t][i];
            let numeric = central(x0, tol.step, |v| {
                model.tensors_mut()[t][i] = v;
                probe(&model, client, x, features, label)
            })?;
            match numeric {
                Some(n) => report.record(tol, g, n, || format!("server.tensor[{t}][{i}]")),
                None => report.skipped_kinks += 1,
            }
        }
    }
    Ok(report)
}

/// One random model/sample pair: layer widths, cardinalities, inputs and
/// label are all drawn from `seed`.
pub fn random_trial(seed: u64, tol: &Tolerance) -> Result<GradCheckReport> {
    let mut rng = stream(seed, Stream::Sampling);
    let width = |rng: &mut Rng| rng.random_range(2..7usize);
    let server_cards: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(2..6)).collect();
    let client_cards: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(2..6)).collect();
    let n_numeric = rng.random_range(0..3);
    let scalers: Vec<Scaler> = (0..n_numeric)
        .map(|_| Scaler {
            mean: rng.random_range(-1.0..1.0),
            std: rng.random_range(0.5..2.0),
        })
        .collect();
    let embed_dim = rng.random_range(2..5);
    let cut = width(&mut rng);
    let server_hidden: Vec<usize> = (0..rng.random_range(1..3)).map(|_| width(&mut rng)).collect();
    let client_hidden: Vec<usize> = (0..rng.random_range(1..3)).map(|_| width(&mut rng)).collect();

    let mut init = stream(seed, Stream::Init);
    let mut server = ServerModel::init(&server_cards, scalers, embed_dim, &server_hidden, cut, &mut init)?;
    let mut client = ClientModel::init(cut, &client_cards, embed_dim, &client_hidden, &mut init)?;
    // embeddings start near zero; spread them so their gradients are not
    // dominated by the absolute tolerance
    for t in server
        .embeddings_mut()
        .tables_mut()
        .iter_mut()
        .chain(client.embeddings_mut().tables_mut())
    {
        t.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }

    let x = ServerFeatures {
        categorical: server_cards.iter().map(|&c| rng.random_range(0..c as u32)).collect(),
        numeric: (0..n_numeric).map(|_| rng.random_range(-3.0..3.0)).collect(),
    };
    let features: Vec<u32> = client_cards.iter().map(|&c| rng.random_range(0..c as u32)).collect();
    let label = rng.random_range(0..2u8);

    let a_c = server.forward(&x)?;
    let mut report = check_client(&client, &a_c, &features, label, tol)?;
    report.merge(&check_composite(&server, &client, &x, &features, label, tol)?);
    Ok(report)
}

/// Runs `trials` random trials with seeds `seed, seed + 1, ...` and merges
/// their reports.
pub fn run_trials(trials: usize, seed: u64, tol: &Tolerance) -> Result<GradCheckReport> {
    let mut total = GradCheckReport::default();
    for k in 0..trials as u64 {
        total.merge(&random_trial(seed.wrapping_add(k), tol)?);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_trials_pass() {
        let report = run_trials(20, 7, &Tolerance::default()).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.checked > 1000);
        assert!(report.skipped_kinks * 20 < report.checked);
    }

    #[test]
    fn flags_a_mismatch() {
        let tol = Tolerance::default();
        let mut r = GradCheckReport::default();
        r.record(&tol, 0.5, 0.5 + 1e-9, || "a".into());
        assert!(r.passed());
        r.record(&tol, 0.5, 0.55, || "b".into());
        assert!(!r.passed());
        assert_eq!(r.worst.as_deref(), Some("b"));
        assert_eq!(r.checked, 2);
    }

    #[test]
    fn tolerance_rules() {
        let t = Tolerance::default();
        assert_eq!(t.error(1e-8, 5e-8), None);
        assert!(t.error(1e-8, 1e-6).unwrap() > t.relative);
        assert!(t.error(1.0, 1.00001).unwrap() < t.relative);
        assert!(t.error(1.0, 1.001).unwrap() > t.relative);
    }

    #[test]
    fn default_size_client_all_coordinates() {
        use crate::nn::Architecture;
        let arch = Architecture::default();
        let mut rng = stream(42, Stream::Init);
        let server = ServerModel::init(
            &[9, 16],
            vec![Scaler { mean: 0.0, std: 1.0 }; 6],
            arch.embed_dim,
            &arch.server_hidden,
            arch.cut_width,
            &mut rng,
        )
        .unwrap();
        let client = ClientModel::init(
            arch.cut_width,
            &[7, 6, 5, 2],
            arch.embed_dim,
            &arch.client_hidden,
            &mut rng,
        )
        .unwrap();
        let x = ServerFeatures {
            categorical: vec![3, 11],
            numeric: vec![0.4, -1.2, 0.0, 2.5, -0.3, 1.1],
        };
        let a_c = server.forward(&x).unwrap();
        let report = check_client(&client, &a_c, &[2, 0, 4, 1], 1, &Tolerance::default()).unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
