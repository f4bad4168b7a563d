use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::space::{CandidateConfiguration, ConfigurationSpace};
use crate::error::{Error, Result};
use crate::nn::linalg::{axpy, l2_distance, sigmoid};
use crate::nn::{ClientModel, CutActivation, CutGradient, Dense};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant", content = "k")]
pub enum AttackVariant {
    Exact,
    /// Per-feature majority vote over the `k` nearest candidates.
    TopK(usize),
}

impl AttackVariant {
    pub fn k(self) -> usize {
        match self {
            AttackVariant::Exact => 1,
            AttackVariant::TopK(k) => k,
        }
    }
}

/// `exact` or `topk:K`.
impl std::str::FromStr for AttackVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "exact" {
            return Ok(AttackVariant::Exact);
        }
        match s.strip_prefix("topk:").map(str::parse::<usize>) {
            Some(Ok(k)) if k >= 1 => Ok(AttackVariant::TopK(k)),
            _ => Err(Error::InvalidConfig(format!(
                "unknown attack variant `{s}` (expected exact or topk:K with K >= 1)"
            ))),
        }
    }
}

impl std::fmt::Display for AttackVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackVariant::Exact => f.write_str("exact"),
            AttackVariant::TopK(k) => write!(f, "topk:{k}"),
        }
    }
}

/// Reconstruction of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub sample_id: usize,
    pub predicted: CandidateConfiguration,
    /// Distance of the nearest candidate.
    pub distance: f64,
    pub candidates_evaluated: usize,
    pub elapsed_secs: f64,
}

/// Distances of every candidate in `L` to one observed gradient.
#[derive(Debug, Clone)]
pub struct CandidateDistances {
    pub distances: Vec<f64>,
}

impl CandidateDistances {
    /// Lowest-index argmin.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, &d) in self.distances.iter().enumerate() {
            if d < self.distances[best] {
                best = i;
            }
        }
        best
    }

    /// Indices of the `k` nearest candidates, ordered by (distance, index).
    pub fn nearest(&self, k: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.distances.len()).collect();
        let by = |a: &usize, b: &usize| self.distances[*a].total_cmp(&self.distances[*b]).then(a.cmp(b));
        let k = k.min(order.len());
        if k < order.len() {
            order.select_nth_unstable_by(k, by);
            order.truncate(k);
        }
        order.sort_unstable_by(by);
        order
    }

    /// Prediction under `variant` and the nearest candidate's distance.
    pub fn predict(&self, space: &ConfigurationSpace, variant: AttackVariant) -> (CandidateConfiguration, f64) {
        let best = self.argmin();
        let predicted = match variant {
            AttackVariant::Exact | AttackVariant::TopK(1) => space.configuration(best),
            AttackVariant::TopK(k) => {
                let ranked: Vec<CandidateConfiguration> =
                    self.nearest(k).into_iter().map(|i| space.configuration(i)).collect();
                majority_vote(&ranked, space.cardinalities())
            }
        };
        (predicted, self.distances[best])
    }
}

/// Per-position mode over `ranked` (nearest first); a tie goes to the value
/// held by the nearest of the tied candidates.
pub fn majority_vote(ranked: &[CandidateConfiguration], cardinalities: &[usize]) -> CandidateConfiguration {
    assert!(!ranked.is_empty(), "vote over no candidates");
    let vote = |get: &dyn Fn(&CandidateConfiguration) -> u32, card: usize| -> u32 {
        let mut counts = vec![0usize; card];
        for c in ranked {
            counts[get(c) as usize] += 1;
        }
        let top = *counts.iter().max().expect("non-empty");
        ranked
            .iter()
            .map(get)
            .find(|&v| counts[v as usize] == top)
            .expect("some candidate holds the top count")
    };
    let features = cardinalities
        .iter()
        .enumerate()
        .map(|(j, &card)| vote(&|c: &CandidateConfiguration| c.features[j], card))
        .collect();
    let label = vote(&|c: &CandidateConfiguration| c.label as u32, 2) as u8;
    CandidateConfiguration { features, label }
}

/// Recomputes candidate cut gradients for one client-model snapshot.
///
/// The first head layer's response to each private category is precomputed,
/// and since the label only enters backprop through the scalar `p − y`, one
/// forward/backward pass per feature combination yields the gradients of both
/// labels: `∂L/∂a_c = (p − y) · ∂logit/∂a_c`.
pub struct GradientMatcher<'a> {
    client: &'a ClientModel,
    space: &'a ConfigurationSpace,
    /// Per private feature: `cardinality × h1` first-layer contributions.
    contributions: Vec<Vec<f64>>,
}

impl<'a> GradientMatcher<'a> {
    pub fn new(client: &'a ClientModel, space: &'a ConfigurationSpace) -> Result<Self> {
        if client.embeddings().cardinalities() != space.cardinalities() {
            return Err(Error::Schema(
                "client model embeddings do not match the configuration space".into(),
            ));
        }
        if space.is_empty() {
            return Err(Error::EmptyInput("configuration space"));
        }
        let first = first_layer(client);
        let h1 = first.out_dim;
        let mut offset = client.cut_width();
        let mut contributions = Vec::with_capacity(space.cardinalities().len());
        for table in client.embeddings().tables() {
            let mut c = vec![0.0; table.rows * h1];
            for r in 0..table.rows {
                let row = table.row(r);
                for o in 0..h1 {
                    let w = &first.row(o)[offset..offset + table.dim];
                    c[r * h1 + o] = w.iter().zip(row).map(|(a, b)| a * b).sum();
                }
            }
            contributions.push(c);
            offset += table.dim;
        }
        Ok(Self {
            client,
            space,
            contributions,
        })
    }

    pub fn space(&self) -> &ConfigurationSpace {
        self.space
    }

    /// Distance of every candidate's cut gradient to `observed`.
    pub fn distances(&self, a_c: &CutActivation, observed: &CutGradient) -> Result<CandidateDistances> {
        let d = self.client.cut_width();
        for len in [a_c.len(), observed.len()] {
            if len != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: len,
                    context: "attack input width",
                });
            }
        }
        let layers = self.client.head().layers();
        let first = &layers[0];
        let h1 = first.out_dim;
        let base: Vec<f64> = (0..h1)
            .map(|o| first.bias[o] + crate::nn::linalg::dot(&first.row(o)[..d], a_c.as_slice()))
            .collect();

        let mut z: Vec<Vec<f64>> = layers.iter().map(|l| Vec::with_capacity(l.out_dim)).collect();
        let mut a: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.out_dim]).collect();
        let mut u = vec![0.0; d];
        let mut features = vec![0u32; self.contributions.len()];
        let mut distances = vec![0.0; self.space.len()];
        for fi in 0..self.space.feature_configs() {
            self.space.decode_features(fi, &mut features);
            z[0].clear();
            z[0].extend_from_slice(&base);
            for (c, &v) in self.contributions.iter().zip(&features) {
                for (zo, co) in z[0].iter_mut().zip(&c[v as usize * h1..(v as usize + 1) * h1]) {
                    *zo += co;
                }
            }
            let p = forward_from_first(layers, &mut z, &mut a);
            logit_gradient(layers, &z, &a, d, &mut u);
            for y in 0..2u8 {
                let scale = p - y as f64;
                let dist: f64 = u
                    .iter()
                    .zip(observed.as_slice())
                    .map(|(ui, gi)| {
                        let e = scale * ui - gi;
                        e * e
                    })
                    .sum::<f64>()
                    .sqrt();
                distances[fi * 2 + y as usize] = dist;
            }
        }
        Ok(CandidateDistances { distances })
    }

    pub fn attack(
        &self,
        sample_id: usize,
        a_c: &CutActivation,
        observed: &CutGradient,
        variant: AttackVariant,
    ) -> Result<AttackOutcome> {
        check_k(variant, self.space)?;
        let start = Instant::now();
        let dists = self.distances(a_c, observed)?;
        let (predicted, distance) = dists.predict(self.space, variant);
        Ok(AttackOutcome {
            sample_id,
            predicted,
            distance,
            candidates_evaluated: dists.distances.len(),
            elapsed_secs: start.elapsed().as_secs_f64(),
        })
    }

    /// Attacks every observation, in parallel, returning one outcome list per
    /// variant; the distance table of each sample is computed once.
    pub fn attack_many(
        &self,
        observations: &[(usize, CutActivation, CutGradient)],
        variants: &[AttackVariant],
    ) -> Result<Vec<Vec<AttackOutcome>>> {
        for &v in variants {
            check_k(v, self.space)?;
        }
        let per_sample: Vec<Vec<AttackOutcome>> = observations
            .par_iter()
            .map(|(id, a_c, g)| {
                let start = Instant::now();
                let dists = self.distances(a_c, g)?;
                let elapsed = start.elapsed().as_secs_f64();
                Ok(variants
                    .iter()
                    .map(|&v| {
                        let (predicted, distance) = dists.predict(self.space, v);
                        AttackOutcome {
                            sample_id: *id,
                            predicted,
                            distance,
                            candidates_evaluated: dists.distances.len(),
                            elapsed_secs: elapsed,
                        }
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        let mut by_variant = vec![Vec::with_capacity(observations.len()); variants.len()];
        for outcomes in per_sample {
            for (slot, o) in by_variant.iter_mut().zip(outcomes) {
                slot.push(o);
            }
        }
        Ok(by_variant)
    }
}

fn check_k(variant: AttackVariant, space: &ConfigurationSpace) -> Result<()> {
    let k = variant.k();
    if k == 0 || k > space.len() {
        return Err(Error::InvalidConfig(format!(
            "top-k needs 1 <= k <= {}, got {k}",
            space.len()
        )));
    }
    Ok(())
}

fn first_layer(client: &ClientModel) -> &Dense {
    &client.head().layers()[0]
}

/// Completes the head forward pass given the first layer's pre-activation;
/// returns the output probability.
fn forward_from_first(layers: &[Dense], z: &mut [Vec<f64>], a: &mut [Vec<f64>]) -> f64 {
    for i in 0..layers.len() {
        if i > 0 {
            layers[i].pre_activation(&a[i - 1], &mut z[i]);
        }
        let act = layers[i].activation;
        for (ai, &zi) in a[i].iter_mut().zip(&z[i]) {
            *ai = act.apply(zi);
        }
    }
    sigmoid(z[layers.len() - 1][0])
}

/// `∂logit/∂a_c` into `u`.
fn logit_gradient(layers: &[Dense], z: &[Vec<f64>], a: &[Vec<f64>], d: usize, u: &mut [f64]) {
    let n = layers.len();
    let mut delta = vec![1.0];
    for i in (1..n).rev() {
        let mut dx = vec![0.0; layers[i].in_dim];
        layers[i].backprop_input(&delta, &mut dx);
        let act = layers[i - 1].activation;
        for ((g, &zi), &ai) in dx.iter_mut().zip(&z[i - 1]).zip(&a[i - 1]) {
            *g *= act.derivative(zi, ai);
        }
        delta = dx;
    }
    u.fill(0.0);
    for (o, &dv) in delta.iter().enumerate() {
        if dv != 0.0 {
            axpy(dv, &layers[0].row(o)[..d], u);
        }
    }
}

/// Algorithm-level reference: the full client backward pass for every
/// candidate, no shortcuts. Slow; used to validate [`GradientMatcher`].
pub fn reference_distances(
    client: &ClientModel,
    space: &ConfigurationSpace,
    a_c: &CutActivation,
    observed: &CutGradient,
) -> Result<CandidateDistances> {
    let distances = space
        .iter()
        .map(|c| {
            let g = client.cut_gradient(a_c, &c.features, c.label)?;
            Ok(l2_distance(g.as_slice(), observed.as_slice()))
        })
        .collect::<Result<Vec<_>>>()?;
    if distances.is_empty() {
        return Err(Error::EmptyInput("configuration space"));
    }
    Ok(CandidateDistances { distances })
}

/// Argmin over `L` of `‖∂L_i/∂a_c − observed‖₂`, lowest index on ties.
pub fn exact_attack(
    client: &ClientModel,
    space: &ConfigurationSpace,
    a_c: &CutActivation,
    observed: &CutGradient,
) -> Result<AttackOutcome> {
    GradientMatcher::new(client, space)?.attack(0, a_c, observed, AttackVariant::Exact)
}

/// Per-feature majority vote over the `k` nearest candidates.
pub fn exact_attack_topk(
    client: &ClientModel,
    space: &ConfigurationSpace,
    a_c: &CutActivation,
    observed: &CutGradient,
    k: usize,
) -> Result<AttackOutcome> {
    GradientMatcher::new(client, space)?.attack(0, a_c, observed, AttackVariant::TopK(k))
}
