//! Mitigations: per-sample clipping and Gaussian noising of the cut gradient,
//! and randomized response on labels.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::linalg::l2_norm;
use crate::nn::CutGradient;
use crate::rng::Rng;

/// Number of norms collected before the median estimate switches from the
/// exact buffer median to the streaming update.
pub const WARMUP_SIZE: usize = 1024;
/// Step size of the streaming median update.
pub const MEDIAN_STEP: f64 = 0.01;
/// Clip norm as a fraction of the running median norm.
pub const MEDIAN_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// `C = 0.5 × running median of per-sample norms`.
    AdaptiveMedian,
    /// Constant clip norm; `f64::INFINITY` disables clipping.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    pub noise_multiplier: f64,
    pub clip: ClipMode,
    /// Nominal δ, echoed into reports only.
    pub delta: f64,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            noise_multiplier: 0.01,
            clip: ClipMode::AdaptiveMedian,
            delta: 1e-5,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.noise_multiplier.is_finite() || self.noise_multiplier < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "noise multiplier must be finite and >= 0, got {}",
                self.noise_multiplier
            )));
        }
        if let ClipMode::Fixed(c) = self.clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::InvalidConfig(format!("fixed clip norm must be > 0, got {c}")));
            }
        }
        if !(self.delta >= 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "delta must lie in [0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Streaming estimate of the median per-sample cut-gradient norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipState {
    mode: ClipMode,
    warmup: Vec<f64>,
    median: f64,
    observed: u64,
}

impl ClipState {
    pub fn new(mode: ClipMode) -> Self {
        Self {
            mode,
            warmup: Vec::new(),
            median: 0.0,
            observed: 0,
        }
    }

    pub fn mode(&self) -> ClipMode {
        self.mode
    }

    pub fn observed(&self) -> u64 {
        self.observed
    }

    pub fn median_estimate(&self) -> f64 {
        self.median
    }

    pub fn is_warmed_up(&self) -> bool {
        match self.mode {
            ClipMode::Fixed(_) => true,
            ClipMode::AdaptiveMedian => self.observed as usize >= WARMUP_SIZE,
        }
    }

    /// Current clip norm.
    pub fn clip_norm(&self) -> f64 {
        match self.mode {
            ClipMode::Fixed(c) => c,
            ClipMode::AdaptiveMedian => MEDIAN_FRACTION * self.median,
        }
    }

    /// Feeds one per-sample norm into the estimator. During warm-up the
    /// estimate is the exact median of everything seen so far.
    pub fn observe(&mut self, norm: f64) {
        self.observed += 1;
        if self.mode != ClipMode::AdaptiveMedian {
            return;
        }
        if self.warmup.len() < WARMUP_SIZE {
            self.warmup.push(norm);
            self.median = median(&self.warmup);
            if self.warmup.len() == WARMUP_SIZE {
                self.warmup = Vec::new();
            }
            return;
        }
        let below = if norm <= self.median { 1.0 } else { 0.0 };
        self.median *= (-MEDIAN_STEP * (below - 0.5)).exp();
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `g · min(1, C/‖g‖) + N(0, (σC)² I)`, where `C` is taken after `‖g‖` has
/// been fed to the estimator. No noise is drawn when `σC == 0`.
pub fn clip_and_noise(g: &CutGradient, state: &mut ClipState, sigma: f64, rng: &mut Rng) -> Result<CutGradient> {
    let norm = l2_norm(g.as_slice());
    state.observe(norm);
    let c = state.clip_norm();
    let scale = if norm > c { c / norm } else { 1.0 };
    let mut out: Vec<f64> = if scale == 1.0 {
        g.as_slice().to_vec()
    } else {
        g.as_slice().iter().map(|v| v * scale).collect()
    };
    let std = sigma * c;
    if std > 0.0 {
        if !std.is_finite() {
            return Err(Error::InvalidConfig("noise needs a finite clip norm".into()));
        }
        let noise = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for v in &mut out {
            *v += noise.sample(rng);
        }
    }
    CutGradient::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelDpConfig {
    pub flip_probability: f64,
}

impl LabelDpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.flip_probability) {
            return Err(Error::InvalidConfig(format!(
                "flip probability must lie in [0, 0.5), got {}",
                self.flip_probability
            )));
        }
        Ok(())
    }

    /// ε of the randomized response, `None` when `p == 0` (no privacy).
    pub fn epsilon(&self) -> Option<f64> {
        label_dp_epsilon(self.flip_probability).ok()
    }
}

/// Randomized response: `1 − y` with probability `p`. Always draws once.
pub fn flip_label(y: u8, p: f64, rng: &mut Rng) -> u8 {
    if rng.random::<f64>() < p {
        1 - y
    } else {
        y
    }
}

pub fn flip_labels(labels: &[u8], p: f64, rng: &mut Rng) -> Vec<u8> {
    labels.iter().map(|&y| flip_label(y, p, rng)).collect()
}

/// `ε = ln((1 − p) / p)` for `p ∈ (0, 0.5)`.
pub fn label_dp_epsilon(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::InvalidConfig(format!("flip probability {p} outside (0, 0.5)")));
    }
    Ok(((1.0 - p) / p).ln())
}

/// `p = 1 / (e^ε + 1)`.
pub fn flip_probability_for_epsilon(epsilon: f64) -> f64 {
    1.0 / (epsilon.exp() + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn grad(v: &[f64]) -> CutGradient {
        CutGradient::new(v.to_vec()).unwrap()
    }

    #[test]
    fn inside_ball_is_unchanged() {
        let mut state = ClipState::new(ClipMode::Fixed(1.0));
        let mut rng = stream(0, Stream::CutNoise);
        let g = grad(&[0.3, -0.4]);
        assert_eq!(clip_and_noise(&g, &mut state, 0.0, &mut rng).unwrap(), g);
    }

    #[test]
    fn twice_the_norm_is_halved() {
        let mut state = ClipState::new(ClipMode::Fixed(0.5));
        let mut rng = stream(0, Stream::CutNoise);
        let out = clip_and_noise(&grad(&[0.6, 0.8]), &mut state, 0.0, &mut rng).unwrap();
        assert!((l2_norm(out.as_slice()) - 0.5).abs() < 1e-15);
        assert!((out.as_slice()[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn infinite_clip_without_noise_is_identity() {
        let mut state = ClipState::new(ClipMode::Fixed(f64::INFINITY));
        let mut rng = stream(0, Stream::CutNoise);
        let g = grad(&[1e6, -3.0, 0.0]);
        assert_eq!(clip_and_noise(&g, &mut state, 0.0, &mut rng).unwrap(), g);
    }

    #[test]
    fn noise_std_matches_sigma_times_clip() {
        let mut state = ClipState::new(ClipMode::Fixed(1.0));
        let mut rng = stream(11, Stream::CutNoise);
        let zero = CutGradient::zeros(4);
        let n = 100_000;
        let mut sums = [0.0f64; 4];
        let mut sq = [0.0f64; 4];
        for _ in 0..n {
            let out = clip_and_noise(&zero, &mut state, 0.01, &mut rng).unwrap();
            for (j, v) in out.as_slice().iter().enumerate() {
                sums[j] += v;
                sq[j] += v * v;
            }
        }
        for j in 0..4 {
            let mean = sums[j] / n as f64;
            let std = (sq[j] / n as f64 - mean * mean).sqrt();
            assert!((std / 0.01 - 1.0).abs() < 0.05, "coordinate {j}: std {std}");
        }
    }

    #[test]
    fn warmup_uses_exact_median() {
        let mut state = ClipState::new(ClipMode::AdaptiveMedian);
        for v in [5.0, 1.0, 3.0] {
            state.observe(v);
        }
        assert_eq!(state.median_estimate(), 3.0);
        assert_eq!(state.clip_norm(), 1.5);
        state.observe(4.0);
        assert_eq!(state.median_estimate(), 3.5);
        assert!(!state.is_warmed_up());
    }

    #[test]
    fn streaming_median_tracks_distribution() {
        let mut state = ClipState::new(ClipMode::AdaptiveMedian);
        let mut rng = stream(3, Stream::Sampling);
        // warm up on uniform(0, 1), then shift to uniform(0, 4): median 2
        for _ in 0..WARMUP_SIZE {
            state.observe(rng.random::<f64>());
        }
        assert!(state.is_warmed_up());
        assert!((state.median_estimate() - 0.5).abs() < 0.05);
        for _ in 0..50_000 {
            state.observe(4.0 * rng.random::<f64>());
        }
        assert!(
            (state.median_estimate() - 2.0).abs() < 0.15,
            "{}",
            state.median_estimate()
        );
        assert!(state.clip_norm() > 0.0);
    }

    #[test]
    fn zero_flip_probability_keeps_labels() {
        let mut rng = stream(1, Stream::LabelFlip);
        for y in [0u8, 1].iter().cycle().take(1000) {
            assert_eq!(flip_label(*y, 0.0, &mut rng), *y);
        }
    }

    fn flip_rate(p: f64, n: usize, seed: u64) -> f64 {
        let mut rng = stream(seed, Stream::LabelFlip);
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let flipped = flip_labels(&labels, p, &mut rng);
        labels.iter().zip(&flipped).filter(|(a, b)| a != b).count() as f64 / n as f64
    }

    #[test]
    fn flip_rates() {
        assert!((flip_rate(0.1, 100_000, 5) - 0.1).abs() < 0.005);
        assert!((flip_rate(0.5 - 1e-9, 100_000, 6) - 0.5).abs() < 0.005);
    }

    #[test]
    fn double_flip_rate() {
        let p = 0.2;
        let n = 100_000;
        let mut r1 = stream(7, Stream::LabelFlip);
        let mut r2 = stream(8, Stream::LabelFlip);
        let labels = vec![0u8; n];
        let once = flip_labels(&labels, p, &mut r1);
        let twice = flip_labels(&once, p, &mut r2);
        let rate = twice.iter().filter(|&&y| y == 1).count() as f64 / n as f64;
        assert!((rate - 2.0 * p * (1.0 - p)).abs() < 0.005, "{rate}");
    }

    #[test]
    fn epsilon_values() {
        assert!((label_dp_epsilon(0.1).unwrap() - 2.197_224_577).abs() < 1e-9);
        assert!((label_dp_epsilon(0.01).unwrap() - 4.595_119_850).abs() < 1e-9);
        assert!(label_dp_epsilon(0.5 - 1e-12).unwrap() < 1e-10);
        assert!(label_dp_epsilon(0.0).is_err());
        assert!(label_dp_epsilon(0.5).is_err());
        for i in 1..500 {
            let p = i as f64 * 0.001;
            let back = flip_probability_for_epsilon(label_dp_epsilon(p).unwrap());
            assert!((back - p).abs() < 1e-12, "{p}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(DpConfig::default().validate().is_ok());
        let bad = DpConfig {
            clip: ClipMode::Fixed(0.0),
            ..DpConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(LabelDpConfig { flip_probability: 0.5 }.validate().is_err());
        assert!(LabelDpConfig { flip_probability: 0.0 }.validate().is_ok());
    }

    proptest! {
        #[test]
        fn clipped_norm_never_exceeds_bound(
            v in proptest::collection::vec(-100.0f64..100.0, 1..16),
            c in 0.01f64..10.0,
        ) {
            let mut state = ClipState::new(ClipMode::Fixed(c));
            let mut rng = stream(0, Stream::CutNoise);
            let out = clip_and_noise(&grad(&v), &mut state, 0.0, &mut rng).unwrap();
            prop_assert!(l2_norm(out.as_slice()) <= c * (1.0 + 1e-12));
        }

        #[test]
        fn adaptive_clip_bound(norms in proptest::collection::vec(0.01f64..50.0, 1..200)) {
            let mut state = ClipState::new(ClipMode::AdaptiveMedian);
            let mut rng = stream(0, Stream::CutNoise);
            for n in norms {
                let out = clip_and_noise(&grad(&[n, 0.0]), &mut state, 0.0, &mut rng).unwrap();
                prop_assert!(state.clip_norm() > 0.0);
                prop_assert!(l2_norm(out.as_slice()) <= state.clip_norm() * (1.0 + 1e-12));
            }
        }
    }
}
