//! Deterministic synthetic datasets: Gaussian blobs and multi-harmonic signals.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dataset::{LabeledDataset, Split};
use crate::error::{PteError, Result};

/// Per-class test count for a stratified 80/20 split; both sides keep at least one sample.
fn test_count(n_per_class: usize) -> usize {
    ((n_per_class as f64 * 0.2).round() as usize).clamp(1, n_per_class - 1)
}

/// Assembles per-class sample lists into shuffled train/test datasets.
fn stratified(
    shape: Vec<usize>,
    per_class: Vec<Vec<Vec<f64>>>,
    classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, samples) in per_class.into_iter().enumerate() {
        let n_test = test_count(samples.len());
        let n_train = samples.len() - n_test;
        for (i, s) in samples.into_iter().enumerate() {
            if i < n_train {
                train.push((s, k));
            } else {
                test.push((s, k));
            }
        }
    }
    train.shuffle(rng);
    test.shuffle(rng);
    let build = |items: Vec<(Vec<f64>, usize)>, split| {
        let labels = items.iter().map(|(_, y)| *y).collect();
        let inputs = items.into_iter().flat_map(|(x, _)| x).collect();
        LabeledDataset::new(shape.clone(), inputs, labels, classes, split)
    };
    Ok((build(train, Split::Train)?, build(test, Split::Test)?))
}

/// Class means on a circle in the first two coordinates, adjacent means exactly
/// `separation` apart (all other pairs farther).
pub fn blob_means(classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let radius = separation / (2.0 * (PI / classes as f64).sin());
    (0..classes)
        .map(|k| {
            let angle = 2.0 * PI * k as f64 / classes as f64;
            let mut m = vec![0.0; dim];
            m[0] = radius * angle.cos();
            m[1] = radius * angle.sin();
            m
        })
        .collect()
}

/// Unit-covariance Gaussian clusters, one per class, split 80/20 per class.
pub fn generate_blobs(
    classes: usize,
    n_per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if classes < 2 || n_per_class < 2 || dim < 2 || !(separation > 0.0) || !separation.is_finite() {
        return Err(PteError::Domain(format!(
            "blobs need K >= 2, n_per_class >= 2, dim >= 2, separation > 0; got K={classes}, n={n_per_class}, dim={dim}, sep={separation}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = blob_means(classes, dim, separation);
    let per_class = means
        .iter()
        .map(|m| {
            (0..n_per_class)
                .map(|_| {
                    m.iter()
                        .map(|&c| c + rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect()
        })
        .collect();
    stratified(vec![dim], per_class, classes, &mut rng)
}

/// Shape and noise settings of the synthetic signal generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub classes: usize,
    pub n_per_class: usize,
    pub channels: usize,
    pub length: usize,
    /// Fundamental frequency of class 0 in cycles per sample; class `k` uses
    /// `base_frequency * (1 + k / K)`.
    pub base_frequency: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
}

impl SignalSpec {
    pub fn new(classes: usize, n_per_class: usize, channels: usize, length: usize) -> Self {
        Self {
            classes,
            n_per_class,
            channels,
            length,
            base_frequency: 0.05,
            noise: 0.3,
        }
    }

    /// Harmonic amplitudes (fundamental, 2nd, 3rd) of class `k`.
    pub fn harmonics(&self, k: usize) -> [f64; 3] {
        [
            1.0,
            0.25 + 0.5 * (k % 3) as f64,
            0.25 + 0.35 * ((k / 3) % 3) as f64,
        ]
    }

    pub fn frequency(&self, k: usize) -> f64 {
        self.base_frequency * (1.0 + k as f64 / self.classes as f64)
    }

    /// Noise-free waveform of class `k` with phase `phase`, channel-major.
    pub fn waveform(&self, k: usize, phase: f64) -> Vec<f64> {
        let amps = self.harmonics(k);
        let omega = 2.0 * PI * self.frequency(k);
        let mut out = Vec::with_capacity(self.channels * self.length);
        for c in 0..self.channels {
            let offset = c as f64 * PI / 4.0 * (1.0 + (k % 2) as f64);
            for t in 0..self.length {
                let arg = omega * t as f64 + phase;
                let v: f64 = amps
                    .iter()
                    .enumerate()
                    .map(|(h, a)| a * ((h + 1) as f64 * arg + offset).sin())
                    .sum();
                out.push(v);
            }
        }
        out
    }
}

/// Multi-harmonic signal windows, `channels x length` per sample.
pub fn generate_synthetic_signals(
    classes: usize,
    n_per_class: usize,
    channels: usize,
    length: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    generate_signals(
        &SignalSpec::new(classes, n_per_class, channels, length),
        seed,
    )
}

pub fn generate_signals(spec: &SignalSpec, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if spec.classes < 2
        || spec.n_per_class < 2
        || spec.channels < 1
        || spec.length < 64
        || !(spec.base_frequency > 0.0)
        || !(spec.noise >= 0.0)
    {
        return Err(PteError::Domain(format!(
            "signals need K >= 2, n_per_class >= 2, channels >= 1, length >= 64, positive base frequency and non-negative noise; got {spec:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_class = (0..spec.classes)
        .map(|k| {
            (0..spec.n_per_class)
                .map(|_| {
                    let phase = rng.random_range(0.0..2.0 * PI);
                    let mut w = spec.waveform(k, phase);
                    if spec.noise > 0.0 {
                        for v in &mut w {
                            *v += spec.noise * rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                    w
                })
                .collect()
        })
        .collect();
    stratified(
        vec![spec.channels, spec.length],
        per_class,
        spec.classes,
        &mut rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_stratified() {
        let a = generate_blobs(2, 2, 2, 6.0, 7).unwrap();
        let b = generate_blobs(2, 2, 2, 6.0, 7).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.0.class_counts(), vec![1, 1]);
        assert_eq!(a.1.class_counts(), vec![1, 1]);

        let (train, test) = generate_blobs(6, 200, 2, 6.0, 0).unwrap();
        assert_eq!(train.class_counts(), vec![160; 6]);
        assert_eq!(test.class_counts(), vec![40; 6]);
        assert_ne!(generate_blobs(6, 200, 2, 6.0, 1).unwrap().0, train);
    }

    #[test]
    fn blob_means_respect_separation() {
        for k in [2, 3, 6, 10] {
            let means = blob_means(k, 3, 6.0);
            for i in 0..k {
                for j in i + 1..k {
                    let d: f64 = means[i]
                        .iter()
                        .zip(&means[j])
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    assert!(d >= 6.0 - 1e-9, "K={k} pair ({i},{j}) at {d}");
                }
            }
        }
    }

    #[test]
    fn generator_parameter_errors() {
        assert!(generate_blobs(1, 10, 2, 1.0, 0).is_err());
        assert!(generate_blobs(3, 1, 2, 1.0, 0).is_err());
        assert!(generate_blobs(3, 10, 1, 1.0, 0).is_err());
        assert!(generate_blobs(3, 10, 2, 0.0, 0).is_err());
        assert!(generate_synthetic_signals(3, 10, 0, 128, 0).is_err());
        assert!(generate_synthetic_signals(3, 10, 2, 63, 0).is_err());
    }

    #[test]
    fn signal_shapes_match_industrial_layouts() {
        let (train, test) = generate_synthetic_signals(10, 10, 2, 1024, 0).unwrap();
        assert_eq!(train.shape(), &[2, 1024]);
        assert_eq!(train.classes(), 10);
        assert_eq!(train.len() + test.len(), 100);
        let (train, _) = generate_synthetic_signals(7, 5, 9, 1024, 0).unwrap();
        assert_eq!(train.shape(), &[9, 1024]);
        assert_eq!(train.classes(), 7);
    }

    #[test]
    fn noiseless_samples_of_one_class_differ_only_in_phase() {
        let mut spec = SignalSpec::new(4, 6, 2, 256);
        spec.noise = 0.0;
        let (train, _) = generate_signals(&spec, 3).unwrap();
        let idx: Vec<usize> = (0..train.len()).filter(|&i| train.label(i) == 2).collect();
        let (a, b) = (train.input(idx[0]), train.input(idx[1]));
        assert_ne!(a, b);
        // recover b's phase by scanning; the class waveform at that phase reproduces b
        let best = (0..20_000)
            .map(|s| {
                let phase = 2.0 * PI * s as f64 / 20_000.0;
                let w = spec.waveform(2, phase);
                let err = w
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                (err, phase)
            })
            .fold(
                (f64::INFINITY, 0.0),
                |acc, v| if v.0 < acc.0 { v } else { acc },
            );
        assert!(best.0 < 2e-3, "closest phase error {}", best.0);
        let w = spec.waveform(2, best.1);
        let err_a = w
            .iter()
            .zip(a)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(err_a > 1e-2);
    }
}
