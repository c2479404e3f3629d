//! Differentiable classifiers, reference architectures and supervised training.

mod arch;
mod checkpoint;
mod network;
mod prob;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

pub use arch::Architecture;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use prob::{argmax, cross_entropy, kl_divergence, softmax_temperature};
pub(crate) use prob::{cross_entropy_with_grad, log_softmax, softmax_unchecked};
pub use train::{train_supervised, TrainConfig, TrainOutcome};

use crate::data::LabeledDataset;
use crate::error::{PteError, Result};
use network::{Layer, ParamSpec};

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub(crate) Vec<Vec<f64>>);

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn scale(&mut self, s: f64) {
        for g in &mut self.0 {
            for v in g {
                *v *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flat_map(|g| g.iter()).all(|v| v.is_finite())
    }
}

/// A feed-forward classifier producing `K` logits per input.
///
/// Frozen classifiers (teachers) reject every parameter update.
#[derive(Debug, Clone)]
pub struct Classifier {
    arch: Architecture,
    classes: usize,
    seed: u64,
    layers: Vec<Layer>,
    specs: Vec<ParamSpec>,
    params: Vec<Vec<f64>>,
    frozen: bool,
    train_config_hash: Option<String>,
}

/// Builds an untrained reference classifier with He-normal weights and zero
/// biases. Identical `(arch, classes, seed)` give bit-identical parameters.
pub fn build_reference_model(arch: &Architecture, classes: usize, seed: u64) -> Result<Classifier> {
    if classes < 2 {
        return Err(PteError::Domain(format!(
            "a classifier needs at least 2 classes, got {classes}"
        )));
    }
    arch.validate()?;
    let (layers, specs) = network::layout(arch, classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = specs
        .iter()
        .map(|s| {
            let n: usize = s.shape.iter().product();
            if s.fan_in == 0 {
                vec![0.0; n]
            } else {
                let normal = Normal::new(0.0, (2.0 / s.fan_in as f64).sqrt()).unwrap();
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            }
        })
        .collect();
    Ok(Classifier {
        arch: arch.clone(),
        classes,
        seed,
        layers,
        specs,
        params,
        frozen: false,
        train_config_hash: None,
    })
}

impl Classifier {
    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn train_config_hash(&self) -> Option<&str> {
        self.train_config_hash.as_deref()
    }

    pub(crate) fn set_train_config_hash(&mut self, hash: String) {
        self.train_config_hash = Some(hash);
    }

    pub fn input_shape(&self) -> Vec<usize> {
        self.arch.input_shape()
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape().iter().product()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    /// `(name, shape, values)` for every parameter array, in layer order.
    pub fn parameters(&self) -> impl Iterator<Item = (&str, &[usize], &[f64])> {
        self.specs
            .iter()
            .zip(&self.params)
            .map(|(s, p)| (s.name.as_str(), s.shape.as_slice(), p.as_slice()))
    }

    /// Frozen copy with identical outputs.
    pub fn snapshot(&self) -> Classifier {
        let mut c = self.clone();
        c.frozen = true;
        c
    }

    /// Unfrozen copy, the starting point for an edited model.
    pub fn thawed(&self) -> Classifier {
        let mut c = self.clone();
        c.frozen = false;
        c
    }

    /// SHA-256 over parameter names, shapes and exact `f64` bytes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, shape, values) in self.parameters() {
            h.update(name.as_bytes());
            for d in shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in values {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(PteError::Data(format!(
                "input has {} values, {} expects shape {:?}",
                x.len(),
                self.arch,
                self.input_shape()
            )));
        }
        Ok(())
    }

    pub(crate) fn tape(&self, x: &[f64]) -> network::Tape {
        network::forward(&self.layers, &self.params, x)
    }

    /// Logits for one input.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let tape = self.tape(x);
        Ok(tape.logits().to_vec())
    }

    /// Logit rows for a flat batch of inputs.
    pub fn forward(&self, batch: &[f64]) -> Result<Vec<Vec<f64>>> {
        let d = self.input_dim();
        if batch.is_empty() || !batch.len().is_multiple_of(d) {
            return Err(PteError::Data(format!(
                "batch of {} values is not a whole number of {:?} inputs",
                batch.len(),
                self.input_shape()
            )));
        }
        Ok(batch
            .chunks_exact(d)
            .map(|x| self.tape(x).logits().to_vec())
            .collect())
    }

    /// Logit rows for every sample of `data`.
    pub fn forward_dataset(&self, data: &LabeledDataset) -> Result<Vec<Vec<f64>>> {
        self.check_dataset(data)?;
        Ok(data
            .iter()
            .map(|(x, _)| self.tape(x).logits().to_vec())
            .collect())
    }

    pub(crate) fn check_dataset(&self, data: &LabeledDataset) -> Result<()> {
        if data.shape() != self.input_shape().as_slice() {
            return Err(PteError::Data(format!(
                "dataset samples have shape {:?}, {} expects {:?}",
                data.shape(),
                self.arch,
                self.input_shape()
            )));
        }
        if data.classes() != self.classes {
            return Err(PteError::Data(format!(
                "dataset has {} classes, model has {}",
                data.classes(),
                self.classes
            )));
        }
        Ok(())
    }

    /// Activations feeding the final dense layer (the learned feature space).
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.tape(x).penultimate().to_vec())
    }

    /// Arg-max label per input of a flat batch; ties go to the lowest class.
    pub fn predict(&self, batch: &[f64]) -> Result<Vec<usize>> {
        Ok(self.forward(batch)?.iter().map(|z| argmax(z)).collect())
    }

    pub fn predict_dataset(&self, data: &LabeledDataset) -> Result<Vec<usize>> {
        Ok(self
            .forward_dataset(data)?
            .iter()
            .map(|z| argmax(z))
            .collect())
    }

    /// Gradient of the cross-entropy at `(x, y)` with respect to the input.
    pub fn input_gradient(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        self.input_gradient_batch(x, &[y]).map(|mut g| g.remove(0))
    }

    /// Per-sample input gradients for a flat batch. Non-finite gradients are
    /// reported with the offending sample index.
    pub fn input_gradient_batch(&self, batch: &[f64], labels: &[usize]) -> Result<Vec<Vec<f64>>> {
        let d = self.input_dim();
        if batch.len() != d * labels.len() || labels.is_empty() {
            return Err(PteError::Data(format!(
                "{} values for {} labels with input shape {:?}",
                batch.len(),
                labels.len(),
                self.input_shape()
            )));
        }
        batch
            .chunks_exact(d)
            .zip(labels)
            .enumerate()
            .map(|(i, (x, &y))| {
                if y >= self.classes {
                    return Err(PteError::Data(format!(
                        "sample {i}: label {y} outside [0, {})",
                        self.classes
                    )));
                }
                let (_, g) = self.loss_and_input_grad(x, |z| cross_entropy_with_grad(z, y));
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(PteError::numerical(
                        format!("sample {i}"),
                        "non-finite input gradient",
                    ));
                }
                Ok(g)
            })
            .collect()
    }

    /// Runs `x` forward, lets `head` turn the logits into `(loss, d loss / d logits)`
    /// and returns the loss with its gradient with respect to `x`.
    pub(crate) fn loss_and_input_grad(
        &self,
        x: &[f64],
        head: impl FnOnce(&[f64]) -> (f64, Vec<f64>),
    ) -> (f64, Vec<f64>) {
        let tape = self.tape(x);
        let (loss, d_logits) = head(tape.logits());
        let g = network::backward(&self.layers, &self.params, &tape, &d_logits, None);
        (loss, g)
    }

    pub(crate) fn zero_grads(&self) -> Gradients {
        Gradients(self.params.iter().map(|p| vec![0.0; p.len()]).collect())
    }

    /// Like [`Self::loss_and_input_grad`] but accumulates parameter gradients
    /// into `grads` instead of returning the input gradient.
    pub(crate) fn accumulate(
        &self,
        x: &[f64],
        grads: &mut Gradients,
        head: impl FnOnce(&[f64]) -> (f64, Vec<f64>),
    ) -> f64 {
        let tape = self.tape(x);
        let (loss, d_logits) = head(tape.logits());
        network::backward(
            &self.layers,
            &self.params,
            &tape,
            &d_logits,
            Some(&mut grads.0),
        );
        loss
    }

    /// `w <- w - lr * grads`.
    pub(crate) fn apply_gradients(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if self.frozen {
            return Err(PteError::Contract(
                "attempted to update a frozen classifier".into(),
            ));
        }
        if lr == 0.0 {
            return Ok(());
        }
        for (p, g) in self.params.iter_mut().zip(&grads.0) {
            for (w, d) in p.iter_mut().zip(g) {
                *w -= lr * d;
            }
        }
        Ok(())
    }

    pub(crate) fn squared_norm(&self) -> f64 {
        self.params.iter().flatten().map(|w| w * w).sum()
    }

    pub(crate) fn add_weight_decay(&self, grads: &mut Gradients, lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        for (g, p) in grads.0.iter_mut().zip(&self.params) {
            for (gi, w) in g.iter_mut().zip(p) {
                *gi += 2.0 * lambda * w;
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn params_mut(&mut self) -> &mut Vec<Vec<f64>> {
        &mut self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_shapes_and_determinism() {
        let m = build_reference_model(&Architecture::mlp(&[2, 64, 64]), 6, 0).unwrap();
        assert_eq!(m.logits(&[0.3, -0.2]).unwrap().len(), 6);
        assert!(!m.is_frozen());
        let again = build_reference_model(&Architecture::mlp(&[2, 64, 64]), 6, 0).unwrap();
        assert_eq!(m.checksum(), again.checksum());
        let other = build_reference_model(&Architecture::mlp(&[2, 64, 64]), 6, 1).unwrap();
        assert_ne!(m.checksum(), other.checksum());

        let cnn = build_reference_model(&Architecture::cnn1d(2, 1024), 10, 1).unwrap();
        let z = cnn.logits(&vec![0.1; 2 * 1024]).unwrap();
        assert_eq!(z.len(), 10);
        assert!(z.iter().all(|v| v.is_finite()));

        let img = build_reference_model(&Architecture::cnn2d(3, 16, 16), 4, 2).unwrap();
        assert_eq!(img.logits(&vec![0.5; 3 * 16 * 16]).unwrap().len(), 4);
    }

    #[test]
    fn too_few_classes_is_a_domain_error() {
        for seed in [0, 5] {
            assert!(matches!(
                build_reference_model(&Architecture::mlp(&[2, 64, 64]), 1, seed),
                Err(PteError::Domain(_))
            ));
        }
    }

    #[test]
    fn snapshot_is_frozen_and_equivalent() {
        let m = build_reference_model(&Architecture::mlp(&[3, 8]), 4, 9).unwrap();
        let s = m.snapshot();
        assert!(s.is_frozen());
        let x = [0.2, -1.0, 0.7];
        assert_eq!(m.logits(&x).unwrap(), s.logits(&x).unwrap());
        let mut frozen = s.clone();
        let g = frozen.zero_grads();
        assert!(matches!(
            frozen.apply_gradients(&g, 0.1),
            Err(PteError::Contract(_))
        ));
        assert_eq!(frozen.checksum(), m.checksum());
    }

    #[test]
    fn predict_shapes_and_errors() {
        let m = build_reference_model(&Architecture::mlp(&[2, 4]), 3, 0).unwrap();
        assert_eq!(m.predict(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap().len(), 3);
        assert!(matches!(
            m.predict(&[0.0, 1.0, 2.0]),
            Err(PteError::Data(_))
        ));
    }

    #[test]
    fn zero_weight_model_has_zero_input_gradient() {
        let mut m = build_reference_model(&Architecture::mlp(&[3, 5]), 4, 0).unwrap();
        for p in m.params_mut() {
            p.iter_mut().for_each(|w| *w = 0.0);
        }
        let g = m.input_gradient(&[1.0, -2.0, 0.5], 2).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }
}
