//! Reference unlearning methods and the shared method interface.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::editing::{pte_unlearn, EditTrace, PteConfig};
use crate::error::{PteError, Result};
use crate::model::{
    build_reference_model, cross_entropy_with_grad, train_supervised, Architecture, Classifier,
    TrainConfig,
};
use crate::probing::ProbeConfig;

fn check_no_forget_labels(
    retain: &LabeledDataset,
    forget_classes: &[usize],
    who: &str,
) -> Result<()> {
    if retain.is_empty() {
        return Err(PteError::Data(format!("{who}: retain set is empty")));
    }
    if let Some((i, y)) = retain
        .labels()
        .iter()
        .enumerate()
        .find(|(_, y)| forget_classes.contains(y))
    {
        return Err(PteError::Contract(format!(
            "{who}: retain sample {i} carries forget label {y}"
        )));
    }
    Ok(())
}

/// Trains a fresh model on the retain set only.
pub fn retrain(
    arch: &Architecture,
    classes: usize,
    retain: &LabeledDataset,
    forget_classes: &[usize],
    cfg: &TrainConfig,
    init_seed: u64,
) -> Result<Classifier> {
    check_no_forget_labels(retain, forget_classes, "retrain")?;
    let fresh = build_reference_model(arch, classes, init_seed)?;
    Ok(train_supervised(fresh, retain, cfg)?.model)
}

/// Continues cross-entropy training of the original model on the retain set.
/// Zero epochs return an unchanged copy.
pub fn finetune(
    model: &Classifier,
    retain: &LabeledDataset,
    forget_classes: &[usize],
    cfg: &TrainConfig,
) -> Result<Classifier> {
    check_no_forget_labels(retain, forget_classes, "finetune")?;
    if cfg.epochs == 0 {
        return Ok(model.thawed());
    }
    Ok(train_supervised(model.thawed(), retain, cfg)?.model)
}

/// Relabels every forget sample with a uniformly drawn non-forget class and
/// fine-tunes on the relabeled forget set.
pub fn random_label_unlearn(
    model: &Classifier,
    forget: &LabeledDataset,
    forget_classes: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Classifier> {
    let relabeled = random_relabel(forget, forget_classes, seed)?;
    Ok(train_supervised(model.thawed(), &relabeled, cfg)?.model)
}

/// Forget set with labels drawn uniformly from the classes outside `forget_classes`.
pub fn random_relabel(
    forget: &LabeledDataset,
    forget_classes: &[usize],
    seed: u64,
) -> Result<LabeledDataset> {
    if forget.is_empty() {
        return Err(PteError::Domain("forget set is empty".into()));
    }
    let allowed: Vec<usize> = (0..forget.classes())
        .filter(|c| !forget_classes.contains(c))
        .collect();
    if allowed.is_empty() {
        return Err(PteError::Domain(
            "no class outside the forget set to relabel with".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = (0..forget.len())
        .map(|_| allowed[rng.random_range(0..allowed.len())])
        .collect();
    forget.relabeled(labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentTrace {
    /// Mean forget-set cross-entropy per completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Whether the epoch losses never decreased.
    pub monotone: bool,
    /// Epoch at which the loss crossed the cap, if it did.
    pub diverged_at: Option<usize>,
}

/// SGD on the negated cross-entropy of the forget set. Stops early, keeping
/// the last finite model, once the batch loss exceeds `loss_cap`.
pub fn gradient_ascent_unlearn(
    model: &Classifier,
    forget: &LabeledDataset,
    cfg: &TrainConfig,
    loss_cap: f64,
) -> Result<(Classifier, AscentTrace)> {
    if forget.is_empty() {
        return Err(PteError::Domain("forget set is empty".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.learning_rate >= 0.0) {
        return Err(PteError::Config(
            "gradient ascent: epochs and batch size must be positive, learning rate non-negative"
                .into(),
        ));
    }
    model.check_dataset(forget)?;
    let mut student = model.thawed();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..forget.len()).collect();
    let mut epoch_losses = Vec::new();
    let mut diverged_at = None;
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = student.zero_grads();
            let mut loss = 0.0;
            for &i in batch {
                let y = forget.label(i);
                loss += student.accumulate(forget.input(i), &mut grads, |z| {
                    let (l, mut g) = cross_entropy_with_grad(z, y);
                    g.iter_mut().for_each(|v| *v = -*v);
                    (l, g)
                });
            }
            let n = batch.len() as f64;
            let loss = loss / n;
            if !loss.is_finite() || loss > loss_cap || !grads.is_finite() {
                log::warn!("gradient ascent diverged in epoch {epoch} (loss {loss})");
                diverged_at = Some(epoch);
                break 'epochs;
            }
            total += loss * n;
            grads.scale(1.0 / n);
            student.apply_gradients(&grads, cfg.learning_rate)?;
        }
        epoch_losses.push(total / forget.len() as f64);
    }
    let monotone = epoch_losses.windows(2).all(|w| w[1] >= w[0]);
    Ok((
        student,
        AscentTrace {
            epoch_losses,
            monotone,
            diverged_at,
        },
    ))
}

/// Every unlearning method the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    /// The untouched original model, for reference rows.
    Original,
    Pte,
    Retrain,
    Finetune,
    RandomLabel,
    NegativeGradient,
}

impl MethodKind {
    pub const ALL: [MethodKind; 6] = [
        MethodKind::Original,
        MethodKind::Retrain,
        MethodKind::Finetune,
        MethodKind::RandomLabel,
        MethodKind::NegativeGradient,
        MethodKind::Pte,
    ];

    /// Methods allowed to read the retain split.
    pub fn uses_retain_data(self) -> bool {
        matches!(self, MethodKind::Retrain | MethodKind::Finetune)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodKind::Original => "original",
            MethodKind::Pte => "pte",
            MethodKind::Retrain => "retrain",
            MethodKind::Finetune => "finetune",
            MethodKind::RandomLabel => "random_label",
            MethodKind::NegativeGradient => "negative_gradient",
        })
    }
}

impl FromStr for MethodKind {
    type Err = PteError;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .iter()
            .copied()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| {
                PteError::Config(format!(
                    "unknown method `{s}` (expected one of original, pte, retrain, finetune, random_label, negative_gradient)"
                ))
            })
    }
}

/// Data a method may read. Retain-free methods receive `retain: None`.
#[derive(Debug, Clone, Copy)]
pub struct PermittedData<'a> {
    pub forget: Option<&'a LabeledDataset>,
    pub retain: Option<&'a LabeledDataset>,
    pub forget_classes: &'a [usize],
}

/// Per-method settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSettings {
    pub probe: ProbeConfig,
    pub pte: PteConfig,
    /// Used by retrain, finetune, random label and negative gradient.
    pub baseline: TrainConfig,
    /// Loss ceiling for negative gradient.
    pub ascent_loss_cap: f64,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            probe: ProbeConfig::default(),
            pte: PteConfig::default(),
            baseline: TrainConfig::default(),
            ascent_loss_cap: 50.0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum MethodTrace {
    None,
    Edit(EditTrace),
    Ascent(AscentTrace),
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub model: Classifier,
    pub trace: MethodTrace,
    /// Students after each epoch (PTE with `record_epoch_models`).
    pub epoch_models: Vec<Classifier>,
}

impl MethodKind {
    /// Uniform entry point: `(original model, permitted splits, settings)` to an
    /// edited model and its trace. Requesting a split the method may not read
    /// is a contract violation.
    pub fn run<'a>(
        self,
        original: &Classifier,
        data: PermittedData<'a>,
        settings: &MethodSettings,
        seed: u64,
    ) -> Result<MethodOutcome> {
        if data.retain.is_some() && !self.uses_retain_data() {
            return Err(PteError::Contract(format!(
                "method {self} is retain-free but was handed retain data"
            )));
        }
        let need = |d: Option<&'a LabeledDataset>, what: &str| {
            d.ok_or_else(|| PteError::Contract(format!("method {self} needs the {what} set")))
        };
        let plain = |model| MethodOutcome {
            model,
            trace: MethodTrace::None,
            epoch_models: Vec::new(),
        };
        let with_seed = |cfg: &TrainConfig| TrainConfig {
            seed: seed.wrapping_add(cfg.seed),
            ..cfg.clone()
        };
        match self {
            MethodKind::Original => Ok(plain(original.thawed())),
            MethodKind::Pte => {
                let forget = need(data.forget, "forget")?;
                let probe = ProbeConfig {
                    seed: seed.wrapping_add(settings.probe.seed),
                    ..settings.probe.clone()
                };
                let pte = PteConfig {
                    seed: seed.wrapping_add(settings.pte.seed),
                    ..settings.pte.clone()
                };
                let out = pte_unlearn(original, forget, &probe, &pte)?;
                Ok(MethodOutcome {
                    model: out.model,
                    trace: MethodTrace::Edit(out.trace),
                    epoch_models: out.epoch_models,
                })
            }
            MethodKind::Retrain => {
                let retain = need(data.retain, "retain")?;
                retrain(
                    original.architecture(),
                    original.classes(),
                    retain,
                    data.forget_classes,
                    &with_seed(&settings.baseline),
                    seed,
                )
                .map(plain)
            }
            MethodKind::Finetune => {
                let retain = need(data.retain, "retain")?;
                finetune(
                    original,
                    retain,
                    data.forget_classes,
                    &with_seed(&settings.baseline),
                )
                .map(plain)
            }
            MethodKind::RandomLabel => {
                let forget = need(data.forget, "forget")?;
                random_label_unlearn(
                    original,
                    forget,
                    data.forget_classes,
                    &with_seed(&settings.baseline),
                    seed,
                )
                .map(plain)
            }
            MethodKind::NegativeGradient => {
                let forget = need(data.forget, "forget")?;
                let (model, trace) = gradient_ascent_unlearn(
                    original,
                    forget,
                    &with_seed(&settings.baseline),
                    settings.ascent_loss_cap,
                )?;
                Ok(MethodOutcome {
                    model,
                    trace: MethodTrace::Ascent(trace),
                    epoch_models: Vec::new(),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn toy(labels: Vec<usize>) -> LabeledDataset {
        let inputs = labels
            .iter()
            .flat_map(|&y| [y as f64, -(y as f64)])
            .collect();
        LabeledDataset::new(vec![2], inputs, labels, 4, Split::Train).unwrap()
    }

    #[test]
    fn retain_with_forget_label_is_a_contract_violation() {
        let arch = Architecture::mlp(&[2, 4]);
        let cfg = TrainConfig::default();
        let retain = toy(vec![1, 2, 0, 3]);
        assert!(matches!(
            retrain(&arch, 4, &retain, &[0], &cfg, 0),
            Err(PteError::Contract(_))
        ));
        let m = build_reference_model(&arch, 4, 0).unwrap();
        assert!(matches!(
            finetune(&m, &retain, &[0], &cfg),
            Err(PteError::Contract(_))
        ));
    }

    #[test]
    fn zero_epoch_finetune_is_identity() {
        let m = build_reference_model(&Architecture::mlp(&[2, 4]), 4, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = finetune(&m, &toy(vec![1, 2, 3]), &[0], &cfg).unwrap();
        assert_eq!(out.checksum(), m.checksum());
    }

    #[test]
    fn random_relabel_avoids_forget_classes_and_is_seeded() {
        let forget = toy(vec![0; 200]);
        let a = random_relabel(&forget, &[0, 2], 5).unwrap();
        assert!(a.labels().iter().all(|y| *y == 1 || *y == 3));
        assert!(a.labels().contains(&1) && a.labels().contains(&3));
        assert_eq!(a, random_relabel(&forget, &[0, 2], 5).unwrap());
        assert!(matches!(
            random_relabel(&forget, &[0, 1, 2, 3], 5),
            Err(PteError::Domain(_))
        ));
    }

    #[test]
    fn zero_rate_ascent_is_identity() {
        let m = build_reference_model(&Architecture::mlp(&[2, 4]), 4, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..Default::default()
        };
        let (out, trace) = gradient_ascent_unlearn(&m, &toy(vec![0, 0]), &cfg, 1e3).unwrap();
        assert_eq!(out.checksum(), m.checksum());
        assert_eq!(trace.epoch_losses.len(), 1);
    }

    #[test]
    fn retain_free_methods_refuse_retain_data() {
        let m = build_reference_model(&Architecture::mlp(&[2, 4]), 4, 0).unwrap();
        let forget = toy(vec![0, 0]);
        let retain = toy(vec![1, 2]);
        for kind in [
            MethodKind::Pte,
            MethodKind::RandomLabel,
            MethodKind::NegativeGradient,
        ] {
            let data = PermittedData {
                forget: Some(&forget),
                retain: Some(&retain),
                forget_classes: &[0],
            };
            assert!(matches!(
                kind.run(&m, data, &MethodSettings::default(), 0),
                Err(PteError::Contract(_))
            ));
        }
        assert!("bad_teacher".parse::<MethodKind>().is_err());
        for kind in MethodKind::ALL {
            assert_eq!(kind.to_string().parse::<MethodKind>().unwrap(), kind);
        }
    }
}
