//! Push/pull knowledge editing on top of the probed edit instructions.
//!
//! *Push* fits the student to `(x_probe, y_edit)` pairs with cross-entropy.
//! *Pull* distills the frozen teacher's temperature-softened distribution,
//! with forget classes masked out and the rest renormalized, into the student
//! on forget-set inputs. Neither branch reads retain data.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{PteError, Result};
use crate::model::{cross_entropy_with_grad, log_softmax, softmax_unchecked, Classifier};
use crate::probing::{synthesize_edit_instructions, EditSet, ProbeConfig};

/// Access-log marker written when editing starts reading data.
pub const UNLEARN_START: &str = "unlearn start";
/// Access-log marker written when editing has finished.
pub const UNLEARN_END: &str = "unlearn end";

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// One push batch then one pull batch, repeated over each epoch.
    Alternate,
    PushOnly,
    PullOnly,
    /// All push epochs, then the same number of pull epochs.
    PushThenPull,
    /// All pull epochs, then the same number of push epochs.
    PullThenPush,
}

impl Schedule {
    fn uses_push(self) -> bool {
        !matches!(self, Schedule::PullOnly)
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Alternate => "alternate",
            Schedule::PushOnly => "push_only",
            Schedule::PullOnly => "pull_only",
            Schedule::PushThenPull => "push_then_pull",
            Schedule::PullThenPush => "pull_then_push",
        })
    }
}

impl FromStr for Schedule {
    type Err = PteError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "alternate" => Schedule::Alternate,
            "push_only" => Schedule::PushOnly,
            "pull_only" => Schedule::PullOnly,
            "push_then_pull" => Schedule::PushThenPull,
            "pull_then_push" => Schedule::PullThenPush,
            other => {
                return Err(PteError::Config(format!(
                    "unknown schedule `{other}` (expected alternate, push_only, pull_only, push_then_pull or pull_then_push)"
                )))
            }
        })
    }
}

/// Argument order of the pull divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(target || student)`, the trained objective.
    TargetToStudent,
    /// `KL(student || target)`. Experimental: the masked target has zeros, so
    /// this relies entirely on the probability floor.
    StudentToTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PteConfig {
    pub epochs: usize,
    pub eta_push: f64,
    pub eta_pull: f64,
    /// Distillation temperature.
    pub temperature: f64,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_direction")]
    pub kl_direction: KlDirection,
    /// Keep a copy of the student after every epoch for trajectory plots.
    #[serde(default)]
    pub record_epoch_models: bool,
}

fn default_schedule() -> Schedule {
    Schedule::Alternate
}

fn default_batch() -> usize {
    32
}

fn default_direction() -> KlDirection {
    KlDirection::TargetToStudent
}

impl Default for PteConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            eta_push: 0.1,
            eta_pull: 0.01,
            temperature: 4.0,
            schedule: Schedule::Alternate,
            batch_size: 32,
            seed: 0,
            kl_direction: KlDirection::TargetToStudent,
            record_epoch_models: false,
        }
    }
}

impl PteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(PteError::Config(
                "editing config: epochs and batch_size must be positive".into(),
            ));
        }
        for (name, v) in [
            ("eta_push", self.eta_push),
            ("eta_pull", self.eta_pull),
            ("temperature", self.temperature),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PteError::Config(format!(
                    "editing config: {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Masked and renormalized softened distribution from raw teacher logits.
///
/// Every class in `masked` gets probability exactly zero; the remaining
/// classes keep their relative magnitudes. If the retained classes carry less
/// than [`PROB_FLOOR`] of the softened mass, the target is uniform over them.
pub fn masked_target(logits: &[f64], masked: &[usize], temperature: f64) -> Result<Vec<f64>> {
    let k = logits.len();
    if let Some(&u) = masked.iter().find(|&&u| u >= k) {
        return Err(PteError::Domain(format!(
            "masked class {u} outside [0, {k})"
        )));
    }
    if masked.is_empty() {
        return Err(PteError::Domain("no class to mask".into()));
    }
    let p = crate::model::softmax_temperature(logits, temperature)?;
    let keep: Vec<bool> = (0..k).map(|c| !masked.contains(&c)).collect();
    if !keep.iter().any(|&b| b) {
        return Err(PteError::Domain("mask covers every class".into()));
    }
    let retained_mass: f64 = p
        .iter()
        .zip(&keep)
        .filter(|(_, &kk)| kk)
        .map(|(v, _)| v)
        .sum();
    if retained_mass < PROB_FLOOR {
        let n = keep.iter().filter(|&&b| b).count() as f64;
        return Ok(keep
            .iter()
            .map(|&b| if b { 1.0 / n } else { 0.0 })
            .collect());
    }
    // normalize in log space over the retained classes only
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    let max = scaled
        .iter()
        .zip(&keep)
        .filter(|(_, &kk)| kk)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scaled
        .iter()
        .zip(&keep)
        .map(|(v, &kk)| if kk { (v - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(PteError::numerical(
            "masked target",
            "non-finite probability",
        ));
    }
    Ok(out)
}

/// Pull target for one input: the frozen teacher's softened distribution with
/// `masked` classes removed and the rest renormalized.
pub fn build_pull_target(
    teacher: &Classifier,
    x: &[f64],
    masked: &[usize],
    temperature: f64,
) -> Result<Vec<f64>> {
    if !teacher.is_frozen() {
        return Err(PteError::Contract(
            "pull targets need a frozen teacher".into(),
        ));
    }
    if let Some(&u) = masked.iter().find(|&&u| u >= teacher.classes()) {
        return Err(PteError::Domain(format!(
            "forget class {u} outside [0, {})",
            teacher.classes()
        )));
    }
    masked_target(&teacher.logits(x)?, masked, temperature)
}

/// `T^2`-scaled divergence between a pull target and the student's softened
/// distribution, with its gradient with respect to the student logits.
pub fn pull_loss_row(
    student_logits: &[f64],
    target: &[f64],
    temperature: f64,
    direction: KlDirection,
) -> (f64, Vec<f64>) {
    let t = temperature;
    let scaled: Vec<f64> = student_logits.iter().map(|z| z / t).collect();
    let log_q = log_softmax(&scaled);
    let q = softmax_unchecked(&scaled, 1.0);
    let log_floor = PROB_FLOOR.ln();
    match direction {
        KlDirection::TargetToStudent => {
            let mut loss = 0.0;
            let mut active_mass = 0.0;
            let mut grad = q.clone();
            let mut active = vec![false; q.len()];
            for (j, (&p, &lq)) in target.iter().zip(&log_q).enumerate() {
                if p > 0.0 {
                    loss += p * (p.ln() - lq.max(log_floor));
                    if lq >= log_floor {
                        active[j] = true;
                        active_mass += p;
                    }
                }
            }
            for (j, g) in grad.iter_mut().enumerate() {
                let pj = if active[j] { target[j] } else { 0.0 };
                *g = t * (*g * active_mass - pj);
            }
            (t * t * loss, grad)
        }
        KlDirection::StudentToTarget => {
            let c: Vec<f64> = target.iter().map(|&p| p.max(PROB_FLOOR).ln()).collect();
            let a: Vec<f64> = log_q.iter().zip(&c).map(|(lq, ck)| lq - ck).collect();
            let loss: f64 = q.iter().zip(&a).map(|(qk, ak)| qk * ak).sum();
            let grad = q
                .iter()
                .zip(&a)
                .map(|(qj, aj)| t * qj * (aj - loss))
                .collect();
            (t * t * loss, grad)
        }
    }
}

fn require_editable(model: &Classifier) -> Result<()> {
    if model.is_frozen() {
        return Err(PteError::Contract("cannot edit a frozen classifier".into()));
    }
    Ok(())
}

/// One SGD step on the mean cross-entropy of `(x_probe, y_edit)` pairs.
/// Returns the loss before the step.
pub fn push_step(model: &mut Classifier, batch: &[(&[f64], usize)], eta_push: f64) -> Result<f64> {
    require_editable(model)?;
    if batch.is_empty() {
        return Err(PteError::Domain("push batch is empty".into()));
    }
    let mut grads = model.zero_grads();
    let mut loss = 0.0;
    for (x, y) in batch {
        loss += model.accumulate(x, &mut grads, |z| cross_entropy_with_grad(z, *y));
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    let loss = loss / n;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(PteError::numerical(
            "push step",
            "non-finite loss or gradient",
        ));
    }
    model.apply_gradients(&grads, eta_push)?;
    Ok(loss)
}

/// One SGD step on the masked distillation loss over forget inputs, using
/// `cfg.temperature`, `cfg.eta_pull` and `cfg.kl_direction`. Returns the loss
/// before the step.
pub fn pull_step(
    model: &mut Classifier,
    teacher: &Classifier,
    batch: &[&[f64]],
    masked: &[usize],
    cfg: &PteConfig,
) -> Result<f64> {
    require_editable(model)?;
    if batch.is_empty() {
        return Err(PteError::Domain("pull batch is empty".into()));
    }
    let mut grads = model.zero_grads();
    let mut loss = 0.0;
    let n = batch.len() as f64;
    for (i, x) in batch.iter().enumerate() {
        let target = build_pull_target(teacher, x, masked, cfg.temperature)?;
        let l = model.accumulate(x, &mut grads, |z| {
            pull_loss_row(z, &target, cfg.temperature, cfg.kl_direction)
        });
        if !l.is_finite() {
            return Err(PteError::numerical(
                format!("pull step, sample {i}"),
                "non-finite divergence",
            ));
        }
        loss += l;
    }
    grads.scale(1.0 / n);
    if !grads.is_finite() {
        return Err(PteError::numerical("pull step", "non-finite gradient"));
    }
    model.apply_gradients(&grads, cfg.eta_pull)?;
    Ok(loss / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Push,
    Pull,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Push => "push",
            Branch::Pull => "pull",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub branch: Branch,
    pub loss: f64,
}

/// Test-set accuracies measured on the model saved after an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochProbe {
    pub epoch: usize,
    pub forget_acc: f64,
    pub retain_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EditTrace {
    pub steps: Vec<StepRecord>,
    pub epoch_probes: Vec<EpochProbe>,
    pub final_checksum: String,
}

impl EditTrace {
    /// Delimited text, one row per step. Accuracy columns are filled on the
    /// last step of each epoch that has a probe.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,step,branch,loss,forget_acc,retain_acc\n");
        for (i, rec) in self.steps.iter().enumerate() {
            let last_of_epoch = self
                .steps
                .get(i + 1)
                .is_none_or(|next| next.epoch != rec.epoch);
            let probe = last_of_epoch
                .then(|| self.epoch_probes.iter().find(|p| p.epoch == rec.epoch))
                .flatten();
            let (fa, ra) = probe
                .map(|p| {
                    (
                        format!("{:.4}", p.forget_acc),
                        format!("{:.4}", p.retain_acc),
                    )
                })
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{:.8},{},{}",
                rec.epoch, i, rec.branch, rec.loss, fa, ra
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| PteError::io(path, e))
    }

    /// Epoch probes recovered from [`Self::to_csv`] output.
    pub fn probes_from_csv(text: &str) -> Result<Vec<EpochProbe>> {
        let mut out = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(PteError::Data(format!(
                    "trace line {}: expected 6 fields",
                    n + 1
                )));
            }
            if f[4].is_empty() {
                continue;
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| PteError::Data(format!("trace line {}: bad number `{s}`", n + 1)))
            };
            out.push(EpochProbe {
                epoch: f[0]
                    .parse()
                    .map_err(|_| PteError::Data(format!("trace line {}: bad epoch", n + 1)))?,
                forget_acc: num(f[4])?,
                retain_acc: num(f[5])?,
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct PteOutcome {
    pub model: Classifier,
    pub trace: EditTrace,
    /// `None` for the pull-only schedule, which never probes.
    pub edit_set: Option<EditSet>,
    /// Student after each epoch, when `record_epoch_models` is set.
    pub epoch_models: Vec<Classifier>,
}

fn batches<T: Copy>(items: &[T], order: &[usize], size: usize) -> Vec<Vec<T>> {
    order
        .chunks(size)
        .map(|c| c.iter().map(|&i| items[i]).collect())
        .collect()
}

/// Retain-free unlearning: probes the forget set once against a frozen
/// snapshot of `original`, then edits a copy of it with the configured
/// push/pull schedule. The forget classes are the labels present in `forget`.
pub fn pte_unlearn(
    original: &Classifier,
    forget: &LabeledDataset,
    probe_cfg: &ProbeConfig,
    cfg: &PteConfig,
) -> Result<PteOutcome> {
    cfg.validate()?;
    probe_cfg.validate()?;
    if forget.is_empty() {
        return Err(PteError::Domain("forget set is empty".into()));
    }
    original.check_dataset(forget)?;
    if let Some(log) = forget.access_log() {
        log.mark(UNLEARN_START);
    }
    let result = run_editing(original, forget, probe_cfg, cfg);
    if let Some(log) = forget.access_log() {
        log.mark(UNLEARN_END);
    }
    result
}

fn run_editing(
    original: &Classifier,
    forget: &LabeledDataset,
    probe_cfg: &ProbeConfig,
    cfg: &PteConfig,
) -> Result<PteOutcome> {
    let teacher = original.snapshot();
    let teacher_sum = teacher.checksum();
    let samples: Vec<(&[f64], usize)> = forget.iter().collect();
    let mut masked: Vec<usize> = samples.iter().map(|(_, y)| *y).collect();
    masked.sort_unstable();
    masked.dedup();

    let edit_set = if cfg.schedule.uses_push() {
        Some(synthesize_edit_instructions(&teacher, forget, probe_cfg)?)
    } else {
        None
    };
    let push_items: Vec<(&[f64], usize)> = edit_set
        .as_ref()
        .map(|s| {
            s.instructions
                .iter()
                .map(|i| (i.x_probe.as_slice(), i.y_edit))
                .collect()
        })
        .unwrap_or_default();
    if cfg.schedule.uses_push() && push_items.is_empty() {
        return Err(PteError::ProbingFailed(
            "no edit instructions to push with".into(),
        ));
    }
    let pull_items: Vec<&[f64]> = samples.iter().map(|(x, _)| *x).collect();

    let mut student = original.thawed();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut push_order: Vec<usize> = (0..push_items.len()).collect();
    let mut pull_order: Vec<usize> = (0..pull_items.len()).collect();
    let mut trace = EditTrace::default();
    let mut epoch_models = Vec::new();

    let total_epochs = match cfg.schedule {
        Schedule::PushThenPull | Schedule::PullThenPush => 2 * cfg.epochs,
        _ => cfg.epochs,
    };
    for epoch in 0..total_epochs {
        push_order.shuffle(&mut rng);
        pull_order.shuffle(&mut rng);
        let push_batches = batches(&push_items, &push_order, cfg.batch_size);
        let pull_batches = batches(&pull_items, &pull_order, cfg.batch_size);
        let first_half = epoch < cfg.epochs;
        let (do_push, do_pull) = match cfg.schedule {
            Schedule::Alternate => (true, true),
            Schedule::PushOnly => (true, false),
            Schedule::PullOnly => (false, true),
            Schedule::PushThenPull => (first_half, !first_half),
            Schedule::PullThenPush => (!first_half, first_half),
        };
        let rounds = match (do_push, do_pull) {
            (true, true) => push_batches.len().max(pull_batches.len()),
            (true, false) => push_batches.len(),
            _ => pull_batches.len(),
        };
        for r in 0..rounds {
            if do_push {
                let b = &push_batches[r % push_batches.len()];
                let loss = push_step(&mut student, b, cfg.eta_push)
                    .map_err(|e| annotate(e, epoch, Branch::Push))?;
                trace.steps.push(StepRecord {
                    epoch,
                    branch: Branch::Push,
                    loss,
                });
            }
            if do_pull {
                let b = &pull_batches[r % pull_batches.len()];
                let loss = pull_step(&mut student, &teacher, b, &masked, cfg)
                    .map_err(|e| annotate(e, epoch, Branch::Pull))?;
                trace.steps.push(StepRecord {
                    epoch,
                    branch: Branch::Pull,
                    loss,
                });
            }
        }
        if cfg.record_epoch_models {
            epoch_models.push(student.clone());
        }
    }
    if teacher.checksum() != teacher_sum {
        return Err(PteError::Contract(
            "frozen teacher parameters changed".into(),
        ));
    }
    trace.final_checksum = student.checksum();
    Ok(PteOutcome {
        model: student,
        trace,
        edit_set,
        epoch_models,
    })
}

fn annotate(e: PteError, epoch: usize, branch: Branch) -> PteError {
    match e {
        PteError::Numerical { location, message } => PteError::Numerical {
            location: format!("epoch {epoch} {branch}: {location}"),
            message,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_reference_model, Architecture};

    #[test]
    fn masked_target_examples() {
        let p = masked_target(&[1.0, 1.0, 1.0], &[0], 1.0).unwrap();
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 0.5).abs() < 1e-12 && (p[2] - 0.5).abs() < 1e-12);

        // logits whose softmax is (0.5, 0.3, 0.2)
        let logits = [0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()];
        let p = masked_target(&logits, &[0], 1.0).unwrap();
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 0.6).abs() < 1e-12);
        assert!((p[2] - 0.4).abs() < 1e-12);

        assert!(matches!(
            masked_target(&[1.0, 2.0], &[2], 1.0),
            Err(PteError::Domain(_))
        ));
        assert!(matches!(
            masked_target(&[1.0, 2.0], &[0, 1], 1.0),
            Err(PteError::Domain(_))
        ));
    }

    #[test]
    fn dominated_retained_mass_falls_back_to_uniform() {
        let p = masked_target(&[100.0, 0.0, -5.0, 3.0], &[0], 1.0).unwrap();
        assert_eq!(p, vec![0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn pull_loss_hand_computed_value() {
        // uniform student against (0, 0.6, 0.4) at T = 1
        let (loss, _) = pull_loss_row(
            &[0.0, 0.0, 0.0],
            &[0.0, 0.6, 0.4],
            1.0,
            KlDirection::TargetToStudent,
        );
        let expected = 0.6 * (0.6f64 / (1.0 / 3.0)).ln() + 0.4 * (0.4f64 / (1.0 / 3.0)).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.4259).abs() < 1e-3);
    }

    #[test]
    fn pull_loss_is_zero_at_the_fixed_point() {
        let target = [0.0, 0.6, 0.4];
        // softmax(z / T) = target on retained classes needs z_u -> -inf; use a large gap
        for t in [1.0, 4.0] {
            let z = [-1e4, t * 0.6f64.ln(), t * 0.4f64.ln()];
            let (loss, grad) = pull_loss_row(&z, &target, t, KlDirection::TargetToStudent);
            assert!(loss.abs() < 1e-12, "T={t}: {loss}");
            assert!(grad.iter().all(|g| g.abs() < 1e-12));
        }
    }

    #[test]
    fn schedule_names() {
        for s in [
            "alternate",
            "push_only",
            "pull_only",
            "push_then_pull",
            "pull_then_push",
        ] {
            assert_eq!(s.parse::<Schedule>().unwrap().to_string(), s);
        }
        assert!(matches!(
            "sideways".parse::<Schedule>(),
            Err(PteError::Config(_))
        ));
    }

    #[test]
    fn zero_push_rate_leaves_parameters_unchanged() {
        let mut m = build_reference_model(&Architecture::mlp(&[2, 8]), 3, 0).unwrap();
        let before = m.checksum();
        let x = [0.3, -0.4];
        let loss = push_step(&mut m, &[(&x, 2)], 0.0).unwrap();
        assert!(loss > 0.0);
        assert_eq!(m.checksum(), before);
        assert!(matches!(
            push_step(&mut m, &[], 0.1),
            Err(PteError::Domain(_))
        ));
    }

    #[test]
    fn confident_push_barely_moves() {
        let mut m = build_reference_model(&Architecture::mlp(&[2, 4]), 3, 0).unwrap();
        {
            let p = m.params_mut();
            // last dense layer: bias of class 1 dominates
            let last = p.len() - 1;
            p[last] = vec![0.0, 60.0, 0.0];
        }
        let before: Vec<Vec<f64>> = m.params_mut().clone();
        let x = [0.1, 0.2];
        let loss = push_step(&mut m, &[(&x, 1)], 0.5).unwrap();
        assert!(loss < 1e-20);
        let moved: f64 = m
            .params_mut()
            .iter()
            .zip(&before)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        assert!(moved < 1e-20);
    }

    #[test]
    fn trace_csv_round_trips_probes() {
        let trace = EditTrace {
            steps: vec![
                StepRecord {
                    epoch: 0,
                    branch: Branch::Push,
                    loss: 1.0,
                },
                StepRecord {
                    epoch: 0,
                    branch: Branch::Pull,
                    loss: 0.5,
                },
                StepRecord {
                    epoch: 1,
                    branch: Branch::Push,
                    loss: 0.2,
                },
                StepRecord {
                    epoch: 1,
                    branch: Branch::Pull,
                    loss: 0.1,
                },
            ],
            epoch_probes: vec![
                EpochProbe {
                    epoch: 0,
                    forget_acc: 50.0,
                    retain_acc: 90.0,
                },
                EpochProbe {
                    epoch: 1,
                    forget_acc: 0.0,
                    retain_acc: 95.5,
                },
            ],
            final_checksum: String::new(),
        };
        let csv = trace.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(
            EditTrace::probes_from_csv(&csv).unwrap(),
            trace.epoch_probes
        );
    }
}
