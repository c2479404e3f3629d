//! Boundary probing: projected gradient ascent against the frozen original
//! model, followed by self-labelling of the probed inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{PteError, Result};
use crate::model::{argmax, cross_entropy, cross_entropy_with_grad, softmax_unchecked, Classifier};

/// Whether every forget sample gets its own perturbation or each forget class shares one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    PerSample,
    PerClass,
}

/// How an ascent step turns the loss gradient into a perturbation update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AscentRule {
    /// `δ + η∇δ`.
    Gradient,
    /// `δ + η·sign(∇δ)`. Unaffected by softmax saturation, where the raw
    /// gradient of a confident teacher underflows to nothing.
    Sign,
}

/// What to do with a probed sample whose prediction did not leave its class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipFallback {
    Drop,
    /// Relabel with the most probable class other than the original one.
    RunnerUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// L∞ radius of the perturbation ball.
    pub epsilon: f64,
    /// Number of ascent steps.
    pub steps: usize,
    pub step_size: f64,
    #[serde(default = "default_noise_mode")]
    pub noise_mode: NoiseMode,
    #[serde(default = "default_fallback")]
    pub fallback: FlipFallback,
    #[serde(default = "default_ascent")]
    pub ascent: AscentRule,
    /// Independent random starts per perturbation; the one ending at the
    /// highest loss is kept. The first start is the same as with one restart.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_restarts() -> usize {
    1
}

fn default_ascent() -> AscentRule {
    AscentRule::Gradient
}

fn default_noise_mode() -> NoiseMode {
    NoiseMode::PerSample
}

fn default_fallback() -> FlipFallback {
    FlipFallback::Drop
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            steps: 20,
            step_size: 0.1,
            noise_mode: NoiseMode::PerSample,
            fallback: FlipFallback::Drop,
            ascent: AscentRule::Gradient,
            restarts: 1,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(PteError::Config(format!(
                "probe epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.steps == 0 {
            return Err(PteError::Config("probe steps must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(PteError::Config("probe restarts must be at least 1".into()));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(PteError::Config(format!(
                "probe step size must be positive, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// Clips every entry into `[-epsilon, epsilon]`.
pub fn project_linf(delta: &[f64], epsilon: f64) -> Vec<f64> {
    let mut out = delta.to_vec();
    project_linf_in_place(&mut out, epsilon);
    out
}

pub fn project_linf_in_place(delta: &mut [f64], epsilon: f64) {
    for d in delta {
        *d = d.clamp(-epsilon, epsilon);
    }
}

fn require_frozen(teacher: &Classifier) -> Result<()> {
    if !teacher.is_frozen() {
        return Err(PteError::Contract(
            "probing requires a frozen teacher (use Classifier::snapshot)".into(),
        ));
    }
    Ok(())
}

/// Standard-normal draw clipped to the ball, from the RNG stream `stream`.
/// Restart `r > 0` uses a seed offset by a multiple of a large odd constant.
fn initial_delta(dim: usize, epsilon: f64, seed: u64, stream: u64, restart: usize) -> Vec<f64> {
    let seed = seed.wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..dim)
        .map(|_| {
            rng.sample::<f64, _>(StandardNormal)
                .clamp(-epsilon, epsilon)
        })
        .collect()
}

/// Ascent on the mean cross-entropy of `members` under a shared perturbation.
/// `on_step(step, delta, loss)` sees the perturbation after every projected
/// step together with the loss that produced its gradient.
fn ascend(
    teacher: &Classifier,
    members: &[(&[f64], usize)],
    mut delta: Vec<f64>,
    cfg: &ProbeConfig,
    on_step: &mut dyn FnMut(usize, &[f64], f64),
) -> Result<Vec<f64>> {
    let n = members.len() as f64;
    let mut shifted = vec![0.0; delta.len()];
    for step in 0..cfg.steps {
        let mut grad = vec![0.0; delta.len()];
        let mut loss = 0.0;
        for (x, y) in members {
            for ((s, a), d) in shifted.iter_mut().zip(*x).zip(&delta) {
                *s = a + d;
            }
            let (l, g) = teacher.loss_and_input_grad(&shifted, |z| cross_entropy_with_grad(z, *y));
            loss += l / n;
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v / n;
            }
        }
        if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(PteError::numerical(
                format!("probe ascent step {step}"),
                format!("non-finite loss {loss} or gradient"),
            ));
        }
        for (d, g) in delta.iter_mut().zip(&grad) {
            *d += cfg.step_size
                * match cfg.ascent {
                    AscentRule::Gradient => *g,
                    AscentRule::Sign if *g == 0.0 => 0.0,
                    AscentRule::Sign => g.signum(),
                };
        }
        project_linf_in_place(&mut delta, cfg.epsilon);
        on_step(step, &delta, loss);
    }
    Ok(delta)
}

/// Runs [`ascend`] from `cfg.restarts` random starts on RNG stream `stream`
/// and keeps the perturbation with the highest final loss (earliest on ties).
fn ascend_best(
    teacher: &Classifier,
    members: &[(&[f64], usize)],
    stream: u64,
    cfg: &ProbeConfig,
    on_step: &mut dyn FnMut(usize, &[f64], f64),
) -> Result<Vec<f64>> {
    let d = teacher.input_dim();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for restart in 0..cfg.restarts {
        let init = initial_delta(d, cfg.epsilon, cfg.seed, stream, restart);
        let delta = ascend(teacher, members, init, cfg, on_step)?;
        if cfg.restarts == 1 {
            return Ok(delta);
        }
        let mut loss = 0.0;
        for (x, y) in members {
            let shifted: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
            loss += cross_entropy(&teacher.logits(&shifted)?, *y);
        }
        if best.as_ref().is_none_or(|(l, _)| loss > *l) {
            best = Some((loss, delta));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Per-sample perturbations maximizing the teacher's loss on `labels` within
/// the ε-ball. Sample `i` draws its initial noise from RNG stream `i`.
pub fn pga_probe(
    teacher: &Classifier,
    batch: &[f64],
    labels: &[usize],
    cfg: &ProbeConfig,
) -> Result<Vec<Vec<f64>>> {
    pga_probe_observed(teacher, batch, labels, cfg, &mut |_, _, _, _| {})
}

/// [`pga_probe`] with an observer called as `(sample, step, delta, loss)`
/// after every projected step.
pub fn pga_probe_observed(
    teacher: &Classifier,
    batch: &[f64],
    labels: &[usize],
    cfg: &ProbeConfig,
    observer: &mut dyn FnMut(usize, usize, &[f64], f64),
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    require_frozen(teacher)?;
    let d = teacher.input_dim();
    if labels.is_empty() || batch.len() != d * labels.len() {
        return Err(PteError::Data(format!(
            "{} values for {} labels with input shape {:?}",
            batch.len(),
            labels.len(),
            teacher.input_shape()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= teacher.classes()) {
        return Err(PteError::Data(format!(
            "label {y} outside the model's classes"
        )));
    }
    batch
        .chunks_exact(d)
        .zip(labels)
        .enumerate()
        .map(|(i, (x, &y))| {
            ascend_best(
                teacher,
                &[(x, y)],
                i as u64,
                cfg,
                &mut |step, delta, loss| observer(i, step, delta, loss),
            )
            .map_err(|e| match e {
                PteError::Numerical { location, message } => PteError::Numerical {
                    location: format!("sample {i}, {location}"),
                    message,
                },
                other => other,
            })
        })
        .collect()
}

/// A probed forget input paired with the label the edited model should adopt.
#[derive(Debug, Clone, PartialEq)]
pub struct EditInstruction {
    pub x_probe: Vec<f64>,
    pub y_edit: usize,
    pub y_orig: usize,
    /// Position of the source sample in the forget set.
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbeStats {
    pub class: usize,
    pub samples: usize,
    /// Samples whose teacher prediction left the class after probing.
    pub flipped: usize,
    /// Instructions emitted for the class.
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditSet {
    pub instructions: Vec<EditInstruction>,
    /// Fraction of the forget set whose teacher prediction changed.
    pub flip_rate: f64,
    pub per_class: Vec<ClassProbeStats>,
    /// Number of distinct perturbations optimized.
    pub noise_matrices: usize,
    pub input_shape: Vec<usize>,
}

impl EditSet {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }
}

/// Probes every forget sample once against the frozen teacher and labels each
/// probed input with the teacher's own prediction there.
pub fn synthesize_edit_instructions(
    teacher: &Classifier,
    forget: &LabeledDataset,
    cfg: &ProbeConfig,
) -> Result<EditSet> {
    cfg.validate()?;
    require_frozen(teacher)?;
    if forget.is_empty() {
        return Err(PteError::Domain("forget set is empty".into()));
    }
    teacher.check_dataset(forget)?;
    let samples: Vec<(&[f64], usize)> = forget.iter().collect();

    let deltas: Vec<Vec<f64>> = match cfg.noise_mode {
        NoiseMode::PerSample => {
            let flat: Vec<f64> = samples
                .iter()
                .flat_map(|(x, _)| x.iter().copied())
                .collect();
            let labels: Vec<usize> = samples.iter().map(|(_, y)| *y).collect();
            pga_probe(teacher, &flat, &labels, cfg)?
        }
        NoiseMode::PerClass => {
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, (_, y)) in samples.iter().enumerate() {
                groups.entry(*y).or_default().push(i);
            }
            let mut deltas = vec![Vec::new(); samples.len()];
            for (class, idx) in &groups {
                let members: Vec<(&[f64], usize)> = idx.iter().map(|&i| samples[i]).collect();
                // stream of the class's first sample, so one-sample classes match per-sample mode
                let delta = ascend_best(teacher, &members, idx[0] as u64, cfg, &mut |_, _, _| {})
                    .map_err(|e| match e {
                    PteError::Numerical { location, message } => PteError::Numerical {
                        location: format!("class {class}, {location}"),
                        message,
                    },
                    other => other,
                })?;
                for &i in idx {
                    deltas[i] = delta.clone();
                }
            }
            deltas
        }
    };
    let noise_matrices = match cfg.noise_mode {
        NoiseMode::PerSample => samples.len(),
        NoiseMode::PerClass => {
            let mut classes: Vec<usize> = samples.iter().map(|(_, y)| *y).collect();
            classes.sort_unstable();
            classes.dedup();
            classes.len()
        }
    };

    let mut stats: BTreeMap<usize, ClassProbeStats> = BTreeMap::new();
    let mut instructions = Vec::new();
    let mut flipped_total = 0;
    for (i, ((x, y), delta)) in samples.iter().zip(&deltas).enumerate() {
        let x_probe: Vec<f64> = x.iter().zip(delta).map(|(a, b)| a + b).collect();
        let logits = teacher.logits(&x_probe)?;
        let predicted = argmax(&logits);
        let entry = stats.entry(*y).or_insert(ClassProbeStats {
            class: *y,
            samples: 0,
            flipped: 0,
            kept: 0,
        });
        entry.samples += 1;
        let y_edit = if predicted != *y {
            entry.flipped += 1;
            flipped_total += 1;
            Some(predicted)
        } else {
            match cfg.fallback {
                FlipFallback::Drop => None,
                FlipFallback::RunnerUp => {
                    let mut p = softmax_unchecked(&logits, 1.0);
                    p[*y] = f64::NEG_INFINITY;
                    Some(argmax(&p))
                }
            }
        };
        if let Some(y_edit) = y_edit {
            entry.kept += 1;
            instructions.push(EditInstruction {
                x_probe,
                y_edit,
                y_orig: *y,
                source: i,
            });
        }
    }
    let flip_rate = flipped_total as f64 / samples.len() as f64;
    if cfg.fallback == FlipFallback::Drop {
        if flipped_total == 0 {
            return Err(PteError::ProbingFailed(format!(
                "no forget sample changed prediction within epsilon = {}",
                cfg.epsilon
            )));
        }
        if flipped_total < samples.len() {
            log::warn!(
                "probing dropped {} of {} forget samples that kept their label (flip rate {:.3})",
                samples.len() - flipped_total,
                samples.len(),
                flip_rate
            );
        }
    }
    Ok(EditSet {
        instructions,
        flip_rate,
        per_class: stats.into_values().collect(),
        noise_matrices,
        input_shape: forget.shape().to_vec(),
    })
}

const EDIT_MAGIC: &[u8; 8] = b"PTEEDIT1";

/// Writes the binary instruction container and a `key = value` text summary.
pub fn export_edit_set(set: &EditSet, bin_path: &Path, summary_path: &Path) -> Result<()> {
    let dim: usize = set.input_shape.iter().product();
    let mut bytes = Vec::new();
    bytes.extend_from_slice(EDIT_MAGIC);
    bytes.extend_from_slice(&(set.input_shape.len() as u64).to_le_bytes());
    for s in &set.input_shape {
        bytes.extend_from_slice(&(*s as u64).to_le_bytes());
    }
    bytes.extend_from_slice(&(set.instructions.len() as u64).to_le_bytes());
    for ins in &set.instructions {
        bytes.extend_from_slice(&(ins.y_edit as u64).to_le_bytes());
        bytes.extend_from_slice(&(ins.y_orig as u64).to_le_bytes());
        bytes.extend_from_slice(&(ins.source as u64).to_le_bytes());
        debug_assert_eq!(ins.x_probe.len(), dim);
        for v in &ins.x_probe {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(bin_path, bytes).map_err(|e| PteError::io(bin_path, e))?;

    let mut s = String::new();
    let _ = writeln!(s, "instructions = {}", set.instructions.len());
    let _ = writeln!(s, "flip_rate = {:.6}", set.flip_rate);
    let _ = writeln!(s, "noise_matrices = {}", set.noise_matrices);
    for c in &set.per_class {
        let _ = writeln!(
            s,
            "class_{}_samples = {}\nclass_{}_flipped = {}\nclass_{}_kept = {}",
            c.class, c.samples, c.class, c.flipped, c.class, c.kept
        );
    }
    fs::write(summary_path, s).map_err(|e| PteError::io(summary_path, e))
}

/// Reads instructions written by [`export_edit_set`] as
/// `(input_shape, instructions)`.
pub fn read_edit_instructions(bin_path: &Path) -> Result<(Vec<usize>, Vec<EditInstruction>)> {
    let bytes = fs::read(bin_path).map_err(|e| PteError::io(bin_path, e))?;
    let bad = || PteError::Data(format!("{}: malformed edit-set file", bin_path.display()));
    if bytes.len() < 16 || &bytes[..8] != EDIT_MAGIC {
        return Err(bad());
    }
    let mut pos = 8;
    let next_u64 = |pos: &mut usize| -> Result<u64> {
        let b = bytes.get(*pos..*pos + 8).ok_or_else(bad)?;
        *pos += 8;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    };
    let rank = next_u64(&mut pos)? as usize;
    let shape = (0..rank)
        .map(|_| next_u64(&mut pos).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let dim: usize = shape.iter().product();
    let count = next_u64(&mut pos)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let y_edit = next_u64(&mut pos)? as usize;
        let y_orig = next_u64(&mut pos)? as usize;
        let source = next_u64(&mut pos)? as usize;
        let x_probe = (0..dim)
            .map(|_| next_u64(&mut pos).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        out.push(EditInstruction {
            x_probe,
            y_edit,
            y_orig,
            source,
        });
    }
    if pos != bytes.len() {
        return Err(bad());
    }
    Ok((shape, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::model::{build_reference_model, Architecture};

    #[test]
    fn projection_clips_and_is_idempotent() {
        let eps = 0.3;
        assert_eq!(project_linf(&[0.1, -0.2, 0.3], eps), vec![0.1, -0.2, 0.3]);
        assert_eq!(
            project_linf(&[2.0 * eps, -3.0 * eps, 0.0], eps),
            vec![eps, -eps, 0.0]
        );
        let once = project_linf(&[5.0, -0.1, -9.0], eps);
        assert_eq!(project_linf(&once, eps), once);
    }

    fn teacher() -> Classifier {
        build_reference_model(&Architecture::mlp(&[2, 8]), 3, 4)
            .unwrap()
            .snapshot()
    }

    #[test]
    fn rejects_unfrozen_teacher_and_bad_config() {
        let m = build_reference_model(&Architecture::mlp(&[2, 8]), 3, 4).unwrap();
        assert!(matches!(
            pga_probe(&m, &[0.0, 0.0], &[0], &ProbeConfig::default()),
            Err(PteError::Contract(_))
        ));
        let cfg = ProbeConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            pga_probe(&teacher(), &[0.0, 0.0], &[0], &cfg),
            Err(PteError::Config(_))
        ));
    }

    #[test]
    fn every_step_stays_in_the_ball_and_teacher_is_untouched() {
        let t = teacher();
        let before = t.checksum();
        let cfg = ProbeConfig {
            epsilon: 0.05,
            steps: 7,
            step_size: 1.0,
            ..Default::default()
        };
        let mut steps = 0;
        let deltas = pga_probe_observed(
            &t,
            &[0.5, -1.0, 2.0, 0.0],
            &[0, 2],
            &cfg,
            &mut |_, _, d, _| {
                steps += 1;
                assert!(d.iter().all(|v| v.abs() <= 0.05));
            },
        )
        .unwrap();
        assert_eq!(steps, 14);
        assert_eq!(deltas.len(), 2);
        assert_eq!(t.checksum(), before);
        let again = pga_probe(&t, &[0.5, -1.0, 2.0, 0.0], &[0, 2], &cfg).unwrap();
        assert_eq!(deltas, again);
    }

    #[test]
    fn per_class_and_per_sample_agree_for_a_single_sample() {
        let t = teacher();
        let forget =
            LabeledDataset::new(vec![2], vec![0.3, 0.7], vec![1], 3, Split::Train).unwrap();
        let mut cfg = ProbeConfig {
            epsilon: 5.0,
            steps: 30,
            step_size: 1.0,
            fallback: FlipFallback::RunnerUp,
            ..Default::default()
        };
        let a = synthesize_edit_instructions(&t, &forget, &cfg).unwrap();
        cfg.noise_mode = NoiseMode::PerClass;
        let b = synthesize_edit_instructions(&t, &forget, &cfg).unwrap();
        assert_eq!(a.instructions, b.instructions);
        assert_eq!(a.noise_matrices, 1);
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = EditSet {
            instructions: vec![
                EditInstruction {
                    x_probe: vec![0.1, f64::MIN_POSITIVE],
                    y_edit: 2,
                    y_orig: 0,
                    source: 0,
                },
                EditInstruction {
                    x_probe: vec![-3.5, 1e300],
                    y_edit: 1,
                    y_orig: 0,
                    source: 4,
                },
            ],
            flip_rate: 0.4,
            per_class: vec![ClassProbeStats {
                class: 0,
                samples: 5,
                flipped: 2,
                kept: 2,
            }],
            noise_matrices: 5,
            input_shape: vec![2],
        };
        let (bin, txt) = (dir.path().join("e.bin"), dir.path().join("e.txt"));
        export_edit_set(&set, &bin, &txt).unwrap();
        let (shape, back) = read_edit_instructions(&bin).unwrap();
        assert_eq!(shape, vec![2]);
        assert_eq!(back, set.instructions);
        let summary = fs::read_to_string(&txt).unwrap();
        assert!(summary.contains("flip_rate = 0.400000"));
        assert!(summary.contains("class_0_kept = 2"));
    }
}
