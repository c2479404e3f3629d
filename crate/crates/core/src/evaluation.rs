//! Accuracy, H-Mean, membership inference and output-consistency metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{ForgetPartition, LabeledDataset};
use crate::error::{PteError, Result};
use crate::model::{argmax, cross_entropy, kl_divergence, softmax_unchecked, Classifier};

/// Percentage of samples whose arg-max prediction equals the label.
pub fn accuracy(model: &Classifier, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(PteError::Domain("accuracy of an empty dataset".into()));
    }
    let logits = model.forward_dataset(data)?;
    let correct = logits
        .iter()
        .zip(data.labels())
        .filter(|(z, &y)| argmax(z) == y)
        .count();
    Ok(100.0 * correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionAccuracy {
    pub acc_f: f64,
    pub acc_r: f64,
    pub acc_ft: f64,
    pub acc_rt: f64,
}

/// Accuracy on `D_f`, `D_r`, `D_ft` and `D_rt`.
pub fn evaluate_partition(model: &Classifier, p: &ForgetPartition) -> Result<PartitionAccuracy> {
    let named = |ds: &LabeledDataset, name: &str| {
        accuracy(model, ds).map_err(|e| match e {
            PteError::Domain(m) => PteError::Domain(format!("{name}: {m}")),
            other => other,
        })
    };
    Ok(PartitionAccuracy {
        acc_f: named(&p.forget, "D_f")?,
        acc_r: named(&p.retain, "D_r")?,
        acc_ft: named(&p.forget_test, "D_ft")?,
        acc_rt: named(&p.retain_test, "D_rt")?,
    })
}

fn check_pct(v: f64, name: &str) -> Result<()> {
    if !(0.0..=100.0).contains(&v) {
        return Err(PteError::Domain(format!("{name} = {v} outside [0, 100]")));
    }
    Ok(())
}

/// Harmonic mean of retained-test accuracy and forget-test accuracy drop.
pub fn h_mean(acc_rt: f64, drop_ft: f64) -> Result<f64> {
    check_pct(acc_rt, "acc_rt")?;
    check_pct(drop_ft, "drop_ft")?;
    if acc_rt + drop_ft == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * acc_rt * drop_ft / (acc_rt + drop_ft))
}

/// `acc_ft(original) - acc_ft(unlearned)`, floored at zero.
pub fn drop_ft(original_acc_ft: f64, unlearned_acc_ft: f64) -> f64 {
    (original_acc_ft - unlearned_acc_ft).max(0.0)
}

/// Loss-threshold membership attack settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Label written into reports.
    #[serde(default = "default_variant")]
    pub variant: String,
}

fn default_variant() -> String {
    "loss_threshold".into()
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            variant: default_variant(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaResult {
    /// Percentage of targets classified as members.
    pub score: f64,
    /// Samples with loss `<= threshold` are called members.
    pub threshold: f64,
    /// Balanced accuracy on the calibration sets, percent.
    pub calibration_accuracy: f64,
    /// Percentage of calibration non-members called members.
    pub false_positive_rate: f64,
    /// All calibration losses were equal; the score is fixed at 50.
    pub degenerate: bool,
}

/// Picks the loss threshold that best separates `members` from `non_members`
/// (balanced accuracy, smallest threshold on ties) and reports the share of
/// `targets` on the member side.
pub fn mia_from_losses(members: &[f64], non_members: &[f64], targets: &[f64]) -> Result<MiaResult> {
    if members.is_empty() || non_members.is_empty() || targets.is_empty() {
        return Err(PteError::Domain(
            "membership attack needs nonempty member, non-member and target losses".into(),
        ));
    }
    if members
        .iter()
        .chain(non_members)
        .chain(targets)
        .any(|v| v.is_nan())
    {
        return Err(PteError::numerical("membership attack", "NaN loss"));
    }
    let first = members[0];
    if members.iter().chain(non_members).all(|&v| v == first) {
        return Ok(MiaResult {
            score: 50.0,
            threshold: first,
            calibration_accuracy: 50.0,
            false_positive_rate: 100.0,
            degenerate: true,
        });
    }
    let mut m = members.to_vec();
    let mut n = non_members.to_vec();
    m.sort_by(f64::total_cmp);
    n.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = m.iter().chain(&n).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let (nm, nn) = (m.len() as u128, n.len() as u128);
    // threshold -inf: nobody is a member, balanced accuracy exactly 1/2
    let mut best = (f64::NEG_INFINITY, nm * nn, 0usize);
    let (mut i, mut j) = (0, 0);
    for &t in &candidates {
        while i < m.len() && m[i] <= t {
            i += 1;
        }
        while j < n.len() && n[j] <= t {
            j += 1;
        }
        // balanced accuracy * 2 * nm * nn, exact in integers
        let score = i as u128 * nn + (n.len() - j) as u128 * nm;
        if score > best.1 {
            best = (t, score, j);
        }
    }
    let (threshold, score, fp) = best;
    let hits = targets.iter().filter(|&&v| v <= threshold).count();
    Ok(MiaResult {
        score: 100.0 * hits as f64 / targets.len() as f64,
        threshold,
        calibration_accuracy: 50.0 * score as f64 / (nm * nn) as f64,
        false_positive_rate: 100.0 * fp as f64 / n.len() as f64,
        degenerate: false,
    })
}

fn per_sample_losses(model: &Classifier, data: &LabeledDataset) -> Result<Vec<f64>> {
    Ok(model
        .forward_dataset(data)?
        .iter()
        .zip(data.labels())
        .map(|(z, &y)| cross_entropy(z, y))
        .collect())
}

/// Loss-threshold attack calibrated on `D_r` (members) against `D_rt`
/// (non-members), scored on `D_f`.
pub fn mia_score(
    model: &Classifier,
    p: &ForgetPartition,
    _cfg: &AttackConfig,
) -> Result<MiaResult> {
    mia_from_losses(
        &per_sample_losses(model, &p.retain)?,
        &per_sample_losses(model, &p.retain_test)?,
        &per_sample_losses(model, &p.forget)?,
    )
}

/// Mean `KL(softmax(original(x)) || softmax(unlearned(x)))` in nats.
pub fn retain_kl_consistency(
    original: &Classifier,
    unlearned: &Classifier,
    data: &LabeledDataset,
) -> Result<f64> {
    if original.classes() != unlearned.classes() {
        return Err(PteError::Domain(format!(
            "class counts differ: {} vs {}",
            original.classes(),
            unlearned.classes()
        )));
    }
    if data.is_empty() {
        return Err(PteError::Domain("consistency set is empty".into()));
    }
    let a = original.forward_dataset(data)?;
    let b = unlearned.forward_dataset(data)?;
    let total: f64 = a
        .iter()
        .zip(&b)
        .map(|(za, zb)| {
            let p = softmax_unchecked(za, 1.0);
            let q = softmax_unchecked(zb, 1.0);
            kl_divergence(&p, &q).max(0.0)
        })
        .sum();
    Ok(total / data.len() as f64)
}

/// `|mean_x max_k p̃_k(x) - 1 / (K - |C_f|)|`, where `p̃` is the model's
/// distribution with forget classes removed and renormalized.
pub fn forget_confidence_uniformity(
    model: &Classifier,
    forget: &LabeledDataset,
    forget_classes: &[usize],
) -> Result<f64> {
    if forget.is_empty() {
        return Err(PteError::Domain("forget set is empty".into()));
    }
    let k = model.classes();
    let retained: Vec<usize> = (0..k).filter(|c| !forget_classes.contains(c)).collect();
    if retained.is_empty() {
        return Err(PteError::Domain("no retained classes".into()));
    }
    let logits = model.forward_dataset(forget)?;
    let mean_max: f64 = logits
        .iter()
        .map(|z| {
            let p = softmax_unchecked(z, 1.0);
            let mass: f64 = retained.iter().map(|&c| p[c]).sum();
            if mass <= 0.0 {
                1.0 / retained.len() as f64
            } else {
                retained.iter().map(|&c| p[c] / mass).fold(0.0, f64::max)
            }
        })
        .sum::<f64>()
        / logits.len() as f64;
    Ok((mean_max - 1.0 / retained.len() as f64).abs())
}

/// Tolerance on `retain_kl` used for pass/fail lines.
pub const DEFAULT_EPS_DIST: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub seed: u64,
    pub config_hash: String,
    pub acc_f: f64,
    pub acc_r: f64,
    pub acc_ft: f64,
    pub acc_rt: f64,
    pub drop_ft: f64,
    pub h_mean: f64,
    pub mia: f64,
    pub mia_variant: String,
    pub mia_degenerate: bool,
    pub retain_kl: f64,
    pub forget_conf_gap: f64,
    /// Whether the method read retain data.
    pub uses_retain: bool,
}

/// Metric names in table order.
pub const TABLE_METRICS: [&str; 6] = ["acc_f", "acc_r", "acc_ft", "acc_rt", "h_mean", "mia"];

impl EvaluationReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "acc_f" => self.acc_f,
            "acc_r" => self.acc_r,
            "acc_ft" => self.acc_ft,
            "acc_rt" => self.acc_rt,
            "drop_ft" => self.drop_ft,
            "h_mean" => self.h_mean,
            "mia" => self.mia,
            "retain_kl" => self.retain_kl,
            "forget_conf_gap" => self.forget_conf_gap,
            _ => return None,
        })
    }

    /// Flat `key = value` text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method = {}", self.method);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "config_hash = {}", self.config_hash);
        for key in [
            "acc_f",
            "acc_r",
            "acc_ft",
            "acc_rt",
            "drop_ft",
            "h_mean",
            "mia",
            "retain_kl",
            "forget_conf_gap",
        ] {
            let _ = writeln!(s, "{key} = {:.6}", self.metric(key).unwrap());
        }
        let _ = writeln!(s, "mia_variant = {}", self.mia_variant);
        let _ = writeln!(s, "mia_degenerate = {}", self.mia_degenerate);
        let _ = writeln!(s, "uses_retain = {}", self.uses_retain);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                PteError::Data(format!("report line {}: expected key = value", n + 1))
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .cloned()
                .ok_or_else(|| PteError::Data(format!("report is missing `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| PteError::Data(format!("report field `{k}` is not a number")))
        };
        let flag = |k: &str| -> Result<bool> {
            get(k)?
                .parse()
                .map_err(|_| PteError::Data(format!("report field `{k}` is not a boolean")))
        };
        Ok(Self {
            method: get("method")?,
            seed: get("seed")?
                .parse()
                .map_err(|_| PteError::Data("report field `seed` is not an integer".into()))?,
            config_hash: get("config_hash")?,
            acc_f: num("acc_f")?,
            acc_r: num("acc_r")?,
            acc_ft: num("acc_ft")?,
            acc_rt: num("acc_rt")?,
            drop_ft: num("drop_ft")?,
            h_mean: num("h_mean")?,
            mia: num("mia")?,
            mia_variant: get("mia_variant")?,
            mia_degenerate: flag("mia_degenerate")?,
            retain_kl: num("retain_kl")?,
            forget_conf_gap: num("forget_conf_gap")?,
            uses_retain: flag("uses_retain")?,
        })
    }
}

/// Identification written into a report alongside the metrics.
#[derive(Debug, Clone)]
pub struct ReportContext<'a> {
    pub method: &'a str,
    pub seed: u64,
    pub config_hash: &'a str,
    pub uses_retain: bool,
    pub attack: &'a AttackConfig,
}

/// Every metric for `unlearned` relative to `original` on partition `p`.
pub fn evaluate(
    original: &Classifier,
    unlearned: &Classifier,
    p: &ForgetPartition,
    ctx: &ReportContext<'_>,
) -> Result<EvaluationReport> {
    let before = evaluate_partition(original, p)?;
    let after = evaluate_partition(unlearned, p)?;
    let drop = drop_ft(before.acc_ft, after.acc_ft);
    let mia = mia_score(unlearned, p, ctx.attack)?;
    Ok(EvaluationReport {
        method: ctx.method.to_string(),
        seed: ctx.seed,
        config_hash: ctx.config_hash.to_string(),
        acc_f: after.acc_f,
        acc_r: after.acc_r,
        acc_ft: after.acc_ft,
        acc_rt: after.acc_rt,
        drop_ft: drop,
        h_mean: h_mean(after.acc_rt, drop)?,
        mia: mia.score,
        mia_variant: ctx.attack.variant.clone(),
        mia_degenerate: mia.degenerate,
        retain_kl: retain_kl_consistency(original, unlearned, &p.retain_test)?,
        forget_conf_gap: forget_confidence_uniformity(unlearned, &p.forget, p.forget_classes())?,
        uses_retain: ctx.uses_retain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::model::{build_reference_model, Architecture};

    #[test]
    fn h_mean_values() {
        assert!((h_mean(95.0, 96.5).unwrap() - 95.744).abs() < 0.01);
        for x in [0.0, 12.5, 100.0] {
            assert!((h_mean(x, x).unwrap() - x).abs() < 1e-12);
            assert_eq!(h_mean(x, 0.0).unwrap(), 0.0);
        }
        assert!(matches!(h_mean(101.0, 5.0), Err(PteError::Domain(_))));
        assert!(matches!(h_mean(5.0, -1.0), Err(PteError::Domain(_))));
        assert_eq!(drop_ft(90.0, 95.0), 0.0);
    }

    proptest::proptest! {
        #[test]
        fn h_mean_bounds(a in 0.0f64..=100.0, b in 0.0f64..=100.0) {
            let h = h_mean(a, b).unwrap();
            proptest::prop_assert!((h - h_mean(b, a).unwrap()).abs() < 1e-9);
            proptest::prop_assert!(h <= (a + b) / 2.0 + 1e-9);
            proptest::prop_assert!(h <= a.max(b) + 1e-9);
        }
    }

    #[test]
    fn threshold_attack_basics() {
        let members = [0.1, 0.2, 0.3];
        let non = [1.0, 2.0, 3.0];
        let r = mia_from_losses(&members, &non, &[0.05, 0.25, 5.0, 0.9]).unwrap();
        assert_eq!(r.threshold, 0.3);
        assert_eq!(r.calibration_accuracy, 100.0);
        assert_eq!(r.false_positive_rate, 0.0);
        assert_eq!(r.score, 50.0);
        // scored on its own members the attack never does worse than chance
        let r = mia_from_losses(&[0.5, 3.0], &[0.4, 2.0], &[0.5, 3.0]).unwrap();
        assert!(r.calibration_accuracy >= 50.0);
        let d = mia_from_losses(&[1.0, 1.0], &[1.0], &[0.0]).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.score, 50.0);
    }

    #[test]
    fn accuracy_of_constant_model_on_balanced_set() {
        let mut m = build_reference_model(&Architecture::mlp(&[2, 3]), 4, 0).unwrap();
        for p in m.params_mut() {
            p.iter_mut().for_each(|w| *w = 0.0);
        }
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let ds = LabeledDataset::new(vec![2], vec![0.5; 80], labels, 4, Split::Test).unwrap();
        // all-zero logits tie, so every prediction is class 0
        assert_eq!(accuracy(&m, &ds).unwrap(), 25.0);
    }

    #[test]
    fn identical_models_are_kl_consistent() {
        let m = build_reference_model(&Architecture::mlp(&[2, 8]), 3, 1).unwrap();
        let ds = LabeledDataset::new(
            vec![2],
            vec![0.3, -1.0, 2.0, 0.5],
            vec![0, 2],
            3,
            Split::Test,
        )
        .unwrap();
        assert_eq!(retain_kl_consistency(&m, &m, &ds).unwrap(), 0.0);
        assert_eq!(retain_kl_consistency(&m, &m.snapshot(), &ds).unwrap(), 0.0);
        let other = build_reference_model(&Architecture::mlp(&[2, 8]), 4, 1).unwrap();
        assert!(matches!(
            retain_kl_consistency(&m, &other, &ds),
            Err(PteError::Domain(_))
        ));
    }

    #[test]
    fn confidence_gap_extremes() {
        // bias-only model: logits are the last bias vector
        let mut m = build_reference_model(&Architecture::mlp(&[2, 3]), 10, 0).unwrap();
        for p in m.params_mut() {
            p.iter_mut().for_each(|w| *w = 0.0);
        }
        let ds = LabeledDataset::new(vec![2], vec![0.1, 0.2], vec![0], 10, Split::Train).unwrap();
        // uniform over retained classes
        let mut uniform = m.clone();
        let last = uniform.params_mut().len() - 1;
        uniform.params_mut()[last][0] = 5.0;
        assert!(forget_confidence_uniformity(&uniform, &ds, &[0]).unwrap() < 1e-12);
        // all mass on class 3
        m.params_mut()[last][3] = 80.0;
        let gap = forget_confidence_uniformity(&m, &ds, &[0]).unwrap();
        assert!((gap - (1.0 - 1.0 / 9.0)).abs() < 1e-9);
    }

    #[test]
    fn report_text_round_trip() {
        let r = EvaluationReport {
            method: "pte".into(),
            seed: 3,
            config_hash: "abc".into(),
            acc_f: 0.0,
            acc_r: 99.5,
            acc_ft: 1.25,
            acc_rt: 97.0,
            drop_ft: 95.0,
            h_mean: 95.99,
            mia: 0.5,
            mia_variant: "loss_threshold".into(),
            mia_degenerate: false,
            retain_kl: 0.0123,
            forget_conf_gap: 0.3,
            uses_retain: false,
        };
        assert_eq!(EvaluationReport::from_text(&r.to_text()).unwrap(), r);
    }
}
