//! Probability helpers shared by training, probing, editing and evaluation.

use crate::error::{PteError, Result};

/// Softened class distribution `softmax(logits / temperature)`.
pub fn softmax_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(PteError::Domain(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(PteError::Domain("empty logit vector".into()));
    }
    if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
        return Err(PteError::Domain(format!(
            "non-finite logit {} at class {i}",
            logits[i]
        )));
    }
    Ok(softmax_unchecked(logits, temperature))
}

/// Softmax without argument validation. Callers guarantee finite logits and `t > 0`.
pub(crate) fn softmax_unchecked(logits: &[f64], t: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| ((z - max) / t).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// `log softmax(logits)` at unit temperature, stable for large logit gaps.
pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&z| z - lse).collect()
}

/// Cross-entropy of one logit row against `label`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    -log_softmax(logits)[label]
}

/// Cross-entropy and its gradient with respect to the logits (`softmax - onehot`).
pub(crate) fn cross_entropy_with_grad(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let mut p = softmax_unchecked(logits, 1.0);
    let loss = cross_entropy(logits, label);
    p[label] -= 1.0;
    (loss, p)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `KL(p || q)` in nats, skipping terms where `p_k = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, &qk)| pk * (pk.ln() - qk.ln()))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_logits_give_uniform() {
        for t in [0.5, 1.0, 7.0] {
            let p = softmax_temperature(&[3.0, 3.0, 3.0], t).unwrap();
            for v in p {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_class_reference_values() {
        // e^2 / (e^2 + 1)
        let p = softmax_temperature(&[2.0, 0.0], 1.0).unwrap();
        assert!((p[0] - 0.880797).abs() < 1e-4);
        assert!((p[1] - 0.119203).abs() < 1e-4);
    }

    #[test]
    fn high_temperature_approaches_uniform() {
        for t in [10.0, 100.0, 1000.0] {
            let p = softmax_temperature(&[2.0, 0.0], t).unwrap();
            assert!((p[0] - 0.5).abs() <= 1.0 / t);
            assert!((p[1] - 0.5).abs() <= 1.0 / t);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(
            softmax_temperature(&[1.0, 2.0], 0.0),
            Err(PteError::Domain(_))
        ));
        assert!(matches!(
            softmax_temperature(&[1.0, 2.0], -1.0),
            Err(PteError::Domain(_))
        ));
        assert!(matches!(
            softmax_temperature(&[1.0, f64::NAN], 1.0),
            Err(PteError::Domain(_))
        ));
        assert!(matches!(
            softmax_temperature(&[f64::INFINITY, 0.0], 1.0),
            Err(PteError::Domain(_))
        ));
    }

    #[test]
    fn argmax_ties_prefer_lowest_index() {
        assert_eq!(argmax(&[0.1, 0.9, 0.0]), 1);
        assert_eq!(argmax(&[0.5, 0.5, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 0.7, 0.7]), 1);
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let (loss, g) = cross_entropy_with_grad(&[1.0, -0.5, 0.25], 2);
        let p = softmax_unchecked(&[1.0, -0.5, 0.25], 1.0);
        assert!((loss + p[2].ln()).abs() < 1e-12);
        assert!((g[0] - p[0]).abs() < 1e-12);
        assert!((g[2] - (p[2] - 1.0)).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn softmax_lies_on_simplex_and_is_shift_invariant(
            logits in proptest::collection::vec(-50.0f64..50.0, 2..20),
            t in 0.05f64..20.0,
            shift in -100.0f64..100.0,
        ) {
            let p = softmax_temperature(&logits, t).unwrap();
            let sum: f64 = p.iter().sum();
            proptest::prop_assert!((sum - 1.0).abs() <= 1e-6);
            proptest::prop_assert!(p.iter().all(|&v| v >= 0.0));
            let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
            let q = softmax_temperature(&shifted, t).unwrap();
            for (a, b) in p.iter().zip(&q) {
                proptest::prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
