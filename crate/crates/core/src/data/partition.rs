use std::collections::BTreeSet;

use super::dataset::{AccessLog, DataPart, LabeledDataset};
use crate::error::{PteError, Result};

/// Train and test data split by forget-class membership.
#[derive(Debug, Clone)]
pub struct ForgetPartition {
    forget_classes: Vec<usize>,
    /// `D_f`
    pub forget: LabeledDataset,
    /// `D_r`
    pub retain: LabeledDataset,
    /// `D_ft`
    pub forget_test: LabeledDataset,
    /// `D_rt`
    pub retain_test: LabeledDataset,
}

/// Validates a forget-class set against `classes` and returns it sorted and deduplicated.
pub fn normalize_forget_classes(forget_classes: &[usize], classes: usize) -> Result<Vec<usize>> {
    let set: BTreeSet<usize> = forget_classes.iter().copied().collect();
    if set.is_empty() {
        return Err(PteError::Domain("forget-class set is empty".into()));
    }
    if let Some(&c) = set.iter().find(|&&c| c >= classes) {
        return Err(PteError::Domain(format!(
            "forget class {c} outside [0, {classes})"
        )));
    }
    if set.len() == classes {
        return Err(PteError::Domain(
            "forget-class set covers every class; nothing would be retained".into(),
        ));
    }
    Ok(set.into_iter().collect())
}

fn split_by(
    ds: &LabeledDataset,
    forget: &[usize],
    what: &str,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let (mut f, mut r) = (Vec::new(), Vec::new());
    for (i, &y) in ds.labels().iter().enumerate() {
        if forget.contains(&y) {
            f.push(i);
        } else {
            r.push(i);
        }
    }
    let named = |e: PteError, part: &str| match e {
        PteError::Data(m) => PteError::Data(format!("{what} {part}: {m}")),
        other => other,
    };
    Ok((
        ds.select(&f).map_err(|e| named(e, "forget part"))?,
        ds.select(&r).map_err(|e| named(e, "retain part"))?,
    ))
}

/// Splits train and test data into `D_f`, `D_r`, `D_ft`, `D_rt` by membership
/// in `forget_classes`. Sample order within each part follows the source.
pub fn partition_by_class(
    train: &LabeledDataset,
    test: &LabeledDataset,
    forget_classes: &[usize],
) -> Result<ForgetPartition> {
    if train.classes() != test.classes() {
        return Err(PteError::Domain(format!(
            "train has {} classes, test has {}",
            train.classes(),
            test.classes()
        )));
    }
    if train.shape() != test.shape() {
        return Err(PteError::Data(format!(
            "train samples have shape {:?}, test samples {:?}",
            train.shape(),
            test.shape()
        )));
    }
    let forget_classes = normalize_forget_classes(forget_classes, train.classes())?;
    let (forget, retain) = split_by(train, &forget_classes, "train")?;
    let (forget_test, retain_test) = split_by(test, &forget_classes, "test")?;
    Ok(ForgetPartition {
        forget_classes,
        forget,
        retain,
        forget_test,
        retain_test,
    })
}

impl ForgetPartition {
    pub fn forget_classes(&self) -> &[usize] {
        &self.forget_classes
    }

    pub fn classes(&self) -> usize {
        self.forget.classes()
    }

    /// Tags every part so reads are recorded in `log`.
    pub fn audited(self, log: &AccessLog) -> Self {
        Self {
            forget_classes: self.forget_classes,
            forget: self.forget.audited(DataPart::Forget, log),
            retain: self.retain.audited(DataPart::Retain, log),
            forget_test: self.forget_test.audited(DataPart::ForgetTest, log),
            retain_test: self.retain_test.audited(DataPart::RetainTest, log),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn labelled(labels: Vec<usize>, k: usize, split: Split) -> LabeledDataset {
        let inputs = labels.iter().enumerate().map(|(i, _)| i as f64).collect();
        LabeledDataset::new(vec![1], inputs, labels, k, split).unwrap()
    }

    #[test]
    fn separates_by_membership_and_keeps_order() {
        let train = labelled(vec![0, 1, 4, 2, 1, 3, 5, 4, 0], 6, Split::Train);
        let test = labelled(vec![4, 0, 1, 2], 6, Split::Test);
        let p = partition_by_class(&train, &test, &[4, 1]).unwrap();
        assert_eq!(p.forget_classes(), &[1, 4]);
        assert_eq!(p.forget.labels(), &[1, 4, 1, 4]);
        assert_eq!(p.forget.input(0), &[1.0]);
        assert_eq!(p.forget.input(3), &[7.0]);
        assert_eq!(p.retain.labels(), &[0, 2, 3, 5, 0]);
        assert_eq!(p.forget_test.labels(), &[4, 1]);
        assert_eq!(p.retain_test.labels(), &[0, 2]);
    }

    #[test]
    fn rejects_degenerate_forget_sets() {
        let train = labelled(vec![0, 1, 2], 3, Split::Train);
        let test = labelled(vec![0, 1, 2], 3, Split::Test);
        assert!(matches!(
            partition_by_class(&train, &test, &[]),
            Err(PteError::Domain(_))
        ));
        assert!(matches!(
            partition_by_class(&train, &test, &[0, 1, 2]),
            Err(PteError::Domain(_))
        ));
        assert!(matches!(
            partition_by_class(&train, &test, &[3]),
            Err(PteError::Domain(_))
        ));
    }

    #[test]
    fn empty_part_is_a_named_data_error() {
        let train = labelled(vec![0, 1, 2], 3, Split::Train);
        let test = labelled(vec![1, 2], 3, Split::Test);
        let err = partition_by_class(&train, &test, &[0]).unwrap_err();
        assert!(err.to_string().contains("test forget part"), "{err}");
    }
}
