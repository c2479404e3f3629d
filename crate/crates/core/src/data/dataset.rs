use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{PteError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Role a dataset plays in an unlearning run, used to tag audited reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataPart {
    Train,
    Test,
    Forget,
    Retain,
    ForgetTest,
    RetainTest,
}

impl DataPart {
    pub fn is_retain(self) -> bool {
        matches!(self, DataPart::Retain | DataPart::RetainTest)
    }
}

impl fmt::Display for DataPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DataPart::Train => "train",
            DataPart::Test => "test",
            DataPart::Forget => "D_f",
            DataPart::Retain => "D_r",
            DataPart::ForgetTest => "D_ft",
            DataPart::RetainTest => "D_rt",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AccessEvent {
    Marker(String),
    /// Consecutive reads of one part are merged into a single event.
    Read {
        part: DataPart,
        samples: usize,
    },
}

/// Shared, append-only log of sample reads and phase markers.
#[derive(Debug, Clone, Default)]
pub struct AccessLog(Arc<Mutex<Vec<AccessEvent>>>);

impl AccessLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mark(&self, label: impl Into<String>) {
        self.0
            .lock()
            .unwrap()
            .push(AccessEvent::Marker(label.into()));
    }

    fn record(&self, part: DataPart, samples: usize) {
        let mut events = self.0.lock().unwrap();
        if let Some(AccessEvent::Read {
            part: last,
            samples: n,
        }) = events.last_mut()
        {
            if *last == part {
                *n += samples;
                return;
            }
        }
        events.push(AccessEvent::Read { part, samples });
    }

    pub fn events(&self) -> Vec<AccessEvent> {
        self.0.lock().unwrap().clone()
    }

    /// Samples read from retain parts between each `start` marker and the next
    /// `end` marker, summed over every such window. `None` if no window was
    /// ever opened.
    pub fn retain_reads_between(&self, start: &str, end: &str) -> Option<usize> {
        let events = self.0.lock().unwrap();
        let mut inside = false;
        let mut seen = false;
        let mut count = 0;
        for ev in events.iter() {
            match ev {
                AccessEvent::Marker(m) if m == start => {
                    inside = true;
                    seen = true;
                }
                AccessEvent::Marker(m) if m == end => inside = false,
                AccessEvent::Read { part, samples } if inside && part.is_retain() => {
                    count += samples
                }
                _ => {}
            }
        }
        seen.then_some(count)
    }

    /// Samples read from `part` over the whole log.
    pub fn reads_of(&self, part: DataPart) -> usize {
        self.0
            .lock()
            .unwrap()
            .iter()
            .map(|ev| match ev {
                AccessEvent::Read { part: p, samples } if *p == part => *samples,
                _ => 0,
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
struct AuditTag {
    part: DataPart,
    log: AccessLog,
}

/// Fixed-shape real-valued inputs with integer class labels.
///
/// Sample reads (`input`, `label`, `labels`, `iter`) are recorded in the
/// attached [`AccessLog`] when the dataset carries an audit tag. Metadata
/// accessors are not recorded.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    shape: Vec<usize>,
    inputs: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
    audit: Option<AuditTag>,
}

impl PartialEq for LabeledDataset {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.inputs == other.inputs
            && self.labels == other.labels
            && self.classes == other.classes
            && self.split == other.split
    }
}

impl LabeledDataset {
    pub fn new(
        shape: Vec<usize>,
        inputs: Vec<f64>,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(PteError::Data("dataset has no samples".into()));
        }
        if classes < 2 {
            return Err(PteError::Domain(format!(
                "class count must be at least 2, got {classes}"
            )));
        }
        let dim: usize = shape.iter().product();
        if dim == 0 || inputs.len() != dim * labels.len() {
            return Err(PteError::Data(format!(
                "{} input values do not match {} samples of shape {:?}",
                inputs.len(),
                labels.len(),
                shape
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y >= classes) {
            return Err(PteError::Data(format!(
                "sample {i}: label {} outside [0, {classes})",
                labels[i]
            )));
        }
        if let Some(pos) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(PteError::Data(format!(
                "sample {}: non-finite input value",
                pos / dim
            )));
        }
        Ok(Self {
            shape,
            inputs,
            labels,
            classes,
            split,
            audit: None,
        })
    }

    /// Attaches an audit tag; subsequent sample reads are logged under `part`.
    pub fn audited(mut self, part: DataPart, log: &AccessLog) -> Self {
        self.audit = Some(AuditTag {
            part,
            log: log.clone(),
        });
        self
    }

    pub fn part(&self) -> Option<DataPart> {
        self.audit.as_ref().map(|a| a.part)
    }

    pub fn access_log(&self) -> Option<&AccessLog> {
        self.audit.as_ref().map(|a| &a.log)
    }

    fn touch(&self, samples: usize) {
        if let Some(tag) = &self.audit {
            tag.log.record(tag.part, samples);
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of scalars per sample.
    pub fn sample_dim(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.touch(1);
        let d = self.sample_dim();
        &self.inputs[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.touch(1);
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        self.touch(self.len());
        &self.labels
    }

    /// All inputs as one flat buffer.
    pub fn raw_inputs(&self) -> &[f64] {
        self.touch(self.len());
        &self.inputs
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.touch(self.len());
        self.inputs
            .chunks_exact(self.sample_dim())
            .zip(self.labels.iter().copied())
    }

    /// New untagged dataset holding the given samples in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let d = self.sample_dim();
        let mut inputs = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(&self.inputs[i * d..(i + 1) * d]);
            labels.push(self.labels[i]);
        }
        self.touch(indices.len());
        Self::new(self.shape.clone(), inputs, labels, self.classes, self.split)
    }

    /// Same samples with replaced labels.
    pub fn relabeled(&self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(PteError::Data(format!(
                "{} labels for {} samples",
                labels.len(),
                self.len()
            )));
        }
        self.touch(self.len());
        Self::new(
            self.shape.clone(),
            self.inputs.clone(),
            labels,
            self.classes,
            self.split,
        )
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in self.labels() {
            counts[y] += 1;
        }
        counts
    }
}
