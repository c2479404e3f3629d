//! Raw signal recordings: windowing, manifest-driven loading and export.
//!
//! A recording is a flat little-endian `f32` file holding `channels * samples`
//! values, channel-major. A text manifest lists one recording per line:
//!
//! ```text
//! # path, channels, samples, label
//! normal_0.f32, 2, 121000, normal
//! ```
//!
//! Paths are relative to the manifest's directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, Split};
use crate::error::{PteError, Result};

pub const MANIFEST_NAME: &str = "manifest.csv";

/// Slices a channel-major recording into `channels x length` windows starting
/// at `0, stride, 2 * stride, ...`. No padding.
pub fn window_signal(
    raw: &[f64],
    channels: usize,
    length: usize,
    stride: usize,
) -> Result<Vec<Vec<f64>>> {
    if channels == 0 || length == 0 || stride == 0 {
        return Err(PteError::Domain(format!(
            "channels, window length and stride must be positive (got {channels}, {length}, {stride})"
        )));
    }
    if !raw.len().is_multiple_of(channels) {
        return Err(PteError::Data(format!(
            "{} values do not split into {channels} channels",
            raw.len()
        )));
    }
    let samples = raw.len() / channels;
    if samples < length {
        return Err(PteError::Data(format!(
            "recording has {samples} samples per channel, shorter than the {length}-sample window"
        )));
    }
    let count = (samples - length) / stride + 1;
    Ok((0..count)
        .map(|w| {
            let start = w * stride;
            (0..channels)
                .flat_map(|c| &raw[c * samples + start..c * samples + start + length])
                .copied()
                .collect()
        })
        .collect())
}

/// How recordings map onto a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalLayout {
    pub channels: usize,
    pub window: usize,
    pub stride: usize,
    /// Label names; a name's position is its class index.
    pub labels: Vec<String>,
    pub split: Split,
}

impl SignalLayout {
    /// Layout whose label names are the class indices `"0"`, `"1"`, ...
    pub fn indexed(
        channels: usize,
        window: usize,
        stride: usize,
        classes: usize,
        split: Split,
    ) -> Self {
        Self {
            channels,
            window,
            stride,
            labels: (0..classes).map(|k| k.to_string()).collect(),
            split,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub channels: usize,
    pub samples: usize,
    pub label: String,
}

pub fn parse_manifest(text: &str, manifest: &Path) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| PteError::Data(format!("{}:{}: {msg}", manifest.display(), n + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [path, channels, samples, label] = fields.as_slice() else {
            return Err(bad("expected `path, channels, samples, label`"));
        };
        out.push(ManifestRecord {
            path: PathBuf::from(path),
            channels: channels.parse().map_err(|_| bad("bad channel count"))?,
            samples: samples.parse().map_err(|_| bad("bad sample count"))?,
            label: label.to_string(),
        });
    }
    Ok(out)
}

fn read_f32_file(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| PteError::Data(format!("{}: {e}", path.display())))?;
    if bytes.len() % 4 != 0 {
        return Err(PteError::Data(format!(
            "{}: size {} is not a multiple of 4 bytes",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect())
}

/// Loads every recording listed in the manifest at `path` (a manifest file or
/// a directory containing `manifest.csv`) and windows it per `layout`.
pub fn load_signal_dataset(path: &Path, layout: &SignalLayout) -> Result<LabeledDataset> {
    let manifest = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    if !manifest.is_file() {
        return Err(PteError::Data(format!(
            "no signal manifest at {}",
            manifest.display()
        )));
    }
    let root = manifest.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&manifest)
        .map_err(|e| PteError::Data(format!("{}: {e}", manifest.display())))?;
    let records = parse_manifest(&text, &manifest)?;
    if records.is_empty() {
        return Err(PteError::Data(format!(
            "{}: manifest lists no recordings",
            manifest.display()
        )));
    }
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in records.iter().enumerate() {
        let file = root.join(&rec.path);
        let at = |msg: String| PteError::Data(format!("{} (record {r}): {msg}", file.display()));
        let label = layout
            .labels
            .iter()
            .position(|l| *l == rec.label)
            .ok_or_else(|| at(format!("unknown label `{}`", rec.label)))?;
        if rec.channels != layout.channels {
            return Err(at(format!(
                "{} channels, layout expects {}",
                rec.channels, layout.channels
            )));
        }
        let raw = read_f32_file(&file)?;
        if raw.len() != rec.channels * rec.samples {
            return Err(at(format!(
                "holds {} values, manifest declares {} x {}",
                raw.len(),
                rec.channels,
                rec.samples
            )));
        }
        let windows = window_signal(&raw, layout.channels, layout.window, layout.stride)
            .map_err(|e| at(e.to_string()))?;
        for (w, window) in windows.into_iter().enumerate() {
            if window.iter().any(|v| !v.is_finite()) {
                return Err(at(format!(
                    "non-finite value in window {w} (dataset sample {})",
                    labels.len()
                )));
            }
            inputs.extend(window);
            labels.push(label);
        }
    }
    LabeledDataset::new(
        vec![layout.channels, layout.window],
        inputs,
        labels,
        layout.labels.len(),
        layout.split,
    )
}

/// Writes each sample of a `channels x length` dataset as one recording and a
/// manifest naming labels by class index. Values are stored as `f32`.
pub fn export_signal_dataset(ds: &LabeledDataset, dir: &Path) -> Result<PathBuf> {
    let [channels, length] = ds.shape() else {
        return Err(PteError::Data(format!(
            "signal export needs channels x length samples, got shape {:?}",
            ds.shape()
        )));
    };
    fs::create_dir_all(dir).map_err(|e| PteError::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_NAME);
    let mut manifest = String::from("# path, channels, samples, label\n");
    for (i, (x, y)) in ds.iter().enumerate() {
        let name = format!("rec_{i:06}.f32");
        let bytes: Vec<u8> = x.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        let file = dir.join(&name);
        fs::write(&file, bytes).map_err(|e| PteError::io(&file, e))?;
        manifest.push_str(&format!("{name}, {channels}, {length}, {y}\n"));
    }
    let mut f = fs::File::create(&manifest_path).map_err(|e| PteError::io(&manifest_path, e))?;
    f.write_all(manifest.as_bytes())
        .map_err(|e| PteError::io(&manifest_path, e))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_counts() {
        let raw: Vec<f64> = (0..2048).map(|v| v as f64).collect();
        assert_eq!(window_signal(&raw, 1, 1024, 1024).unwrap().len(), 2);
        let raw: Vec<f64> = (0..1024).map(|v| v as f64).collect();
        let w = window_signal(&raw, 1, 1024, 1).unwrap();
        assert_eq!(w, vec![raw.clone()]);
        let raw: Vec<f64> = (0..3072).map(|v| v as f64).collect();
        // floor((3072 - 1024) / 512) + 1
        assert_eq!(window_signal(&raw, 1, 1024, 512).unwrap().len(), 5);
    }

    #[test]
    fn windows_are_channel_major_slices() {
        // channel 0: 0..10, channel 1: 100..110
        let raw: Vec<f64> = (0..10)
            .map(|v| v as f64)
            .chain((100..110).map(|v| v as f64))
            .collect();
        let w = window_signal(&raw, 2, 4, 3).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[1], vec![3.0, 4.0, 5.0, 6.0, 103.0, 104.0, 105.0, 106.0]);
    }

    #[test]
    fn short_recording_is_a_data_error() {
        assert!(matches!(
            window_signal(&[0.0; 10], 1, 11, 1),
            Err(PteError::Data(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn non_overlapping_windows_rebuild_the_prefix(
            len in 8usize..200, window in 1usize..8, channels in 1usize..3,
        ) {
            let raw: Vec<f64> = (0..len * channels).map(|v| v as f64 * 0.5).collect();
            let ws = window_signal(&raw, channels, window, window).unwrap();
            proptest::prop_assert_eq!(ws.len(), (len - window) / window + 1);
            for c in 0..channels {
                let rebuilt: Vec<f64> = ws.iter().flat_map(|w| w[c * window..(c + 1) * window].to_vec()).collect();
                proptest::prop_assert_eq!(&rebuilt[..], &raw[c * len..c * len + rebuilt.len()]);
            }
        }
    }

    #[test]
    fn manifest_parsing_reports_line_numbers() {
        let recs = parse_manifest("# header\n\na.f32, 2, 100, inner\n", Path::new("m")).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].label, "inner");
        let err = parse_manifest("a.f32, 2, x, inner\n", Path::new("m")).unwrap_err();
        assert!(err.to_string().contains("m:1"));
    }
}
