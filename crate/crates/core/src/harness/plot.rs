use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use plotters::data::Quartiles;
use plotters::prelude::*;
use plotters::style::{register_font, FontStyle};

use super::compare::TABLE_HEADERS;
use super::run::RunManifest;
use crate::baselines::MethodKind;
use crate::editing::EditTrace;
use crate::error::{PteError, Result};
use crate::evaluation::{EvaluationReport, TABLE_METRICS};
use crate::model::load_checkpoint;

const FONT_CANDIDATES: [&str; 3] = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
];

/// Registers a TrueType font for chart text once per process. The path in
/// `PTE_FONT` takes precedence over the usual system locations.
fn font_ready() -> bool {
    static READY: OnceLock<bool> = OnceLock::new();
    *READY.get_or_init(|| {
        let env = std::env::var("PTE_FONT").ok();
        let found = env
            .iter()
            .map(String::as_str)
            .chain(FONT_CANDIDATES)
            .find_map(|p| fs::read(p).ok());
        let Some(bytes) = found else {
            warn!("no TrueType font found (set PTE_FONT); plots are skipped");
            return false;
        };
        let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
        register_font("sans-serif", FontStyle::Normal, bytes).is_ok()
    })
}

#[derive(Debug, Clone, Default)]
pub struct PlotOptions {
    /// Also draw a 2-D PCA projection of penultimate features per method.
    pub projection: bool,
}

fn plot_err<E: Display>(path: &Path) -> impl Fn(E) -> PteError + '_ {
    move |e| PteError::Data(format!("plot {}: {e}", path.display()))
}

/// Box plots of per-repeat metrics, edit trajectories and optional feature
/// projections for the run in `manifest`, written into `out`. Missing traces
/// and empty manifests produce warnings rather than errors.
pub fn emit_plots(manifest: &RunManifest, out: &Path, opts: &PlotOptions) -> Result<Vec<PathBuf>> {
    let reports = manifest.reports()?;
    if reports.is_empty() {
        warn!("manifest lists no reports; nothing to plot");
        return Ok(Vec::new());
    }
    if !font_ready() {
        return Ok(Vec::new());
    }
    fs::create_dir_all(out).map_err(|e| PteError::io(out, e))?;
    let mut written = Vec::new();
    let path = out.join("boxplot.png");
    boxplot(&reports, &path)?;
    written.push(path);

    for rec in manifest.repeats.iter().flat_map(|r| &r.methods) {
        if rec.method != MethodKind::Pte {
            continue;
        }
        let Some(trace_path) = &rec.trace else {
            warn!("{}: no edit trace recorded", rec.report.display());
            continue;
        };
        let text = match fs::read_to_string(trace_path) {
            Ok(t) => t,
            Err(e) => {
                warn!("skipping trajectory: {}: {e}", trace_path.display());
                continue;
            }
        };
        let probes = EditTrace::probes_from_csv(&text)?;
        if probes.is_empty() {
            warn!(
                "{} has no per-epoch accuracies (enable pte.record_epoch_models)",
                trace_path.display()
            );
            continue;
        }
        let stem = trace_path.file_stem().unwrap_or_default().to_string_lossy();
        let path = out.join(format!("trajectory_{stem}.png"));
        trajectory(&probes, &path)?;
        written.push(path);
    }

    if opts.projection {
        written.extend(projections(manifest, out)?);
    }
    Ok(written)
}

fn boxplot(reports: &[EvaluationReport], path: &Path) -> Result<()> {
    let mut methods: Vec<&str> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let err = plot_err(path);
    let root = BitMapBackend::new(path, (1500, 900)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let n = methods.len() as f64;
    for (panel, (metric, header)) in root
        .split_evenly((2, 3))
        .iter()
        .zip(TABLE_METRICS.iter().zip(TABLE_HEADERS))
    {
        let mut chart = ChartBuilder::on(panel)
            .caption(header, ("sans-serif", 22))
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(45)
            .build_cartesian_2d(-0.5f64..n - 0.5, 0f32..100f32)
            .map_err(&err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(methods.len() * 2 + 1)
            .x_label_formatter(&|x| {
                let i = x.round();
                if (x - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < methods.len() {
                    methods[i as usize].to_string()
                } else {
                    String::new()
                }
            })
            .draw()
            .map_err(&err)?;
        for (i, m) in methods.iter().enumerate() {
            let values: Vec<f64> = reports
                .iter()
                .filter(|r| r.method == *m)
                .filter_map(|r| r.metric(metric))
                .collect();
            let color = Palette99::pick(i);
            chart
                .draw_series(std::iter::once(
                    Boxplot::new_vertical(i as f64, &Quartiles::new(&values))
                        .width(30)
                        .style(color.stroke_width(2)),
                ))
                .map_err(&err)?;
            chart
                .draw_series(
                    values
                        .iter()
                        .map(|&v| Circle::new((i as f64, v as f32), 3, color.filled())),
                )
                .map_err(&err)?;
        }
    }
    root.present().map_err(&err)?;
    Ok(())
}

fn trajectory(probes: &[crate::editing::EpochProbe], path: &Path) -> Result<()> {
    let err = plot_err(path);
    let root = BitMapBackend::new(path, (900, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    // probes are taken after each epoch; epochs are numbered from 1 on the axis
    let last = probes.iter().map(|p| p.epoch + 1).max().unwrap_or(1) as f64;
    let mut chart = ChartBuilder::on(&root)
        .caption("Test accuracy per editing epoch", ("sans-serif", 24))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(1f64..last.max(2.0), 0f64..100f64)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .x_label_formatter(&|x| format!("{x:.0}"))
        .y_desc("accuracy (%)")
        .draw()
        .map_err(&err)?;
    for (label, color, pick) in [
        (
            "Acc_ft",
            RED,
            (|p: &crate::editing::EpochProbe| p.forget_acc) as fn(&_) -> f64,
        ),
        ("Acc_rt", BLUE, |p| p.retain_acc),
    ] {
        let pts: Vec<(f64, f64)> = probes
            .iter()
            .map(|p| ((p.epoch + 1) as f64, pick(p)))
            .collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(&err)?
            .label(label)
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2))
            });
        chart
            .draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(&err)?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}

/// Projection of `rows` onto their two leading principal components.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n < 2 || d < 2 || rows.iter().any(|r| r.len() != d) {
        return Err(PteError::Domain(format!(
            "projection needs at least 2 rows of equal width >= 2, got {n} rows"
        )));
    }
    let mut x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let basis = DMatrix::from_fn(d, 2, |i, k| eig.eigenvectors[(i, order[k])]);
    let proj = x * basis;
    Ok((0..n).map(|i| [proj[(i, 0)], proj[(i, 1)]]).collect())
}

fn projections(manifest: &RunManifest, out: &Path) -> Result<Vec<PathBuf>> {
    let Some(first) = manifest.repeats.first() else {
        return Ok(Vec::new());
    };
    let cfg = manifest.config()?;
    let (_, test) = cfg.dataset.build(first.seed, Path::new("."))?;
    let mut written = Vec::new();
    for rec in &first.methods {
        let model = load_checkpoint(&rec.checkpoint)?;
        let mut feats = Vec::with_capacity(test.len());
        for i in 0..test.len() {
            feats.push(model.features(test.input(i))?);
        }
        let preds = model.predict_dataset(&test)?;
        let pts = pca_2d(&feats)?;
        let path = out.join(format!("projection_{}_seed{}.png", rec.method, first.seed));
        scatter(
            &pts,
            &preds,
            &format!("{} features (PCA)", rec.method),
            &path,
        )?;
        written.push(path);
    }
    Ok(written)
}

fn scatter(pts: &[[f64; 2]], classes: &[usize], title: &str, path: &Path) -> Result<()> {
    let err = plot_err(path);
    let range = |k: usize| {
        let lo = pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        let pad = ((hi - lo) * 0.05).max(1e-6);
        (lo - pad)..(hi + pad)
    };
    let root = BitMapBackend::new(path, (800, 800)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 24))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(range(0), range(1))
        .map_err(&err)?;
    chart.configure_mesh().draw().map_err(&err)?;
    chart
        .draw_series(
            pts.iter()
                .zip(classes)
                .map(|(p, &c)| Circle::new((p[0], p[1]), 3, Palette99::pick(c).filled())),
        )
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pca_recovers_dominant_direction() {
        // points along (1, 1, 0) with small noise in the third axis
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let t = i as f64 - 25.0;
                vec![t, t, 0.01 * (i % 3) as f64]
            })
            .collect();
        let p = pca_2d(&rows).unwrap();
        for (i, q) in p.iter().enumerate() {
            let t = i as f64 - 25.0 + 0.5;
            assert!((q[0].abs() - (2f64).sqrt() * t.abs()).abs() < 0.1);
            assert!(q[1].abs() < 0.05);
        }
        assert!(pca_2d(&rows[..1]).is_err());
    }
}
