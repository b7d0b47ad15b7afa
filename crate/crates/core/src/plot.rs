//! Static SVG charts of a pipeline report: ROC curve, precision-recall curve
//! and the per-window score timeline.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::metrics::{curve_points, MetricsReport};
use crate::pipeline::PipelineReport;
use crate::{Error, Result};

const SIZE: (u32, u32) = (640, 480);

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

type Series<'a> = (&'a str, Vec<(f64, f64)>, RGBColor);

fn curve_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series], diagonal: bool) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..1.0f64, 0.0..1.02f64)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(plot_err)?;
    if diagonal {
        chart
            .draw_series(LineSeries::new([(0.0, 0.0), (1.0, 1.0)], BLACK.mix(0.3)))
            .map_err(plot_err)?;
    }
    for (name, points, color) in series {
        let color = *color;
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Stair-step the precision-recall vertices so the drawn area matches the
/// step-wise PRC-AUC.
fn stairs(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(points.len() * 2 + 1);
    let mut prev_r = 0.0;
    for &(r, p) in points {
        out.push((prev_r, p));
        out.push((r, p));
        prev_r = r;
    }
    out
}

/// ROC and PR curves of the classifier and the baseline. Returns `false`
/// when the labels hold a single class and no curve exists.
pub fn plot_curves(classifier: &MetricsReport, baseline: &MetricsReport, roc_path: &Path, prc_path: &Path) -> Result<bool> {
    let (Some(c), Some(b)) = (
        curve_points(&classifier.scores, &classifier.labels)?,
        curve_points(&baseline.scores, &baseline.labels)?,
    ) else {
        return Ok(false);
    };
    let blue = RGBColor(31, 119, 180);
    let orange = RGBColor(255, 127, 14);
    curve_chart(
        roc_path,
        "ROC",
        "false positive rate",
        "true positive rate",
        &[("classifier", c.roc, blue), ("window-mean baseline", b.roc, orange)],
        true,
    )?;
    curve_chart(
        prc_path,
        "Precision-recall",
        "recall",
        "precision",
        &[("classifier", stairs(&c.prc), blue), ("window-mean baseline", stairs(&b.prc), orange)],
        false,
    )?;
    Ok(true)
}

/// Classifier probability per test window over shaded attack windows.
pub fn plot_timeline(report: &PipelineReport, path: &Path) -> Result<()> {
    let windows = &report.test_windows;
    let scores = &report.metrics.scores;
    if windows.is_empty() || windows.len() != scores.len() {
        return Err(Error::Plot("report has no test scores".into()));
    }
    let lo = windows[0] as f64;
    let hi = (*windows.last().expect("non-empty") + 1) as f64;
    let root = SVGBackend::new(path, (900, 360)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Attack probability per window", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(lo..hi, 0.0..1.0f64)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("window").y_desc("probability").draw().map_err(plot_err)?;
    let shade = RGBColor(214, 39, 40).mix(0.15);
    chart
        .draw_series(
            windows
                .iter()
                .zip(&report.metrics.labels)
                .filter(|(_, &y)| y == 1)
                .map(|(&w, _)| Rectangle::new([(w as f64, 0.0), (w as f64 + 1.0, 1.0)], shade.filled())),
        )
        .map_err(plot_err)?;
    let t = report.config.pipeline.classify_threshold;
    chart
        .draw_series(LineSeries::new([(lo, t), (hi, t)], BLACK.mix(0.4)))
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(
            windows.iter().zip(scores).map(|(&w, &s)| (w as f64 + 0.5, s)),
            RGBColor(31, 119, 180).stroke_width(2),
        ))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Write `roc.svg`, `prc.svg` (when both classes are present) and
/// `timeline.svg` into `dir`.
pub fn plot_report(report: &PipelineReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let (roc, prc) = (dir.join("roc.svg"), dir.join("prc.svg"));
    if plot_curves(&report.metrics, &report.baseline, &roc, &prc)? {
        written.push(roc);
        written.push(prc);
    }
    let timeline = dir.join("timeline.svg");
    plot_timeline(report, &timeline)?;
    written.push(timeline);
    Ok(written)
}
