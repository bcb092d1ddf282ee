use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Cell, ErrorCurve};
use crate::env::RolloutTrace;
use crate::error::{Error, Result};

/// One line of `summary.csv`. Failed cells leave the numbers empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub sequence: String,
    pub one_step_mse: Option<f64>,
    pub growth_ratio: Option<f64>,
    pub final_mse: Option<f64>,
}

impl SummaryRow {
    fn from_cell(cell: &Cell) -> Self {
        let curve = cell.outcome.as_ref().ok().map(|(_, c)| c);
        SummaryRow {
            model: cell.model.clone(),
            sequence: cell.sequence.clone(),
            one_step_mse: curve.and_then(|c| c.mse.first().copied()),
            growth_ratio: curve.and_then(|c| c.growth().ok()).map(|g| g.ratio),
            final_mse: curve.and_then(|c| c.mse.last().copied()),
        }
    }
}

pub fn summary_csv_string(cells: &[Cell]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["model", "sequence", "one_step_mse", "growth_ratio", "final_mse"])?;
    for cell in cells {
        w.serialize(SummaryRow::from_cell(cell))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
}

/// Writes `summary.csv` and one `<model>_<sequence>.svg` per successful
/// cell into `dir`. Returns the files written.
pub fn render_report(cells: &[Cell], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let summary = dir.join("summary.csv");
    std::fs::write(&summary, summary_csv_string(cells)?).map_err(|e| Error::io(&summary, e))?;
    written.push(summary);
    for cell in cells {
        if let Ok((trace, curve)) = &cell.outcome {
            let path = dir.join(format!("{}_{}.svg", file_stem(&cell.model), file_stem(&cell.sequence)));
            plot_cell(trace, curve, &path).map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn bounds(series: &[&[f64]]) -> (f64, f64) {
    let finite = series.iter().flat_map(|s| s.iter()).copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

type DrawResult = std::result::Result<(), Box<dyn std::error::Error>>;

fn panel(
    area: &DrawingArea<SVGBackend, plotters::coord::Shift>,
    series: &[(&[f64], RGBColor)],
) -> DrawResult {
    let n = series.iter().map(|(s, _)| s.len()).max().unwrap_or(1).max(2);
    let (lo, hi) = bounds(&series.iter().map(|(s, _)| *s).collect::<Vec<_>>());
    let mut chart = ChartBuilder::on(area)
        .margin(10)
        .build_cartesian_2d(0f64..(n - 1) as f64, lo..hi)?;
    chart.configure_mesh().disable_mesh().draw()?;
    for (s, color) in series {
        chart.draw_series(LineSeries::new(
            s.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(t, v)| (t as f64, *v)),
            color,
        ))?;
    }
    Ok(())
}

/// Objective overlay on top, stepwise MSE in the middle and the
/// normalized curve at the bottom.
fn plot_cell(trace: &RolloutTrace, curve: &ErrorCurve, path: &Path) -> DrawResult {
    let root = SVGBackend::new(path, (800, 900)).into_drawing_area();
    root.fill(&WHITE)?;
    let areas = root.split_evenly((3, 1));
    let pred: Vec<f64> = trace.records.iter().map(|r| r.predicted_objective).collect();
    let truth: Vec<f64> = trace
        .records
        .iter()
        .map(|r| r.true_objective.unwrap_or(f64::NAN))
        .collect();
    panel(&areas[0], &[(&truth, BLACK), (&pred, RED)])?;
    panel(&areas[1], &[(&curve.mse, BLUE)])?;
    panel(&areas[2], &[(&curve.normalized, BLUE)])?;
    root.present()?;
    Ok(())
}
