//! Text and CSV reports over inference results.

use crate::methods::InferenceResult;
use std::fmt::Write;

pub const HISTOGRAM_BINS: usize = 20;
const BAR_WIDTH: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q95: f64,
    /// `(lower edge, upper edge, weight)` per bin.
    pub histogram: Vec<(f64, f64, f64)>,
}

/// Smallest value whose cumulative normalized weight reaches `q`.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    assert_eq!(values.len(), weights.len());
    assert!(!values.is_empty(), "weighted quantile of nothing");
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for &i in &order {
        acc += weights[i] / total;
        if acc >= q - 1e-12 {
            return values[i];
        }
    }
    values[order[order.len() - 1]]
}

pub fn summarize_parameter(name: &str, values: &[f64], weights: &[f64]) -> ParameterSummary {
    let total: f64 = weights.iter().sum();
    // Shifted by the first value so constant columns come out exact.
    let shift = values[0];
    let mean = shift + values.iter().zip(weights).map(|(x, w)| (x - shift) * w).sum::<f64>() / total;
    let var = values
        .iter()
        .zip(weights)
        .map(|(x, w)| w * (x - mean).powi(2))
        .sum::<f64>()
        / total;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let mut bins = vec![0.0; HISTOGRAM_BINS];
    for (x, w) in values.iter().zip(weights) {
        let b = if width > 0.0 {
            (((x - lo) / width) as usize).min(HISTOGRAM_BINS - 1)
        } else {
            0
        };
        bins[b] += w / total;
    }
    let histogram = bins
        .into_iter()
        .enumerate()
        .map(|(i, w)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, w))
        .collect();
    ParameterSummary {
        name: name.to_string(),
        mean,
        sd: var.max(0.0).sqrt(),
        q05: weighted_quantile(values, weights, 0.05),
        q95: weighted_quantile(values, weights, 0.95),
        histogram,
    }
}

pub fn summarize(result: &InferenceResult) -> Vec<ParameterSummary> {
    result
        .parameter_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col: Vec<f64> = result.samples.iter().map(|r| r[j]).collect();
            summarize_parameter(name, &col, &result.weights)
        })
        .collect()
}

pub fn render_text(result: &InferenceResult) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "method {}  samples {}  simulations {}  threshold {:.6e}  ess {:.1}{}",
        result.method,
        result.len(),
        result.n_sim,
        result.threshold,
        result.ess(),
        if result.partial { "  (partial)" } else { "" }
    );
    if result.is_empty() {
        return out;
    }
    for s in summarize(result) {
        let _ = writeln!(out, "\n{}", s.name);
        let _ = writeln!(out, "  mean {:>14.6e}  sd {:>14.6e}", s.mean, s.sd);
        let _ = writeln!(out, "  q05  {:>14.6e}  q95 {:>14.6e}", s.q05, s.q95);
        let peak = s.histogram.iter().map(|b| b.2).fold(0.0, f64::max);
        for (lo, hi, w) in &s.histogram {
            let len = if peak > 0.0 {
                (w / peak * BAR_WIDTH as f64).round() as usize
            } else {
                0
            };
            let _ = writeln!(
                out,
                "  [{lo:>12.4e}, {hi:>12.4e}) {:<width$} {w:.4}",
                "#".repeat(len),
                width = BAR_WIDTH
            );
        }
    }
    out
}

/// Tidy samples CSV: parameter columns, then `weight` and `distance`, with
/// 17 significant digits so values round-trip exactly.
pub fn samples_csv(result: &InferenceResult) -> String {
    let mut out = String::new();
    let mut header: Vec<&str> = result.parameter_names.iter().map(String::as_str).collect();
    header.extend(["weight", "distance"]);
    out.push_str(&header.join(","));
    out.push('\n');
    for ((row, w), d) in result.samples.iter().zip(&result.weights).zip(&result.distances) {
        let cells: Vec<String> = row.iter().chain([w, d]).map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
