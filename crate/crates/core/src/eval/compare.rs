use serde::Serialize;

use super::seeds::mean_std;
use super::{EvalError, EvalResult};

/// Published gain of the gated model over a baseline, in AUROC points.
pub fn reference_gain(dataset: &str, baseline_id: &str) -> Option<f64> {
    match (dataset, baseline_id) {
        ("bank_marketing", "tab_transformer") => Some(1.0),
        ("bank_marketing", "mlp") => Some(1.3),
        ("1995_income", "tab_transformer") => Some(0.7),
        ("1995_income", "mlp") => Some(0.9),
        ("blastchar", "tab_transformer") => Some(0.5),
        ("blastchar", "mlp") => Some(0.4),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Gain {
    pub baseline: String,
    pub candidate_mean: f64,
    pub baseline_mean: f64,
    /// `100 * (candidate_mean - baseline_mean)`.
    pub gain_points: f64,
    /// Mean and sample standard deviation of per-seed differences, in points,
    /// over the seeds both results share.
    pub paired_mean: f64,
    pub paired_std: f64,
    pub n_pairs: usize,
    pub reference: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GainTable {
    pub dataset: String,
    pub candidate: String,
    pub gains: Vec<Gain>,
}

impl GainTable {
    pub fn gain_over(&self, baseline: &str) -> Option<&Gain> {
        self.gains.iter().find(|g| g.baseline == baseline)
    }

    /// One row per baseline.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "dataset,candidate,baseline,candidate_mean,baseline_mean,gain_points,paired_mean,paired_std,n_pairs,reference_gain\n",
        );
        for g in &self.gains {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                self.dataset,
                self.candidate,
                g.baseline,
                g.candidate_mean,
                g.baseline_mean,
                g.gain_points,
                g.paired_mean,
                g.paired_std,
                g.n_pairs,
                g.reference.map(|r| r.to_string()).unwrap_or_default()
            ));
        }
        out
    }
}

/// Gains of `results[0]` over each of the remaining results.
pub fn compare_models(results: &[EvalResult]) -> Result<GainTable, EvalError> {
    let (candidate, baselines) = match results {
        [c, rest @ ..] if !rest.is_empty() => (c, rest),
        _ => return Err(EvalError::Invalid("need a candidate and at least one baseline".into())),
    };
    let mut gains = Vec::with_capacity(baselines.len());
    for b in baselines {
        if b.dataset != candidate.dataset {
            return Err(EvalError::Invalid(format!(
                "cannot compare results on `{}` and `{}`",
                candidate.dataset, b.dataset
            )));
        }
        let diffs: Vec<f64> = candidate
            .seeds
            .iter()
            .zip(&candidate.test_aurocs)
            .filter_map(|(s, c)| {
                b.seeds
                    .iter()
                    .position(|t| t == s)
                    .map(|j| 100.0 * (c - b.test_aurocs[j]))
            })
            .collect();
        let (paired_mean, paired_std) = mean_std(&diffs);
        gains.push(Gain {
            baseline: b.model_id.clone(),
            candidate_mean: candidate.mean,
            baseline_mean: b.mean,
            gain_points: 100.0 * (candidate.mean - b.mean),
            paired_mean,
            paired_std,
            n_pairs: diffs.len(),
            reference: reference_gain(&candidate.dataset, &b.model_id),
        });
    }
    Ok(GainTable {
        dataset: candidate.dataset.clone(),
        candidate: candidate.model_id.clone(),
        gains,
    })
}

/// Dataset-by-baseline grid of measured gains, followed by the published
/// values for the same cells.
pub fn gain_grid_csv(tables: &[GainTable]) -> String {
    let mut baselines: Vec<&str> = Vec::new();
    for t in tables {
        for g in &t.gains {
            if !baselines.contains(&g.baseline.as_str()) {
                baselines.push(&g.baseline);
            }
        }
    }
    let mut out = String::from("dataset,source");
    for b in &baselines {
        out.push_str(&format!(",gain_over_{b}"));
    }
    out.push('\n');
    for (source, pick) in [("measured", true), ("reference", false)] {
        for t in tables {
            out.push_str(&format!("{},{source}", t.dataset));
            for b in &baselines {
                let cell = t.gain_over(b).and_then(|g| {
                    if pick {
                        Some(format!("{:.3}", g.gain_points))
                    } else {
                        g.reference.map(|r| format!("{r:.1}"))
                    }
                });
                out.push(',');
                out.push_str(&cell.unwrap_or_default());
            }
            out.push('\n');
        }
    }
    out
}
