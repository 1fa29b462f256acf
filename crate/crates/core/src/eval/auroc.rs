use super::EvalError;

fn validate(scores: &[f64], labels: &[f64]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let mut pos = 0;
    for (i, &y) in labels.iter().enumerate() {
        if y == 1.0 {
            pos += 1;
        } else if y != 0.0 {
            return Err(EvalError::InvalidLabel { index: i, value: y });
        }
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok((pos, neg))
}

/// `(positives, negatives)` in each group of tied scores, highest score first.
fn tie_groups(scores: &[f64], labels: &[f64]) -> Vec<(u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last = f64::NAN;
    for i in order {
        // -0.0 and 0.0 tie.
        if groups.is_empty() || scores[i] != last {
            groups.push((0, 0));
            last = scores[i];
        }
        let g = groups.last_mut().expect("non-empty");
        if labels[i] == 1.0 {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Area under the ROC curve by trapezoidal integration over tie groups.
///
/// The area is accumulated in integer units of half a positive/negative
/// pair, so the result equals the Mann–Whitney statistic (ties counting
/// one half) exactly.
pub fn auroc(scores: &[f64], labels: &[f64]) -> Result<f64, EvalError> {
    let (pos, neg) = validate(scores, labels)?;
    let mut tp: u64 = 0;
    let mut twice_area: u128 = 0;
    for (p, n) in tie_groups(scores, labels) {
        // Trapezoid of width n and heights tp, tp + p.
        twice_area += u128::from(n) * u128::from(2 * tp + p);
        tp += p;
    }
    Ok(twice_area as f64 / (2.0 * pos as f64 * neg as f64))
}

/// ROC curve vertices `(fpr, tpr)` from `(0, 0)` to `(1, 1)`. Vertices lying
/// on a straight segment between their neighbours are dropped.
pub fn roc_points(scores: &[f64], labels: &[f64]) -> Result<Vec<(f64, f64)>, EvalError> {
    let (pos, neg) = validate(scores, labels)?;
    let mut counts: Vec<(i64, i64)> = vec![(0, 0)];
    let (mut fp, mut tp) = (0i64, 0i64);
    for (p, n) in tie_groups(scores, labels) {
        tp += p as i64;
        fp += n as i64;
        if let [.., a, b] = counts[..] {
            // Cross product of the last segment and the new one.
            if (b.0 - a.0) * (tp - b.1) == (b.1 - a.1) * (fp - b.0) {
                counts.pop();
            }
        }
        counts.push((fp, tp));
    }
    let (pos, neg) = (pos as f64, neg as f64);
    Ok(counts
        .into_iter()
        .map(|(fp, tp)| (fp as f64 / neg, tp as f64 / pos))
        .collect())
}

/// Trapezoidal area under a polyline.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// `fpr,tpr` CSV with a header row.
pub fn roc_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (x, y) in points {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}
