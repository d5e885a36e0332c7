use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Counts and rates when every score `>= threshold` is flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PRPoint {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// 1.0 when nothing is flagged.
    pub precision: f64,
    pub recall: f64,
}

impl PRPoint {
    pub fn from_counts(threshold: f64, tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            1.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        PRPoint {
            threshold,
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
        }
    }

    pub fn flagged(&self) -> usize {
        self.tp + self.fp
    }
}

fn check(scores: &[f64], labels: &[bool]) -> Result<usize, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::NanScore);
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    Ok(positives)
}

/// The operating point at one threshold.
pub fn point_at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<PRPoint, EvalError> {
    check(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(PRPoint::from_counts(threshold, tp, fp, tn, fn_))
}

/// Points from `+inf` (nothing flagged) through every distinct score in
/// descending order to `-inf` (everything flagged).
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<PRPoint>, EvalError> {
    let positives = check(scores, labels)?;
    let negatives = labels.len() - positives;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut curve = vec![PRPoint::from_counts(f64::INFINITY, 0, 0, negatives, positives)];
    let (mut tp, mut fp) = (0, 0);
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        curve.push(PRPoint::from_counts(t, tp, fp, negatives - fp, positives - tp));
    }
    curve.push(PRPoint::from_counts(
        f64::NEG_INFINITY,
        positives,
        negatives,
        0,
        0,
    ));
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub point: PRPoint,
    /// False when no point reaches the target; the lowest threshold is returned.
    pub achieved: bool,
}

/// Highest threshold whose recall reaches `recall_target`, preferring higher
/// precision among equal thresholds.
pub fn select_threshold(curve: &[PRPoint], recall_target: f64) -> Result<ThresholdChoice, EvalError> {
    if curve.is_empty() {
        return Err(EvalError::EmptyCurve);
    }
    let best = curve.iter().filter(|p| p.recall >= recall_target).max_by(|a, b| {
        a.threshold
            .total_cmp(&b.threshold)
            .then(a.precision.total_cmp(&b.precision))
    });
    Ok(match best {
        Some(p) => ThresholdChoice {
            threshold: p.threshold,
            point: *p,
            achieved: true,
        },
        None => {
            let lowest = curve
                .iter()
                .min_by(|a, b| a.threshold.total_cmp(&b.threshold))
                .expect("nonempty");
            log::warn!("recall target {recall_target} is unreachable; using the lowest threshold");
            ThresholdChoice {
                threshold: lowest.threshold,
                point: *lowest,
                achieved: false,
            }
        }
    })
}

pub fn curve_csv(curve: &[PRPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "tp", "fp", "tn", "fn", "precision", "recall"])
        .expect("in-memory write");
    for p in curve {
        w.write_record([
            p.threshold.to_string(),
            p.tp.to_string(),
            p.fp.to_string(),
            p.tn.to_string(),
            p.fn_.to_string(),
            format!("{:.6}", p.precision),
            format!("{:.6}", p.recall),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// A static precision/recall plot, recall on x and precision on y.
pub fn curve_svg(curve: &[PRPoint], marked: Option<&PRPoint>) -> String {
    let (w, h, m) = (480.0, 360.0, 48.0);
    let sx = |r: f64| m + r * (w - 2.0 * m);
    let sy = |p: f64| h - m - p * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{x0} {y0} L{x1} {y0} M{x0} {y0} L{x0} {y1}" stroke="black" fill="none"/>"#,
        x0 = sx(0.0),
        y0 = sy(0.0),
        x1 = sx(1.0),
        y1 = sy(1.0)
    );
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{v:.2}</text>"#,
            sx(v),
            sy(0.0) + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{v:.2}</text>"#,
            sx(0.0) - 6.0,
            sy(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">recall</text>"#,
        w / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.1})">precision</text>"#,
        h / 2.0,
        h / 2.0
    );
    let pts: Vec<String> = curve
        .iter()
        .map(|p| format!("{:.2},{:.2}", sx(p.recall), sy(p.precision)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#,
        pts.join(" ")
    );
    if let Some(p) = marked {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="crimson"/>"#,
            sx(p.recall),
            sy(p.precision)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11">t={:.3} P={:.3} R={:.3}</text>"#,
            sx(p.recall) - 120.0,
            sy(p.precision) - 8.0,
            p.threshold,
            p.precision,
            p.recall
        );
    }
    s.push_str("</svg>\n");
    s
}
