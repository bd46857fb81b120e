//! Saliency evaluation metrics: KL, CC, SIM, NSS and AUC-Judd.
//!
//! Distribution metrics (KL, CC, SIM) compare a prediction map with a
//! ground-truth map; location metrics (NSS, AUC) compare a prediction map
//! with fixation points mapped to their nearest pixel.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data_model::GroupLabel;
use crate::geometry::GridPoint;
use crate::saliency::{ensure_same_dims, normalize_map, render_heatmap, KernelConfig, SaliencyMap};
use crate::{Error, Result};

/// Regularizer inside the KL logarithm.
pub const KL_EPS: f64 = 1e-12;

/// KL(gt ‖ pred) over the normalized maps.
pub fn kl_div(gt: &SaliencyMap, pred: &SaliencyMap) -> Result<f64> {
    ensure_same_dims(gt, pred)?;
    let g = normalize_map(gt)?;
    let p = normalize_map(pred)?;
    let kl: f64 = g
        .values()
        .iter()
        .zip(p.values())
        .map(|(&g, &p)| g * ((g + KL_EPS) / (p + KL_EPS)).ln())
        .sum();
    // The regularizer can push an exact match a few ulps below zero.
    Ok(kl.max(0.0))
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pearson correlation of the flattened maps.
pub fn cc(gt: &SaliencyMap, pred: &SaliencyMap) -> Result<f64> {
    ensure_same_dims(gt, pred)?;
    let (mg, sg) = mean_and_std(gt.values());
    let (mp, sp) = mean_and_std(pred.values());
    if sg == 0.0 || sp == 0.0 {
        return Err(Error::DegenerateMap("zero-variance map in CC".into()));
    }
    let n = gt.values().len() as f64;
    let cov = gt
        .values()
        .iter()
        .zip(pred.values())
        .map(|(g, p)| (g - mg) * (p - mp))
        .sum::<f64>()
        / n;
    Ok((cov / (sg * sp)).clamp(-1.0, 1.0))
}

/// Histogram intersection of two normalized maps.
pub fn sim(gt: &SaliencyMap, pred: &SaliencyMap) -> Result<f64> {
    ensure_same_dims(gt, pred)?;
    if !gt.is_normalized() || !pred.is_normalized() {
        return Err(Error::validation("SIM requires normalized maps"));
    }
    Ok(gt
        .values()
        .iter()
        .zip(pred.values())
        .map(|(g, p)| g.min(*p))
        .sum())
}

/// Mean standardized prediction at the fixation pixels (population std).
pub fn nss(pred: &SaliencyMap, fixations: &[GridPoint]) -> Result<f64> {
    if fixations.is_empty() {
        return Err(Error::validation("NSS needs at least one fixation"));
    }
    let (mean, std) = mean_and_std(pred.values());
    if std == 0.0 {
        return Err(Error::DegenerateMap("zero-variance map in NSS".into()));
    }
    let total: f64 = fixations
        .iter()
        .map(|f| {
            let (x, y) = pred.pixel_of(f);
            (pred.get(x, y) - mean) / std
        })
        .sum();
    Ok(total / fixations.len() as f64)
}

/// AUC-Judd. Thresholds are the saliency values at the (deduplicated)
/// fixation pixels; at each threshold the true-positive rate is the fraction
/// of fixation pixels at or above it and the false-positive rate the fraction
/// of non-fixation pixels at or above it. The curve runs from (0,0) to (1,1)
/// and is integrated with the trapezoid rule.
pub fn auc_judd(pred: &SaliencyMap, fixations: &[GridPoint]) -> Result<f64> {
    if fixations.is_empty() {
        return Err(Error::validation("AUC needs at least one fixation"));
    }
    let fix_pixels: BTreeSet<(usize, usize)> = fixations.iter().map(|f| pred.pixel_of(f)).collect();
    let n_fix = fix_pixels.len();
    let n_pix = pred.values().len();
    if n_fix == n_pix {
        return Err(Error::validation("AUC undefined: every pixel is a fixation"));
    }
    let mut fix_vals: Vec<f64> = fix_pixels.iter().map(|&(x, y)| pred.get(x, y)).collect();
    fix_vals.sort_by(|a, b| b.total_cmp(a));
    let mut all_vals: Vec<f64> = pred.values().to_vec();
    all_vals.sort_by(|a, b| b.total_cmp(a));

    let mut tp = vec![0.0];
    let mut fp = vec![0.0];
    let mut above_all = 0usize;
    let mut above_fix = 0usize;
    for &thresh in &fix_vals {
        while above_all < n_pix && all_vals[above_all] >= thresh {
            above_all += 1;
        }
        while above_fix < n_fix && fix_vals[above_fix] >= thresh {
            above_fix += 1;
        }
        tp.push(above_fix as f64 / n_fix as f64);
        fp.push((above_all - above_fix) as f64 / (n_pix - n_fix) as f64);
    }
    tp.push(1.0);
    fp.push(1.0);
    Ok(trapezoid(&fp, &tp))
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scene: String,
    pub group: GroupLabel,
    pub kl: f64,
    pub cc: f64,
    pub sim: f64,
    pub nss: f64,
    pub auc: f64,
}

/// Scores a prediction against ground-truth fixations. The ground-truth map
/// is rendered from `gt_points` at the prediction's resolution with `kernel`.
pub fn evaluate(
    pred: &SaliencyMap,
    gt_points: &[GridPoint],
    kernel: &KernelConfig,
    scene: &str,
    group: GroupLabel,
) -> Result<MetricReport> {
    if gt_points.is_empty() {
        return Err(Error::validation(format!("scene {scene}: no ground-truth fixations")));
    }
    let (w, h) = pred.dims();
    let gt_map = normalize_map(&render_heatmap(gt_points, w, h, kernel)?)?;
    let pred_n = normalize_map(pred)?;
    Ok(MetricReport {
        scene: scene.to_string(),
        group,
        kl: kl_div(&gt_map, &pred_n)?,
        cc: cc(&gt_map, &pred_n)?,
        sim: sim(&gt_map, &pred_n)?,
        nss: nss(&pred_n, gt_points)?,
        auc: auc_judd(&pred_n, gt_points)?,
    })
}

/// Mean of each metric over a set of reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub count: usize,
    pub kl: f64,
    pub cc: f64,
    pub sim: f64,
    pub nss: f64,
    pub auc: f64,
}

impl MetricMeans {
    /// Streaming update of the running means.
    pub fn push(&mut self, r: &MetricReport) {
        self.count += 1;
        let n = self.count as f64;
        self.kl += (r.kl - self.kl) / n;
        self.cc += (r.cc - self.cc) / n;
        self.sim += (r.sim - self.sim) / n;
        self.nss += (r.nss - self.nss) / n;
        self.auc += (r.auc - self.auc) / n;
    }
}

/// Per-group means, in group order.
pub fn aggregate_by_group(reports: &[MetricReport]) -> BTreeMap<GroupLabel, MetricMeans> {
    let mut out: BTreeMap<GroupLabel, MetricMeans> = BTreeMap::new();
    for r in reports {
        out.entry(r.group).or_default().push(r);
    }
    out
}
