//! Evaluation: point and distributional metrics over aggregated region
//! predictions, the non-trained baselines, and pixel-level oracle metrics
//! for synthetic scenes.

use crate::aggregate::{aggregate_sum, build_incidence, RegionGaussian};
use crate::error::{Error, Result};
use crate::math::{ln_factorial, normal_cdf};
use crate::predictor::{apply_head, forward, Checkpoint, HeadKind, VAR_CLAMP};
use crate::scene::Sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.8378770664093453;

/// Mean absolute error and mean absolute percentage error of aggregated
/// mean predictions. Labels must be strictly positive (zero-value regions
/// are filtered upstream).
pub fn point_metrics(labels: &[f64], mu_star: &[f64]) -> Result<(f64, f64)> {
    if labels.len() != mu_star.len() || labels.is_empty() {
        return Err(Error::shape(format!(
            "labels/predictions mismatch: {} vs {}",
            labels.len(),
            mu_star.len()
        )));
    }
    let mut abs = 0.0;
    let mut pct = 0.0;
    for (&y, &m) in labels.iter().zip(mu_star) {
        if y <= 0.0 {
            return Err(Error::domain(format!(
                "MAPE requires positive labels, got {y}"
            )));
        }
        abs += (y - m).abs();
        pct += (y - m).abs() / y;
    }
    let n = labels.len() as f64;
    Ok((abs / n, 100.0 * pct / n))
}

/// Mean over regions of the predicted probability mass within +-t of the
/// label under the aggregated Gaussian.
pub fn p_within(labels: &[f64], rg: &RegionGaussian, t: f64) -> Result<f64> {
    if labels.len() != rg.len() || labels.is_empty() {
        return Err(Error::shape("labels/gaussians mismatch".to_string()));
    }
    if !(t > 0.0) {
        return Err(Error::domain(format!("threshold must be positive, got {t}")));
    }
    let mut acc = 0.0;
    for i in 0..labels.len() {
        let var = rg.var_star[i];
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::domain(format!("non-positive variance {var}")));
        }
        let sigma = var.sqrt();
        let y = labels[i];
        let mu = rg.mu_star[i];
        acc += normal_cdf((y + t - mu) / sigma) - normal_cdf((y - t - mu) / sigma);
    }
    Ok(acc / labels.len() as f64)
}

/// Mean log density of the labels under the aggregated Gaussians; equals
/// -(total NLL)/n.
pub fn mean_log_prob(labels: &[f64], rg: &RegionGaussian) -> Result<f64> {
    if labels.len() != rg.len() || labels.is_empty() {
        return Err(Error::shape("labels/gaussians mismatch".to_string()));
    }
    let mut acc = 0.0;
    for i in 0..labels.len() {
        let var = rg.var_star[i];
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::domain(format!("non-positive variance {var}")));
        }
        let r = labels[i] - rg.mu_star[i];
        acc -= 0.5 * LN_2PI + 0.5 * var.ln() + r * r / (2.0 * var);
    }
    Ok(acc / labels.len() as f64)
}

/// Maximum-likelihood Gaussian fit of the training labels: mean and
/// population variance (divide by N), variance floored at the clamp.
pub fn gaussian_fit(train_labels: &[f64]) -> Result<(f64, f64)> {
    if train_labels.len() < 2 {
        return Err(Error::domain(
            "Gaussian fit needs at least 2 training labels".to_string(),
        ));
    }
    let n = train_labels.len() as f64;
    let mean = train_labels.iter().sum::<f64>() / n;
    let var = train_labels.iter().map(|&y| (y - mean) * (y - mean)).sum::<f64>() / n;
    Ok((mean, var.max(VAR_CLAMP)))
}

/// Per-region predictive distribution in raw label units.
#[derive(Debug, Clone, Copy)]
pub enum RegionDist {
    /// Point estimate only; distributional metrics are not applicable.
    Point(f64),
    Gaussian { mu: f64, var: f64 },
    Poisson { rate: f64 },
}

impl RegionDist {
    pub fn mean(&self) -> f64 {
        match *self {
            RegionDist::Point(v) => v,
            RegionDist::Gaussian { mu, .. } => mu,
            RegionDist::Poisson { rate } => rate,
        }
    }

    pub fn sigma(&self) -> Option<f64> {
        match *self {
            RegionDist::Point(_) => None,
            RegionDist::Gaussian { var, .. } => Some(var.sqrt()),
            RegionDist::Poisson { rate } => Some(rate.sqrt()),
        }
    }

    pub fn log_prob(&self, y: f64) -> Option<f64> {
        match *self {
            RegionDist::Point(_) => None,
            RegionDist::Gaussian { mu, var } => {
                let r = y - mu;
                Some(-(0.5 * LN_2PI + 0.5 * var.ln() + r * r / (2.0 * var)))
            }
            RegionDist::Poisson { rate } => {
                if y < 0.0 || y.fract() != 0.0 {
                    return None;
                }
                Some(y * rate.ln() - rate - ln_factorial(y as u64))
            }
        }
    }

    pub fn prob_within(&self, y: f64, t: f64) -> Option<f64> {
        match *self {
            RegionDist::Point(_) => None,
            RegionDist::Gaussian { mu, var } => {
                let sigma = var.sqrt();
                Some(normal_cdf((y + t - mu) / sigma) - normal_cdf((y - t - mu) / sigma))
            }
            RegionDist::Poisson { rate } => {
                // sum the pmf over the integer window [y-t, y+t]
                let lo = ((y - t).ceil().max(0.0)) as u64;
                let hi = (y + t).floor() as u64;
                let mut acc = 0.0;
                for k in lo..=hi {
                    acc += (k as f64 * rate.ln() - rate - ln_factorial(k)).exp();
                }
                Some(acc.min(1.0))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PWithinEntry {
    pub threshold: f64,
    pub probability: f64,
}

/// All Table-style metrics for one method, in raw currency units.
/// Distributional columns are `None` (rendered "NA") for point predictors;
/// pixel metrics are present exactly when oracle maps were available.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub n_regions: usize,
    pub mae: f64,
    pub mape: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_within: Option<Vec<PWithinEntry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_log_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pixel_mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pixel_corr: Option<f64>,
}

/// Per-pixel predictions for one sample, raw label units.
#[derive(Debug, Clone)]
pub struct PixelPrediction {
    pub mu_map: Vec<f64>,
    /// Present for Gaussian predictors.
    pub var_map: Option<Vec<f64>>,
    /// Poisson predictors aggregate rates rather than (mu, var) pairs.
    pub poisson: bool,
}

/// Aggregate per-pixel predictions over each sample's regions and pool all
/// metrics. The seam between model execution and metric arithmetic: tests
/// can feed hand-built maps (for instance the oracle itself).
pub fn metrics_from_predictions(
    samples: &[&Sample],
    preds: &[PixelPrediction],
    thresholds: &[f64],
    method: &str,
) -> Result<MetricsReport> {
    if samples.len() != preds.len() || samples.is_empty() {
        return Err(Error::shape(format!(
            "{} samples with {} prediction sets",
            samples.len(),
            preds.len()
        )));
    }

    let mut labels = Vec::new();
    let mut dists: Vec<RegionDist> = Vec::new();
    // pooled pixel-level accumulators over oracle-bearing samples
    let mut px_abs = 0.0;
    let mut px: Vec<(f64, f64)> = Vec::new();

    for (sample, pred) in samples.iter().zip(preds) {
        let inc = build_incidence(&sample.regions)?;
        if pred.mu_map.len() != inc.n_pixels() {
            return Err(Error::shape(format!(
                "prediction map size {} does not match sample '{}'",
                pred.mu_map.len(),
                sample.id
            )));
        }
        let mu_star = aggregate_sum(&inc, &pred.mu_map)?;
        let var_star = match &pred.var_map {
            Some(v) => Some(aggregate_sum(&inc, v)?),
            None => None,
        };
        for i in 0..mu_star.len() {
            labels.push(sample.labels.values[i]);
            let dist = if pred.poisson {
                RegionDist::Poisson {
                    rate: mu_star[i].max(VAR_CLAMP),
                }
            } else if let Some(vs) = &var_star {
                RegionDist::Gaussian {
                    mu: mu_star[i],
                    var: vs[i].max(VAR_CLAMP),
                }
            } else {
                RegionDist::Point(mu_star[i])
            };
            dists.push(dist);
        }
        if let Some(oracle) = &sample.oracle {
            for (p, &m) in sample.regions.mask.iter().enumerate() {
                if m > 0 {
                    px_abs += (pred.mu_map[p] - oracle[p]).abs();
                    px.push((pred.mu_map[p], oracle[p]));
                }
            }
        }
    }

    let mu_star: Vec<f64> = dists.iter().map(|d| d.mean()).collect();
    let (mae, mape) = point_metrics(&labels, &mu_star)?;

    let distributional = dists
        .iter()
        .all(|d| !matches!(d, RegionDist::Point(_)));
    let (p_within, avg_sigma, mean_lp) = if distributional {
        let mut entries = Vec::new();
        for &t in thresholds {
            let mut acc = 0.0;
            for (d, &y) in dists.iter().zip(&labels) {
                acc += d.prob_within(y, t).expect("distributional");
            }
            entries.push(PWithinEntry {
                threshold: t,
                probability: acc / dists.len() as f64,
            });
        }
        let sigma = dists.iter().map(|d| d.sigma().expect("distributional")).sum::<f64>()
            / dists.len() as f64;
        let mut lp = 0.0;
        for (d, &y) in dists.iter().zip(&labels) {
            lp += d
                .log_prob(y)
                .ok_or_else(|| Error::domain(format!("label {y} outside the support")))?;
        }
        (
            Some(entries),
            Some(sigma),
            Some(lp / dists.len() as f64),
        )
    } else {
        (None, None, None)
    };

    let (pixel_mae, pixel_corr) = if px.is_empty() {
        (None, None)
    } else {
        let n = px.len() as f64;
        let corr = pearson(&px);
        (Some(px_abs / n), Some(corr))
    };

    Ok(MetricsReport {
        method: method.to_string(),
        n_regions: labels.len(),
        mae,
        mape,
        p_within,
        avg_sigma,
        mean_log_prob: mean_lp,
        pixel_mae,
        pixel_corr,
    })
}

fn pearson(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Run the checkpointed model over one chip and unscale to raw units.
pub fn predict_maps(ckpt: &Checkpoint, sample: &Sample) -> Result<PixelPrediction> {
    let head = ckpt.params.config.head;
    check_method_head(ckpt)?;
    let (raw, _) = forward(&ckpt.params, &sample.chip)?;
    let (first, second) = apply_head(&raw.raw_mu, &raw.raw_s, head);
    let scale = ckpt.label_scale;
    Ok(match head {
        HeadKind::Gaussian => PixelPrediction {
            mu_map: first.iter().map(|&m| m * scale).collect(),
            var_map: Some(second.iter().map(|&v| v * scale * scale).collect()),
            poisson: false,
        },
        HeadKind::Deterministic => PixelPrediction {
            mu_map: first.iter().map(|&m| m * scale).collect(),
            var_map: None,
            poisson: false,
        },
        HeadKind::Poisson => PixelPrediction {
            mu_map: first,
            var_map: None,
            poisson: true,
        },
    })
}

fn check_method_head(ckpt: &Checkpoint) -> Result<()> {
    let expected = match ckpt.method.as_str() {
        "analytical" | "sampling" | "uniform" => HeadKind::Gaussian,
        "deterministic" => HeadKind::Deterministic,
        "poisson" => HeadKind::Poisson,
        other => {
            return Err(Error::config(format!(
                "unknown checkpoint method '{other}'"
            )))
        }
    };
    if ckpt.params.config.head != expected {
        return Err(Error::config(format!(
            "checkpoint method '{}' does not match its {:?} head",
            ckpt.method, ckpt.params.config.head
        )));
    }
    Ok(())
}

/// Evaluate a checkpoint over samples: forward every chip, aggregate the
/// per-pixel predictions, and compute every applicable metric in raw
/// currency units.
pub fn evaluate(
    ckpt: &Checkpoint,
    samples: &[&Sample],
    thresholds: &[f64],
) -> Result<MetricsReport> {
    check_method_head(ckpt)?;
    let preds: Vec<Result<PixelPrediction>> = samples
        .par_iter()
        .map(|s| predict_maps(ckpt, s))
        .collect();
    let preds = preds.into_iter().collect::<Result<Vec<_>>>()?;
    metrics_from_predictions(samples, &preds, thresholds, &ckpt.method)
}

/// Metrics of the Gaussian-fit baseline: every test region predicted as the
/// one Gaussian fitted to the training labels.
pub fn gaussian_fit_report(
    train_labels: &[f64],
    test_labels: &[f64],
    thresholds: &[f64],
) -> Result<MetricsReport> {
    let (mu_hat, var_hat) = gaussian_fit(train_labels)?;
    if test_labels.is_empty() {
        return Err(Error::shape("no test labels".to_string()));
    }
    let n = test_labels.len();
    let rg = RegionGaussian {
        mu_star: vec![mu_hat; n],
        var_star: vec![var_hat; n],
    };
    let (mae, mape) = point_metrics(test_labels, &rg.mu_star)?;
    let entries = thresholds
        .iter()
        .map(|&t| {
            Ok(PWithinEntry {
                threshold: t,
                probability: p_within(test_labels, &rg, t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        method: "gaussian-fit".to_string(),
        n_regions: n,
        mae,
        mape,
        p_within: Some(entries),
        avg_sigma: Some(var_hat.sqrt()),
        mean_log_prob: Some(mean_log_prob(test_labels, &rg)?),
        pixel_mae: None,
        pixel_corr: None,
    })
}

/// Metrics of the size-estimation baseline: the train-set mean pixel value
/// times each test region's pixel area. Point metrics only.
pub fn size_estimation_report(train: &[&Sample], test: &[&Sample]) -> Result<MetricsReport> {
    let mut value_sum = 0.0;
    let mut area_sum = 0.0;
    for s in train {
        let areas = s.regions.region_areas();
        for (i, &y) in s.labels.values.iter().enumerate() {
            value_sum += y;
            area_sum += areas[i] as f64;
        }
    }
    if area_sum == 0.0 {
        return Err(Error::domain("empty training set".to_string()));
    }
    let rho = value_sum / area_sum;

    let mut labels = Vec::new();
    let mut preds = Vec::new();
    for s in test {
        let areas = s.regions.region_areas();
        for (i, &y) in s.labels.values.iter().enumerate() {
            labels.push(y);
            preds.push(rho * areas[i] as f64);
        }
    }
    let (mae, mape) = point_metrics(&labels, &preds)?;
    Ok(MetricsReport {
        method: "size-estimation".to_string(),
        n_regions: labels.len(),
        mae,
        mape,
        p_within: None,
        avg_sigma: None,
        mean_log_prob: None,
        pixel_mae: None,
        pixel_corr: None,
    })
}

/// Evaluate the label-spreading itself (no model): each region's value
/// placed uniformly over its pixels. Parcel-level error is zero by
/// construction; the point is the pixel-level comparison against oracles.
pub fn uniform_disaggregation_report(
    samples: &[&Sample],
    thresholds: &[f64],
) -> Result<MetricsReport> {
    let preds: Vec<PixelPrediction> = samples
        .iter()
        .map(|s| {
            let (targets, _) = crate::train::uniform_label_targets(s);
            PixelPrediction {
                mu_map: targets,
                var_map: None,
                poisson: false,
            }
        })
        .collect();
    metrics_from_predictions(samples, &preds, thresholds, "uniform-disaggregation")
}

/// Render reports as an aligned text table with the Table-1 column set.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let thresholds: Vec<f64> = reports
        .iter()
        .find_map(|r| {
            r.p_within
                .as_ref()
                .map(|p| p.iter().map(|e| e.threshold).collect())
        })
        .unwrap_or_else(|| vec![1e4, 1e5]);
    let mut header = vec!["Method".to_string(), "MAE".into(), "MAPE".into()];
    for t in &thresholds {
        header.push(format!("P±({:.0e})", t));
    }
    header.push("Average σ̂".into());
    header.push("Log Prob (avg)".into());

    let mut rows = vec![header];
    for r in reports {
        let mut row = vec![
            r.method.clone(),
            format!("${:.0}", r.mae),
            format!("{:.2}%", r.mape),
        ];
        for (k, _) in thresholds.iter().enumerate() {
            row.push(match &r.p_within {
                Some(p) if k < p.len() => format!("{:.2}%", 100.0 * p[k].probability),
                _ => "NA".to_string(),
            });
        }
        row.push(match r.avg_sigma {
            Some(s) => format!("${:.0}", s),
            None => "NA".to_string(),
        });
        row.push(match r.mean_log_prob {
            Some(lp) => format!("{:.2}", lp),
            None => "NA".to_string(),
        });
        rows.push(row);
    }

    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            out.push_str(cell);
            out.extend(std::iter::repeat(' ').take(pad + 2));
        }
        out.pop();
        out.pop();
        out.push('\n');
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (cols - 1);
            out.extend(std::iter::repeat('-').take(total));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_metric_closed_forms() {
        let (mae, mape) = point_metrics(&[100.0], &[110.0]).unwrap();
        assert!((mae - 10.0).abs() < 1e-12);
        assert!((mape - 10.0).abs() < 1e-12);

        let (mae, mape) = point_metrics(&[100.0, 200.0], &[100.0, 200.0]).unwrap();
        assert_eq!((mae, mape), (0.0, 0.0));

        let (mae, mape) = point_metrics(&[100.0, 200.0], &[110.0, 180.0]).unwrap();
        assert!((mae - 15.0).abs() < 1e-12);
        assert!((mape - 10.0).abs() < 1e-12);

        assert!(point_metrics(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn p_within_closed_forms() {
        let rg = RegionGaussian {
            mu_star: vec![5.0],
            var_star: vec![4.0],
        };
        // mu = y, sigma = t: 2 Phi(1) - 1
        let p = p_within(&[5.0], &rg, 2.0).unwrap();
        assert!((p - 0.6826894921370859).abs() < 1e-9);

        let tight = RegionGaussian {
            mu_star: vec![5.0],
            var_star: vec![VAR_CLAMP],
        };
        assert!(p_within(&[5.0], &tight, 1.0).unwrap() > 1.0 - 1e-12);

        let far = RegionGaussian {
            mu_star: vec![5.0 + 10.0 * 2.0],
            var_star: vec![4.0],
        };
        assert!(p_within(&[5.0], &far, 2.0).unwrap() < 1e-15);
    }

    #[test]
    fn p_within_monotone_in_threshold() {
        let rg = RegionGaussian {
            mu_star: vec![3.0, -1.0, 10.0],
            var_star: vec![2.0, 5.0, 0.5],
        };
        let labels = [2.0, 0.0, 12.0];
        let mut prev = 0.0;
        for k in 1..30 {
            let t = k as f64 * 0.5;
            let p = p_within(&labels, &rg, t).unwrap();
            assert!(p >= prev - 1e-15);
            assert!((0.0..=1.0).contains(&p));
            prev = p;
        }
    }

    #[test]
    fn mean_log_prob_closed_forms() {
        let rg = RegionGaussian {
            mu_star: vec![7.0],
            var_star: vec![1.0],
        };
        let lp = mean_log_prob(&[7.0], &rg).unwrap();
        assert!((lp + 0.9189385332046727).abs() < 1e-12);

        let wide = RegionGaussian {
            mu_star: vec![7.0],
            var_star: vec![1e8],
        };
        let lp = mean_log_prob(&[7.0], &wide).unwrap();
        assert!((lp + 10.129278905180855).abs() < 1e-9);
    }

    #[test]
    fn mean_log_prob_is_negated_nll_over_n() {
        use crate::aggregate::build_incidence;
        use crate::objective::gaussian_nll;
        use crate::scene::RegionSet;
        let rs = RegionSet::new(2, 2, vec![1, 1, 2, 2]).unwrap();
        let inc = build_incidence(&rs).unwrap();
        let rg = RegionGaussian {
            mu_star: vec![1.0, 2.0],
            var_star: vec![0.5, 3.0],
        };
        let labels = [1.5, 1.0];
        let lp = mean_log_prob(&labels, &rg).unwrap();
        let nll = gaussian_nll(&labels, &rg, &inc).unwrap().loss;
        assert!((lp + nll / 2.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_fit_is_population_mle() {
        let (mu, var) = gaussian_fit(&[1.0, 2.0, 3.0]).unwrap();
        assert!((mu - 2.0).abs() < 1e-12);
        assert!((var - 2.0 / 3.0).abs() < 1e-12);
        assert!(gaussian_fit(&[1.0]).is_err());

        // identical labels collapse to the clamp
        let (_, var) = gaussian_fit(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(var, VAR_CLAMP);
        let rg = RegionGaussian {
            mu_star: vec![5.0],
            var_star: vec![var],
        };
        assert!(p_within(&[5.0], &rg, 1.0).unwrap() > 1.0 - 1e-12);
        assert!(mean_log_prob(&[5.0], &rg).unwrap() > 0.0);
    }

    #[test]
    fn poisson_dist_window_probability() {
        let d = RegionDist::Poisson { rate: 2.0 };
        // the full support sums to 1
        let p = d.prob_within(0.0, 60.0).unwrap();
        assert!((p - 1.0).abs() < 1e-9);
        let lp = d.log_prob(2.0).unwrap();
        assert!((lp - (2.0 * 2.0f64.ln() - 2.0 - 2.0f64.ln())).abs() < 1e-12);
    }
}
