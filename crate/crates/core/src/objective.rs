//! Loss functions and their exact gradients. Region-level losses scatter
//! their gradients back to pixel maps through the aggregation transpose;
//! pixel-level losses differentiate directly.

use crate::aggregate::{aggregate_sum, aggregate_sum_backward, RegionGaussian, RegionIncidence};
use crate::error::{Error, Result};
use crate::math::{ln_factorial, normal_from_hash};

const LN_2PI: f64 = 1.8378770664093453;

/// Loss value plus pixel-map gradients. `d_mu_map` carries the gradient of
/// the primary channel (mean, value estimate, or rate depending on the
/// head); `d_var_map` the variance-channel gradient, all zeros for heads
/// without one. `per_region_loss` is diagnostic.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub loss: f64,
    pub d_mu_map: Vec<f64>,
    pub d_var_map: Vec<f64>,
    pub per_region_loss: Vec<f64>,
}

/// Negative log-likelihood of the region labels under the aggregated
/// Gaussians, summed over regions:
/// sum_i [ ln(2pi)/2 + ln sigma*_i + (y_i - mu*_i)^2 / (2 sigma*^2_i) ].
pub fn gaussian_nll(
    labels: &[f64],
    rg: &RegionGaussian,
    inc: &RegionIncidence,
) -> Result<LossResult> {
    let n = labels.len();
    if rg.len() != n || inc.n_regions() != n {
        return Err(Error::shape(format!(
            "labels/regions mismatch: {n} labels, {} gaussians, {} incidence rows",
            rg.len(),
            inc.n_regions()
        )));
    }
    let mut loss = 0.0;
    let mut per_region = Vec::with_capacity(n);
    let mut d_mu = Vec::with_capacity(n);
    let mut d_var = Vec::with_capacity(n);
    for i in 0..n {
        let (y, mu, var) = (labels[i], rg.mu_star[i], rg.var_star[i]);
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::domain(format!(
                "non-positive aggregated variance {var} in region {}",
                i + 1
            )));
        }
        let r = y - mu;
        let li = 0.5 * LN_2PI + 0.5 * var.ln() + r * r / (2.0 * var);
        per_region.push(li);
        loss += li;
        d_mu.push((mu - y) / var);
        d_var.push(0.5 * (1.0 / var - r * r / (var * var)));
    }
    Ok(LossResult {
        loss,
        d_mu_map: aggregate_sum_backward(inc, &d_mu)?,
        d_var_map: aggregate_sum_backward(inc, &d_var)?,
        per_region_loss: per_region,
    })
}

/// Squared-error loss on aggregated point estimates:
/// sum_i (y_i - yhat_i)^2, with the region gradient -2(y_i - yhat_i)
/// scattered to pixels.
pub fn mse_loss(
    labels: &[f64],
    region_preds: &[f64],
    inc: &RegionIncidence,
) -> Result<LossResult> {
    let n = labels.len();
    if region_preds.len() != n || inc.n_regions() != n {
        return Err(Error::shape(format!(
            "labels/predictions mismatch: {n} vs {}",
            region_preds.len()
        )));
    }
    let mut loss = 0.0;
    let mut per_region = Vec::with_capacity(n);
    let mut d_pred = Vec::with_capacity(n);
    for i in 0..n {
        let r = labels[i] - region_preds[i];
        per_region.push(r * r);
        loss += r * r;
        d_pred.push(-2.0 * r);
    }
    let d_mu_map = aggregate_sum_backward(inc, &d_pred)?;
    let d_var_map = vec![0.0; d_mu_map.len()];
    Ok(LossResult {
        loss,
        d_mu_map,
        d_var_map,
        per_region_loss: per_region,
    })
}

/// Poisson negative log-likelihood for count labels under aggregated rates:
/// sum_i [ lambda*_i - y_i ln lambda*_i + ln(y_i!) ].
pub fn poisson_nll(
    count_labels: &[f64],
    lambda_star: &[f64],
    inc: &RegionIncidence,
) -> Result<LossResult> {
    let n = count_labels.len();
    if lambda_star.len() != n || inc.n_regions() != n {
        return Err(Error::shape(format!(
            "labels/rates mismatch: {n} vs {}",
            lambda_star.len()
        )));
    }
    let mut loss = 0.0;
    let mut per_region = Vec::with_capacity(n);
    let mut d_lambda = Vec::with_capacity(n);
    for i in 0..n {
        let y = count_labels[i];
        if y < 0.0 || y.fract() != 0.0 || !y.is_finite() {
            return Err(Error::domain(format!(
                "Poisson labels must be nonnegative integers, got {y}"
            )));
        }
        let l = lambda_star[i];
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::domain(format!("non-positive rate {l}")));
        }
        let li = l - y * l.ln() + ln_factorial(y as u64);
        per_region.push(li);
        loss += li;
        d_lambda.push(1.0 - y / l);
    }
    let d_mu_map = aggregate_sum_backward(inc, &d_lambda)?;
    let d_var_map = vec![0.0; d_mu_map.len()];
    Ok(LossResult {
        loss,
        d_mu_map,
        d_var_map,
        per_region_loss: per_region,
    })
}

/// Total differential entropy of independent per-pixel Gaussians over the
/// whole map: sum_p ln(2 pi e sigma_p^2) / 2, with gradient 1/(2 sigma_p^2).
pub fn gaussian_entropy(var_map: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(var_map.len());
    for (p, &v) in var_map.iter().enumerate() {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::domain(format!(
                "non-positive variance {v} at pixel {p}"
            )));
        }
        total += 0.5 * (LN_2PI + 1.0 + v.ln());
        grad.push(0.5 / v);
    }
    Ok((total, grad))
}

/// Pixel-level Gaussian NLL against dense per-pixel targets, restricted to
/// the masked-in pixels (the uniform-label baseline's objective).
pub fn pixel_gaussian_nll(
    targets: &[f64],
    mask: &[bool],
    mu_map: &[f64],
    var_map: &[f64],
) -> Result<LossResult> {
    let n = targets.len();
    if mask.len() != n || mu_map.len() != n || var_map.len() != n {
        return Err(Error::shape("pixel NLL maps must share one shape".to_string()));
    }
    let mut loss = 0.0;
    let mut d_mu = vec![0.0; n];
    let mut d_var = vec![0.0; n];
    for p in 0..n {
        if !mask[p] {
            continue;
        }
        let v = var_map[p];
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::domain(format!(
                "non-positive variance {v} at pixel {p}"
            )));
        }
        let r = targets[p] - mu_map[p];
        loss += 0.5 * LN_2PI + 0.5 * v.ln() + r * r / (2.0 * v);
        d_mu[p] = (mu_map[p] - targets[p]) / v;
        d_var[p] = 0.5 * (1.0 / v - r * r / (v * v));
    }
    Ok(LossResult {
        loss,
        d_mu_map: d_mu,
        d_var_map: d_var,
        per_region_loss: Vec::new(),
    })
}

/// Reparameterized sampling objective: draw one value per pixel as
/// mu + sigma * eps, aggregate, and penalize squared error against the
/// labels, minus `lambda_reg` times the entropy of the pixel distributions
/// over region-covered pixels. Noise is a pure function of (seed, pixel),
/// so results do not depend on evaluation order.
pub fn sampling_objective(
    labels: &[f64],
    mu_map: &[f64],
    var_map: &[f64],
    inc: &RegionIncidence,
    lambda_reg: f64,
    seed: u64,
) -> Result<LossResult> {
    let noise: Vec<f64> = (0..mu_map.len())
        .map(|p| normal_from_hash(seed, p as u64))
        .collect();
    sampling_objective_with_noise(labels, mu_map, var_map, inc, lambda_reg, &noise)
}

/// [`sampling_objective`] with the unit normal draws passed explicitly;
/// the test seam for frozen-noise gradient checks.
pub fn sampling_objective_with_noise(
    labels: &[f64],
    mu_map: &[f64],
    var_map: &[f64],
    inc: &RegionIncidence,
    lambda_reg: f64,
    noise: &[f64],
) -> Result<LossResult> {
    let n_px = inc.n_pixels();
    if mu_map.len() != n_px || var_map.len() != n_px || noise.len() != n_px {
        return Err(Error::shape(format!(
            "maps must have {n_px} pixels to match the incidence"
        )));
    }
    if labels.len() != inc.n_regions() {
        return Err(Error::shape(format!(
            "{} labels for {} regions",
            labels.len(),
            inc.n_regions()
        )));
    }

    let mut covered = vec![false; n_px];
    for i in 0..inc.n_regions() {
        for (p, _) in inc.region_entries(i) {
            covered[p] = true;
        }
    }
    for p in 0..n_px {
        if covered[p] && (!(var_map[p] > 0.0) || !var_map[p].is_finite()) {
            return Err(Error::domain(format!(
                "non-positive variance {} at pixel {p}",
                var_map[p]
            )));
        }
    }

    let sampled: Vec<f64> = (0..n_px)
        .map(|p| mu_map[p] + var_map[p].max(0.0).sqrt() * noise[p])
        .collect();
    let y_hat = aggregate_sum(inc, &sampled)?;

    let mut mse = 0.0;
    let mut per_region = Vec::with_capacity(labels.len());
    let mut d_pred = Vec::with_capacity(labels.len());
    for (i, &y) in labels.iter().enumerate() {
        let r = y - y_hat[i];
        per_region.push(r * r);
        mse += r * r;
        d_pred.push(-2.0 * r);
    }
    let d_sample = aggregate_sum_backward(inc, &d_pred)?;

    // entropy over region-covered pixels only, matching the objective's
    // sum over regions of per-pixel entropies
    let mut entropy = 0.0;
    let mut d_mu = vec![0.0; n_px];
    let mut d_var = vec![0.0; n_px];
    for p in 0..n_px {
        d_mu[p] = d_sample[p];
        if covered[p] {
            let v = var_map[p];
            entropy += 0.5 * (LN_2PI + 1.0 + v.ln());
            // d sample / d var = eps / (2 sigma); entropy grad enters with
            // the -lambda sign of the total loss
            d_var[p] = d_sample[p] * noise[p] / (2.0 * v.sqrt()) - lambda_reg * 0.5 / v;
        }
    }

    Ok(LossResult {
        loss: mse - lambda_reg * entropy,
        d_mu_map: d_mu,
        d_var_map: d_var,
        per_region_loss: per_region,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{aggregate_gaussian, build_incidence};
    use crate::scene::RegionSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_pixel_inc() -> RegionIncidence {
        // one region over one pixel of a 1x2 grid
        build_incidence(&RegionSet::new(1, 2, vec![1, 0]).unwrap()).unwrap()
    }

    #[test]
    fn gaussian_nll_closed_forms() {
        let inc = single_pixel_inc();
        let rg = RegionGaussian {
            mu_star: vec![0.0],
            var_star: vec![1.0],
        };
        let r = gaussian_nll(&[0.0], &rg, &inc).unwrap();
        assert!((r.loss - 0.9189385332046727).abs() < 1e-12);
        assert_eq!(r.d_mu_map[0], 0.0);
        assert!((r.d_var_map[0] - 0.5).abs() < 1e-12);

        let r = gaussian_nll(&[1.0], &rg, &inc).unwrap();
        assert!((r.loss - 1.4189385332046727).abs() < 1e-12);
        assert!((r.d_mu_map[0] - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_nll_rejects_nonpositive_variance() {
        let inc = single_pixel_inc();
        let rg = RegionGaussian {
            mu_star: vec![0.0],
            var_star: vec![0.0],
        };
        assert!(gaussian_nll(&[0.0], &rg, &inc).is_err());
    }

    #[test]
    fn gaussian_nll_is_minimized_at_the_label() {
        let inc = single_pixel_inc();
        let y = 3.0;
        let at = |mu: f64| {
            let rg = RegionGaussian {
                mu_star: vec![mu],
                var_star: vec![2.0],
            };
            gaussian_nll(&[y], &rg, &inc).unwrap().loss
        };
        let best = at(y);
        for k in -10..=10 {
            let mu = y + k as f64 * 0.37;
            assert!(at(mu) >= best);
        }
    }

    #[test]
    fn mse_loss_closed_forms() {
        let inc = single_pixel_inc();
        let r = mse_loss(&[3.0], &[1.0], &inc).unwrap();
        assert_eq!(r.loss, 4.0);
        // gradient of (y - yhat)^2 at yhat = 1 is -2(3 - 1)
        assert_eq!(r.d_mu_map[0], -4.0);
        let r = mse_loss(&[3.0], &[3.0], &inc).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.d_mu_map.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn poisson_nll_closed_forms() {
        let inc = single_pixel_inc();
        let r = poisson_nll(&[2.0], &[2.0], &inc).unwrap();
        assert!((r.loss - (2.0 - 2.0f64.ln())).abs() < 1e-12);
        assert!(r.d_mu_map[0].abs() < 1e-12);

        let r = poisson_nll(&[0.0], &[1.0], &inc).unwrap();
        assert!((r.loss - 1.0).abs() < 1e-12);
        assert!((r.d_mu_map[0] - 1.0).abs() < 1e-12);

        assert!(poisson_nll(&[1.5], &[1.0], &inc).is_err());
        assert!(poisson_nll(&[-1.0], &[1.0], &inc).is_err());
        assert!(poisson_nll(&[1.0], &[0.0], &inc).is_err());
    }

    #[test]
    fn poisson_nll_minimized_at_rate_equal_to_count() {
        let inc = single_pixel_inc();
        let at = |l: f64| poisson_nll(&[4.0], &[l], &inc).unwrap().loss;
        let best = at(4.0);
        for &l in &[0.5, 1.0, 2.0, 3.0, 3.9, 4.1, 5.0, 8.0, 20.0] {
            assert!(at(l) >= best, "loss at {l} below minimum");
        }
    }

    #[test]
    fn entropy_closed_forms_and_additivity() {
        let (h1, g1) = gaussian_entropy(&[1.0]).unwrap();
        assert!((h1 - 1.4189385332046727).abs() < 1e-12);
        assert!((g1[0] - 0.5).abs() < 1e-12);

        let e2 = std::f64::consts::E * std::f64::consts::E;
        let (h2, _) = gaussian_entropy(&[e2]).unwrap();
        assert!((h2 - 2.4189385332046727).abs() < 1e-12);

        let (h4, _) = gaussian_entropy(&[1.0; 4]).unwrap();
        assert!((h4 - 4.0 * 1.4189385332046727).abs() < 1e-12);

        assert!(gaussian_entropy(&[0.0]).is_err());
    }

    #[test]
    fn nll_matches_independent_single_gaussian_per_region() {
        // closure consistency: summing pixel Gaussians first, or treating
        // the region as one Gaussian with summed parameters, is identical
        let rs = RegionSet::new(2, 2, vec![1, 1, 2, 2]).unwrap();
        let inc = build_incidence(&rs).unwrap();
        let mu = [0.5, 1.5, -0.3, 0.9];
        let var = [0.2, 0.8, 1.1, 0.4];
        let labels = [2.5, 0.1];
        let rg = aggregate_gaussian(&inc, &mu, &var).unwrap();
        let got = gaussian_nll(&labels, &rg, &inc).unwrap().loss;

        let mut expect = 0.0;
        for i in 0..2 {
            let (m, v): (f64, f64) = inc
                .region_entries(i)
                .fold((0.0, 0.0), |acc, (p, _)| (acc.0 + mu[p], acc.1 + var[p]));
            expect +=
                0.5 * LN_2PI + v.sqrt().ln() + (labels[i] - m).powi(2) / (2.0 * v);
        }
        assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn sampling_objective_at_zero_noise_equals_mse_on_means() {
        let rs = RegionSet::new(2, 2, vec![1, 1, 2, 2]).unwrap();
        let inc = build_incidence(&rs).unwrap();
        let mu = [0.5, 1.5, -0.3, 0.9];
        let var = [0.2, 0.8, 1.1, 0.4];
        let labels = [2.5, 0.1];
        let zeros = [0.0; 4];
        let sampled =
            sampling_objective_with_noise(&labels, &mu, &var, &inc, 0.0, &zeros).unwrap();
        let preds = aggregate_sum(&inc, &mu).unwrap();
        let direct = mse_loss(&labels, &preds, &inc).unwrap();
        assert_eq!(sampled.loss, direct.loss);
        assert_eq!(sampled.d_mu_map, direct.d_mu_map);
    }

    #[test]
    fn sampling_objective_noise_matches_predictive_variance() {
        // with labels equal to aggregated means, E[(y - yhat)^2] = Var(yhat)
        // = sum of region variances
        let rs = RegionSet::new(2, 2, vec![1, 1, 2, 2]).unwrap();
        let inc = build_incidence(&rs).unwrap();
        let mu = [0.5, 1.5, -0.3, 0.9];
        let var = [0.2, 0.8, 1.1, 0.4];
        let labels = aggregate_sum(&inc, &mu).unwrap();
        let expect: f64 = var.iter().sum();
        let mut acc = 0.0;
        let trials = 5000;
        for seed in 0..trials {
            let r = sampling_objective(&labels, &mu, &var, &inc, 0.0, seed).unwrap();
            acc += r.loss;
        }
        let mean = acc / trials as f64;
        assert!(
            (mean - expect).abs() < 0.05 * expect,
            "mean {mean} vs {expect}"
        );
    }

    #[test]
    fn sampling_objective_is_deterministic_per_seed() {
        let inc = single_pixel_inc();
        let a = sampling_objective(&[1.0], &[0.5, 0.0], &[0.3, 1.0], &inc, 0.1, 7).unwrap();
        let b = sampling_objective(&[1.0], &[0.5, 0.0], &[0.3, 1.0], &inc, 0.1, 7).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.d_var_map, b.d_var_map);
    }

    /// Central finite differences over the pixel maps for any loss closure.
    fn fd_pixel_maps(
        f: &dyn Fn(&[f64], &[f64]) -> f64,
        mu: &[f64],
        var: &[f64],
        d_mu: &[f64],
        d_var: &[f64],
        tol: f64,
    ) {
        let h = 1e-5;
        for p in 0..mu.len() {
            let mut m = mu.to_vec();
            m[p] += h;
            let up = f(&m, var);
            m[p] = mu[p] - h;
            let dn = f(&m, var);
            let fd = (up - dn) / (2.0 * h);
            let denom = fd.abs().max(d_mu[p].abs()).max(1e-6);
            assert!(
                (fd - d_mu[p]).abs() / denom < tol,
                "mu[{p}]: fd {fd} vs {}",
                d_mu[p]
            );

            let mut v = var.to_vec();
            v[p] += h;
            let up = f(mu, &v);
            v[p] = var[p] - h;
            let dn = f(mu, &v);
            let fd = (up - dn) / (2.0 * h);
            let denom = fd.abs().max(d_var[p].abs()).max(1e-6);
            assert!(
                (fd - d_var[p]).abs() / denom < tol,
                "var[{p}]: fd {fd} vs {}",
                d_var[p]
            );
        }
    }

    #[test]
    fn gaussian_nll_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (h, w) = (4, 4);
        let mask: Vec<u32> = (0..16).map(|p| (p % 5) as u32 + 1).collect();
        let rs = RegionSet::new(h, w, mask).unwrap();
        let inc = build_incidence(&rs).unwrap();
        let mu: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let var: Vec<f64> = (0..16).map(|_| rng.gen_range(0.5..2.0)).collect();
        let labels: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let res = {
            let rg = aggregate_gaussian(&inc, &mu, &var).unwrap();
            gaussian_nll(&labels, &rg, &inc).unwrap()
        };
        let f = |m: &[f64], v: &[f64]| {
            let rg = aggregate_gaussian(&inc, m, v).unwrap();
            gaussian_nll(&labels, &rg, &inc).unwrap().loss
        };
        fd_pixel_maps(&f, &mu, &var, &res.d_mu_map, &res.d_var_map, 1e-5);
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mask: Vec<u32> = (0..16).map(|p| (p % 3) as u32 + 1).collect();
        let rs = RegionSet::new(4, 4, mask).unwrap();
        let inc = build_incidence(&rs).unwrap();
        let values: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let preds = aggregate_sum(&inc, &values).unwrap();
        let res = mse_loss(&labels, &preds, &inc).unwrap();
        let dummy_var = vec![1.0; 16];
        let f = |m: &[f64], _: &[f64]| {
            let preds = aggregate_sum(&inc, m).unwrap();
            mse_loss(&labels, &preds, &inc).unwrap().loss
        };
        fd_pixel_maps(
            &f,
            &values,
            &dummy_var,
            &res.d_mu_map,
            &vec![0.0; 16],
            1e-6,
        );
    }

    #[test]
    fn poisson_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mask: Vec<u32> = (0..16).map(|p| (p % 4) as u32 + 1).collect();
        let rs = RegionSet::new(4, 4, mask).unwrap();
        let inc = build_incidence(&rs).unwrap();
        let rates: Vec<f64> = (0..16).map(|_| rng.gen_range(0.5..3.0)).collect();
        let labels: Vec<f64> = (0..4).map(|_| rng.gen_range(0..20) as f64).collect();

        let lam = aggregate_sum(&inc, &rates).unwrap();
        let res = poisson_nll(&labels, &lam, &inc).unwrap();
        let dummy = vec![1.0; 16];
        let f = |m: &[f64], _: &[f64]| {
            let lam = aggregate_sum(&inc, m).unwrap();
            poisson_nll(&labels, &lam, &inc).unwrap().loss
        };
        fd_pixel_maps(&f, &rates, &dummy, &res.d_mu_map, &vec![0.0; 16], 1e-6);
    }

    #[test]
    fn sampling_gradient_matches_finite_differences_with_frozen_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mask: Vec<u32> = (0..16).map(|p| (p % 3) as u32 + 1).collect();
        let rs = RegionSet::new(4, 4, mask).unwrap();
        let inc = build_incidence(&rs).unwrap();
        let mu: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let var: Vec<f64> = (0..16).map(|_| rng.gen_range(0.5..2.0)).collect();
        let labels: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let noise: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let lambda_reg = 0.3;

        let res =
            sampling_objective_with_noise(&labels, &mu, &var, &inc, lambda_reg, &noise).unwrap();
        let f = |m: &[f64], v: &[f64]| {
            sampling_objective_with_noise(&labels, m, v, &inc, lambda_reg, &noise)
                .unwrap()
                .loss
        };
        fd_pixel_maps(&f, &mu, &var, &res.d_mu_map, &res.d_var_map, 1e-4);
    }

    #[test]
    fn pixel_nll_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let n = 16;
        let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mask: Vec<bool> = (0..n).map(|p| p % 4 != 3).collect();
        let mu: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let var: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();

        let res = pixel_gaussian_nll(&targets, &mask, &mu, &var).unwrap();
        let f = |m: &[f64], v: &[f64]| pixel_gaussian_nll(&targets, &mask, m, v).unwrap().loss;
        fd_pixel_maps(&f, &mu, &var, &res.d_mu_map, &res.d_var_map, 1e-5);
        // background pixels receive no gradient
        for p in 0..n {
            if !mask[p] {
                assert_eq!(res.d_mu_map[p], 0.0);
                assert_eq!(res.d_var_map[p], 0.0);
            }
        }
    }

    #[test]
    fn entropy_regularization_inflates_variance() {
        // one pixel, one region, label equal to mu: the squared error only
        // sees sampling noise, so variance shrinks to the clamp unless the
        // entropy bonus pushes it up
        let inc = build_incidence(&RegionSet::new(1, 2, vec![1, 0]).unwrap()).unwrap();
        let labels = [0.5];
        let mu = [0.5, 0.0];
        let run = |lambda_reg: f64| {
            let mut var = vec![1.0, 1.0];
            for step in 0..50u64 {
                let noise = [crate::math::normal_from_hash(step, 0), 0.0];
                let r = sampling_objective_with_noise(
                    &labels, &mu, &var, &inc, lambda_reg, &noise,
                )
                .unwrap();
                var[0] = (var[0] - 0.05 * r.d_var_map[0]).max(crate::predictor::VAR_CLAMP);
            }
            var[0]
        };
        assert!(run(5.0) > 1.0, "entropy term should inflate variance");
        assert!(
            run(0.0) < 0.1,
            "without it variance shrinks toward the clamp"
        );
    }
}
