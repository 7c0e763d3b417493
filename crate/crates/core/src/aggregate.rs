//! The region aggregation layer: a sparse region-by-pixel weighted-sum
//! operator with an exact transpose backward pass, plus the Gaussian and
//! Poisson closures that turn per-pixel distributions into per-region ones.

use crate::error::{Error, Result};
use crate::scene::RegionSet;

/// Sparse region-by-pixel incidence in compressed sparse row form.
///
/// Row i lists the (pixel, weight) entries of region i. Memory grows with
/// the number of referenced pixels, never with n_regions * n_pixels, which
/// is what removes the dense-matrix batch-size ceiling.
///
/// Weights are in (0, 1]; every constructor in this crate emits binary
/// weights because parcels are disjoint, but fractional weights are
/// accepted for overlapping-region use.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionIncidence {
    n_regions: usize,
    height: usize,
    width: usize,
    row_ptr: Vec<usize>,
    pixels: Vec<u32>,
    weights: Vec<f64>,
}

impl RegionIncidence {
    /// Build from explicit per-region (pixel index, weight) rows.
    ///
    /// Rows must be non-empty, pixel indices strictly increasing within a
    /// row (no duplicates), and weights in (0, 1].
    pub fn from_rows(height: usize, width: usize, rows: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        let n_pixels = height * width;
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut pixels = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for (i, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::config(format!("region {} has no pixels", i + 1)));
            }
            let mut prev: Option<u32> = None;
            for &(p, w) in row {
                if p as usize >= n_pixels {
                    return Err(Error::shape(format!(
                        "pixel index {p} out of range for {height}x{width}"
                    )));
                }
                if let Some(q) = prev {
                    if p <= q {
                        return Err(Error::config(format!(
                            "region {} entries must be strictly increasing",
                            i + 1
                        )));
                    }
                }
                if !(w > 0.0 && w <= 1.0) || !w.is_finite() {
                    return Err(Error::domain(format!("weight {w} outside (0,1]")));
                }
                prev = Some(p);
                pixels.push(p);
                weights.push(w);
            }
            row_ptr.push(pixels.len());
        }
        Ok(RegionIncidence {
            n_regions: rows.len(),
            height,
            width,
            row_ptr,
            pixels,
            weights,
        })
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of stored (region, pixel) entries.
    pub fn nnz(&self) -> usize {
        self.pixels.len()
    }

    /// (pixel index, weight) entries of region `i` in stored order.
    pub fn region_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.pixels[lo..hi]
            .iter()
            .zip(&self.weights[lo..hi])
            .map(|(&p, &w)| (p as usize, w))
    }

    /// Stored entry count of region `i` (its pixel area for binary weights).
    pub fn region_area(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// Debug dump as `region_id,pixel_index,weight` CSV (region_id 1-based).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("region_id,pixel_index,weight\n");
        for i in 0..self.n_regions {
            for (p, w) in self.region_entries(i) {
                out.push_str(&format!("{},{},{}\n", i + 1, p, w));
            }
        }
        out
    }
}

/// Region-level Gaussians produced by aggregating per-pixel distributions:
/// mean and variance both sum over the region's pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGaussian {
    pub mu_star: Vec<f64>,
    pub var_star: Vec<f64>,
}

impl RegionGaussian {
    pub fn len(&self) -> usize {
        self.mu_star.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_star.is_empty()
    }
}

/// Build the incidence of a disjoint region mask: row i holds exactly the
/// pixels with mask index i+1, weight 1, in row-major pixel order.
pub fn build_incidence(regions: &RegionSet) -> Result<RegionIncidence> {
    let n = regions.region_count;
    if n == 0 {
        return Err(Error::config("region set has no regions".to_string()));
    }
    let mut counts = vec![0usize; n];
    for &m in &regions.mask {
        if m > 0 {
            let i = m as usize - 1;
            if i >= n {
                return Err(Error::shape(format!(
                    "mask index {m} exceeds region count {n}"
                )));
            }
            counts[i] += 1;
        }
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::config(format!("region {} is empty", i + 1)));
    }

    let mut row_ptr = vec![0usize; n + 1];
    for i in 0..n {
        row_ptr[i + 1] = row_ptr[i] + counts[i];
    }
    let nnz = row_ptr[n];
    let mut pixels = vec![0u32; nnz];
    let mut cursor = row_ptr.clone();
    for (p, &m) in regions.mask.iter().enumerate() {
        if m > 0 {
            let i = m as usize - 1;
            pixels[cursor[i]] = p as u32;
            cursor[i] += 1;
        }
    }
    Ok(RegionIncidence {
        n_regions: n,
        height: regions.height,
        width: regions.width,
        row_ptr,
        pixels,
        weights: vec![1.0; nnz],
    })
}

/// Forward aggregation: out[i] = sum_j w_i(p_j) * map[p_j], accumulated in
/// stored row order so repeated runs are bit-identical.
pub fn aggregate_sum(inc: &RegionIncidence, pixel_map: &[f64]) -> Result<Vec<f64>> {
    if pixel_map.len() != inc.n_pixels() {
        return Err(Error::shape(format!(
            "pixel map has {} entries, incidence expects {}",
            pixel_map.len(),
            inc.n_pixels()
        )));
    }
    let mut out = vec![0.0; inc.n_regions];
    for i in 0..inc.n_regions {
        let mut acc = 0.0;
        for (p, w) in inc.region_entries(i) {
            acc += w * pixel_map[p];
        }
        out[i] = acc;
    }
    Ok(out)
}

/// Transpose of [`aggregate_sum`]: scatters region gradients back to pixels.
/// Pixels referenced by no region receive 0.
pub fn aggregate_sum_backward(inc: &RegionIncidence, region_grads: &[f64]) -> Result<Vec<f64>> {
    if region_grads.len() != inc.n_regions {
        return Err(Error::shape(format!(
            "gradient has {} entries, incidence has {} regions",
            region_grads.len(),
            inc.n_regions
        )));
    }
    let mut out = vec![0.0; inc.n_pixels()];
    for i in 0..inc.n_regions {
        let g = region_grads[i];
        let lo = inc.row_ptr[i];
        let hi = inc.row_ptr[i + 1];
        for k in lo..hi {
            out[inc.pixels[k] as usize] += inc.weights[k] * g;
        }
    }
    Ok(out)
}

/// Gaussian closure over regions: the sum of independent per-pixel
/// Gaussians is Gaussian with summed means and summed variances, so both
/// outputs are plain [`aggregate_sum`] calls over the same incidence.
pub fn aggregate_gaussian(
    inc: &RegionIncidence,
    mu_map: &[f64],
    var_map: &[f64],
) -> Result<RegionGaussian> {
    if var_map.len() != inc.n_pixels() {
        return Err(Error::shape(format!(
            "variance map has {} entries, incidence expects {}",
            var_map.len(),
            inc.n_pixels()
        )));
    }
    for i in 0..inc.n_regions {
        for (p, _) in inc.region_entries(i) {
            let v = var_map[p];
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::domain(format!(
                    "non-positive variance {v} at pixel {p}"
                )));
            }
        }
    }
    let mu_star = aggregate_sum(inc, mu_map)?;
    let var_star = aggregate_sum(inc, var_map)?;
    Ok(RegionGaussian { mu_star, var_star })
}

/// Poisson closure: summed rates over each region.
pub fn aggregate_poisson(inc: &RegionIncidence, lambda_map: &[f64]) -> Result<Vec<f64>> {
    if lambda_map.len() != inc.n_pixels() {
        return Err(Error::shape(format!(
            "rate map has {} entries, incidence expects {}",
            lambda_map.len(),
            inc.n_pixels()
        )));
    }
    for i in 0..inc.n_regions {
        for (p, _) in inc.region_entries(i) {
            let l = lambda_map[p];
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::domain(format!("non-positive rate {l} at pixel {p}")));
            }
        }
    }
    aggregate_sum(inc, lambda_map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::RegionSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_2x2() -> RegionSet {
        RegionSet::new(2, 2, vec![1, 1, 2, 0]).unwrap()
    }

    #[test]
    fn build_incidence_lists_pixels_per_region() {
        let inc = build_incidence(&mask_2x2()).unwrap();
        assert_eq!(inc.n_regions(), 2);
        let r1: Vec<_> = inc.region_entries(0).collect();
        let r2: Vec<_> = inc.region_entries(1).collect();
        assert_eq!(r1, vec![(0, 1.0), (1, 1.0)]);
        assert_eq!(r2, vec![(2, 1.0)]);
        assert_eq!(inc.nnz(), 3);
    }

    #[test]
    fn all_background_mask_is_rejected() {
        // RegionSet itself refuses a mask with no regions
        assert!(RegionSet::new(2, 2, vec![0, 0, 0, 0]).is_err());
    }

    #[test]
    fn empty_region_is_rejected() {
        let rs = RegionSet {
            height: 2,
            width: 2,
            mask: vec![1, 1, 3, 0],
            region_count: 3,
        };
        assert!(build_incidence(&rs).is_err());
    }

    #[test]
    fn entry_count_matches_nonbackground_pixels() {
        // 302x302 mask with 50 vertical stripe regions plus background rows
        let (h, w) = (302, 302);
        let mut mask = vec![0u32; h * w];
        for y in 0..h {
            for x in 0..w {
                if y < 300 {
                    mask[y * w + x] = (x % 50) as u32 + 1;
                }
            }
        }
        let nonzero = mask.iter().filter(|&&m| m > 0).count();
        let rs = RegionSet::new(h, w, mask).unwrap();
        let inc = build_incidence(&rs).unwrap();
        assert_eq!(inc.n_regions(), 50);
        assert_eq!(inc.nnz(), nonzero);
    }

    #[test]
    fn aggregate_sum_simple_cases() {
        let inc = build_incidence(&mask_2x2()).unwrap();
        let out = aggregate_sum(&inc, &[3.0, 4.0, 10.0, 99.0]).unwrap();
        assert_eq!(out, vec![7.0, 10.0]);
        let zeros = aggregate_sum(&inc, &[0.0; 4]).unwrap();
        assert_eq!(zeros, vec![0.0, 0.0]);
    }

    #[test]
    fn aggregate_sum_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (h, w) = (8, 8);
        let mask: Vec<u32> = (0..h * w).map(|_| rng.gen_range(0..=3u32)).collect();
        let mask = ensure_all_present(mask, 3);
        let rs = RegionSet::new(h, w, mask.clone()).unwrap();
        let inc = build_incidence(&rs).unwrap();
        let map: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // independent dense per-pixel accumulation
        let mut expect = vec![0.0f64; 3];
        for (p, &m) in mask.iter().enumerate() {
            if m > 0 {
                expect[m as usize - 1] += map[p];
            }
        }
        let got = aggregate_sum(&inc, &map).unwrap();
        for i in 0..3 {
            assert!((got[i] - expect[i]).abs() <= 1e-12 * expect[i].abs().max(1.0));
        }
    }

    fn ensure_all_present(mut mask: Vec<u32>, n: u32) -> Vec<u32> {
        for k in 1..=n {
            if !mask.contains(&k) {
                mask[(k - 1) as usize] = k;
            }
        }
        mask
    }

    #[test]
    fn backward_scatters_to_pixels() {
        let inc = build_incidence(&mask_2x2()).unwrap();
        let out = aggregate_sum_backward(&inc, &[3.0, -2.0]).unwrap();
        assert_eq!(out, vec![3.0, 3.0, -2.0, 0.0]);

        let full = RegionSet::new(2, 2, vec![1, 1, 1, 1]).unwrap();
        let inc = build_incidence(&full).unwrap();
        let out = aggregate_sum_backward(&inc, &[5.0]).unwrap();
        assert_eq!(out, vec![5.0; 4]);
    }

    #[test]
    fn gaussian_closure_sums_means_and_variances() {
        let rs = RegionSet::new(1, 2, vec![1, 1]).unwrap();
        let inc = build_incidence(&rs).unwrap();
        let rg = aggregate_gaussian(&inc, &[1.0, 2.0], &[1.0, 4.0]).unwrap();
        assert_eq!(rg.mu_star, vec![3.0]);
        assert_eq!(rg.var_star, vec![5.0]);

        // single-pixel region passes its distribution through
        let rs = RegionSet::new(1, 2, vec![1, 0]).unwrap();
        let inc = build_incidence(&rs).unwrap();
        let rg = aggregate_gaussian(&inc, &[0.7, 9.0], &[0.25, 9.0]).unwrap();
        assert_eq!(rg.mu_star, vec![0.7]);
        assert_eq!(rg.var_star, vec![0.25]);
    }

    #[test]
    fn gaussian_closure_rejects_bad_variance() {
        let rs = RegionSet::new(1, 2, vec![1, 0]).unwrap();
        let inc = build_incidence(&rs).unwrap();
        assert!(aggregate_gaussian(&inc, &[0.0, 0.0], &[0.0, 1.0]).is_err());
        // variance on an unreferenced pixel is not checked
        assert!(aggregate_gaussian(&inc, &[0.0, 0.0], &[1.0, -3.0]).is_ok());
    }

    #[test]
    fn poisson_closure_sums_rates() {
        let rs = RegionSet::new(1, 2, vec![1, 1]).unwrap();
        let inc = build_incidence(&rs).unwrap();
        assert_eq!(aggregate_poisson(&inc, &[0.5, 1.5]).unwrap(), vec![2.0]);
        let rs = RegionSet::new(1, 2, vec![1, 0]).unwrap();
        let inc = build_incidence(&rs).unwrap();
        assert_eq!(aggregate_poisson(&inc, &[0.5, 0.0]).unwrap(), vec![0.5]);
        assert!(aggregate_poisson(&inc, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn csv_dump_round_trips_entries() {
        let inc = build_incidence(&mask_2x2()).unwrap();
        let csv = inc.to_csv();
        assert_eq!(csv, "region_id,pixel_index,weight\n1,0,1\n1,1,1\n2,2,1\n");
    }

    #[test]
    fn fractional_weights_accepted_in_range() {
        let inc = RegionIncidence::from_rows(1, 2, vec![vec![(0, 0.5), (1, 1.0)]]).unwrap();
        let out = aggregate_sum(&inc, &[2.0, 3.0]).unwrap();
        assert_eq!(out, vec![4.0]);
        assert!(RegionIncidence::from_rows(1, 2, vec![vec![(0, 1.5)]]).is_err());
        assert!(RegionIncidence::from_rows(1, 2, vec![vec![(0, 0.0)]]).is_err());
        assert!(RegionIncidence::from_rows(1, 2, vec![vec![]]).is_err());
        assert!(RegionIncidence::from_rows(1, 2, vec![vec![(1, 0.5), (0, 0.5)]]).is_err());
    }

    #[test]
    fn adjoint_identity_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let h = rng.gen_range(2..=12);
            let w = rng.gen_range(2..=12);
            let n = rng.gen_range(1..=4u32);
            let mask: Vec<u32> = (0..h * w).map(|_| rng.gen_range(0..=n)).collect();
            let mask = ensure_all_present(mask, n);
            let rs = RegionSet::new(h, w, mask).unwrap();
            let inc = build_incidence(&rs).unwrap();
            let x: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let g: Vec<f64> = (0..n as usize).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let ax = aggregate_sum(&inc, &x).unwrap();
            let atg = aggregate_sum_backward(&inc, &g).unwrap();
            let lhs: f64 = ax.iter().zip(&g).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&atg).map(|(a, b)| a * b).sum();
            assert!(
                (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1e-30),
                "adjoint violated: {lhs} vs {rhs}"
            );
        }
    }
}
