//! Image and trajectory error metrics.

use nalgebra::{Matrix3, SVD};

use crate::error::{Error, Result};
use crate::frame::{DepthImage, RgbImage};
use crate::geometry::{Pose, Vec3};

pub const PSNR_CAP: f64 = 99.0;

fn check_shape(a: (u32, u32), b: (u32, u32)) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{}x{} vs {}x{}", a.0, a.1, b.0, b.1)));
    }
    Ok(())
}

/// Mean absolute depth difference in centimeters over pixels where `mask`
/// is set. Pixels the prediction leaves empty count with predicted depth 0.
pub fn depth_l1(pred: &DepthImage, gt: &DepthImage, mask: &[bool]) -> Result<f64> {
    check_shape((pred.width, pred.height), (gt.width, gt.height))?;
    if mask.len() != gt.data.len() {
        return Err(Error::ShapeMismatch("mask length differs from image".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, g), &m) in pred.data.iter().zip(&gt.data).zip(mask) {
        if m {
            sum += (p - g).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::MetricUndefined("no valid depth pixels".into()));
    }
    Ok(100.0 * sum / n as f64)
}

/// Depth L1 over every pixel with valid ground truth.
pub fn depth_l1_valid(pred: &DepthImage, gt: &DepthImage) -> Result<f64> {
    depth_l1(pred, gt, &gt.valid_mask())
}

pub fn mse(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    check_shape((pred.width, pred.height), (gt.width, gt.height))?;
    if gt.data.is_empty() {
        return Err(Error::MetricUndefined("empty image".into()));
    }
    let s: f64 = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(s / (3 * gt.data.len()) as f64)
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`, capped at 99 dB.
pub fn psnr(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    let m = mse(pred, gt)?;
    if m < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter, keeping only fully covered ("valid") outputs.
fn filter_valid(img: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let ow = w + 1 - n;
    let oh = h + 1 - n;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

fn ssim_channel(a: &[f64], b: &[f64], w: usize, h: usize, k: &[f64]) -> f64 {
    let (c1, c2) = ((0.01f64).powi(2), (0.03f64).powi(2));
    let (mu_a, ow, oh) = filter_valid(a, w, h, k);
    let (mu_b, _, _) = filter_valid(b, w, h, k);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (s_aa, _, _) = filter_valid(&aa, w, h, k);
    let (s_bb, _, _) = filter_valid(&bb, w, h, k);
    let (s_ab, _, _) = filter_valid(&ab, w, h, k);
    let mut total = 0.0;
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = s_aa[i] - ma * ma;
        let vb = s_bb[i] - mb * mb;
        let cov = s_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / (ow * oh) as f64
}

/// Mean SSIM with an 11 × 11 Gaussian window (σ = 1.5), averaged over the
/// three channels.
pub fn ssim(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    check_shape((pred.width, pred.height), (gt.width, gt.height))?;
    let (w, h) = (gt.width as usize, gt.height as usize);
    if w < 11 || h < 11 {
        return Err(Error::MetricUndefined("SSIM needs images of at least 11x11".into()));
    }
    let k = gaussian_kernel(11, 1.5);
    let mut s = 0.0;
    for c in 0..3 {
        s += ssim_channel(&pred.channel(c), &gt.channel(c), w, h, &k);
    }
    Ok(s / 3.0)
}

/// Least-squares rigid transform `T` minimizing `Σ |T·src_i − dst_i|²`.
pub fn align_rigid(src: &[Vec3], dst: &[Vec3]) -> Result<Pose> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(Error::MetricUndefined("alignment needs at least 3 matched points".into()));
    }
    let n = src.len() as f64;
    let ms = src.iter().sum::<Vec3>() / n;
    let md = dst.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::<f64>::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d - md) * (s - ms).transpose();
    }
    let svd = SVD::new(cov, true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut fix = Matrix3::<f64>::identity();
    if (u * vt).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = u * fix * vt;
    Ok(Pose::new(r, md - r * ms))
}

/// Position RMSE in centimeters after rigid alignment of `est` onto `gt`.
pub fn ate_rmse(est: &[Pose], gt: &[Pose]) -> Result<f64> {
    if est.len() != gt.len() {
        return Err(Error::MetricUndefined(format!("{} estimated vs {} reference poses", est.len(), gt.len())));
    }
    if est.len() < 3 {
        return Err(Error::MetricUndefined("ATE needs at least 3 poses".into()));
    }
    let src: Vec<Vec3> = est.iter().map(|p| p.translation).collect();
    let dst: Vec<Vec3> = gt.iter().map(|p| p.translation).collect();
    let t = align_rigid(&src, &dst)?;
    let s: f64 = src.iter().zip(&dst).map(|(a, b)| (t.transform_point(a) - b).norm_squared()).sum();
    Ok(100.0 * (s / src.len() as f64).sqrt())
}

/// Fractional ranks (1-based), ties receiving their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of fractional ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::MetricUndefined("rank correlation needs two equal-length series".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::MetricUndefined("constant input has no rank correlation".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Per-view summary used for the uncertainty analysis.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ViewRecord {
    pub mean_uncertainty: f64,
    pub depth_l1_cm: f64,
    pub psnr_db: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UncertaintyCorrelation {
    pub depth_l1: f64,
    pub psnr: f64,
}

/// Rank correlation of mean uncertainty with depth L1 and with PSNR.
pub fn uncertainty_correlation(views: &[ViewRecord]) -> Result<UncertaintyCorrelation> {
    if views.len() < 4 {
        return Err(Error::MetricUndefined("uncertainty correlation needs at least 4 views".into()));
    }
    let u: Vec<f64> = views.iter().map(|v| v.mean_uncertainty).collect();
    let d: Vec<f64> = views.iter().map(|v| v.depth_l1_cm).collect();
    let p: Vec<f64> = views.iter().map(|v| v.psnr_db).collect();
    Ok(UncertaintyCorrelation {
        depth_l1: spearman(&u, &d)?,
        psnr: spearman(&u, &p)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{se3_exp, Twist};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_depth(rng: &mut ChaCha8Rng, w: u32, h: u32) -> DepthImage {
        DepthImage {
            width: w,
            height: h,
            data: (0..w * h).map(|_| rng.random_range(0.0..4.0)).collect(),
        }
    }

    fn random_rgb(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
        RgbImage {
            width: w,
            height: h,
            data: (0..w * h).map(|_| [rng.random(), rng.random(), rng.random()]).collect(),
        }
    }

    #[test]
    fn depth_l1_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_depth(&mut rng, 8, 6);
        assert_eq!(depth_l1_valid(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.data.iter_mut().for_each(|d| *d += 0.01);
        let mask = vec![true; 48];
        assert!((depth_l1(&b, &a, &mask).unwrap() - 1.0).abs() < 1e-12);
        assert!(depth_l1(&a, &a, &[false; 48]).is_err());
    }

    #[test]
    fn depth_l1_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_depth(&mut rng, 13, 7);
        let b = random_depth(&mut rng, 13, 7);
        let mask: Vec<bool> = (0..91).map(|_| rng.random_bool(0.7)).collect();
        let mut s = 0.0;
        let mut n = 0.0;
        for v in 0..7 {
            for u in 0..13 {
                if mask[(v * 13 + u) as usize] {
                    s += (a.get(u, v) - b.get(u, v)).abs();
                    n += 1.0;
                }
            }
        }
        assert!((depth_l1(&a, &b, &mask).unwrap() - 100.0 * s / n).abs() < 1e-12);
    }

    #[test]
    fn psnr_and_ssim_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_rgb(&mut rng, 20, 16);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_of_inverted_gray() {
        // gray g vs 1 − g: MSE = (1 − 2g)²
        let g = 0.3;
        let a = RgbImage::filled(16, 16, [g; 3]);
        let b = RgbImage::filled(16, 16, [1.0 - g; 3]);
        let expected = 10.0 * (1.0 / (1.0f64 - 2.0 * g).powi(2)).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_rgb(&mut rng, 24, 18);
        let b = random_rgb(&mut rng, 24, 18);
        let s1 = ssim(&a, &b).unwrap();
        let s2 = ssim(&b, &a).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&s1));
        assert!(matches!(ssim(&a, &random_rgb(&mut rng, 10, 10)), Err(Error::ShapeMismatch(_))));
    }

    fn random_trajectory(rng: &mut ChaCha8Rng, n: usize) -> Vec<Pose> {
        (0..n)
            .map(|_| se3_exp(&Twist::from_fn(|_, _| rng.random_range(-2.0..2.0))))
            .collect()
    }

    #[test]
    fn ate_is_gauge_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = random_trajectory(&mut rng, 30);
        assert!(ate_rmse(&gt, &gt).unwrap() < 1e-10);
        let t = se3_exp(&Twist::new(1.0, -2.0, 0.5, 0.3, -0.7, 1.1));
        let moved: Vec<Pose> = gt.iter().map(|p| t.compose(p)).collect();
        assert!(ate_rmse(&moved, &gt).unwrap() < 1e-9);
        assert!(ate_rmse(&gt[..2], &gt[..2]).is_err());
    }

    #[test]
    fn ate_with_known_offsets() {
        // a uniform scale about the centroid cannot be removed by a rigid
        // motion, so each residual is exactly 1% of the centred position
        let base = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(4.0, 0.0, 0.0),
            Vec3::new(0.0, 4.0, 0.0),
            Vec3::new(4.0, 4.0, 0.0),
            Vec3::new(2.0, 2.0, 3.0),
        ];
        let gt: Vec<Pose> = base.iter().map(|p| Pose::from_translation(*p)).collect();
        let scaled: Vec<Pose> = base.iter().map(|p| Pose::from_translation(p * 1.01)).collect();
        let c = base.iter().sum::<Vec3>() / 5.0;
        let expected = 100.0 * (base.iter().map(|p| ((p - c) * 0.01).norm_squared()).sum::<f64>() / 5.0).sqrt();
        assert!((ate_rmse(&scaled, &gt).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn spearman_signs() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&a, &[2.0, 4.0, 8.0, 16.0, 32.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&a, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(spearman(&a, &[1.0; 5]).is_err());
    }

    /// Textbook O(n²) ranking and correlation.
    fn naive_spearman(a: &[f64], b: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|x| {
                    let less = v.iter().filter(|y| *y < x).count() as f64;
                    let equal = v.iter().filter(|y| *y == x).count() as f64;
                    less + (equal + 1.0) / 2.0
                })
                .collect()
        };
        let (ra, rb) = (rank(a), rank(b));
        let n = a.len() as f64;
        let ma = ra.iter().sum::<f64>() / n;
        let mb = rb.iter().sum::<f64>() / n;
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn spearman_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let n = rng.random_range(4..40);
            // coarse values create ties
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            if a.iter().all(|x| *x == a[0]) {
                continue;
            }
            assert!((spearman(&a, &b).unwrap() - naive_spearman(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_of_views() {
        let views: Vec<ViewRecord> = (0..6)
            .map(|i| ViewRecord {
                mean_uncertainty: 0.01 * i as f64,
                depth_l1_cm: 1.0 + i as f64,
                psnr_db: 30.0 - i as f64,
            })
            .collect();
        let c = uncertainty_correlation(&views).unwrap();
        assert!((c.depth_l1 - 1.0).abs() < 1e-15);
        assert!((c.psnr + 1.0).abs() < 1e-15);
        assert!(uncertainty_correlation(&views[..3]).is_err());
    }
}
