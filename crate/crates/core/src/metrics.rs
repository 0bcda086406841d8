//! Reconstruction quality and transmission cost.

use num_rational::Ratio;

use crate::data::HsiCube;
use crate::error::{invalid, shape_err, Result};
use crate::numerics::Scalar;
use crate::variant::Variant;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// One evaluated reconstruction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRecord {
    pub psnr_db: f64,
    pub ssim: f64,
    pub mse: f64,
    pub symbols_transmitted: u64,
    pub mask_side_info_bytes: u64,
}

fn same_shape<T: Scalar>(y: &HsiCube<T>, y_hat: &HsiCube<T>) -> Result<()> {
    let a = (y.width(), y.height(), y.bands());
    let b = (y_hat.width(), y_hat.height(), y_hat.bands());
    if a != b {
        return Err(shape_err(format!("cubes differ: {a:?} vs {b:?} (W, H, L)")));
    }
    Ok(())
}

/// Mean squared error over all `W·H·L` entries, accumulated in `f64`.
pub fn mse<T: Scalar>(y: &HsiCube<T>, y_hat: &HsiCube<T>) -> Result<f64> {
    same_shape(y, y_hat)?;
    let sum: f64 = y
        .data()
        .iter()
        .zip(y_hat.data())
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    Ok(sum / y.data().len() as f64)
}

/// `10·log₁₀(1/mse)` for peak 1; `+∞` when the cubes are identical.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr<T: Scalar>(y: &HsiCube<T>, y_hat: &HsiCube<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(y, y_hat)?))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of a `w×h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// SSIM of one `w×h` plane pair: mean of the valid-mode SSIM map.
pub fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize) -> Result<f64> {
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(invalid(format!(
            "{w}×{h} image is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} SSIM window"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, w, h, &taps);
    let mu_b = filter_valid(b, w, h, &taps);
    let aa = filter_valid(&prod(|x, _| x * x), w, h, &taps);
    let bb = filter_valid(&prod(|_, y| y * y), w, h, &taps);
    let ab = filter_valid(&prod(|x, y| x * y), w, h, &taps);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Band-averaged SSIM with an 11×11 Gaussian window (`σ = 1.5`), dynamic range 1.
pub fn ssim<T: Scalar>(y: &HsiCube<T>, y_hat: &HsiCube<T>) -> Result<f64> {
    same_shape(y, y_hat)?;
    let (w, h) = (y.width(), y.height());
    let mut total = 0.0;
    for band in 0..y.bands() {
        let a: Vec<f64> = y.band(band).iter().map(|v| v.as_f64()).collect();
        let b: Vec<f64> = y_hat.band(band).iter().map(|v| v.as_f64()).collect();
        total += ssim_plane(&a, &b, w, h)?;
    }
    Ok(total / y.bands() as f64)
}

/// Exact symbol and side-information cost of one transmission.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BandwidthReport {
    pub symbols: u64,
    pub mask_bytes: u64,
    /// Symbols relative to sending all three feature maps.
    pub ratio_vs_full: Ratio<u64>,
}

/// Cost of transmitting one `w₁×h₁×l` feature shape under `variant`.
pub fn bandwidth_report(variant: Variant, feature_shape: (usize, usize, usize), quant_bits: u32) -> BandwidthReport {
    let (w1, h1, l) = feature_shape;
    let per_map = (w1 * h1 * l) as u64;
    let symbols = per_map * variant.feature_maps_sent();
    let mask_bytes = if variant.sends_masks() {
        2 * per_map * u64::from(quant_bits) / 8
    } else {
        0
    };
    let full = per_map * Variant::Full.feature_maps_sent();
    let ratio_vs_full = if full == 0 {
        Ratio::from_integer(0)
    } else {
        Ratio::new(symbols, full)
    };
    BandwidthReport {
        symbols,
        mask_bytes,
        ratio_vs_full,
    }
}

/// Scores a reconstruction (clamped to `[0, 1]` by the caller) with its cost.
pub fn score<T: Scalar>(y: &HsiCube<T>, y_hat: &HsiCube<T>, cost: &BandwidthReport) -> Result<MetricRecord> {
    let m = mse(y, y_hat)?;
    Ok(MetricRecord {
        psnr_db: psnr_from_mse(m),
        ssim: ssim(y, y_hat)?,
        mse: m,
        symbols_transmitted: cost.symbols,
        mask_side_info_bytes: cost.mask_bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cube(seed: u64, w: usize, h: usize, l: usize) -> HsiCube<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HsiCube::new(w, h, l, (0..w * h * l).map(|_| rng.gen_range(0.0..0.9)).collect()).unwrap()
    }

    fn noisy(c: &HsiCube<f64>, seed: u64, amp: f64) -> HsiCube<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = c
            .data()
            .iter()
            .map(|v| (v + rng.gen_range(-amp..amp)).clamp(0.0, 1.0))
            .collect();
        HsiCube::new(c.width(), c.height(), c.bands(), data).unwrap()
    }

    /// Direct windowed SSIM with a full 2-D Gaussian window.
    fn ssim_oracle(a: &HsiCube<f64>, b: &HsiCube<f64>) -> f64 {
        let s = SSIM_SIGMA;
        let r = (SSIM_WINDOW / 2) as i64;
        let mut win = vec![0.0; SSIM_WINDOW * SSIM_WINDOW];
        for (i, v) in win.iter_mut().enumerate() {
            let (dy, dx) = ((i / SSIM_WINDOW) as i64 - r, (i % SSIM_WINDOW) as i64 - r);
            *v = (-((dx * dx + dy * dy) as f64) / (2.0 * s * s)).exp();
        }
        let z: f64 = win.iter().sum();
        win.iter_mut().for_each(|v| *v /= z);
        let (c1, c2) = (1e-4, 9e-4);
        let (w, h) = (a.width(), a.height());
        let mut band_total = 0.0;
        for band in 0..a.bands() {
            let (pa, pb) = (a.band(band), b.band(band));
            let mut acc = 0.0;
            let mut count = 0;
            for y0 in 0..=h - SSIM_WINDOW {
                for x0 in 0..=w - SSIM_WINDOW {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..SSIM_WINDOW {
                        for j in 0..SSIM_WINDOW {
                            let k = win[i * SSIM_WINDOW + j];
                            let (va, vb) = (pa[(y0 + i) * w + x0 + j], pb[(y0 + i) * w + x0 + j]);
                            ma += k * va;
                            mb += k * vb;
                            saa += k * va * va;
                            sbb += k * vb * vb;
                            sab += k * va * vb;
                        }
                    }
                    let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
            band_total += acc / count as f64;
        }
        band_total / a.bands() as f64
    }

    #[test]
    fn psnr_of_constant_offset() {
        let y = random_cube(1, 8, 8, 3);
        let data = y.data().iter().map(|v| v + 0.1).collect();
        let shifted = HsiCube::new(8, 8, 3, data).unwrap();
        assert!((psnr(&y, &shifted).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&y, &y).unwrap(), f64::INFINITY);
        assert_eq!(psnr_from_mse(1e-3), 30.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = random_cube(2, 12, 12, 2);
        let b = random_cube(3, 12, 12, 3);
        assert!(mse(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
    }

    #[test]
    fn psnr_matches_loop_oracle() {
        for seed in 0..10 {
            let y = random_cube(seed, 12, 11, 3);
            let y_hat = noisy(&y, seed + 100, 0.2);
            let mut sum = 0.0;
            for b in 0..3 {
                for yy in 0..11 {
                    for xx in 0..12 {
                        sum += (y.at(xx, yy, b) - y_hat.at(xx, yy, b)).powi(2);
                    }
                }
            }
            let expect = 10.0 * (1.0 / (sum / (12.0 * 11.0 * 3.0))).log10();
            assert!((psnr(&y, &y_hat).unwrap() - expect).abs() < 1e-5);
        }
    }

    #[test]
    fn ssim_matches_loop_oracle() {
        for seed in 0..10 {
            let y = random_cube(seed, 14, 13, 2);
            let y_hat = noisy(&y, seed + 50, 0.3);
            assert!((ssim(&y, &y_hat).unwrap() - ssim_oracle(&y, &y_hat)).abs() < 1e-5);
        }
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let y = random_cube(4, 16, 16, 2);
        assert!((ssim(&y, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_constants_is_luminance_term() {
        let a = HsiCube::constant(11, 11, 1, 0.5f64).unwrap();
        let b = HsiCube::constant(11, 11, 1, 0.7f64).unwrap();
        let expect = (2.0 * 0.5 * 0.7 + 1e-4) / (0.25 + 0.49 + 1e-4);
        let got = ssim(&a, &b).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 0.945953).abs() < 1e-6);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = random_cube(5, 10, 20, 1);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn gaussian_taps_are_normalized_and_symmetric() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(t[i], t[10 - i]);
        }
        assert!(t[5] > t[4]);
    }

    #[test]
    fn bandwidth_examples() {
        let p = bandwidth_report(Variant::Proposed, (32, 32, 8), 8);
        assert_eq!(p.symbols, 8192);
        assert_eq!(p.mask_bytes, 16384);
        assert_eq!(p.ratio_vs_full, Ratio::new(1, 3));
        let f = bandwidth_report(Variant::Full, (32, 32, 8), 8);
        assert_eq!((f.symbols, f.mask_bytes), (3 * 8192, 0));
        assert_eq!(f.ratio_vs_full, Ratio::from_integer(1));
        assert_eq!(bandwidth_report(Variant::Basic, (32, 32, 8), 8).mask_bytes, 0);
        for v in Variant::ALL.into_iter().filter(|&v| v != Variant::Full) {
            assert_eq!(bandwidth_report(v, (32, 32, 8), 8).symbols, 8192);
        }
    }

    #[test]
    fn score_fills_every_field() {
        let y = random_cube(6, 12, 12, 2);
        let y_hat = noisy(&y, 7, 0.1);
        let cost = bandwidth_report(Variant::Proposed, (6, 6, 4), 4);
        let r = score(&y, &y_hat, &cost).unwrap();
        assert_eq!(r.psnr_db, psnr_from_mse(r.mse));
        assert_eq!(r.ssim, ssim(&y, &y_hat).unwrap());
        assert_eq!((r.symbols_transmitted, r.mask_side_info_bytes), (144, 144));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn ssim_is_symmetric_and_bounded(seed in 0u64..1000, amp in 0.0f64..0.5) {
            let a = random_cube(seed, 12, 12, 2);
            let b = noisy(&a, seed + 1, amp);
            let ab = ssim(&a, &b).unwrap();
            prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-7);
            prop_assert!(ab <= 1.0 + 1e-12);
        }

        #[test]
        fn psnr_agrees_with_mse(seed in 0u64..1000, amp in 0.001f64..0.5) {
            let a = random_cube(seed, 6, 6, 2);
            let b = noisy(&a, seed + 1, amp);
            let m = mse(&a, &b).unwrap();
            prop_assert!(m >= 0.0);
            prop_assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / m).log10()).abs() < 1e-9);
        }
    }
}
