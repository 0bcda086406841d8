use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::numerics::Scalar;

use super::{HsiCube, SceneTriple, SpectralResponse};

/// Parameters of a generated scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub scale: usize,
    pub blobs: usize,
}

/// A sum of Gaussian spatial bumps, each with its own smooth nonnegative
/// spectrum `0.5 + Σ_{k=1..3} a_k cos(kπt + φ_k)`, clipped to `[0, 1]`.
/// The LR cube and RGB image are derived from it; everything is a function
/// of `seed`.
pub fn make_synthetic_scene<T: Scalar>(seed: u64, spec: SceneSpec) -> Result<SceneTriple<T>> {
    let SceneSpec {
        width,
        height,
        bands,
        scale,
        blobs,
    } = spec;
    if scale == 0 || width % scale != 0 || height % scale != 0 {
        return Err(invalid(format!("{width}×{height} is not divisible by scale {scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = width * height;
    let mut acc = vec![0f64; plane * bands];
    let max_sigma = (width.min(height) as f64 / 6.0).max(1.5);
    let mut spatial = vec![0f64; plane];
    for _ in 0..blobs {
        let cx = rng.gen_range(0.0..width as f64);
        let cy = rng.gen_range(0.0..height as f64);
        let sigma = rng.gen_range(1.0..max_sigma);
        let amp = rng.gen_range(0.3..1.0);
        let coeffs: [(f64, f64); 3] = std::array::from_fn(|_| (rng.gen_range(-0.3..0.3), rng.gen_range(0.0..2.0 * PI)));
        let spectrum: Vec<f64> = (0..bands)
            .map(|b| {
                let t = if bands > 1 { b as f64 / (bands - 1) as f64 } else { 0.0 };
                let s: f64 = coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, &(a, phi))| a * ((k + 1) as f64 * PI * t + phi).cos())
                    .sum();
                (0.5 + s).max(0.0)
            })
            .collect();
        for y in 0..height {
            for x in 0..width {
                let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                spatial[y * width + x] = amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
        for (b, &s) in spectrum.iter().enumerate() {
            for (a, &g) in acc[b * plane..][..plane].iter_mut().zip(&spatial) {
                *a += s * g;
            }
        }
    }
    let data = acc.into_iter().map(|v| T::of(v.clamp(0.0, 1.0))).collect();
    let hr = HsiCube::new(width, height, bands, data)?;
    SceneTriple::from_ground_truth(hr, scale, &SpectralResponse::contiguous_thirds(bands))
}
