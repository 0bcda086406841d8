//! Spectral cubes, the LR/RGB degradation model and scene generation.

mod io;
mod synthetic;

pub use io::{import_pgm_dir, load_cube, load_cube_dir, read_pgm, save_cube, CubeHeader};
pub use synthetic::{make_synthetic_scene, SceneSpec};

use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{Scalar, Tensor};

/// `width × height × bands` cube, band-sequential, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube<T> {
    width: usize,
    height: usize,
    bands: usize,
    data: Vec<T>,
}

fn check_unit_range<T: Scalar>(data: &[T], what: &str) -> Result<()> {
    for &v in data {
        if !v.is_finite() {
            return Err(Error::NonFinite(what.to_string()));
        }
        if v < T::zero() || v > T::one() {
            return Err(invalid(format!("{what} value {v} outside [0, 1]")));
        }
    }
    Ok(())
}

impl<T: Scalar> HsiCube<T> {
    pub fn new(width: usize, height: usize, bands: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(invalid(format!(
                "cube extents must be positive, got {width}×{height}×{bands}"
            )));
        }
        if data.len() != width * height * bands {
            return Err(shape_err(format!(
                "{width}×{height}×{bands} cube needs {} values, got {}",
                width * height * bands,
                data.len()
            )));
        }
        check_unit_range(&data, "cube")?;
        Ok(Self {
            width,
            height,
            bands,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, bands: usize, value: T) -> Result<Self> {
        Self::new(width, height, bands, vec![value; width * height * bands])
    }

    /// Builds a cube from a `1×L×H×W` tensor, clamping into `[0, 1]`.
    pub fn from_tensor_clamped(t: &Tensor<T>) -> Result<Self> {
        let [n, l, h, w] = t.dims4();
        if n != 1 {
            return Err(shape_err(format!("expected a single cube, got {:?}", t.shape())));
        }
        let data = t.data().iter().map(|&v| v.max(T::zero()).min(T::one())).collect();
        Self::new(w, h, l, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn band(&self, b: usize) -> &[T] {
        let plane = self.width * self.height;
        &self.data[b * plane..][..plane]
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, b: usize) -> T {
        self.data[(b * self.height + y) * self.width + x]
    }

    /// `1×L×H×W` tensor view (copy).
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[1, self.bands, self.height, self.width], self.data.clone()).expect("cube extents are consistent")
    }

    pub fn cast<U: Scalar>(&self) -> HsiCube<U> {
        HsiCube {
            width: self.width,
            height: self.height,
            bands: self.bands,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(shape_err(format!(
                "crop {w}×{h} at ({x0},{y0}) exceeds {}×{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * self.bands);
        for b in 0..self.bands {
            let plane = self.band(b);
            for y in y0..y0 + h {
                data.extend_from_slice(&plane[y * self.width + x0..][..w]);
            }
        }
        Ok(Self {
            width: w,
            height: h,
            bands: self.bands,
            data,
        })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum::<f64>() / self.data.len() as f64
    }
}

/// Three-channel image; stored as a three-band [`HsiCube`].
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage<T>(HsiCube<T>);

impl<T: Scalar> RgbImage<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        HsiCube::new(width, height, 3, data).map(Self)
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        self.0.band(c)
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        self.0.to_tensor()
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        self.0.crop(x0, y0, w, h).map(Self)
    }
}

/// Aligned LR-HSI / HR-RGB inputs with their HR-HSI ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTriple<T> {
    pub lr_hsi: HsiCube<T>,
    pub hr_rgb: RgbImage<T>,
    pub hr_hsi: HsiCube<T>,
    pub scale: usize,
}

impl<T: Scalar> SceneTriple<T> {
    /// Derives the LR cube and RGB image from a ground-truth cube.
    pub fn from_ground_truth(hr: HsiCube<T>, scale: usize, response: &SpectralResponse) -> Result<Self> {
        let lr_hsi = degrade_to_lr(&hr, scale)?;
        let hr_rgb = project_to_rgb(&hr, response)?;
        Ok(Self {
            lr_hsi,
            hr_rgb,
            hr_hsi: hr,
            scale,
        })
    }
}

/// Row-stochastic `3×L` camera response.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralResponse {
    bands: usize,
    weights: Vec<f64>,
}

impl SpectralResponse {
    pub fn new(bands: usize, weights: Vec<f64>) -> Result<Self> {
        if bands == 0 || weights.len() != 3 * bands {
            return Err(shape_err(format!(
                "response needs 3×{bands} weights, got {}",
                weights.len()
            )));
        }
        for (c, row) in weights.chunks(bands).enumerate() {
            if row.iter().any(|&w| !w.is_finite() || w < 0.0) {
                return Err(invalid(format!("response row {c} has a negative or non-finite weight")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(invalid(format!("response row {c} sums to {s}, not 1")));
            }
        }
        Ok(Self { bands, weights })
    }

    /// Each channel averages one contiguous third of the bands
    /// (channel 0 the shortest wavelengths).
    pub fn contiguous_thirds(bands: usize) -> Self {
        let mut weights = vec![0.0; 3 * bands];
        for c in 0..3 {
            let lo = c * bands / 3;
            let hi = ((c + 1) * bands / 3).max(lo + 1).min(bands);
            let lo = lo.min(bands - 1);
            let n = (hi - lo) as f64;
            for b in lo..hi {
                weights[c * bands + b] = 1.0 / n;
            }
        }
        Self { bands, weights }
    }

    pub fn identity3() -> Self {
        let mut weights = vec![0.0; 9];
        for c in 0..3 {
            weights[c * 3 + c] = 1.0;
        }
        Self { bands: 3, weights }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn weight(&self, channel: usize, band: usize) -> f64 {
        self.weights[channel * self.bands + band]
    }

    /// Reads a headerless CSV of 3 rows × L columns.
    pub fn from_csv(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for record in reader.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Format(format!("response entry `{s}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if rows.len() != 3 {
            return Err(Error::Format(format!(
                "response CSV has {} rows, expected 3",
                rows.len()
            )));
        }
        let bands = rows[0].len();
        if rows.iter().any(|r| r.len() != bands) {
            return Err(Error::Format("response CSV rows differ in length".into()));
        }
        Self::new(bands, rows.concat())
    }
}

/// Normalized 1-D Gaussian taps for `σ = 0.5·scale`, radius `⌈2σ⌉`.
pub fn degradation_kernel(scale: usize) -> Vec<f64> {
    let sigma = 0.5 * scale as f64;
    let radius = (2.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Sample position in the HR grid of LR pixel `i`.
#[inline]
pub fn decimation_index(i: usize, scale: usize) -> usize {
    i * scale + scale / 2
}

/// Per-band Gaussian blur (edge-clamped) followed by decimation by `scale`.
pub fn degrade_to_lr<T: Scalar>(hr: &HsiCube<T>, scale: usize) -> Result<HsiCube<T>> {
    if scale == 0 || !hr.width.is_multiple_of(scale) || !hr.height.is_multiple_of(scale) {
        return Err(invalid(format!(
            "{}×{} is not divisible by scale {scale}",
            hr.width, hr.height
        )));
    }
    let (w, h) = (hr.width / scale, hr.height / scale);
    let taps = degradation_kernel(scale);
    let r = (taps.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut out = Vec::with_capacity(w * h * hr.bands);
    let mut rows = vec![0f64; hr.height * w];
    for b in 0..hr.bands {
        let plane = hr.band(b);
        // horizontal pass, only at retained columns
        for y in 0..hr.height {
            for x in 0..w {
                let cx = decimation_index(x, scale) as i64;
                rows[y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(t, &k)| k * plane[y * hr.width + clamp(cx + t as i64 - r, hr.width)].as_f64())
                    .sum();
            }
        }
        for y in 0..h {
            let cy = decimation_index(y, scale) as i64;
            for x in 0..w {
                let v: f64 = taps
                    .iter()
                    .enumerate()
                    .map(|(t, &k)| k * rows[clamp(cy + t as i64 - r, hr.height) * w + x])
                    .sum();
                out.push(T::of(v.clamp(0.0, 1.0)));
            }
        }
    }
    HsiCube::new(w, h, hr.bands, out)
}

/// `rgb[c] = Σ_b resp[c,b]·hr[b]`.
pub fn project_to_rgb<T: Scalar>(hr: &HsiCube<T>, resp: &SpectralResponse) -> Result<RgbImage<T>> {
    if resp.bands != hr.bands {
        return Err(shape_err(format!(
            "response has {} columns but the cube has {} bands",
            resp.bands, hr.bands
        )));
    }
    let plane = hr.width * hr.height;
    let mut out = vec![0f64; 3 * plane];
    for c in 0..3 {
        for b in 0..hr.bands {
            let wgt = resp.weight(c, b);
            if wgt == 0.0 {
                continue;
            }
            for (o, &v) in out[c * plane..][..plane].iter_mut().zip(hr.band(b)) {
                *o += wgt * v.as_f64();
            }
        }
    }
    RgbImage::new(
        hr.width,
        hr.height,
        out.into_iter().map(|v| T::of(v.clamp(0.0, 1.0))).collect(),
    )
}

/// Aligned crops of a scene. `hr_patch` and `stride` must be multiples of
/// the scene scale so the LR crop stays on the LR grid.
pub fn extract_patches<T: Scalar>(
    triple: &SceneTriple<T>,
    hr_patch: usize,
    stride: usize,
) -> Result<Vec<SceneTriple<T>>> {
    let s = triple.scale;
    let (w, h) = (triple.hr_hsi.width, triple.hr_hsi.height);
    if hr_patch == 0 || stride == 0 {
        return Err(invalid("patch size and stride must be positive"));
    }
    if hr_patch > w || hr_patch > h {
        return Err(invalid(format!("patch {hr_patch} larger than scene {w}×{h}")));
    }
    if !hr_patch.is_multiple_of(s) || !stride.is_multiple_of(s) {
        return Err(invalid(format!(
            "patch {hr_patch} and stride {stride} must be multiples of scale {s}"
        )));
    }
    let lp = hr_patch / s;
    let mut out = Vec::new();
    for y in (0..=h - hr_patch).step_by(stride) {
        for x in (0..=w - hr_patch).step_by(stride) {
            out.push(SceneTriple {
                lr_hsi: triple.lr_hsi.crop(x / s, y / s, lp, lp)?,
                hr_rgb: triple.hr_rgb.crop(x, y, hr_patch, hr_patch)?,
                hr_hsi: triple.hr_hsi.crop(x, y, hr_patch, hr_patch)?,
                scale: s,
            });
        }
    }
    Ok(out)
}
