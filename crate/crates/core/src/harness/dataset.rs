use crate::data::load_cube_dir;
use crate::data::{make_synthetic_scene, SceneSpec};
use crate::data::{SceneTriple, SpectralResponse};
use crate::error::{invalid, Result};
use crate::numerics::{upsample_bicubic, Scalar, Tensor};

use super::config::{DataConfig, DataSource};

/// Network-ready tensors of one scene or patch (NCHW, batch 1 or more).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    /// Bicubically upsampled LR cube, `N×L×H×W`.
    pub x1_up: Tensor<T>,
    /// RGB image, `N×3×H×W`.
    pub x2: Tensor<T>,
    /// Ground truth, `N×L×H×W`.
    pub y: Tensor<T>,
}

impl<T: Scalar> Sample<T> {
    pub fn from_triple(t: &SceneTriple<T>) -> Result<Self> {
        Ok(Self {
            x1_up: upsample_bicubic(&t.lr_hsi.to_tensor(), t.scale)?,
            x2: t.hr_rgb.to_tensor(),
            y: t.hr_hsi.to_tensor(),
        })
    }

    pub fn batch(&self) -> usize {
        self.y.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.y.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.y.shape()[3]
    }

    /// Spatial crop of every tensor.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        Ok(Self {
            x1_up: crop(&self.x1_up, x0, y0, w, h)?,
            x2: crop(&self.x2, x0, y0, w, h)?,
            y: crop(&self.y, x0, y0, w, h)?,
        })
    }

    pub fn stack(items: &[&Self]) -> Result<Self> {
        let pick = |f: fn(&Self) -> &Tensor<T>| items.iter().map(|s| f(s)).collect::<Vec<_>>();
        Ok(Self {
            x1_up: Tensor::stack(&pick(|s| &s.x1_up))?,
            x2: Tensor::stack(&pick(|s| &s.x2))?,
            y: Tensor::stack(&pick(|s| &s.y))?,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Sample<U> {
        Sample {
            x1_up: self.x1_up.cast(),
            x2: self.x2.cast(),
            y: self.y.cast(),
        }
    }
}

fn crop<T: Scalar>(t: &Tensor<T>, x0: usize, y0: usize, w: usize, h: usize) -> Result<Tensor<T>> {
    let [n, c, th, tw] = t.dims4();
    if x0 + w > tw || y0 + h > th {
        return Err(invalid(format!("crop {w}×{h} at ({x0}, {y0}) exceeds {tw}×{th}")));
    }
    let src = t.data();
    let mut out = Vec::with_capacity(n * c * w * h);
    for plane in 0..n * c {
        for y in y0..y0 + h {
            let row = plane * th * tw + y * tw;
            out.extend_from_slice(&src[row + x0..row + x0 + w]);
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

/// `(training, test)` scenes.
pub type SceneSplit = (Vec<SceneTriple<f32>>, Vec<SceneTriple<f32>>);

/// Training and test scenes of an experiment.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub train: Vec<Sample<T>>,
    pub test: Vec<Sample<T>>,
    /// Training patches, in scene-major raster order.
    pub patches: Vec<Sample<T>>,
}

/// Seed of synthetic test scene `index`; disjoint from the training seeds.
pub fn test_scene_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(1_000_000 + index as u64)
}

pub fn scene_spec(d: &DataConfig) -> SceneSpec {
    SceneSpec {
        width: d.width,
        height: d.height,
        bands: d.bands,
        scale: d.scale,
        blobs: d.blobs,
    }
}

/// Ground-truth-derived scenes: synthetic training scenes use seeds
/// `seed + i`, test scenes [`test_scene_seed`]. A native directory is split
/// in sorted order, training scenes first.
pub fn load_scenes(d: &DataConfig) -> Result<SceneSplit> {
    match d.source {
        DataSource::Synthetic => {
            let spec = scene_spec(d);
            let train = (0..d.scenes)
                .map(|i| make_synthetic_scene(d.seed.wrapping_add(i as u64), spec))
                .collect::<Result<Vec<_>>>()?;
            let test = (0..d.test_scenes)
                .map(|i| make_synthetic_scene(test_scene_seed(d.seed, i), spec))
                .collect::<Result<Vec<_>>>()?;
            Ok((train, test))
        }
        DataSource::NativeDir => {
            let dir = d
                .dir
                .as_ref()
                .ok_or_else(|| invalid("native-dir data source needs `data.dir`"))?;
            let cubes = load_cube_dir(dir)?;
            if cubes.len() < d.scenes + d.test_scenes {
                return Err(invalid(format!(
                    "{} holds {} cubes; {} training + {} test scenes requested",
                    dir.display(),
                    cubes.len(),
                    d.scenes,
                    d.test_scenes
                )));
            }
            let response = match &d.response {
                Some(path) => SpectralResponse::from_csv(path)?,
                None => SpectralResponse::contiguous_thirds(cubes[0].bands()),
            };
            let mut triples = cubes
                .into_iter()
                .take(d.scenes + d.test_scenes)
                .map(|c| SceneTriple::from_ground_truth(c, d.scale, &response))
                .collect::<Result<Vec<_>>>()?;
            let test = triples.split_off(d.scenes);
            Ok((triples, test))
        }
    }
}

impl Dataset<f32> {
    pub fn build(d: &DataConfig, patch: usize, stride: usize) -> Result<Self> {
        let (train, test) = load_scenes(d)?;
        Self::from_triples(&train, &test, patch, stride)
    }

    pub fn from_triples(
        train: &[SceneTriple<f32>],
        test: &[SceneTriple<f32>],
        patch: usize,
        stride: usize,
    ) -> Result<Self> {
        if test.is_empty() {
            return Err(invalid("no test scenes"));
        }
        if patch == 0 || stride == 0 {
            return Err(invalid("patch size and stride must be positive"));
        }
        let train = train.iter().map(Sample::from_triple).collect::<Result<Vec<_>>>()?;
        let test = test.iter().map(Sample::from_triple).collect::<Result<Vec<_>>>()?;
        let mut patches = Vec::new();
        for s in &train {
            let (w, h) = (s.width(), s.height());
            if patch > w || patch > h {
                return Err(invalid(format!("patch {patch} larger than scene {w}×{h}")));
            }
            for y in (0..=h - patch).step_by(stride) {
                for x in (0..=w - patch).step_by(stride) {
                    patches.push(s.crop(x, y, patch, patch)?);
                }
            }
        }
        Ok(Self { train, test, patches })
    }
}
