//! Procedural test data: striped textures with per-image phase and noise,
//! optionally with a flat, saturated square pasted in as the anomaly.

use std::f32::consts::PI;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::NORMAL_DEFECT;
use crate::error::{Result, SpadeError};
use crate::types::{GroundTruthMask, Grid, ImageTensor};

/// Sinusoidal stripes around a base color.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextureStyle {
    pub base: [f32; 3],
    pub amplitude: f32,
    pub period: f32,
    /// Stripe direction in radians; 0 gives vertical stripes.
    pub angle: f32,
    pub noise: f32,
}

impl TextureStyle {
    pub const GREY: TextureStyle = TextureStyle {
        base: [0.5, 0.5, 0.5],
        amplitude: 0.15,
        period: 16.0,
        angle: 0.0,
        noise: 0.02,
    };

    pub const TEAL: TextureStyle = TextureStyle {
        base: [0.2, 0.45, 0.6],
        amplitude: 0.2,
        period: 8.0,
        angle: PI / 2.0,
        noise: 0.02,
    };
}

pub const PATCH_COLOR: [f32; 3] = [0.95, 0.1, 0.05];
pub const DEFECT_NAME: &str = "patch";

/// A `3 × size × size` texture with random phase.
pub fn texture(rng: &mut impl Rng, id: &str, size: usize, style: &TextureStyle) -> ImageTensor {
    let phase = rng.random_range(0.0..2.0 * PI);
    let (s, c) = style.angle.sin_cos();
    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let t = (x as f32 * c + y as f32 * s) * 2.0 * PI / style.period + phase;
            let wave = style.amplitude * t.sin();
            for ch in 0..3 {
                let n = style.noise * rng.random_range(-1.0f32..1.0);
                data[ch * plane + y * size + x] = (style.base[ch] + wave + n).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::new(id, 3, size, size, data).expect("valid synthetic image")
}

/// Paint a solid `patch × patch` square at `(top, left)`; returns the mask.
pub fn inject_patch(image: &ImageTensor, top: usize, left: usize, patch: usize, color: [f32; 3]) -> Result<(ImageTensor, GroundTruthMask)> {
    let (h, w) = image.shape();
    if top + patch > h || left + patch > w {
        return Err(SpadeError::Parameter(format!(
            "patch {patch} at ({top}, {left}) exceeds {h}x{w}"
        )));
    }
    let mut data = image.data().to_vec();
    let channels = image.channels();
    let mut mask = Grid::filled(h, w, 0u8);
    for y in top..top + patch {
        for x in left..left + patch {
            for ch in 0..channels {
                data[ch * h * w + y * w + x] = color[ch.min(2)];
            }
            mask.set(y, x, 1);
        }
    }
    let out = ImageTensor::new(image.id.clone(), channels, h, w, data)?;
    Ok((out, GroundTruthMask::new(image.id.clone(), mask)?))
}

#[derive(Clone, Debug)]
pub struct SyntheticSet {
    pub train: Vec<ImageTensor>,
    pub test: Vec<ImageTensor>,
    /// Aligned with `test`.
    pub masks: Vec<GroundTruthMask>,
}

impl SyntheticSet {
    pub fn test_labels(&self) -> Vec<bool> {
        self.masks.iter().map(GroundTruthMask::is_anomalous).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub class_name: String,
    pub size: usize,
    pub patch: usize,
    /// Training images per style.
    pub train: Vec<(TextureStyle, usize)>,
    /// Test images: style, anomalous count, normal count.
    pub test: Vec<(TextureStyle, usize, usize)>,
    pub seed: u64,
}

impl SynthSpec {
    /// Single grey style; `n_train` normals and `n_anomalous` patched tests.
    pub fn localization(n_train: usize, n_anomalous: usize, n_normal: usize, size: usize, seed: u64) -> Self {
        SynthSpec {
            class_name: "synth".into(),
            size,
            patch: 32,
            train: vec![(TextureStyle::GREY, n_train)],
            test: vec![(TextureStyle::GREY, n_anomalous, n_normal)],
            seed,
        }
    }

    /// Two training modes, many grey and few teal; every test image is a
    /// patched teal one, so only retrieval of the minority mode helps.
    pub fn bimodal(n_major: usize, n_minor: usize, n_test: usize, size: usize, seed: u64) -> Self {
        SynthSpec {
            class_name: "synth".into(),
            size,
            patch: 32,
            train: vec![(TextureStyle::GREY, n_major), (TextureStyle::TEAL, n_minor)],
            test: vec![(TextureStyle::TEAL, n_test, 0)],
            seed,
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SyntheticSet> {
    if spec.patch == 0 || spec.patch > spec.size {
        return Err(SpadeError::Parameter(format!(
            "patch {} does not fit in {}",
            spec.patch, spec.size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let class = &spec.class_name;
    let mut train = Vec::new();
    for (style, n) in &spec.train {
        for _ in 0..*n {
            let id = format!("{class}/train/{NORMAL_DEFECT}/{:03}", train.len());
            train.push(texture(&mut rng, &id, spec.size, style));
        }
    }
    let (mut test, mut masks) = (Vec::new(), Vec::new());
    let (mut n_good, mut n_bad) = (0, 0);
    for (style, anomalous, normal) in &spec.test {
        for _ in 0..*normal {
            let id = format!("{class}/test/{NORMAL_DEFECT}/{n_good:03}");
            n_good += 1;
            masks.push(GroundTruthMask::empty(&id, spec.size, spec.size));
            test.push(texture(&mut rng, &id, spec.size, style));
        }
        for _ in 0..*anomalous {
            let id = format!("{class}/test/{DEFECT_NAME}/{n_bad:03}");
            n_bad += 1;
            let base = texture(&mut rng, &id, spec.size, style);
            let top = rng.random_range(0..=spec.size - spec.patch);
            let left = rng.random_range(0..=spec.size - spec.patch);
            let (img, mask) = inject_patch(&base, top, left, spec.patch, PATCH_COLOR)?;
            test.push(img);
            masks.push(mask);
        }
    }
    Ok(SyntheticSet { train, test, masks })
}

fn to_rgb8(image: &ImageTensor) -> RgbImage {
    let (h, w) = image.shape();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| {
            let c = c.min(image.channels() - 1);
            (image.at(c, y as usize, x as usize) * 255.0).round().clamp(0.0, 255.0) as u8
        };
        Rgb([px(0), px(1), px(2)])
    })
}

fn save(img: impl FnOnce(&Path) -> image::ImageResult<()>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| SpadeError::io(dir, e))?;
    }
    img(path).map_err(|source| SpadeError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Write the set as an MVTec-style tree under `root`. Image ids must have the
/// `class/split/defect/stem` form produced by [`generate`].
pub fn write_mvtec(root: &Path, set: &SyntheticSet) -> Result<()> {
    for image in set.train.iter().chain(&set.test) {
        let path = root.join(format!("{}.png", image.id));
        let rgb = to_rgb8(image);
        save(|p| rgb.save(p), &path)?;
    }
    for mask in set.masks.iter().filter(|m| m.is_anomalous()) {
        let parts: Vec<&str> = mask.image_id.split('/').collect();
        let [class, _, defect, stem] = parts[..] else {
            return Err(SpadeError::Parameter(format!("unexpected id {}", mask.image_id)));
        };
        let path = root
            .join(class)
            .join("ground_truth")
            .join(defect)
            .join(format!("{stem}_mask.png"));
        let (h, w) = mask.data.shape();
        let gray = GrayImage::from_fn(w as u32, h as u32, |x, y| {
            Luma([mask.data.get(y as usize, x as usize) * 255])
        });
        save(|p| gray.save(p), &path)?;
    }
    Ok(())
}
