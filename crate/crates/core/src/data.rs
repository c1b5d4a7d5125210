//! Samples, synthetic cracks, dataset directories and PNG I/O.
//!
//! A dataset directory holds `image/<id>.png` (8-bit RGB) and
//! `mask/<id>.png` (8-bit gray, binarized at 128).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SynthConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    /// `[1, H, W]` with values in `{0, 1}`.
    pub mask: Tensor,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn mask_bits(&self) -> Vec<bool> {
        self.mask.data().iter().map(|&v| v > 0.5).collect()
    }

    pub fn positive_fraction(&self) -> f64 {
        self.mask.sum() / self.mask.numel() as f64
    }
}

/// Stack samples into `[N, 3, H, W]` images and `[N, 1, H, W]` masks.
pub fn batch(samples: &[&Sample]) -> Result<(Tensor, Tensor)> {
    let first = samples.first().ok_or_else(|| Error::Usage("empty batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut img = Vec::with_capacity(samples.len() * 3 * h * w);
    let mut msk = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if s.height() != h || s.width() != w {
            return Err(Error::Input(format!(
                "sample {} is {}x{}, batch expects {h}x{w}",
                s.id,
                s.height(),
                s.width()
            )));
        }
        img.extend_from_slice(s.image.data());
        msk.extend_from_slice(s.mask.data());
    }
    Ok((
        Tensor::new([samples.len(), 3, h, w], img)?,
        Tensor::new([samples.len(), 1, h, w], msk)?,
    ))
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Smooth noise: random values on a coarse lattice, bilinearly interpolated.
fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, cell: usize) -> Vec<f64> {
    let (gh, gw) = (h / cell + 2, w / cell + 2);
    let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.random::<f64>()).collect();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let fy = y as f64 / cell as f64;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let v = |i: usize, j: usize| lattice[i * gw + j];
            let top = v(y0, x0) * (1.0 - tx) + v(y0, x0 + 1) * tx;
            let bot = v(y0 + 1, x0) * (1.0 - tx) + v(y0 + 1, x0 + 1) * tx;
            out[y * w + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// One synthetic crack image, deterministic in `seed`.
///
/// The background is smooth value noise plus pixel noise. Each stroke is a
/// random walk whose segments carry their own width; the mask marks pixel
/// centers within half a width of any segment, and those pixels are
/// darkened in the image.
pub fn synth_crack(seed: u64, h: usize, w: usize, cfg: &SynthConfig) -> Result<Sample> {
    if h == 0 || w == 0 {
        return Err(Error::Config("synthetic image size must be positive".into()));
    }
    if !(cfg.width_min > 0.0 && cfg.width_max >= cfg.width_min) {
        return Err(Error::Config("synthetic stroke widths must satisfy 0 < min <= max".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = (h.min(w) / 4).max(2);
    let tex = value_noise(&mut rng, h, w, cell);
    let base: f64 = rng.random_range(0.55..0.8);
    let tint: [f64; 3] = [rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)];

    let (hf, wf) = (h as f64, w as f64);
    let step = (hf + wf) / 14.0;
    let mut segments: Vec<((f64, f64), (f64, f64), f64)> = Vec::new();
    for _ in 0..cfg.stroke_count {
        let mut p = (rng.random_range(0.2..0.8) * wf, rng.random_range(0.2..0.8) * hf);
        let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let n = rng.random_range(5..10);
        for _ in 0..n {
            heading += rng.random_range(-0.5..0.5);
            let mut q = (p.0 + step * heading.cos(), p.1 + step * heading.sin());
            if q.0 < 0.0 || q.0 > wf {
                heading = std::f64::consts::PI - heading;
                q.0 = q.0.clamp(0.0, wf);
            }
            if q.1 < 0.0 || q.1 > hf {
                heading = -heading;
                q.1 = q.1.clamp(0.0, hf);
            }
            let width = rng.random_range(cfg.width_min..=cfg.width_max);
            segments.push((p, q, width));
            p = q;
        }
    }

    let mut image = Tensor::zeros([3, h, w]);
    let mut mask = Tensor::zeros([1, h, w]);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let on = segments.iter().any(|&(a, b, wd)| segment_distance(px, py, a, b) <= 0.5 * wd);
            let shade = base + 0.25 * (tex[y * w + x] - 0.5);
            for c in 0..3 {
                let noise = cfg.noise_level * rng.random_range(-0.5..0.5);
                let mut v = shade + tint[c] + noise;
                if on {
                    v *= 1.0 - cfg.contrast;
                }
                image.data_mut()[(c * h + y) * w + x] = quantize(v);
            }
            if on {
                mask.data_mut()[y * w + x] = 1.0;
            }
        }
    }
    Ok(Sample { id: format!("synth_{seed:06}"), image, mask })
}

/// `n` synthetic samples with seeds `seed, seed + 1, ...`.
pub fn synth_dataset(n: usize, seed: u64, h: usize, w: usize, cfg: &SynthConfig) -> Result<Vec<Sample>> {
    (0..n as u64).map(|i| synth_crack(seed.wrapping_add(i), h, w, cfg)).collect()
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image { path: path.to_path_buf(), message: e.to_string() }
}

/// 8-bit RGB PNG to `[3, H, W]` in `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros([3, h, w]);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            t.data_mut()[(c * h + y as usize) * w + x as usize] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(t)
}

/// Gray PNG to a `[1, H, W]` mask: 1 where the value is at least 128.
pub fn read_mask(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::new([1, h, w], img.as_raw().iter().map(|&v| binarize_u8(v)).collect())?)
}

/// Gray PNG to `[H, W]` values in `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((h, w, img.as_raw().iter().map(|&v| v as f64 / 255.0).collect()))
}

pub fn binarize_u8(v: u8) -> f64 {
    if v >= 128 {
        1.0
    } else {
        0.0
    }
}

/// Probability to 8-bit gray, rounding half up.
pub fn prob_to_u8(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0 + 0.5).floor().min(255.0) as u8
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn write_gray(path: &Path, h: usize, w: usize, pixels: Vec<u8>) -> Result<()> {
    ensure_parent(path)?;
    let img = GrayImage::from_raw(w as u32, h as u32, pixels).ok_or_else(|| image_err(path, "buffer size mismatch"))?;
    img.save_with_format(path, ImageFormat::Png).map_err(|e| image_err(path, e))
}

/// `[3, H, W]` in `[0, 1]` to 8-bit RGB PNG.
pub fn write_rgb(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let mut buf = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                buf.push(prob_to_u8(image.data()[(c * h + y) * w + x]));
            }
        }
    }
    ensure_parent(path)?;
    let img = RgbImage::from_raw(w as u32, h as u32, buf).ok_or_else(|| image_err(path, "buffer size mismatch"))?;
    img.save_with_format(path, ImageFormat::Png).map_err(|e| image_err(path, e))
}

/// Mask as 0/255 gray PNG.
pub fn write_mask(path: &Path, mask: &Tensor) -> Result<()> {
    let (h, w) = (mask.shape()[1], mask.shape()[2]);
    write_gray(path, h, w, mask.data().iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect())
}

pub fn write_sample(root: &Path, sample: &Sample) -> Result<()> {
    write_rgb(&root.join("image").join(format!("{}.png", sample.id)), &sample.image)?;
    write_mask(&root.join("mask").join(format!("{}.png", sample.id)), &sample.mask)
}

/// Ids of `*.png` files in `dir`, sorted.
pub fn png_ids(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Load every `image/<id>.png` + `mask/<id>.png` pair under `root`.
pub fn load_dataset(root: &Path) -> Result<Vec<Sample>> {
    let images = png_ids(&root.join("image"))?;
    let masks = png_ids(&root.join("mask"))?;
    let a: BTreeSet<_> = images.keys().collect();
    let b: BTreeSet<_> = masks.keys().collect();
    let orphans: Vec<String> = a.symmetric_difference(&b).map(|s| s.to_string()).collect();
    if !orphans.is_empty() {
        return Err(Error::Dataset(format!("unpaired ids: {}", orphans.join(", "))));
    }
    let mut out = Vec::with_capacity(images.len());
    for (id, ipath) in &images {
        let image = read_rgb(ipath)?;
        let mask = read_mask(&masks[id])?;
        if image.shape()[1..] != mask.shape()[1..] {
            return Err(Error::Dataset(format!(
                "{id}: image is {:?} but mask is {:?}",
                &image.shape()[1..],
                &mask.shape()[1..]
            )));
        }
        out.push(Sample { id: id.clone(), image, mask });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train: 0.7, val: 0.1, test: 0.2, seed: 42 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Shuffle with the spec's seed, then take `floor(val * n)` validation and
/// `floor(test * n)` test items; the remainder trains.
pub fn split<T>(items: Vec<T>, spec: &SplitSpec) -> Result<Split<T>> {
    let fr = [spec.train, spec.val, spec.test];
    if fr.iter().any(|f| !(*f >= 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fr:?} must be nonnegative and sum to 1")));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_val = (spec.val * n as f64 + 1e-9).floor() as usize;
    let n_test = (spec.test * n as f64 + 1e-9).floor() as usize;
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<T> { idx.iter().map(|&i| slots[i].take().expect("index used once")).collect() };
    let val = take(&order[..n_val]);
    let test = take(&order[n_val..n_val + n_test]);
    let train = take(&order[n_val + n_test..]);
    Ok(Split { train, val, test })
}

/// `id -> "train" | "val" | "test"`.
pub fn split_manifest(s: &Split<Sample>) -> BTreeMap<String, &'static str> {
    let mut m = BTreeMap::new();
    for (name, part) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
        for x in part.iter() {
            m.insert(x.id.clone(), name);
        }
    }
    m
}
