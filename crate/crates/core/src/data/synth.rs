use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::stream;

const SYNTH_STREAM: u64 = 0x5359;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub num_classes: usize,
    pub per_class: usize,
    pub image_size: u32,
    /// Standard deviation of the additive pixel noise, in [0, 1] units.
    pub noise: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            num_classes: 15,
            per_class: 20,
            image_size: 32,
            noise: 0.05,
        }
    }
}

/// Class `k` texture: stripe angle, spatial frequency (cycles per image) and RGB tint.
fn class_style(k: usize, num_classes: usize) -> (f64, f64, [f64; 3]) {
    let angle = PI * k as f64 / num_classes as f64;
    let freq = 2.0 + (k % 4) as f64 * 1.5;
    let hue = k as f64 / num_classes as f64;
    let tint = [0.0, 1.0 / 3.0, 2.0 / 3.0].map(|off| 0.55 + 0.35 * (2.0 * PI * (hue + off)).cos());
    (angle, freq, tint)
}

/// Writes `out_dir/class_NN/img_NNNN.png`: oriented stripes with a class
/// tint, a random phase and Gaussian noise. Identical options and seed give
/// byte-identical files. Returns the class directory names.
pub fn generate_synthetic_dataset(opts: &SynthOptions, seed: u64, out_dir: &Path) -> Result<Vec<String>> {
    if opts.num_classes < 2 || opts.per_class == 0 || opts.image_size == 0 {
        return Err(Error::Config(format!(
            "synthetic dataset needs >= 2 classes, >= 1 image per class and a positive size, got {opts:?}"
        )));
    }
    let noise = Normal::new(0.0, opts.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let s = opts.image_size;
    let mut names = Vec::with_capacity(opts.num_classes);
    for k in 0..opts.num_classes {
        let name = format!("class_{k:02}");
        let dir = out_dir.join(&name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let (angle, freq, tint) = class_style(k, opts.num_classes);
        let (sin, cos) = angle.sin_cos();
        for i in 0..opts.per_class {
            let mut rng = stream(seed, &[SYNTH_STREAM, k as u64, i as u64]);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let img = image::RgbImage::from_fn(s, s, |x, y| {
                let u = (x as f64 * cos + y as f64 * sin) / s as f64;
                let wave = 0.5 + 0.4 * (2.0 * PI * freq * u + phase).sin();
                image::Rgb(tint.map(|t| {
                    let v = t * wave + noise.sample(&mut rng);
                    (v.clamp(0.0, 1.0) * 255.0).round() as u8
                }))
            });
            let path = dir.join(format!("img_{i:04}.png"));
            img.save(&path).map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
        }
        names.push(name);
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_image, scan_dataset};

    fn opts() -> SynthOptions {
        SynthOptions {
            num_classes: 4,
            per_class: 10,
            image_size: 16,
            noise: 0.05,
        }
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_synthetic_dataset(&opts(), 9, a.path()).unwrap();
        generate_synthetic_dataset(&opts(), 9, b.path()).unwrap();
        let idx = scan_dataset(a.path()).unwrap();
        assert_eq!(idx.class_count(), 4);
        for class in &idx.classes {
            for f in &class.files {
                assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
            }
        }
    }

    #[test]
    fn classes_are_further_apart_than_their_members() {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic_dataset(&opts(), 1, dir.path()).unwrap();
        let idx = scan_dataset(dir.path()).unwrap();
        let imgs: Vec<(usize, Vec<f32>)> = idx
            .classes
            .iter()
            .enumerate()
            .flat_map(|(k, c)| c.files.iter().map(move |f| (k, f.clone())))
            .map(|(k, f)| (k, load_image(&dir.path().join(f), 16).unwrap().into_data()))
            .collect();
        let (mut within, mut between) = ((0.0, 0usize), (0.0, 0usize));
        for (i, (ka, a)) in imgs.iter().enumerate() {
            for (kb, b) in &imgs[i + 1..] {
                let d: f32 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                let slot = if ka == kb { &mut within } else { &mut between };
                slot.0 += d.sqrt() as f64;
                slot.1 += 1;
            }
        }
        let (w, b) = (within.0 / within.1 as f64, between.0 / between.1 as f64);
        assert!(b > w, "between {b} within {w}");
    }
}
