use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Training-time augmentation. Applied in order: rotation, horizontal flip,
/// vertical flip, brightness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Maximum absolute rotation angle in degrees.
    pub rotation_degrees: f64,
    pub horizontal_flip_prob: f64,
    pub vertical_flip_prob: f64,
    /// Brightness factor is drawn from U(1 - delta, 1 + delta).
    pub brightness_delta: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_degrees: 15.0,
            horizontal_flip_prob: 0.5,
            vertical_flip_prob: 0.5,
            brightness_delta: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            rotation_degrees: 0.0,
            horizontal_flip_prob: 0.0,
            vertical_flip_prob: 0.0,
            brightness_delta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(0.0..=180.0).contains(&self.rotation_degrees) {
            return fail(format!("augment.rotation_degrees must be in [0, 180], got {}", self.rotation_degrees));
        }
        for (key, p) in [
            ("augment.horizontal_flip_prob", self.horizontal_flip_prob),
            ("augment.vertical_flip_prob", self.vertical_flip_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{key} must be in [0, 1], got {p}"));
            }
        }
        if !(0.0..1.0).contains(&self.brightness_delta) {
            return fail(format!("augment.brightness_delta must be in [0, 1), got {}", self.brightness_delta));
        }
        Ok(())
    }
}

fn hwc(img: &Tensor<f32>) -> (usize, usize, usize) {
    match *img.shape() {
        [h, w, c] => (h, w, c),
        _ => panic!("augmentation expects an [h, w, c] image, got {:?}", img.shape()),
    }
}

/// Rotates counter-clockwise by `degrees` about the image centre, sampling
/// bilinearly; pixels mapped from outside the source are zero.
pub fn rotate(img: &Tensor<f32>, degrees: f64) -> Tensor<f32> {
    let (h, w, c) = hwc(img);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let src = img.data();
    let mut out = vec![0.0f32; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = cx + dx * cos - dy * sin;
            let sy = cy + dx * sin + dy * cos;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
            let base = (y * w + x) * c;
            for (oy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                for (ox, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                    let (py, px) = (y0 + oy, x0 + ox);
                    let weight = wy * wx;
                    if weight == 0.0 || py < 0.0 || px < 0.0 || py >= h as f64 || px >= w as f64 {
                        continue;
                    }
                    let s = (py as usize * w + px as usize) * c;
                    for ch in 0..c {
                        out[base + ch] += weight * src[s + ch];
                    }
                }
            }
        }
    }
    Tensor::new(img.shape(), out).expect("same shape")
}

pub fn flip_horizontal(img: &Tensor<f32>) -> Tensor<f32> {
    let (h, w, c) = hwc(img);
    let src = img.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            out.extend_from_slice(&src[(y * w + x) * c..(y * w + x + 1) * c]);
        }
    }
    Tensor::new(img.shape(), out).expect("same shape")
}

pub fn flip_vertical(img: &Tensor<f32>) -> Tensor<f32> {
    let (h, w, c) = hwc(img);
    let src = img.data();
    let row = w * c;
    let mut out = Vec::with_capacity(src.len());
    for y in (0..h).rev() {
        out.extend_from_slice(&src[y * row..(y + 1) * row]);
    }
    Tensor::new(img.shape(), out).expect("same shape")
}

/// Scales intensities and clamps to [0, 1].
pub fn brightness(img: &Tensor<f32>, factor: f32) -> Tensor<f32> {
    img.map(|v| (v * factor).clamp(0.0, 1.0))
}

/// Applies one random draw of `cfg`. Steps with a zero range are skipped
/// without consuming randomness.
pub fn augment<R: Rng + ?Sized>(img: &Tensor<f32>, cfg: &AugmentConfig, rng: &mut R) -> Tensor<f32> {
    let mut out = img.clone();
    if cfg.rotation_degrees > 0.0 {
        let angle = rng.gen_range(-cfg.rotation_degrees..=cfg.rotation_degrees);
        out = rotate(&out, angle);
    }
    if cfg.horizontal_flip_prob > 0.0 && rng.gen::<f64>() < cfg.horizontal_flip_prob {
        out = flip_horizontal(&out);
    }
    if cfg.vertical_flip_prob > 0.0 && rng.gen::<f64>() < cfg.vertical_flip_prob {
        out = flip_vertical(&out);
    }
    if cfg.brightness_delta > 0.0 {
        let d = cfg.brightness_delta;
        let factor = rng.gen_range(1.0 - d..=1.0 + d);
        out = brightness(&out, factor as f32);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn marker(n: usize) -> Tensor<f32> {
        Tensor::from_fn(&[n, n, 1], |i| i as f32)
    }

    #[test]
    fn quarter_turn_matches_index_rotation() {
        let n = 4;
        let img = marker(n);
        let out = rotate(&img, 90.0);
        // counter-clockwise quarter turn: out[i][j] = in[j][n-1-i]
        for i in 0..n {
            for j in 0..n {
                let want = img.data()[j * n + (n - 1 - i)];
                let got = out.data()[i * n + j];
                assert!((got - want).abs() < 1e-4, "({i},{j}) got {got} want {want}");
            }
        }
        let back = rotate(&rotate(&out, 90.0), 180.0);
        assert!(back.max_abs_diff(&img) < 1e-3);
    }

    #[test]
    fn zero_rotation_is_identity_and_corners_fill_with_zero() {
        let img = Tensor::full(&[9, 9, 3], 0.5f32);
        assert!(rotate(&img, 0.0).max_abs_diff(&img) < 1e-7);
        let r = rotate(&img, 45.0);
        assert_eq!(&r.data()[..3], &[0.0, 0.0, 0.0]);
        assert!((r.data()[(4 * 9 + 4) * 3] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn flips_reverse_axes() {
        let img = Tensor::from_fn(&[2, 3, 1], |i| i as f32);
        assert_eq!(flip_horizontal(&img).data(), &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
        assert_eq!(flip_vertical(&img).data(), &[3.0, 4.0, 5.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn forced_horizontal_flip_twice_is_identity() {
        let img = Tensor::from_fn(&[5, 6, 3], |i| (i % 11) as f32 / 11.0);
        let cfg = AugmentConfig { horizontal_flip_prob: 1.0, ..AugmentConfig::disabled() };
        let mut rng = stream(0, &[]);
        let once = augment(&img, &cfg, &mut rng);
        assert_ne!(once, img);
        assert_eq!(augment(&once, &cfg, &mut rng), img);
    }

    #[test]
    fn disabled_config_is_identity() {
        let img = Tensor::from_fn(&[8, 8, 3], |i| (i % 17) as f32 / 17.0);
        let mut rng = stream(3, &[]);
        assert_eq!(augment(&img, &AugmentConfig::disabled(), &mut rng), img);
    }

    #[test]
    fn config_validation() {
        AugmentConfig::default().validate().unwrap();
        let bad = AugmentConfig { horizontal_flip_prob: 1.5, ..AugmentConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(m)) if m.contains("horizontal_flip_prob")));
    }

    proptest! {
        #[test]
        fn augmented_images_stay_in_range(seed in 0u64..500) {
            let img = Tensor::from_fn(&[12, 12, 3], |i| ((i * 7919) % 256) as f32 / 255.0);
            let out = augment(&img, &AugmentConfig::default(), &mut stream(seed, &[]));
            prop_assert_eq!(out.shape(), img.shape());
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
