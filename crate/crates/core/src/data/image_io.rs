use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Converts an 8-bit RGB buffer to an `[h, w, 3]` tensor in [0, 1].
pub fn image_from_rgb8(img: &image::RgbImage) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Tensor::new(&[h as usize, w as usize, 3], data).expect("rgb buffer matches its dimensions")
}

/// Bilinear resize of an `[h, w, c]` image with half-pixel centres and
/// edge clamping.
pub fn resize_bilinear(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let &[in_h, in_w, c] = img.shape() else {
        return Err(Error::precondition("resize_bilinear", format!("expected [h, w, c], got {:?}", img.shape())));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::precondition("resize_bilinear", "target size must be positive"));
    }
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let src = img.data();
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = taps(out_h, in_h);
    let xs = taps(out_w, in_w);
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, wy) in &ys {
        for &(x0, x1, wx) in &xs {
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(y * in_w + x) * c + ch];
                // a + (b - a) * t keeps constant regions exact
                let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * wx;
                let bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * wx;
                out.push(top + (bottom - top) * wy);
            }
        }
    }
    Tensor::new(&[out_h, out_w, c], out)
}

/// Decodes an image file to `[target, target, 3]` in [0, 1]. Grayscale is
/// replicated across channels and alpha is dropped.
pub fn load_image(path: &Path, target: usize) -> Result<Tensor<f32>> {
    let decoded = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    resize_bilinear(&image_from_rgb8(&decoded.to_rgb8()), target, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, values: &[f32]) -> Tensor<f32> {
        Tensor::new(&[h, w, 1], values.to_vec()).unwrap()
    }

    #[test]
    fn checkerboard_two_to_four() {
        // source sample positions along each axis are 0, 0.25, 0.75, 1
        // (edges clamped); f(u, v) = u + v - 2uv for this board
        let board = gray(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let out = resize_bilinear(&board, 4, 4).unwrap();
        #[rustfmt::skip]
        let expected = [
            0.0,  0.25,  0.75,  1.0,
            0.25, 0.375, 0.625, 0.75,
            0.75, 0.625, 0.375, 0.25,
            1.0,  0.75,  0.25,  0.0,
        ];
        for (a, e) in out.data().iter().zip(expected) {
            assert!((a - e).abs() < 1e-6, "{:?}", out.data());
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Tensor::full(&[5, 7, 3], 0.3137f32);
        let out = resize_bilinear(&img, 224, 224).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.3137));
    }

    #[test]
    fn native_size_is_raw_over_255_and_solid_downscale_is_solid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.png");
        let img = image::RgbImage::from_fn(224, 224, |x, y| image::Rgb([x as u8, y as u8, (x ^ y) as u8]));
        img.save(&p).unwrap();
        let t = load_image(&p, 224).unwrap();
        for (a, &b) in t.data().iter().zip(img.as_raw()) {
            assert_eq!(*a, b as f32 / 255.0);
        }
        let s = dir.path().join("s.png");
        image::RgbImage::from_pixel(448, 448, image::Rgb([12, 200, 77])).save(&s).unwrap();
        let t = load_image(&s, 224).unwrap();
        assert_eq!(t.shape(), &[224, 224, 3]);
        for px in t.data().chunks(3) {
            assert_eq!(px, &[12.0 / 255.0, 200.0 / 255.0, 77.0 / 255.0]);
        }
    }

    #[test]
    fn grayscale_and_rgba_files_load_as_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.png");
        image::GrayImage::from_fn(6, 4, |x, _| image::Luma([(x * 40) as u8])).save(&g).unwrap();
        let t = load_image(&g, 8).unwrap();
        assert_eq!(t.shape(), &[8, 8, 3]);
        for px in t.data().chunks(3) {
            assert_eq!(px[0], px[1]);
            assert_eq!(px[1], px[2]);
        }
        let a = dir.path().join("a.png");
        image::RgbaImage::from_pixel(3, 3, image::Rgba([255, 0, 51, 7])).save(&a).unwrap();
        let t = load_image(&a, 3).unwrap();
        assert_eq!(&t.data()[..3], &[1.0, 0.0, 0.2]);
    }

    #[test]
    fn corrupt_file_is_a_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jpg");
        std::fs::write(&p, b"\xff\xd8\xff garbage").unwrap();
        assert!(matches!(load_image(&p, 8), Err(Error::Decode { .. })));
    }
}
