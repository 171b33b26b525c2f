//! Small float-image toolkit: RGB buffers, windowed views, bilinear resize,
//! HSV conversion, Gaussian blur, flips and rotation.
//!
//! All pixel math happens on interleaved `f32` RGB in `[0, 1]`. Geometry uses
//! the half-pixel-center convention: output pixel `(i, j)` samples the source
//! at `(top + (i + 0.5) * sh - 0.5, left + (j + 0.5) * sw - 0.5)`, clamped to
//! the window, so a same-size resize is the identity.

use serde::{Deserialize, Serialize};

/// Interleaved RGB image with `f32` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

/// Integer pixel window `[top, top + height) x [left, left + width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub top: i64,
    pub left: i64,
    pub height: i64,
    pub width: i64,
}

impl Window {
    /// Square window of side `side` centered on `(row, col)`.
    pub fn centered(row: f64, col: f64, side: i64) -> Self {
        let top = (row - side as f64 / 2.0).round() as i64;
        let left = (col - side as f64 / 2.0).round() as i64;
        Window { top, left, height: side, width: side }
    }

    /// Intersect with image bounds; may shrink or vanish.
    pub fn clipped(&self, img_h: usize, img_w: usize) -> Window {
        let top = self.top.max(0);
        let left = self.left.max(0);
        let bottom = (self.top + self.height).min(img_h as i64);
        let right = (self.left + self.width).min(img_w as i64);
        Window {
            top,
            left,
            height: (bottom - top).max(0),
            width: (right - left).max(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.height <= 0 || self.width <= 0
    }

    pub fn contains(&self, row: i64, col: i64) -> bool {
        row >= self.top
            && row < self.top + self.height
            && col >= self.left
            && col < self.left + self.width
    }
}

impl ImageBuf {
    pub fn new(height: usize, width: usize) -> Self {
        ImageBuf { height, width, data: vec![0.0; height * width * 3] }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut img = ImageBuf::new(height, width);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample at fractional position, clamped to the image.
    pub fn sample(&self, row: f64, col: f64) -> [f32; 3] {
        let r = row.clamp(0.0, (self.height - 1) as f64);
        let c = col.clamp(0.0, (self.width - 1) as f64);
        let r0 = r.floor() as usize;
        let c0 = c.floor() as usize;
        let r1 = (r0 + 1).min(self.height - 1);
        let c1 = (c0 + 1).min(self.width - 1);
        let fr = (r - r0 as f64) as f32;
        let fc = (c - c0 as f64) as f32;
        let p00 = self.get(r0, c0);
        let p01 = self.get(r0, c1);
        let p10 = self.get(r1, c0);
        let p11 = self.get(r1, c1);
        let mut out = [0.0f32; 3];
        for ch in 0..3 {
            let top = p00[ch] * (1.0 - fc) + p01[ch] * fc;
            let bot = p10[ch] * (1.0 - fc) + p11[ch] * fc;
            out[ch] = top * (1.0 - fr) + bot * fr;
        }
        out
    }

    /// Resample the (already clipped, non-empty) window into an
    /// `out_h` x `out_w` buffer.
    pub fn resize_window(&self, win: Window, out_h: usize, out_w: usize) -> ImageBuf {
        debug_assert!(!win.is_empty());
        let sh = win.height as f64 / out_h as f64;
        let sw = win.width as f64 / out_w as f64;
        let mut out = ImageBuf::new(out_h, out_w);
        for i in 0..out_h {
            let src_r = win.top as f64 + (i as f64 + 0.5) * sh - 0.5;
            let src_r = src_r.clamp(win.top as f64, (win.top + win.height - 1) as f64);
            for j in 0..out_w {
                let src_c = win.left as f64 + (j as f64 + 0.5) * sw - 0.5;
                let src_c = src_c.clamp(win.left as f64, (win.left + win.width - 1) as f64);
                out.set(i, j, self.sample(src_r, src_c));
            }
        }
        out
    }

    pub fn resize(&self, out_h: usize, out_w: usize) -> ImageBuf {
        self.resize_window(
            Window { top: 0, left: 0, height: self.height as i64, width: self.width as i64 },
            out_h,
            out_w,
        )
    }

    pub fn flip_horizontal(&self) -> ImageBuf {
        let mut out = ImageBuf::new(self.height, self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                out.set(r, c, self.get(r, self.width - 1 - c));
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> ImageBuf {
        let mut out = ImageBuf::new(self.height, self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                out.set(r, c, self.get(self.height - 1 - r, c));
            }
        }
        out
    }

    /// Rotate about the image center by `degrees` (counter-clockwise),
    /// sampling bilinearly with clamp-to-edge for exposed corners.
    pub fn rotate(&self, degrees: f64) -> ImageBuf {
        let theta = degrees.to_radians();
        let (sin, cos) = theta.sin_cos();
        let cy = (self.height as f64 - 1.0) / 2.0;
        let cx = (self.width as f64 - 1.0) / 2.0;
        let mut out = ImageBuf::new(self.height, self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                let dy = r as f64 - cy;
                let dx = c as f64 - cx;
                // Inverse map: rotate output coordinates by -theta.
                let sr = cy + dy * cos - dx * sin;
                let sc = cx + dy * sin + dx * cos;
                out.set(r, c, self.sample(sr, sc));
            }
        }
        out
    }

    /// Separable Gaussian blur with clamp-to-edge, radius `ceil(2.5 * sigma)`.
    pub fn gaussian_blur(&self, sigma: f64) -> ImageBuf {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (2.5 * sigma).ceil().max(1.0) as i64;
        let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
        let denom = 2.0 * sigma * sigma;
        for t in -radius..=radius {
            kernel.push((-(t * t) as f64 / denom).exp() as f32);
        }
        let sum: f32 = kernel.iter().sum();
        for k in &mut kernel {
            *k /= sum;
        }

        let h = self.height as i64;
        let w = self.width as i64;
        let mut tmp = ImageBuf::new(self.height, self.width);
        for r in 0..h {
            for c in 0..w {
                let mut acc = [0.0f32; 3];
                for (ki, t) in (-radius..=radius).enumerate() {
                    let cc = (c + t).clamp(0, w - 1) as usize;
                    let px = self.get(r as usize, cc);
                    for ch in 0..3 {
                        acc[ch] += kernel[ki] * px[ch];
                    }
                }
                tmp.set(r as usize, c as usize, acc);
            }
        }
        let mut out = ImageBuf::new(self.height, self.width);
        for r in 0..h {
            for c in 0..w {
                let mut acc = [0.0f32; 3];
                for (ki, t) in (-radius..=radius).enumerate() {
                    let rr = (r + t).clamp(0, h - 1) as usize;
                    let px = tmp.get(rr, c as usize);
                    for ch in 0..3 {
                        acc[ch] += kernel[ki] * px[ch];
                    }
                }
                out.set(r as usize, c as usize, acc);
            }
        }
        out
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// RGB ([0,1]) to HSV with hue in [0,1).
pub fn rgb_to_hsv(rgb: [f32; 3]) -> [f32; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / delta).rem_euclid(6.0)) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

pub fn hsv_to_rgb(hsv: [f32; 3]) -> [f32; 3] {
    let [h, s, v] = hsv;
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// ITU-R 601 luma.
pub fn luma(rgb: [f32; 3]) -> f32 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_resize_is_identity() {
        let mut img = ImageBuf::new(8, 8);
        for r in 0..8 {
            for c in 0..8 {
                img.set(r, c, [r as f32 / 8.0, c as f32 / 8.0, 0.5]);
            }
        }
        let out = img.resize(8, 8);
        for (a, b) in img.data.iter().zip(&out.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn window_clipping_at_corner() {
        // 5x5 toy image, window centered at the corner: oracle by direct
        // pixel-index arithmetic.
        let win = Window::centered(0.0, 0.0, 4).clipped(5, 5);
        assert_eq!(win, Window { top: 0, left: 0, height: 2, width: 2 });
    }

    #[test]
    fn hsv_roundtrip() {
        for &rgb in &[[0.2, 0.7, 0.1], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.5, 0.5, 0.5]] {
            let back = hsv_to_rgb(rgb_to_hsv(rgb));
            for ch in 0..3 {
                assert!((back[ch] - rgb[ch]).abs() < 1e-5, "{rgb:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = ImageBuf::filled(16, 16, [0.3, 0.6, 0.9]);
        let out = img.gaussian_blur(1.5);
        for (a, b) in img.data.iter().zip(&out.data) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn rotation_by_zero_is_identity() {
        let mut img = ImageBuf::new(9, 9);
        for r in 0..9 {
            for c in 0..9 {
                img.set(r, c, [(r * 9 + c) as f32 / 81.0, 0.0, 0.0]);
            }
        }
        let out = img.rotate(0.0);
        for (a, b) in img.data.iter().zip(&out.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
