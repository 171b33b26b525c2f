//! Stochastic view generation for contrastive training.
//!
//! Two cell pipelines share jitter, grayscale, blur, flips, and rotation; only
//! the local pipeline starts with a random resized crop, so the global view
//! always shows the whole cell. The environment pipeline is the global one
//! applied at the environment patch size. Operation order is fixed:
//! crop -> jitter -> grayscale -> blur -> flips -> rotation.
//!
//! Pixel operations run in raw [0,1] space; callers hand in normalized
//! buffers plus the statistics used, and get normalized buffers back.

use crate::config::AugmentConfig;
use crate::imgproc::{hsv_to_rgb, luma, rgb_to_hsv, ImageBuf, Window};
use crate::ingest::ChannelStats;
use rand::Rng;

/// The two stochastic views of one cell.
#[derive(Debug, Clone)]
pub struct ViewPair {
    pub cell_id: String,
    /// Local (cropped pipeline) view, fed to the query branch.
    pub query_view: ImageBuf,
    /// Global view, fed to the momentum key branch.
    pub key_view: ImageBuf,
}

/// Local pipeline: random resized crop, then the shared operation tail.
pub fn augment_local<R: Rng>(
    crop: &ImageBuf,
    stats: &ChannelStats,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> ImageBuf {
    let mut img = denormalized(crop, stats);
    img = random_resized_crop(&img, cfg.crop_scale, rng);
    shared_tail(&mut img, cfg, rng);
    renormalized(img, stats)
}

/// Global pipeline: the shared tail with no crop operation.
pub fn augment_global<R: Rng>(
    crop: &ImageBuf,
    stats: &ChannelStats,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> ImageBuf {
    let mut img = denormalized(crop, stats);
    shared_tail(&mut img, cfg, rng);
    renormalized(img, stats)
}

/// Environment pipeline: identical to the global pipeline, at patch size.
pub fn augment_environment<R: Rng>(
    patch: &ImageBuf,
    stats: &ChannelStats,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> ImageBuf {
    augment_global(patch, stats, cfg, rng)
}

/// Build both cell views. With `multi_crop` off, both pipelines crop.
pub fn make_view_pair<R: Rng>(
    cell_id: &str,
    crop: &ImageBuf,
    stats: &ChannelStats,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> ViewPair {
    let query_view = augment_local(crop, stats, cfg, rng);
    let key_view = if cfg.multi_crop {
        augment_global(crop, stats, cfg, rng)
    } else {
        augment_local(crop, stats, cfg, rng)
    };
    ViewPair { cell_id: cell_id.to_string(), query_view, key_view }
}

fn denormalized(img: &ImageBuf, stats: &ChannelStats) -> ImageBuf {
    let mut out = img.clone();
    stats.denormalize(&mut out);
    out
}

fn renormalized(mut img: ImageBuf, stats: &ChannelStats) -> ImageBuf {
    stats.normalize(&mut img);
    img
}

fn shared_tail<R: Rng>(img: &mut ImageBuf, cfg: &AugmentConfig, rng: &mut R) {
    if rng.gen_bool(cfg.p_jitter) {
        color_jitter(img, cfg, rng);
    }
    if rng.gen_bool(cfg.p_grayscale) {
        to_grayscale(img);
    }
    if rng.gen_bool(cfg.p_blur) {
        let sigma = rng.gen_range(cfg.blur_sigma.0..=cfg.blur_sigma.1);
        *img = img.gaussian_blur(sigma);
    }
    if rng.gen_bool(cfg.p_hflip) {
        *img = img.flip_horizontal();
    }
    if rng.gen_bool(cfg.p_vflip) {
        *img = img.flip_vertical();
    }
    if rng.gen_bool(cfg.p_rotation) {
        let degrees = rng.gen_range(cfg.rotation_degrees.0..=cfg.rotation_degrees.1);
        *img = img.rotate(degrees);
    }
}

/// Square crop covering a `scale`-fraction of the area, uniformly placed,
/// resized back to the input size.
fn random_resized_crop<R: Rng>(img: &ImageBuf, scale: (f64, f64), rng: &mut R) -> ImageBuf {
    let area_frac = rng.gen_range(scale.0..=scale.1);
    let side = ((img.height as f64) * area_frac.sqrt()).round().max(1.0) as i64;
    let side = side.min(img.height as i64).min(img.width as i64);
    let max_top = img.height as i64 - side;
    let max_left = img.width as i64 - side;
    let top = if max_top > 0 { rng.gen_range(0..=max_top) } else { 0 };
    let left = if max_left > 0 { rng.gen_range(0..=max_left) } else { 0 };
    if side == img.height as i64 && side == img.width as i64 {
        return img.clone();
    }
    img.resize_window(Window { top, left, height: side, width: side }, img.height, img.width)
}

fn color_jitter<R: Rng>(img: &mut ImageBuf, cfg: &AugmentConfig, rng: &mut R) {
    // Factors sampled like torchvision: U(max(0, 1-x), 1+x); hue is an
    // additive shift in [-hue, hue] turns. Applied brightness, contrast,
    // saturation, hue in that order.
    let b = rng.gen_range((1.0 - cfg.brightness).max(0.0)..=1.0 + cfg.brightness);
    let c = rng.gen_range((1.0 - cfg.contrast).max(0.0)..=1.0 + cfg.contrast);
    let s = rng.gen_range((1.0 - cfg.saturation).max(0.0)..=1.0 + cfg.saturation);
    let h = rng.gen_range(-cfg.hue..=cfg.hue);

    for px in img.data.chunks_exact_mut(3) {
        for ch in 0..3 {
            px[ch] *= b;
        }
    }
    let mean_luma: f32 = {
        let mut acc = 0.0;
        for px in img.data.chunks_exact(3) {
            acc += luma([px[0], px[1], px[2]]);
        }
        acc / (img.data.len() / 3) as f32
    };
    for px in img.data.chunks_exact_mut(3) {
        let gray = luma([px[0], px[1], px[2]]);
        for ch in 0..3 {
            // contrast blends with the image mean, saturation with per-pixel gray
            px[ch] = mean_luma + (px[ch] - mean_luma) * c;
            px[ch] = gray + (px[ch] - gray) * s;
        }
        if cfg.hue > 0.0 {
            let mut hsv = rgb_to_hsv([px[0].clamp(0.0, 1.0), px[1].clamp(0.0, 1.0), px[2].clamp(0.0, 1.0)]);
            hsv[0] = (hsv[0] + h).rem_euclid(1.0);
            let rgb = hsv_to_rgb(hsv);
            px.copy_from_slice(&rgb);
        }
    }
    img.clamp01();
}

fn to_grayscale(img: &mut ImageBuf) {
    for px in img.data.chunks_exact_mut(3) {
        let g = luma([px[0], px[1], px[2]]);
        px.copy_from_slice(&[g, g, g]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AugmentConfig;
    use crate::rng::derive_rng;

    fn disabled_config() -> AugmentConfig {
        AugmentConfig {
            p_jitter: 0.0,
            p_grayscale: 0.0,
            p_blur: 0.0,
            p_hflip: 0.0,
            p_vflip: 0.0,
            p_rotation: 0.0,
            crop_scale: (1.0, 1.0),
            ..AugmentConfig::default()
        }
    }

    fn gradient(n: usize) -> ImageBuf {
        let mut img = ImageBuf::new(n, n);
        for r in 0..n {
            for c in 0..n {
                img.set(r, c, [c as f32 / n as f32, r as f32 / n as f32, 0.5]);
            }
        }
        img
    }

    #[test]
    fn disabled_pipeline_is_identity() {
        let img = gradient(32);
        let cfg = disabled_config();
        let stats = ChannelStats { mean: [0.4, 0.2, 0.1], std: [0.5, 0.6, 0.7] };
        let mut rng = derive_rng(0, "t", &[0]);
        let out = augment_local(&img, &stats, &cfg, &mut rng);
        for (a, b) in img.data.iter().zip(&out.data) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        let mut rng = derive_rng(0, "t", &[1]);
        let out = augment_global(&img, &stats, &cfg, &mut rng);
        for (a, b) in img.data.iter().zip(&out.data) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn fixed_seed_reproduces_views() {
        let img = gradient(32);
        let cfg = AugmentConfig::default();
        let stats = ChannelStats::identity();
        let a = augment_local(&img, &stats, &cfg, &mut derive_rng(5, "aug", &[9]));
        let b = augment_local(&img, &stats, &cfg, &mut derive_rng(5, "aug", &[9]));
        assert_eq!(a.data, b.data);
        let c = augment_local(&img, &stats, &cfg, &mut derive_rng(5, "aug", &[10]));
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn quarter_area_crop_covers_half_side_subwindow() {
        // Oracle: geometric check on a coordinate-gradient image. A crop of
        // area fraction 0.25 spans half the coordinate range.
        let img = gradient(32);
        let cfg = AugmentConfig {
            crop_scale: (0.25, 0.25),
            ..disabled_config()
        };
        let stats = ChannelStats::identity();
        for trial in 0..10u64 {
            let mut rng = derive_rng(7, "crop", &[trial]);
            let out = augment_local(&img, &stats, &cfg, &mut rng);
            let min_x = out.data.chunks_exact(3).map(|p| p[0]).fold(f32::INFINITY, f32::min);
            let max_x = out.data.chunks_exact(3).map(|p| p[0]).fold(f32::NEG_INFINITY, f32::max);
            let span = max_x - min_x;
            // 16 of 32 columns -> span 15/32 of the gradient (sampled at pixel
            // centers), within bilinear tolerance.
            assert!(
                (span - 15.0 / 32.0).abs() < 0.03,
                "trial {trial}: span {span}"
            );
        }
    }

    #[test]
    fn global_view_preserves_gradient_extent() {
        // No crop in the pipeline: the full coordinate range stays visible.
        let img = gradient(32);
        let cfg = AugmentConfig {
            p_hflip: 1.0,
            ..disabled_config()
        };
        let stats = ChannelStats::identity();
        let out = augment_global(&img, &stats, &cfg, &mut derive_rng(3, "g", &[0]));
        let min_x = out.data.chunks_exact(3).map(|p| p[0]).fold(f32::INFINITY, f32::min);
        let max_x = out.data.chunks_exact(3).map(|p| p[0]).fold(f32::NEG_INFINITY, f32::max);
        assert!(min_x < 0.02 && max_x > 30.0 / 32.0);
    }

    #[test]
    fn hue_shift_stays_within_bound() {
        // Oracle: convert to HSV and measure the max hue delta on saturated
        // pixels under a hue-only jitter.
        let mut img = ImageBuf::new(8, 8);
        for r in 0..8 {
            for c in 0..8 {
                let h = (r * 8 + c) as f32 / 64.0;
                img.set(r, c, hsv_to_rgb([h, 0.9, 0.8]));
            }
        }
        let cfg = AugmentConfig {
            p_jitter: 1.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.1,
            ..disabled_config()
        };
        let stats = ChannelStats::identity();
        for trial in 0..20u64 {
            let out = augment_global(&img, &stats, &cfg, &mut derive_rng(11, "hue", &[trial]));
            for (a, b) in img.data.chunks_exact(3).zip(out.data.chunks_exact(3)) {
                let ha = rgb_to_hsv([a[0], a[1], a[2]])[0];
                let hb = rgb_to_hsv([b[0], b[1], b[2]])[0];
                let mut d = (ha - hb).abs();
                d = d.min(1.0 - d); // circular distance
                assert!(d <= 0.1 + 1e-4, "hue moved by {d}");
            }
        }
    }

    #[test]
    fn outputs_stay_finite_under_full_pipeline() {
        let img = gradient(32);
        let cfg = AugmentConfig {
            p_jitter: 1.0,
            p_grayscale: 1.0,
            p_blur: 1.0,
            p_hflip: 1.0,
            p_vflip: 1.0,
            p_rotation: 1.0,
            ..AugmentConfig::default()
        };
        let stats = ChannelStats { mean: [0.5, 0.5, 0.5], std: [0.25, 0.25, 0.25] };
        for trial in 0..10u64 {
            let pair = make_view_pair("c", &img, &stats, &cfg, &mut derive_rng(1, "f", &[trial]));
            assert!(pair.query_view.data.iter().all(|v| v.is_finite()));
            assert!(pair.key_view.data.iter().all(|v| v.is_finite()));
        }
    }
}
