//! Segment-based snippet sampling and super-image packing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::clip::VideoClip;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    /// Uniform random start inside each segment.
    Train,
    /// Centered start inside each segment.
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub snippets: usize,
    pub frames: usize,
    pub mode: SampleMode,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl SamplerConfig {
    pub fn new(snippets: usize, frames: usize, mode: SampleMode) -> Self {
        SamplerConfig { snippets, frames, mode, mean: [0.5; 3], std: [0.25; 3] }
    }
}

/// `T` windows of `N` frame indices each.
///
/// Segment `k` covers `[floor(kF/T), floor((k+1)F/T))`. The window start is
/// clamped to `F - N` when the segment is shorter than `N`, and indices past
/// the last frame repeat it.
pub fn sample_snippets(num_frames: usize, cfg: &SamplerConfig, seed: u64) -> Vec<Vec<usize>> {
    let (f, t, n) = (num_frames.max(1), cfg.snippets.max(1), cfg.frames.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..t)
        .map(|k| {
            let lo = k * f / t;
            let hi = (k + 1) * f / t;
            let len = hi - lo;
            let start = if len >= n {
                let slack = len - n;
                match cfg.mode {
                    SampleMode::Test => lo + slack / 2,
                    SampleMode::Train => lo + rng.random_range(0..=slack),
                }
            } else {
                lo.min(f.saturating_sub(n))
            };
            (0..n).map(|i| (start + i).min(f - 1)).collect()
        })
        .collect()
}

/// `[T, 3N, H, W]` normalized super-images; channel `c` is color `c % 3` of
/// frame `c / 3` of the window.
pub fn make_super_images<S: Scalar>(clip: &VideoClip, windows: &[Vec<usize>], cfg: &SamplerConfig) -> Result<Tensor<S>> {
    let n = cfg.frames;
    if windows.iter().any(|w| w.len() != n) {
        return Err(shape_err("make_super_images", format!("every window must hold {n} frames")));
    }
    if let Some(&bad) = windows.iter().flatten().find(|&&i| i >= clip.num_frames()) {
        return Err(shape_err("make_super_images", format!("frame {bad} out of range for {} frames", clip.num_frames())));
    }
    let (h, w) = (clip.height(), clip.width());
    let plane = h * w;
    let lut: Vec<[S; 256]> = (0..3)
        .map(|c| std::array::from_fn(|v| S::lit((v as f64 / 255.0 - cfg.mean[c] as f64) / cfg.std[c] as f64)))
        .collect();
    let mut out = vec![S::zero(); windows.len() * 3 * n * plane];
    for (ti, window) in windows.iter().enumerate() {
        for (fi, &frame) in window.iter().enumerate() {
            let src = clip.frame(frame);
            for c in 0..3 {
                let base = ((ti * 3 * n) + fi * 3 + c) * plane;
                let dst = &mut out[base..base + plane];
                for (p, d) in dst.iter_mut().enumerate() {
                    *d = lut[c][src[p * 3 + c] as usize];
                }
            }
        }
    }
    Tensor::new([windows.len(), 3 * n, h, w], out)
}

/// A model-ready minibatch.
#[derive(Clone, Debug)]
pub struct SuperImageBatch<S: Scalar> {
    /// `[B, T, 3N, H, W]`.
    pub data: Tensor<S>,
    pub labels: Vec<usize>,
}

/// Stacks clips, sampling clip `i` with `seeds[i]`.
pub fn make_batch<S: Scalar>(clips: &[&VideoClip], cfg: &SamplerConfig, seeds: &[u64]) -> Result<SuperImageBatch<S>> {
    let first = clips.first().ok_or(crate::error::Error::EmptyDataset)?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::new();
    for (clip, &seed) in clips.iter().zip(seeds) {
        if (clip.height(), clip.width()) != (h, w) {
            return Err(shape_err("make_batch", format!("clip {} is {}x{}, batch is {h}x{w}", clip.id, clip.height(), clip.width())));
        }
        let windows = sample_snippets(clip.num_frames(), cfg, seed);
        data.extend(make_super_images::<S>(clip, &windows, cfg)?.into_data());
    }
    let shape = [clips.len(), cfg.snippets, 3 * cfg.frames, h, w];
    Ok(SuperImageBatch { data: Tensor::new(shape, data)?, labels: clips.iter().map(|c| c.label).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_tiling_in_test_mode() {
        let cfg = SamplerConfig::new(4, 5, SampleMode::Test);
        let w = sample_snippets(20, &cfg, 0);
        let expected: Vec<Vec<usize>> = (0..4).map(|k| (5 * k..5 * k + 5).collect()).collect();
        assert_eq!(w, expected);
    }

    #[test]
    fn short_clip_repeats_last_frame() {
        let cfg = SamplerConfig::new(1, 5, SampleMode::Test);
        assert_eq!(sample_snippets(3, &cfg, 0), vec![vec![0, 1, 2, 2, 2]]);
    }

    #[test]
    fn train_mode_is_seeded() {
        let cfg = SamplerConfig::new(3, 2, SampleMode::Train);
        assert_eq!(sample_snippets(30, &cfg, 9), sample_snippets(30, &cfg, 9));
        let all: Vec<_> = (0..20).map(|s| sample_snippets(30, &cfg, s)).collect();
        assert!(all.iter().any(|w| *w != all[0]));
    }

    #[test]
    fn channel_layout_follows_frames_then_colors() {
        let (f, h, w) = (3, 2, 2);
        let pixels = (0..f * h * w * 3).map(|i| ((i / (h * w * 3)) * 3 + i % 3) as u8 * 10).collect();
        let clip = VideoClip::new(0, 0, f, h, w, pixels).unwrap();
        let mut cfg = SamplerConfig::new(1, 3, SampleMode::Test);
        cfg.mean = [0.0; 3];
        cfg.std = [1.0 / 255.0; 3];
        let x: Tensor<f64> = make_super_images(&clip, &[vec![0, 1, 2]], &cfg).unwrap();
        assert_eq!(x.shape(), [1, 9, 2, 2]);
        for c in 0..9 {
            assert!((x.at(&[0, c, 1, 1]) - (c * 10) as f64).abs() < 1e-4);
        }
    }
}
