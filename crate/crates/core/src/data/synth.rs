//! Synthetic clips whose classes differ in motion direction or texture.
//!
//! Each mirrored pair is rendered once and the second class is the exact
//! frame reversal of the first, so paired clips share every per-frame
//! statistic.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::clip::VideoClip;
use crate::error::{Error, Result};
use crate::kv::{KvMap, KvWriter};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MotionClass {
    LeftToRight = 0,
    RightToLeft = 1,
    Grow = 2,
    Shrink = 3,
    TextureA = 4,
    TextureB = 5,
}

pub const ALL_CLASSES: [MotionClass; 6] = [
    MotionClass::LeftToRight,
    MotionClass::RightToLeft,
    MotionClass::Grow,
    MotionClass::Shrink,
    MotionClass::TextureA,
    MotionClass::TextureB,
];

impl MotionClass {
    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Option<Self> {
        ALL_CLASSES.get(label).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionClass::LeftToRight => "left_to_right",
            MotionClass::RightToLeft => "right_to_left",
            MotionClass::Grow => "grow",
            MotionClass::Shrink => "shrink",
            MotionClass::TextureA => "texture_a",
            MotionClass::TextureB => "texture_b",
        }
    }

    /// The class whose clips are this class's clips played backwards.
    pub fn mirror(self) -> Option<Self> {
        match self {
            MotionClass::LeftToRight => Some(MotionClass::RightToLeft),
            MotionClass::RightToLeft => Some(MotionClass::LeftToRight),
            MotionClass::Grow => Some(MotionClass::Shrink),
            MotionClass::Shrink => Some(MotionClass::Grow),
            _ => None,
        }
    }

    pub fn is_static(self) -> bool {
        self.mirror().is_none()
    }
}

impl fmt::Display for MotionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ALL_CLASSES
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown class `{s}` (expected one of {})", ALL_CLASSES.map(|c| c.name()).join(", ")))
    }
}

/// Labels of the classes that belong to a mirrored pair.
pub fn mirrored_labels() -> Vec<usize> {
    ALL_CLASSES.iter().filter(|c| !c.is_static()).map(|c| c.label()).collect()
}

pub fn static_labels() -> Vec<usize> {
    ALL_CLASSES.iter().filter(|c| c.is_static()).map(|c| c.label()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub classes: Vec<MotionClass>,
    pub clips_per_class: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Side of the moving square in pixels; also the smallest static patch.
    pub object_size: usize,
    /// Std of the background noise, as a fraction of the 0..255 range.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: ALL_CLASSES.to_vec(),
            clips_per_class: 200,
            frames: 20,
            height: 32,
            width: 32,
            object_size: 6,
            noise: 0.04,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        Self::parse_over(text, file, Self::default())
    }

    /// Like [`SynthConfig::parse`], with keys missing from `text` taken from `d`.
    pub fn parse_over(text: &str, file: &str, d: Self) -> Result<Self> {
        let mut kv = KvMap::parse(text, file)?;
        let cfg = SynthConfig {
            classes: kv.take_list("classes")?.unwrap_or(d.classes),
            clips_per_class: kv.take_or("clips_per_class", d.clips_per_class)?,
            frames: kv.take_or("frames", d.frames)?,
            height: kv.take_or("height", d.height)?,
            width: kv.take_or("width", d.width)?,
            object_size: kv.take_or("object_size", d.object_size)?,
            noise: kv.take_or("noise", d.noise)?,
            seed: kv.take_or("seed", d.seed)?,
        };
        kv.finish()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut w = KvWriter::new();
        w.put_list("classes", &self.classes)
            .put("clips_per_class", self.clips_per_class)
            .put("frames", self.frames)
            .put("height", self.height)
            .put("width", self.width)
            .put("object_size", self.object_size)
            .put("noise", self.noise)
            .put("seed", self.seed);
        w.finish()
    }

    /// Largest square side used by the grow/shrink classes.
    pub fn max_growth(&self) -> usize {
        (2 * self.object_size).min(self.height.min(self.width))
    }

    pub fn validate(&self) -> Result<()> {
        let (s, f) = (self.object_size, self.frames);
        if s == 0 || f == 0 {
            return Err(Error::Geometry("object size and frame count must be positive".into()));
        }
        if s > self.height || s > self.width {
            return Err(Error::Geometry(format!("object of size {s} does not fit a {}x{} frame", self.height, self.width)));
        }
        if s + f - 1 > self.width {
            return Err(Error::Geometry(format!("a {s}px object moving 1px/frame for {f} frames needs width >= {}", s + f - 1)));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Geometry(format!("noise {} outside [0, 1]", self.noise)));
        }
        let mut seen = self.classes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.classes.len() {
            return Err(Error::InvalidSpec { path: "classes".into(), msg: "duplicate class".into() });
        }
        Ok(())
    }
}

struct Canvas {
    h: usize,
    w: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn frame(&mut self, f: usize) -> &mut [u8] {
        let n = self.h * self.w * 3;
        &mut self.px[f * n..(f + 1) * n]
    }
}

/// Splits (seed, class, index) into an independent stream.
fn clip_rng(seed: u64, class: MotionClass, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((class.label() as u64) << 40) | index as u64);
    rng
}

fn background(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Canvas {
    let (h, w) = (cfg.height, cfg.width);
    let noise = Normal::new(0.0, cfg.noise * 255.0).expect("validated noise");
    let px = (0..cfg.frames * h * w * 3).map(|_| (30.0 + noise.sample(rng)).round().clamp(0.0, 255.0) as u8).collect();
    Canvas { h, w, px }
}

fn fill_square(frame: &mut [u8], w: usize, (y0, x0): (usize, usize), size: usize, color: [u8; 3]) {
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            frame[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&color);
        }
    }
}

/// Renders one left-to-right or grow clip.
fn render_motion(cfg: &SynthConfig, kind: MotionClass, rng: &mut ChaCha8Rng) -> Canvas {
    let mut canvas = background(cfg, rng);
    let (h, w, s, f) = (cfg.height, cfg.width, cfg.object_size, cfg.frames);
    let v = rng.random_range(200..=255u8);
    let color = [v, v, v];
    match kind {
        MotionClass::LeftToRight => {
            let y0 = rng.random_range(0..=h - s);
            let x0 = rng.random_range(0..=w - s - (f - 1));
            for t in 0..f {
                fill_square(canvas.frame(t), w, (y0, x0 + t), s, color);
            }
        }
        _ => {
            let (lo, hi) = (2.min(s), cfg.max_growth());
            let cy = rng.random_range(hi / 2..=h - hi.div_ceil(2));
            let cx = rng.random_range(hi / 2..=w - hi.div_ceil(2));
            for t in 0..f {
                let size = lo + if f > 1 { (hi - lo) * t / (f - 1) } else { 0 };
                fill_square(canvas.frame(t), w, (cy - size / 2, cx - size / 2), size, color);
            }
        }
    }
    canvas
}

/// Static striped patch: red horizontal stripes (A) or blue vertical stripes (B).
fn render_texture(cfg: &SynthConfig, kind: MotionClass, rng: &mut ChaCha8Rng) -> Canvas {
    let mut canvas = background(cfg, rng);
    let (h, w) = (cfg.height, cfg.width);
    let size = rng.random_range(cfg.object_size..=cfg.max_growth());
    let y0 = rng.random_range(0..=h - size);
    let x0 = rng.random_range(0..=w - size);
    let strong = rng.random_range(200..=255u8);
    for t in 0..cfg.frames {
        let frame = canvas.frame(t);
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                let on = if kind == MotionClass::TextureA { (y - y0) % 2 == 0 } else { (x - x0) % 2 == 0 };
                let color = match (kind, on) {
                    (MotionClass::TextureA, true) => [strong, 40, 40],
                    (MotionClass::TextureA, false) => [120, 30, 30],
                    (_, true) => [40, 40, strong],
                    (_, false) => [30, 30, 120],
                };
                frame[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&color);
            }
        }
    }
    canvas
}

/// Clip `index` of `class`; a pure function of `(cfg.seed, class, index)`
/// and the geometry.
pub fn render_clip(cfg: &SynthConfig, class: MotionClass, index: usize, id: usize) -> Result<VideoClip> {
    let canvas = match class {
        MotionClass::LeftToRight | MotionClass::Grow => render_motion(cfg, class, &mut clip_rng(cfg.seed, class, index)),
        MotionClass::RightToLeft | MotionClass::Shrink => {
            let base = class.mirror().expect("mirrored class");
            return Ok(render_clip(cfg, base, index, id)?.reversed(class.label()));
        }
        MotionClass::TextureA | MotionClass::TextureB => render_texture(cfg, class, &mut clip_rng(cfg.seed, class, index)),
    };
    VideoClip::new(id, class.label(), cfg.frames, canvas.h, canvas.w, canvas.px)
}

/// Every clip of the dataset, grouped by class in `cfg.classes` order.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Vec<VideoClip>> {
    cfg.validate()?;
    let mut clips = Vec::with_capacity(cfg.classes.len() * cfg.clips_per_class);
    for &class in &cfg.classes {
        for i in 0..cfg.clips_per_class {
            let id = clips.len();
            clips.push(render_clip(cfg, class, i, id)?);
        }
    }
    Ok(clips)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig { clips_per_class: 3, ..SynthConfig::default() }
    }

    #[test]
    fn mirrored_classes_are_exact_reversals() {
        let cfg = small();
        for i in 0..3 {
            let fwd = render_clip(&cfg, MotionClass::LeftToRight, i, 0).unwrap();
            let back = render_clip(&cfg, MotionClass::RightToLeft, i, 0).unwrap();
            assert_eq!(fwd.reversed(1), back);
            let grow = render_clip(&cfg, MotionClass::Grow, i, 0).unwrap();
            let shrink = render_clip(&cfg, MotionClass::Shrink, i, 0).unwrap();
            assert_eq!(grow.reversed(3), shrink);
        }
    }

    #[test]
    fn same_seed_same_clips() {
        assert_eq!(gen_synthetic(&small()).unwrap(), gen_synthetic(&small()).unwrap());
        let other = SynthConfig { seed: 1, ..small() };
        assert_ne!(gen_synthetic(&small()).unwrap(), gen_synthetic(&other).unwrap());
    }

    #[test]
    fn object_moves_one_pixel_per_frame() {
        let cfg = SynthConfig { noise: 0.0, ..small() };
        let clip = render_clip(&cfg, MotionClass::LeftToRight, 0, 0).unwrap();
        let leftmost = |f: usize| (0..cfg.width).find(|&x| (0..cfg.height).any(|y| clip.pixel(f, y, x, 0) > 150)).unwrap();
        for f in 1..cfg.frames {
            assert_eq!(leftmost(f), leftmost(f - 1) + 1);
        }
    }

    #[test]
    fn oversized_object_is_a_geometry_error() {
        let cfg = SynthConfig { object_size: 40, ..small() };
        assert!(matches!(gen_synthetic(&cfg), Err(Error::Geometry(_))));
        let cfg = SynthConfig { frames: 40, ..small() };
        assert!(matches!(gen_synthetic(&cfg), Err(Error::Geometry(_))));
    }

    #[test]
    fn config_text_round_trips() {
        let cfg = SynthConfig { classes: vec![MotionClass::Grow, MotionClass::TextureB], seed: 7, ..small() };
        assert_eq!(SynthConfig::parse(&cfg.to_text(), "t").unwrap(), cfg);
    }
}
