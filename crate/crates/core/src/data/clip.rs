use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binio::Reader;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"STVD";
pub const VERSION: u32 = 1;

/// 8-bit RGB frames stored `[F, H, W, 3]` (interleaved, row-major).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VideoClip {
    pub id: usize,
    pub label: usize,
    frames: usize,
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl VideoClip {
    pub fn new(id: usize, label: usize, frames: usize, height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::Geometry(format!("clip {id} has an empty dimension ({frames}x{height}x{width})")));
        }
        if pixels.len() != frames * height * width * 3 {
            return Err(Error::Malformed(format!("clip {id}: {} bytes for {frames}x{height}x{width}x3", pixels.len())));
        }
        Ok(VideoClip { id, label, frames, height, width, pixels })
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Interleaved `[H, W, 3]` bytes of frame `f`.
    pub fn frame(&self, f: usize) -> &[u8] {
        let n = self.height * self.width * 3;
        &self.pixels[f * n..(f + 1) * n]
    }

    pub fn pixel(&self, f: usize, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[((f * self.height + y) * self.width + x) * 3 + c]
    }

    /// The same clip with its frames in reverse order.
    pub fn reversed(&self, label: usize) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for f in (0..self.frames).rev() {
            pixels.extend_from_slice(self.frame(f));
        }
        VideoClip { pixels, label, ..self.clone() }
    }
}

pub fn encode_dataset(clips: &[VideoClip]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + clips.iter().map(|c| 10 + c.pixels.len()).sum::<usize>());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(clips.len() as u32).to_le_bytes());
    for c in clips {
        let dim = |v: usize, what: &str| u16::try_from(v).map_err(|_| Error::Malformed(format!("clip {}: {what} {v} exceeds u16", c.id)));
        let label = u32::try_from(c.label).map_err(|_| Error::Malformed(format!("clip {}: label too large", c.id)))?;
        out.extend_from_slice(&label.to_le_bytes());
        out.extend_from_slice(&dim(c.frames, "frame count")?.to_le_bytes());
        out.extend_from_slice(&dim(c.height, "height")?.to_le_bytes());
        out.extend_from_slice(&dim(c.width, "width")?.to_le_bytes());
        out.extend_from_slice(&c.pixels);
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<VideoClip>> {
    let mut r = Reader::new(bytes);
    r.header(MAGIC, VERSION)?;
    let count = r.u32("clip count")? as usize;
    let mut clips = Vec::with_capacity(count.min(1 << 16));
    for id in 0..count {
        let label = r.u32(&format!("label of clip {id}"))? as usize;
        let f = r.u16(&format!("frame count of clip {id}"))? as usize;
        let h = r.u16(&format!("height of clip {id}"))? as usize;
        let w = r.u16(&format!("width of clip {id}"))? as usize;
        let pixels = r.take(f * h * w * 3, &format!("pixels of clip {id}"))?.to_vec();
        clips.push(VideoClip::new(id, label, f, h, w, pixels)?);
    }
    if !r.is_done() {
        return Err(Error::Malformed("trailing bytes after last clip".into()));
    }
    Ok(clips)
}

pub fn write_dataset(clips: &[VideoClip], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_dataset(clips)?)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<VideoClip>> {
    decode_dataset(&fs::read(path)?)
}

/// Stratified split: within every label, a seeded shuffle puts
/// `round(n * test_fraction)` clips in the second set.
pub fn split_dataset(clips: &[VideoClip], test_fraction: f64, seed: u64) -> (Vec<VideoClip>, Vec<VideoClip>) {
    let mut labels: Vec<usize> = clips.iter().map(|c| c.label).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for label in labels {
        let mut members: Vec<&VideoClip> = clips.iter().filter(|c| c.label == label).collect();
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        for (i, c) in members.into_iter().enumerate() {
            if i < n_test { test.push(c.clone()) } else { train.push(c.clone()) }
        }
    }
    (train, test)
}
