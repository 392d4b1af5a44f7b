//! Declarative network descriptions and the shipped presets.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{KvMap, KvWriter};
use crate::ops::conv_out_len;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// conv3x3-BN-ReLU.
    Plain,
    /// Two 3x3 convs with an identity or projection shortcut.
    Basic,
    /// 1x1 / 3x3 / 1x1 convs with a 4x channel expansion; stride on the 3x3.
    Bottleneck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Txb,
    AvgScore,
    OrdinaryTconv,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $text:literal),* $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $text),* }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($ty::$variant),)*
                    other => Err(format!("expected one of [{}], got `{other}`", [$($text),*].join(", "))),
                }
            }
        }
    };
}

keyword_enum!(BlockKind { Plain => "plain", Basic => "basic", Bottleneck => "bottleneck" });
keyword_enum!(HeadKind { Txb => "txb", AvgScore => "avg_score", OrdinaryTconv => "ordinary_tconv" });

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StemSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// 3x3 / stride 2 / pad 1 max pool after the stem.
    pub max_pool: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub block: BlockKind,
    pub channels: usize,
    pub stride: usize,
    pub repeat: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxbSpec {
    pub c_in: usize,
    pub c_o: usize,
    pub classes: usize,
}

impl TxbSpec {
    pub fn new(c_in: usize, classes: usize) -> Self {
        TxbSpec { c_in, c_o: 1024, classes }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchSpec {
    pub name: String,
    /// T.
    pub snippets: usize,
    /// N.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub stem: Option<StemSpec>,
    pub stages: Vec<StageSpec>,
    /// Channel count of the `[B,T,C]` head input for specs without a backbone.
    pub features: Option<usize>,
    pub tm_after: Vec<usize>,
    pub head: HeadKind,
    /// C_o of the TXB and ordinary temporal-conv heads.
    pub head_channels: usize,
    pub enable_superimage: bool,
    pub enable_tm: bool,
}

/// `(height, width)`.
pub type Hw = (usize, usize);

pub const PRESETS: &[(&str, &str)] = &[
    ("tsn-toy", include_str!("../../presets/tsn-toy.arch")),
    ("stnet-toy", include_str!("../../presets/stnet-toy.arch")),
    ("stnet-resnet50", include_str!("../../presets/stnet-resnet50.arch")),
    ("stnet-resnet101", include_str!("../../presets/stnet-resnet101.arch")),
    ("txb-head-irv2", include_str!("../../presets/txb-head-irv2.arch")),
];

fn invalid(path: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::InvalidSpec { path: path.into(), msg: msg.into() }
}

impl ArchSpec {
    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| Error::UnknownPreset {
            name: name.to_string(),
            available: PRESETS.iter().map(|(n, _)| n.to_string()).collect(),
        })?;
        Self::parse(text, name)
    }

    /// A preset name, or else a path to a spec file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if PRESETS.iter().any(|(n, _)| *n == name_or_path) {
            return Self::preset(name_or_path);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Self::preset(name_or_path);
        }
        Self::parse(&std::fs::read_to_string(path)?, name_or_path)
    }

    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut kv = KvMap::parse(text, file)?;
        let stem = match kv.take::<usize>("stem.channels")? {
            None => None,
            Some(channels) => Some(StemSpec {
                channels,
                kernel: kv.require("stem.kernel")?,
                stride: kv.take_or("stem.stride", 1)?,
                padding: kv.take_or("stem.padding", 0)?,
                max_pool: kv.take_or("stem.max_pool", false)?,
            }),
        };
        let blocks: Vec<BlockKind> = kv.take_list("stages.block")?.unwrap_or_default();
        let channels: Vec<usize> = kv.take_list("stages.channels")?.unwrap_or_default();
        let n = blocks.len();
        let strides: Vec<usize> = kv.take_list("stages.stride")?.unwrap_or_else(|| vec![1; n]);
        let repeats: Vec<usize> = kv.take_list("stages.repeat")?.unwrap_or_else(|| vec![1; n]);
        for (key, len) in [("stages.channels", channels.len()), ("stages.stride", strides.len()), ("stages.repeat", repeats.len())] {
            if len != n {
                return Err(invalid(key, format!("has {len} entries but stages.block has {n}")));
            }
        }
        let stages = (0..n)
            .map(|i| StageSpec { block: blocks[i], channels: channels[i], stride: strides[i], repeat: repeats[i] })
            .collect();
        let spec = ArchSpec {
            name: kv.take_str("name").unwrap_or_else(|| file.to_string()),
            snippets: kv.require("snippets")?,
            frames: kv.take_or("frames", 1)?,
            height: kv.take_or("height", 1)?,
            width: kv.take_or("width", 1)?,
            classes: kv.require("classes")?,
            stem,
            stages,
            features: kv.take("features")?,
            tm_after: kv.take_list("tm_after")?.unwrap_or_default(),
            head: kv.take_or("head.kind", HeadKind::Txb)?,
            head_channels: kv.take_or("head.channels", 1024)?,
            enable_superimage: kv.take_or("enable.superimage", true)?,
            enable_tm: kv.take_or("enable.tm", true)?,
        };
        if let Some(txb) = kv.take::<bool>("enable.txb")? {
            if txb != (spec.head == HeadKind::Txb) {
                return Err(invalid("enable.txb", format!("{txb} contradicts head.kind = {}", spec.head)));
            }
        }
        kv.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut w = KvWriter::new();
        w.put("name", &self.name)
            .put("snippets", self.snippets)
            .put("frames", self.frames)
            .put("height", self.height)
            .put("width", self.width)
            .put("classes", self.classes);
        if let Some(s) = &self.stem {
            w.put("stem.channels", s.channels)
                .put("stem.kernel", s.kernel)
                .put("stem.stride", s.stride)
                .put("stem.padding", s.padding)
                .put("stem.max_pool", s.max_pool);
        }
        if !self.stages.is_empty() {
            let col = |f: fn(&StageSpec) -> String| self.stages.iter().map(f).collect::<Vec<_>>();
            w.put_list("stages.block", &col(|s| s.block.to_string()))
                .put_list("stages.channels", &col(|s| s.channels.to_string()))
                .put_list("stages.stride", &col(|s| s.stride.to_string()))
                .put_list("stages.repeat", &col(|s| s.repeat.to_string()));
        }
        if let Some(f) = self.features {
            w.put("features", f);
        }
        w.put_list("tm_after", &self.tm_after)
            .put("head.kind", self.head)
            .put("head.channels", self.head_channels)
            .put("enable.superimage", self.enable_superimage)
            .put("enable.tm", self.enable_tm)
            .put("enable.txb", self.enable_txb());
        w.finish()
    }

    pub fn enable_txb(&self) -> bool {
        self.head == HeadKind::Txb
    }

    pub fn has_backbone(&self) -> bool {
        self.stem.is_some() || !self.stages.is_empty()
    }

    /// Stage indices that actually receive a TM block.
    pub fn tm_points(&self) -> &[usize] {
        if self.enable_tm {
            &self.tm_after
        } else {
            &[]
        }
    }

    /// Channel count seen by the first 2D conv.
    pub fn input_channels(&self) -> usize {
        3 * self.frames
    }

    /// Per-snippet input shape `[3N, H, W]`, or `[C]` for head-only specs.
    pub fn snippet_shape(&self) -> Vec<usize> {
        match self.features {
            Some(c) if !self.has_backbone() => vec![c],
            _ => vec![self.input_channels(), self.height, self.width],
        }
    }

    /// Expected forward input shape for batch `b`.
    pub fn input_shape(&self, b: usize) -> Vec<usize> {
        let mut s = vec![b, self.snippets];
        s.extend(self.snippet_shape());
        s
    }

    /// Channels of the sequence fed to the head.
    pub fn feature_channels(&self) -> usize {
        if let Some(last) = self.stages.last() {
            last.channels
        } else if let Some(stem) = &self.stem {
            stem.channels
        } else {
            self.features.unwrap_or(0)
        }
    }

    /// Toggled variant in the pattern of the ablation rows: without super-images
    /// the snippet is one frame; without TXB the head averages snippet scores.
    pub fn with_toggles(&self, superimage: bool, tm: bool, txb: bool) -> Self {
        let mut s = self.clone();
        s.enable_superimage = superimage;
        if !superimage {
            s.frames = 1;
        }
        s.enable_tm = tm;
        s.head = if txb { HeadKind::Txb } else { HeadKind::AvgScore };
        let flag = |b| if b { "1" } else { "0" };
        s.name = format!("{}[si={},tm={},txb={}]", self.name, flag(superimage), flag(tm), flag(txb));
        s
    }

    pub fn with_snippets(&self, t: usize) -> Self {
        ArchSpec { snippets: t, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |path: &str, v: usize| if v == 0 { Err(invalid(path, "must be positive")) } else { Ok(()) };
        positive("snippets", self.snippets)?;
        positive("frames", self.frames)?;
        positive("classes", self.classes)?;
        if !self.enable_superimage && self.frames != 1 {
            return Err(invalid("frames", format!("must be 1 when enable.superimage is false, got {}", self.frames)));
        }
        if self.head != HeadKind::AvgScore {
            positive("head.channels", self.head_channels)?;
        }
        match (self.has_backbone(), self.features) {
            (true, Some(_)) => return Err(invalid("features", "only allowed for specs without a backbone")),
            (false, None) => return Err(invalid("features", "required when there is no stem and no stages")),
            (false, Some(c)) => positive("features", c)?,
            (true, None) => {}
        }
        if let Some(s) = &self.stem {
            positive("stem.channels", s.channels)?;
            positive("stem.kernel", s.kernel)?;
            positive("stem.stride", s.stride)?;
        }
        for (i, st) in self.stages.iter().enumerate() {
            positive(&format!("stages.channels[{i}]"), st.channels)?;
            positive(&format!("stages.repeat[{i}]"), st.repeat)?;
            if !matches!(st.stride, 1 | 2) {
                return Err(invalid(format!("stages.stride[{i}]"), format!("must be 1 or 2, got {}", st.stride)));
            }
            if st.block == BlockKind::Bottleneck && st.channels % 4 != 0 {
                return Err(invalid(format!("stages.channels[{i}]"), "bottleneck channels must be divisible by 4"));
            }
        }
        for (i, &s) in self.tm_after.iter().enumerate() {
            if s >= self.stages.len() {
                return Err(invalid(format!("tm_after[{i}]"), format!("stage {s} does not exist ({} stages)", self.stages.len())));
            }
            if self.tm_after[..i].contains(&s) {
                return Err(invalid(format!("tm_after[{i}]"), format!("stage {s} listed twice")));
            }
        }
        if self.has_backbone() {
            positive("height", self.height)?;
            positive("width", self.width)?;
            self.spatial_sizes()?;
        }
        Ok(())
    }

    /// Spatial size after the stem and after each stage.
    pub fn spatial_sizes(&self) -> Result<(Vec<Hw>, Hw)> {
        let shrink = |path: &str, (h, w): (usize, usize), k: usize, s: usize, p: usize| {
            match (conv_out_len(h, k, s, p), conv_out_len(w, k, s, p)) {
                (Some(h), Some(w)) if h > 0 && w > 0 => Ok((h, w)),
                _ => Err(invalid(path, format!("input {h}x{w} too small for kernel {k}, stride {s}, padding {p}"))),
            }
        };
        let mut hw = (self.height, self.width);
        if let Some(st) = &self.stem {
            hw = shrink("stem.kernel", hw, st.kernel, st.stride, st.padding)?;
            if st.max_pool {
                hw = shrink("stem.max_pool", hw, 3, 2, 1)?;
            }
        }
        let stem = hw;
        let mut sizes = Vec::with_capacity(self.stages.len());
        for (i, st) in self.stages.iter().enumerate() {
            hw = shrink(&format!("stages.stride[{i}]"), hw, 3, st.stride, 1)?;
            sizes.push(hw);
        }
        Ok((sizes, stem))
    }
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s, "<string>")
    }
}
