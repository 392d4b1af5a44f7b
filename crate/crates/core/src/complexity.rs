//! Symbolic parameter and multiplication counts.
//!
//! Shapes are propagated through a spec without allocating anything. One
//! multiply-accumulate counts as one multiplication; BN, activations,
//! pooling, residual additions and bias additions are free. Counts are for a
//! single clip (B = 1) of T snippets.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::model::{block_prefix, needs_downsample};
use crate::graph::{ArchSpec, BlockKind, HeadKind};
use crate::ops::conv_out_len;

pub const CONVENTION: &str = "multiplications = MACs; bn/relu/pool/add/bias free; bn params = alpha+beta";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRow {
    pub name: String,
    pub out_shape: Vec<usize>,
    pub params: u64,
    pub mults: u64,
    /// Trainable tensors owned by this layer.
    #[serde(skip)]
    pub tensors: Vec<(String, Vec<usize>)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub spec: String,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub resolution: [usize; 2],
    pub convention: String,
    pub layers: Vec<LayerRow>,
    pub total_params: u64,
    pub total_mults: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Table,
    Json,
}

struct Walker {
    t: u64,
    rows: Vec<LayerRow>,
}

fn p(n: usize) -> u64 {
    n as u64
}

/// Multiplications of one bias-free 2D conv over a single `h x w` image.
pub fn conv2d_mults(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, (h, w): (usize, usize)) -> u64 {
    let ho = conv_out_len(h, k, stride, pad).unwrap_or(0);
    let wo = conv_out_len(w, k, stride, pad).unwrap_or(0);
    p(c_out * c_in * k * k) * p(ho * wo)
}

impl Walker {
    fn row(&mut self, name: impl Into<String>, out_shape: Vec<usize>, mults: u64, tensors: Vec<(String, Vec<usize>)>) {
        let params = tensors.iter().map(|(_, s)| s.iter().map(|&d| p(d)).product::<u64>()).sum();
        self.rows.push(LayerRow { name: name.into(), out_shape, params, mults, tensors });
    }

    /// Bias-free 2D conv applied to all T snippets; returns output size.
    #[allow(clippy::too_many_arguments)]
    fn conv2d(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, hw: (usize, usize)) -> (usize, usize) {
        let ho = conv_out_len(hw.0, k, stride, pad).unwrap_or(0);
        let wo = conv_out_len(hw.1, k, stride, pad).unwrap_or(0);
        let mults = conv2d_mults(c_in, c_out, k, stride, pad, hw) * self.t;
        let t = self.t as usize;
        self.row(name, vec![t, c_out, ho, wo], mults, vec![(format!("{name}/weight"), vec![c_out, c_in, k, k])]);
        (ho, wo)
    }

    fn bn(&mut self, name: &str, c: usize, out_shape: Vec<usize>) {
        let tensors = vec![(format!("{name}/alpha"), vec![c]), (format!("{name}/beta"), vec![c])];
        self.row(name, out_shape, 0, tensors);
    }

    fn affine(&mut self, name: &str, weight: Vec<usize>, out_shape: Vec<usize>, mults: u64) {
        let bias = vec![weight[0]];
        self.row(name, out_shape, mults, vec![(format!("{name}/weight"), weight), (format!("{name}/bias"), bias)]);
    }

    fn block(&mut self, kind: BlockKind, pre: &str, c_in: usize, c_out: usize, stride: usize, hw: (usize, usize)) -> (usize, usize) {
        let t = self.t as usize;
        let shape = |c: usize, hw: (usize, usize)| vec![t, c, hw.0, hw.1];
        let out = match kind {
            BlockKind::Plain => {
                let o = self.conv2d(&format!("{pre}/conv1"), c_in, c_out, 3, stride, 1, hw);
                self.bn(&format!("{pre}/bn1"), c_out, shape(c_out, o));
                return o;
            }
            BlockKind::Basic => {
                let o = self.conv2d(&format!("{pre}/conv1"), c_in, c_out, 3, stride, 1, hw);
                self.bn(&format!("{pre}/bn1"), c_out, shape(c_out, o));
                let o = self.conv2d(&format!("{pre}/conv2"), c_out, c_out, 3, 1, 1, o);
                self.bn(&format!("{pre}/bn2"), c_out, shape(c_out, o));
                o
            }
            BlockKind::Bottleneck => {
                let m = c_out / 4;
                let o = self.conv2d(&format!("{pre}/conv1"), c_in, m, 1, 1, 0, hw);
                self.bn(&format!("{pre}/bn1"), m, shape(m, o));
                let o = self.conv2d(&format!("{pre}/conv2"), m, m, 3, stride, 1, o);
                self.bn(&format!("{pre}/bn2"), m, shape(m, o));
                let o = self.conv2d(&format!("{pre}/conv3"), m, c_out, 1, 1, 0, o);
                self.bn(&format!("{pre}/bn3"), c_out, shape(c_out, o));
                o
            }
        };
        if needs_downsample(c_in, c_out, stride) {
            let o = self.conv2d(&format!("{pre}/downsample/conv"), c_in, c_out, 1, stride, 0, hw);
            self.bn(&format!("{pre}/downsample/bn"), c_out, shape(c_out, o));
        }
        out
    }
}

/// Per-layer counts for one clip of `spec`.
pub fn analyze(spec: &ArchSpec) -> Result<ComplexityReport> {
    spec.validate()?;
    let t = spec.snippets;
    let mut w = Walker { t: p(t), rows: Vec::new() };
    let mut c = spec.input_channels();
    let mut hw = (spec.height, spec.width);
    if let Some(stem) = &spec.stem {
        hw = w.conv2d("stem/conv", c, stem.channels, stem.kernel, stem.stride, stem.padding, hw);
        c = stem.channels;
        w.bn("stem/bn", c, vec![t, c, hw.0, hw.1]);
        if stem.max_pool {
            hw = (conv_out_len(hw.0, 3, 2, 1).unwrap_or(0), conv_out_len(hw.1, 3, 2, 1).unwrap_or(0));
            w.row("stem/max_pool", vec![t, c, hw.0, hw.1], 0, Vec::new());
        }
    }
    for (i, st) in spec.stages.iter().enumerate() {
        for j in 0..st.repeat {
            let stride = if j == 0 { st.stride } else { 1 };
            hw = w.block(st.block, &block_prefix(i, j), c, st.channels, stride, hw);
            c = st.channels;
        }
        if spec.tm_points().contains(&i) {
            let name = format!("tm{i}/conv");
            let mults = p(c * c * 3) * p(hw.0 * hw.1) * p(t);
            w.affine(&name, vec![c, c, 3, 1, 1], vec![t, c, hw.0, hw.1], mults);
            w.bn(&format!("tm{i}/bn"), c, vec![t, c, hw.0, hw.1]);
        }
    }
    if spec.has_backbone() {
        w.row("global_avg_pool", vec![t, c], 0, Vec::new());
    } else {
        c = spec.feature_channels();
    }
    let (co, k, tt) = (spec.head_channels, spec.classes, p(t));
    match spec.head {
        HeadKind::Txb => {
            w.bn("head/bn", c, vec![t, c]);
            w.affine("head/short", vec![co, c], vec![t, co], p(co * c) * tt);
            w.affine("head/long/cw1", vec![c, 3], vec![t, c], p(c * 3) * tt);
            w.affine("head/long/tw1", vec![co, c], vec![t, co], p(co * c) * tt);
            w.affine("head/long/cw2", vec![co, 3], vec![t, co], p(co * 3) * tt);
            w.affine("head/long/tw2", vec![co, co], vec![t, co], p(co * co) * tt);
            w.row("head/temporal_max_pool", vec![co], 0, Vec::new());
            w.affine("head/fc", vec![k, co], vec![k], p(k * co));
        }
        HeadKind::AvgScore => {
            w.affine("head/fc", vec![k, c], vec![t, k], p(k * c) * tt);
            w.row("head/score_mean", vec![k], 0, Vec::new());
        }
        HeadKind::OrdinaryTconv => {
            w.affine("head/conv1", vec![co, c, 3], vec![t, co], p(co * c * 3) * tt);
            w.affine("head/conv2", vec![co, co, 3], vec![t, co], p(co * co * 3) * tt);
            w.row("head/temporal_max_pool", vec![co], 0, Vec::new());
            w.affine("head/fc", vec![k, co], vec![k], p(k * co));
        }
    }
    let total_params = w.rows.iter().map(|r| r.params).sum();
    let total_mults = w.rows.iter().map(|r| r.mults).sum();
    Ok(ComplexityReport {
        spec: spec.name.clone(),
        t,
        n: spec.frames,
        resolution: [spec.height, spec.width],
        convention: CONVENTION.to_string(),
        layers: w.rows,
        total_params,
        total_mults,
    })
}

pub fn count_params(spec: &ArchSpec) -> Result<u64> {
    Ok(analyze(spec)?.total_params)
}

pub fn count_flops(spec: &ArchSpec) -> Result<u64> {
    Ok(analyze(spec)?.total_mults)
}

/// `1234567` -> `"1,234,567"`.
pub fn group_digits(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// `33154768` -> `"33.15M"`.
pub fn si_suffix(n: u64) -> String {
    let v = n as f64;
    for (scale, unit) in [(1e12, "T"), (1e9, "G"), (1e6, "M"), (1e3, "K")] {
        if v >= scale {
            return format!("{:.2}{unit}", v / scale);
        }
    }
    n.to_string()
}

pub fn emit_report(report: &ComplexityReport, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        Format::Table => {
            let shapes: Vec<String> = report.layers.iter().map(|r| format!("{:?}", r.out_shape)).collect();
            let name_w = report.layers.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
            let shape_w = shapes.iter().map(String::len).max().unwrap_or(9).max(9);
            let mut out = format!(
                "spec: {}  T={}  N={}  input {}x{}\nconvention: {}\n",
                report.spec, report.t, report.n, report.resolution[0], report.resolution[1], report.convention
            );
            out += &format!("{:<name_w$}  {:<shape_w$}  {:>14}  {:>20}\n", "layer", "out_shape", "params", "mults");
            for (r, shape) in report.layers.iter().zip(&shapes) {
                out += &format!("{:<name_w$}  {:<shape_w$}  {:>14}  {:>20}\n", r.name, shape, group_digits(r.params), group_digits(r.mults));
            }
            out += &format!("total params: {} ({})\n", group_digits(report.total_params), si_suffix(report.total_params));
            out += &format!("total mults: {} ({})\n", group_digits(report.total_mults), si_suffix(report.total_mults));
            out
        }
    }
}
