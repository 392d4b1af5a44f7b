use std::fmt::Write as _;

use serde::Serialize;

use super::{evaluate, train, TrainConfig};
use crate::data::{mirrored_labels, static_labels, VideoClip};
use crate::error::Result;
use crate::graph::{build_model, ArchSpec, Model32};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Toggles {
    pub superimage: bool,
    pub tm: bool,
    pub txb: bool,
}

impl Toggles {
    pub const fn new(superimage: bool, tm: bool, txb: bool) -> Self {
        Toggles { superimage, tm, txb }
    }
}

/// Components added one at a time, starting from the frame-level baseline.
pub const ABLATION_ROWS: [Toggles; 4] = [
    Toggles::new(false, false, false),
    Toggles::new(true, false, false),
    Toggles::new(true, true, false),
    Toggles::new(true, true, true),
];

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub toggles: Toggles,
    pub spec: String,
    pub params: usize,
    pub final_loss: f64,
    pub top1: f64,
    pub class_mean: f64,
    pub mirrored: f64,
    pub static_acc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_table(&self) -> String {
        let mark = |b: bool| if b { "x" } else { "-" };
        let mut out = String::new();
        let _ = writeln!(out, "{:>3} {:>3} {:>3} {:>9} {:>7} {:>10} {:>8} {:>7} {:>8}", "si", "tm", "txb", "params", "top-1", "class-mean", "mirrored", "static", "seconds");
        for r in &self.rows {
            let t = r.toggles;
            let _ = writeln!(
                out,
                "{:>3} {:>3} {:>3} {:>9} {:>7.4} {:>10.4} {:>8.4} {:>7.4} {:>8.1}",
                mark(t.superimage),
                mark(t.tm),
                mark(t.txb),
                r.params,
                r.top1,
                r.class_mean,
                r.mirrored,
                r.static_acc,
                r.seconds
            );
        }
        out
    }
}

/// Trains and evaluates one variant of `base` per toggle row, all from the same seed.
pub fn run_ablation(train_clips: &[VideoClip], test_clips: &[VideoClip], base: &ArchSpec, cfg: &TrainConfig, rows: &[Toggles]) -> Result<AblationReport> {
    let mut out = Vec::with_capacity(rows.len());
    for &toggles in rows {
        let start = std::time::Instant::now();
        let spec = base.with_toggles(toggles.superimage, toggles.tm, toggles.txb);
        spec.validate()?;
        let mut model: Model32 = build_model(&spec, cfg.seed)?;
        let report = train(&mut model, train_clips, cfg)?;
        let m = evaluate(&model, test_clips, cfg.batch_size)?;
        out.push(AblationRow {
            toggles,
            spec: spec.name.clone(),
            params: model.num_params(),
            final_loss: report.final_loss,
            top1: m.top1,
            class_mean: m.class_mean,
            mirrored: m.accuracy_over(&mirrored_labels()),
            static_acc: m.accuracy_over(&static_labels()),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(AblationReport { seed: cfg.seed, rows: out })
}
