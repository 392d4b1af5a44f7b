use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub top1: f64,
    /// Mean of per-class accuracy over classes with at least one sample.
    pub class_mean: f64,
    pub per_class: Vec<f64>,
    pub support: Vec<usize>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub loss: f64,
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<usize>>, loss: f64) -> Self {
        let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
        let per_class: Vec<f64> = confusion
            .iter()
            .enumerate()
            .map(|(i, r)| if support[i] == 0 { 0.0 } else { r[i] as f64 / support[i] as f64 })
            .collect();
        let total: usize = support.iter().sum();
        let correct: usize = (0..confusion.len()).map(|i| confusion[i][i]).sum();
        let present: Vec<f64> = per_class.iter().zip(&support).filter(|(_, &s)| s > 0).map(|(&a, _)| a).collect();
        Metrics {
            top1: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            class_mean: if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 },
            per_class,
            support,
            confusion,
            loss,
        }
    }

    /// Top-1 accuracy restricted to samples whose true label is in `labels`.
    pub fn accuracy_over(&self, labels: &[usize]) -> f64 {
        let (mut hit, mut n) = (0, 0);
        for &l in labels.iter().filter(|&&l| l < self.confusion.len()) {
            hit += self.confusion[l][l];
            n += self.support[l];
        }
        if n == 0 { 0.0 } else { hit as f64 / n as f64 }
    }

    pub fn to_table(&self, class_names: &[String]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "top-1       {:.4}", self.top1);
        let _ = writeln!(out, "class-mean  {:.4}", self.class_mean);
        let _ = writeln!(out, "loss        {:.4}", self.loss);
        let _ = writeln!(out, "\n{:<14} {:>7} {:>8}", "class", "support", "accuracy");
        for (i, (&acc, &n)) in self.per_class.iter().zip(&self.support).enumerate() {
            let name = class_names.get(i).cloned().unwrap_or_else(|| i.to_string());
            let _ = writeln!(out, "{name:<14} {n:>7} {acc:>8.4}");
        }
        let _ = writeln!(out, "\nconfusion (rows true, columns predicted)");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>4}")).collect();
            let _ = writeln!(out, "{}", cells.join(""));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracies_from_confusion() {
        let m = Metrics::from_confusion(vec![vec![3, 1, 0], vec![0, 2, 0], vec![0, 0, 0]], 0.5);
        assert!((m.top1 - 5.0 / 6.0).abs() < 1e-12);
        assert!((m.class_mean - 0.875).abs() < 1e-12);
        assert_eq!(m.support, vec![4, 2, 0]);
        assert!((m.accuracy_over(&[1, 2]) - 1.0).abs() < 1e-12);
        assert!(m.to_table(&[]).contains("top-1"));
    }
}
