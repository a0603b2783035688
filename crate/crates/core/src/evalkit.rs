//! Classification metrics with Mask as the positive class.
//!
//! Machine-readable output (CSV) carries 4 decimals, human-readable tables
//! 2.

use std::fmt::Write as _;

use crate::datakit::Label;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// 2x2 grid, rows = true class, columns = predicted class.
    pub fn grid(&self) -> String {
        let w = [self.tp, self.fp, self.tn, self.fn_]
            .iter()
            .map(|v| v.to_string().len())
            .max()
            .unwrap_or(1)
            .max(7);
        let mut s = String::new();
        let _ = writeln!(s, "{:>14} {:>w$} {:>w$}", "true \\ pred", "Mask", "No-Mask");
        let _ = writeln!(s, "{:>14} {:>w$} {:>w$}", "Mask", self.tp, self.fn_);
        let _ = writeln!(s, "{:>14} {:>w$} {:>w$}", "No-Mask", self.fp, self.tn);
        s
    }
}

/// Counts predictions against the truth (Mask positive).
pub fn confusion(preds: &[Label], truth: &[Label]) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(truth) {
        match (p, t) {
            (Label::Mask, Label::Mask) => cm.tp += 1,
            (Label::Mask, Label::NoMask) => cm.fp += 1,
            (Label::NoMask, Label::NoMask) => cm.tn += 1,
            (Label::NoMask, Label::Mask) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Support of the class in the truth.
    pub support: u64,
    /// A zero denominator forced precision or recall to 0.
    pub degenerate: bool,
}

impl ClassMetrics {
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { None } else { Some(num as f64 / den as f64) };
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        let (precision, recall) = (p.unwrap_or(0.0), r.unwrap_or(0.0));
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support: tp + fn_,
            degenerate: p.is_none() || r.is_none(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassificationReport {
    pub mask: ClassMetrics,
    pub no_mask: ClassMetrics,
    pub accuracy: f64,
    pub total: u64,
}

pub fn report(cm: &ConfusionMatrix) -> ClassificationReport {
    let total = cm.total();
    ClassificationReport {
        mask: ClassMetrics::from_counts(cm.tp, cm.fp, cm.fn_),
        no_mask: ClassMetrics::from_counts(cm.tn, cm.fn_, cm.fp),
        accuracy: if total == 0 { 0.0 } else { (cm.tp + cm.tn) as f64 / total as f64 },
        total,
    }
}

impl ClassificationReport {
    fn rows(&self) -> [(&'static str, &ClassMetrics); 2] {
        [("Mask", &self.mask), ("No-Mask", &self.no_mask)]
    }

    /// Precision / recall / F1 table with 2 decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>9} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1", "support");
        for (name, m) in self.rows() {
            let flag = if m.degenerate { "  (degenerate)" } else { "" };
            let _ = writeln!(
                s,
                "{:<10} {:>9.2} {:>9.2} {:>9.2} {:>9}{flag}",
                name, m.precision, m.recall, m.f1, m.support
            );
        }
        let _ = writeln!(s, "accuracy: {:.2}% of {}", 100.0 * self.accuracy, self.total);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,precision,recall,f1,support,degenerate\n");
        for (name, m) in self.rows() {
            let _ = writeln!(
                s,
                "{name},{:.4},{:.4},{:.4},{},{}",
                m.precision, m.recall, m.f1, m.support, m.degenerate
            );
        }
        let _ = writeln!(s, "accuracy,{:.4},,,{},", self.accuracy, self.total);
        s
    }
}

/// Float32 vs int8 results on the same evaluation set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Comparison {
    pub float: ClassificationReport,
    pub int8: ClassificationReport,
    /// `100 * (int8 accuracy - float accuracy)`, in percentage points.
    pub delta_pts: f64,
    /// Fraction of samples where both models predict the same label.
    pub agreement: f64,
}

pub fn compare(float_preds: &[Label], int8_preds: &[Label], truth: &[Label]) -> Result<Comparison> {
    if float_preds.len() != truth.len() || int8_preds.len() != truth.len() {
        return Err(Error::Data(format!(
            "prediction sets of {} and {} samples for {} labels",
            float_preds.len(),
            int8_preds.len(),
            truth.len()
        )));
    }
    let float = report(&confusion(float_preds, truth)?);
    let int8 = report(&confusion(int8_preds, truth)?);
    let same = float_preds.iter().zip(int8_preds).filter(|(a, b)| a == b).count();
    Ok(Comparison {
        float,
        int8,
        delta_pts: 100.0 * (int8.accuracy - float.accuracy),
        agreement: same as f64 / truth.len() as f64,
    })
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>10}", "model", "test acc.");
        let _ = writeln!(s, "{:<8} {:>9.2}%", "float32", 100.0 * self.float.accuracy);
        let _ = writeln!(s, "{:<8} {:>9.2}%", "int8", 100.0 * self.int8.accuracy);
        let _ = writeln!(s, "delta (int8 - float32): {:+.2} pts", self.delta_pts);
        let _ = writeln!(s, "agreement: {:.2}%", 100.0 * self.agreement);
        s
    }

    pub fn to_csv(&self) -> String {
        format!(
            "float32_acc,int8_acc,delta_pts,agreement\n{:.4},{:.4},{:.4},{:.4}\n",
            self.float.accuracy, self.int8.accuracy, self.delta_pts, self.agreement
        )
    }
}
