//! Stratified splitting, ROC analysis and the evaluation report.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{class_counts, Class};
use crate::math;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!("train fraction {train_fraction} must lie in (0, 1)")));
        }
        Ok(Self { train_fraction, seed })
    }

    /// 80/20.
    pub fn standard(seed: u64) -> Self {
        Self { train_fraction: 0.8, seed }
    }
}

/// Per-class shuffled partition. Each class contributes
/// `round((1 - train_fraction) * n_c)` rows to the held-out side. Returns
/// `(train, held_out)` row indices, each in ascending order.
pub fn stratified_split(classes: &[Class], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let (normal, tcfa) = class_counts(classes);
    if normal == 0 || tcfa == 0 {
        return Err(Error::SingleClass(format!("stratified split got {normal} normal / {tcfa} TCFA rows")));
    }
    let mut rng = rng::seeded(spec.seed);
    let mut train = Vec::with_capacity(classes.len());
    let mut test = Vec::new();
    for class in [Class::Normal, Class::Tcfa] {
        let mut members: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == class).collect();
        members.shuffle(&mut rng);
        let n_test = math::round((1.0 - spec.train_fraction) * members.len() as f64) as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores `>= threshold` are called TCFA; the first point uses +inf.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    /// True and false positives at this threshold.
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

fn check_binary(scores: &[f64], labels: &[Class]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidArgument(format!("score {s} is not a number")));
    }
    let (neg, pos) = class_counts(labels);
    if neg == 0 || pos == 0 {
        return Err(Error::SingleClass(format!("ROC needs both classes, got {neg} negative / {pos} positive")));
    }
    Ok((neg, pos))
}

/// One point per distinct score, from (0,0) to (1,1); AUC by trapezoids.
/// Tied scores form a single diagonal step, which credits tied
/// positive/negative pairs with one half.
pub fn roc_curve(scores: &[f64], labels: &[Class]) -> Result<RocCurve> {
    let (neg, pos) = check_binary(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::with_capacity(scores.len() + 1);
    points.push(RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0, tp: 0, fp: 0 });
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]].is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // trapezoid in count units, normalised at the end
        auc += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push(RocPoint { threshold: t, fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64, tp, fp });
    }
    Ok(RocCurve { points, auc: auc / (neg as f64 * pos as f64) })
}

pub fn auc(scores: &[f64], labels: &[Class]) -> Result<f64> {
    Ok(roc_curve(scores, labels)?.auc)
}

/// Threshold maximising specificity + sensitivity (Youden), over the
/// observed scores; ties go to the higher threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub threshold: f64,
    pub specificity_pct: f64,
    pub sensitivity_pct: f64,
}

pub fn optimal_cutoff(curve: &RocCurve) -> Result<Cutoff> {
    let last = curve.points.last().ok_or_else(|| Error::Empty("ROC curve has no points".into()))?;
    let (pos, neg) = (last.tp as i128, last.fp as i128);
    let mut best: Option<(i128, &RocPoint)> = None;
    for p in curve.points.iter().filter(|p| p.threshold.is_finite()) {
        // Youden's J scaled by pos * neg, exact in integers
        let j = p.tp as i128 * neg - p.fp as i128 * pos;
        // points run from high to low thresholds, so strict > keeps the higher one
        if best.is_none_or(|(bj, _)| j > bj) {
            best = Some((j, p));
        }
    }
    let (_, p) = best.ok_or_else(|| Error::Empty("ROC curve has no finite threshold".into()))?;
    Ok(Cutoff {
        threshold: p.threshold,
        specificity_pct: 100.0 * (last.fp - p.fp) as f64 / last.fp as f64,
        sensitivity_pct: 100.0 * p.tp as f64 / last.tp as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    /// Calls TCFA when `score >= threshold`.
    pub fn at_threshold(scores: &[f64], labels: &[Class], threshold: f64) -> Self {
        let mut cm = Self::default();
        for (&s, l) in scores.iter().zip(labels) {
            match (s >= threshold, l.is_positive()) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fp += 1,
                (false, false) => cm.tn += 1,
                (false, true) => cm.fn_ += 1,
            }
        }
        cm
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// `(specificity %, sensitivity %)` = `(TN / (FP + TN), TP / (TP + FN)) * 100`.
pub fn confusion_metrics(cm: &ConfusionMatrix) -> Result<(f64, f64)> {
    if cm.fp + cm.tn == 0 || cm.tp + cm.fn_ == 0 {
        return Err(Error::InvalidArgument(format!("confusion matrix {cm:?} has an empty class")));
    }
    Ok((
        100.0 * cm.tn as f64 / (cm.fp + cm.tn) as f64,
        100.0 * cm.tp as f64 / (cm.tp + cm.fn_) as f64,
    ))
}

/// Hosmer-Lemeshow reading of an AUC. Band edges belong to the higher band.
pub fn guideline(auc: f64) -> &'static str {
    if auc >= 0.9 {
        "Excellent discrimination"
    } else if auc >= 0.8 {
        "Good discrimination"
    } else if auc >= 0.7 {
        "Acceptable discrimination"
    } else if auc >= 0.6 {
        "Poor discrimination"
    } else {
        "No discrimination"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub threshold: f64,
    pub specificity_pct: f64,
    pub sensitivity_pct: f64,
    pub confusion: ConfusionMatrix,
    pub guideline: String,
}

pub fn evaluate(scores: &[f64], labels: &[Class]) -> Result<(EvalReport, RocCurve)> {
    let curve = roc_curve(scores, labels)?;
    let cut = optimal_cutoff(&curve)?;
    let confusion = ConfusionMatrix::at_threshold(scores, labels, cut.threshold);
    let (specificity_pct, sensitivity_pct) = confusion_metrics(&confusion)?;
    let report = EvalReport {
        auc: curve.auc,
        threshold: cut.threshold,
        specificity_pct,
        sensitivity_pct,
        confusion,
        guideline: guideline(curve.auc).to_string(),
    };
    Ok((report, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn labels(bits: &[u8]) -> Vec<Class> {
        bits.iter().map(|&b| Class::from_bit(b).unwrap()).collect()
    }

    #[test]
    fn reference_auc() {
        let curve = roc_curve(&[0.1, 0.4, 0.35, 0.8], &labels(&[0, 0, 1, 1])).unwrap();
        assert_eq!(curve.auc, 0.75);
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn separable_and_constant_scores() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &labels(&[0, 0, 1, 1])).unwrap(), 1.0);
        let curve = roc_curve(&[0.5; 4], &labels(&[0, 1, 0, 1])).unwrap();
        assert_eq!(curve.auc, 0.5);
        assert_eq!(curve.points.len(), 2);
    }

    #[test]
    fn roc_errors() {
        assert!(matches!(roc_curve(&[0.1, 0.2], &labels(&[1, 1])), Err(Error::SingleClass(_))));
        assert!(matches!(roc_curve(&[0.1], &labels(&[1, 0])), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn cutoff_on_separable_pair() {
        let curve = roc_curve(&[0.2, 0.8], &labels(&[0, 1])).unwrap();
        let c = optimal_cutoff(&curve).unwrap();
        assert_eq!((c.threshold, c.specificity_pct, c.sensitivity_pct), (0.8, 100.0, 100.0));
    }

    #[test]
    fn cutoff_tie_prefers_higher_threshold() {
        let curve = roc_curve(&[0.3, 0.3, 0.3], &labels(&[0, 1, 0])).unwrap();
        let c = optimal_cutoff(&curve).unwrap();
        assert_eq!(c.threshold, 0.3);
        assert_eq!(c.specificity_pct + c.sensitivity_pct, 100.0);
        // 0.9 and 0.7 both reach J = 1.5
        let curve = roc_curve(&[0.9, 0.8, 0.7, 0.6], &labels(&[1, 0, 1, 0])).unwrap();
        let c = optimal_cutoff(&curve).unwrap();
        assert_eq!(c.threshold, 0.9);
    }

    #[test]
    fn confusion_examples() {
        let sp = confusion_metrics(&ConfusionMatrix { tp: 1, fp: 1, tn: 9, fn_: 1 }).unwrap().0;
        assert_eq!(sp, 90.0);
        let se = confusion_metrics(&ConfusionMatrix { tp: 79, fp: 1, tn: 1, fn_: 21 }).unwrap().1;
        assert_eq!(se, 79.0);
        assert_eq!(confusion_metrics(&ConfusionMatrix { tp: 1, fp: 1, tn: 1, fn_: 1 }).unwrap(), (50.0, 50.0));
        assert!(confusion_metrics(&ConfusionMatrix { tp: 1, fp: 0, tn: 0, fn_: 1 }).is_err());
    }

    #[test]
    fn guideline_bands() {
        assert_eq!(guideline(1.0), "Excellent discrimination");
        assert_eq!(guideline(0.9), "Excellent discrimination");
        assert_eq!(guideline(0.89), "Good discrimination");
        assert_eq!(guideline(0.8), "Good discrimination");
        assert_eq!(guideline(0.7), "Acceptable discrimination");
        assert_eq!(guideline(0.6), "Poor discrimination");
        assert_eq!(guideline(0.55), "No discrimination");
        assert_eq!(guideline(0.3), "No discrimination");
    }

    #[test]
    fn split_counts() {
        let mut classes = vec![Class::Normal; 90];
        classes.extend(vec![Class::Tcfa; 10]);
        let (train, test) = stratified_split(&classes, &SplitSpec::standard(3)).unwrap();
        assert_eq!(test.len(), 20);
        assert_eq!(test.iter().filter(|&&i| classes[i] == Class::Tcfa).count(), 2);
        assert_eq!(train.len(), 80);
        assert_eq!(stratified_split(&classes, &SplitSpec::standard(3)).unwrap(), (train, test));
    }

    #[test]
    fn split_rejects_one_class() {
        assert!(stratified_split(&[Class::Tcfa; 4], &SplitSpec::standard(0)).is_err());
        assert!(SplitSpec::new(1.0, 0).is_err());
    }

    #[test]
    fn report_fields() {
        let (r, _) = evaluate(&[0.1, 0.4, 0.35, 0.8], &labels(&[0, 0, 1, 1])).unwrap();
        assert_eq!(r.auc, 0.75);
        assert_eq!(r.confusion.total(), 4);
        assert_eq!(r.guideline, "Acceptable discrimination");
    }
}
