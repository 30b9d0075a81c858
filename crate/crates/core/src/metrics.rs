//! Accuracy, confusion matrices, ROC curves and AUC, and evaluation reports.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::classify::AttributorModel;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::scalar::Scalar;

pub fn accuracy<S: AsRef<str>, G: AsRef<str>>(predictions: &[S], gold: &[G]) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            actual: predictions.len(),
        });
    }
    if gold.is_empty() {
        return Err(Error::invalid("accuracy of an empty prediction list"));
    }
    let hits = predictions
        .iter()
        .zip(gold)
        .filter(|(p, g)| p.as_ref() == g.as_ref())
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Cell (i, j) counts gold class i predicted as class j.
pub fn confusion<S: AsRef<str>, G: AsRef<str>>(
    predictions: &[S],
    gold: &[G],
    class_order: &[String],
) -> Result<Vec<Vec<usize>>> {
    if predictions.len() != gold.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            actual: predictions.len(),
        });
    }
    let pos: HashMap<&str, usize> = class_order
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let lookup = |l: &str| {
        pos.get(l)
            .copied()
            .ok_or_else(|| Error::invalid(format!("label {l:?} is not in the class order")))
    };
    let mut m = vec![vec![0; class_order.len()]; class_order.len()];
    for (p, g) in predictions.iter().zip(gold) {
        m[lookup(g.as_ref())?][lookup(p.as_ref())?] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// (false positive rate, true positive rate), from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    /// Score threshold of each point; the first is +infinity.
    pub thresholds: Vec<f64>,
}

impl RocCurve {
    /// `fpr,tpr,threshold` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,threshold\n");
        for ((x, y), t) in self.points.iter().zip(&self.thresholds) {
            out.push_str(&format!("{x},{y},{t}\n"));
        }
        out
    }
}

/// Sweeps thresholds over distinct scores in descending order. Tied scores
/// move the curve in a single (possibly diagonal) step.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != positive.len() {
        return Err(Error::DimensionMismatch {
            expected: positive.len(),
            actual: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("ROC scores must not be NaN"));
    }
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("ROC needs at least one positive and one negative"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        thresholds.push(s);
    }
    Ok(RocCurve { points, thresholds })
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_order: Vec<String>,
    pub accuracy: f64,
    /// Rows are gold classes, columns predictions, both in `class_order`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class_auc: BTreeMap<String, f64>,
    /// Unweighted mean over classes with an AUC; `None` if there are none.
    pub macro_auc: Option<f64>,
    /// Classes whose AUC is undefined on this test set (no positives or no
    /// negatives); excluded from `macro_auc`.
    pub auc_omitted: Vec<String>,
    pub support: usize,
    pub chance_level: f64,
    pub seed: Option<u64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Long format: `metric,gold,predicted,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,gold,predicted,value\n");
        out.push_str(&format!("accuracy,,,{}\n", self.accuracy));
        match self.macro_auc {
            Some(m) => out.push_str(&format!("macro_auc,,,{m}\n")),
            None => out.push_str("macro_auc,,,\n"),
        }
        out.push_str(&format!("support,,,{}\n", self.support));
        out.push_str(&format!("chance_level,,,{}\n", self.chance_level));
        if let Some(seed) = self.seed {
            out.push_str(&format!("seed,,,{seed}\n"));
        }
        for c in &self.class_order {
            match self.per_class_auc.get(c) {
                Some(a) => out.push_str(&format!("auc,{c},,{a}\n")),
                None => out.push_str(&format!("auc,{c},,\n")),
            }
        }
        for (g, row) in self.class_order.iter().zip(&self.confusion) {
            for (p, n) in self.class_order.iter().zip(row) {
                out.push_str(&format!("confusion,{g},{p},{n}\n"));
            }
        }
        out
    }
}

/// Evaluation with the per-class one-vs-rest ROC curves behind the AUCs.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub curves: BTreeMap<String, RocCurve>,
    /// Predicted probabilities per row, in the model's class order.
    pub probabilities: Vec<Vec<f64>>,
}

pub fn evaluate<F: Scalar>(model: &AttributorModel<F>, matrix: &FeatureMatrix<F>) -> Result<EvalReport> {
    evaluate_full(model, matrix).map(|e| e.report)
}

pub fn evaluate_full<F: Scalar>(model: &AttributorModel<F>, matrix: &FeatureMatrix<F>) -> Result<Evaluation> {
    if matrix.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty matrix"));
    }
    let classes = model.class_order();
    if let Some(c) = matrix.class_order().iter().find(|c| !classes.contains(c)) {
        return Err(Error::invalid(format!("test class {c:?} is unknown to the model")));
    }
    let probabilities: Vec<Vec<f64>> = model
        .predict_proba_matrix(matrix)?
        .into_iter()
        .map(|p| p.into_iter().map(|x| x.as_f64()).collect())
        .collect();
    let predictions: Vec<&str> = matrix
        .rows()
        .iter()
        .map(|r| model.predict(r))
        .collect::<Result<_>>()?;
    let gold = matrix.labels();
    let acc = accuracy(&predictions, gold)?;
    let conf = confusion(&predictions, gold, classes)?;
    let mut per_class_auc = BTreeMap::new();
    let mut curves = BTreeMap::new();
    let mut omitted = Vec::new();
    for (c, name) in classes.iter().enumerate() {
        let positive: Vec<bool> = gold.iter().map(|g| g == name).collect();
        let scores: Vec<f64> = probabilities.iter().map(|p| p[c]).collect();
        match roc_curve(&scores, &positive) {
            Ok(curve) => {
                per_class_auc.insert(name.clone(), auc(&curve));
                curves.insert(name.clone(), curve);
            }
            Err(_) => omitted.push(name.clone()),
        }
    }
    if !omitted.is_empty() {
        log::warn!("AUC undefined for classes absent from the test set: {omitted:?}");
    }
    let macro_auc = if per_class_auc.is_empty() {
        None
    } else {
        Some(per_class_auc.values().sum::<f64>() / per_class_auc.len() as f64)
    };
    Ok(Evaluation {
        report: EvalReport {
            class_order: classes.to_vec(),
            accuracy: acc,
            confusion: conf,
            per_class_auc,
            macro_auc,
            auc_omitted: omitted,
            support: gold.len(),
            chance_level: 1.0 / classes.len() as f64,
            seed: None,
        },
        curves,
        probabilities,
    })
}
