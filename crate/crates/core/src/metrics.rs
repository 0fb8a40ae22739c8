//! Accuracy and macro-F1 over node subsets, and the grouped fairness report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Fraction of `subset` whose prediction equals its label; `None` if empty.
pub fn accuracy(
    preds: &[usize],
    labels: &[Option<usize>],
    subset: &[usize],
) -> Result<Option<f64>> {
    if subset.is_empty() {
        return Ok(None);
    }
    let mut correct = 0usize;
    for &v in subset {
        let y = label_of(labels, v)?;
        correct += usize::from(preds[v] == y);
    }
    Ok(Some(correct as f64 / subset.len() as f64))
}

fn label_of(labels: &[Option<usize>], v: usize) -> Result<usize> {
    labels
        .get(v)
        .copied()
        .flatten()
        .ok_or_else(|| Error::Contract(format!("evaluated node {v} has no label")))
}

/// Per-class precision, recall and F1 with their uniform average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassBreakdown {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
}

/// Macro-F1 over all `num_classes` classes. Classes absent from the subset
/// score about 0 through the `epsilon` guard.
pub fn macro_f1(
    preds: &[usize],
    labels: &[Option<usize>],
    subset: &[usize],
    num_classes: usize,
    epsilon: f64,
) -> Result<Option<ClassBreakdown>> {
    if subset.is_empty() {
        return Ok(None);
    }
    let mut tp = vec![0usize; num_classes];
    let mut predicted = vec![0usize; num_classes];
    let mut actual = vec![0usize; num_classes];
    for &v in subset {
        let y = label_of(labels, v)?;
        let p = preds[v];
        if y >= num_classes || p >= num_classes {
            return Err(Error::Contract(format!(
                "class index out of range at node {v}"
            )));
        }
        predicted[p] += 1;
        actual[y] += 1;
        tp[y] += usize::from(p == y);
    }
    let precision: Vec<f64> = (0..num_classes)
        .map(|c| tp[c] as f64 / (predicted[c] as f64 + epsilon))
        .collect();
    let recall: Vec<f64> = (0..num_classes)
        .map(|c| tp[c] as f64 / (actual[c] as f64 + epsilon))
        .collect();
    let f1: Vec<f64> = precision
        .iter()
        .zip(&recall)
        .map(|(p, r)| 2.0 * p * r / (p + r + epsilon))
        .collect();
    let macro_f1 = f1.iter().sum::<f64>() / num_classes as f64;
    Ok(Some(ClassBreakdown {
        precision,
        recall,
        f1,
        macro_f1,
    }))
}

/// Headline metrics of one evaluation. Undefined values are `None` and
/// serialize as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: Option<f64>,
    pub overall_f1: Option<f64>,
    pub hete_f1: Option<f64>,
    pub hete_min_f1: Option<f64>,
    pub per_class: Option<ClassBreakdown>,
    pub num_evaluated: usize,
    pub num_hete: usize,
    pub num_hete_min: usize,
}

/// Evaluation node sets: the whole evaluated split, its heterophilous nodes,
/// and the heterophilous minority-class nodes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalGroups {
    pub all: Vec<usize>,
    pub hete: Vec<usize>,
    pub hete_min: Vec<usize>,
}

pub fn group_report(
    preds: &[usize],
    labels: &[Option<usize>],
    groups: &EvalGroups,
    num_classes: usize,
) -> Result<EvalReport> {
    let f1 = |subset: &[usize]| -> Result<Option<f64>> {
        Ok(macro_f1(preds, labels, subset, num_classes, DEFAULT_EPSILON)?.map(|b| b.macro_f1))
    };
    let per_class = macro_f1(preds, labels, &groups.all, num_classes, DEFAULT_EPSILON)?;
    Ok(EvalReport {
        accuracy: accuracy(preds, labels, &groups.all)?,
        overall_f1: per_class.as_ref().map(|b| b.macro_f1),
        hete_f1: f1(&groups.hete)?,
        hete_min_f1: f1(&groups.hete_min)?,
        per_class,
        num_evaluated: groups.all.len(),
        num_hete: groups.hete.len(),
        num_hete_min: groups.hete_min.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(ys: &[usize]) -> Vec<Option<usize>> {
        ys.iter().map(|&y| Some(y)).collect()
    }

    #[test]
    fn accuracy_examples() {
        let y = labels(&[0, 1, 2, 1]);
        let all: Vec<usize> = (0..4).collect();
        assert_eq!(accuracy(&[0, 1, 2, 1], &y, &all).unwrap(), Some(1.0));
        assert_eq!(accuracy(&[1, 0, 0, 0], &y, &all).unwrap(), Some(0.0));
        assert_eq!(accuracy(&[0, 1, 2, 0], &y, &all).unwrap(), Some(0.75));
        assert_eq!(accuracy(&[0], &y, &[]).unwrap(), None);
    }

    #[test]
    fn unlabeled_node_in_subset_is_an_error() {
        assert!(accuracy(&[0], &[None], &[0]).is_err());
    }

    #[test]
    fn perfect_predictions_score_one() {
        let y = labels(&[0, 1, 2, 2]);
        let b = macro_f1(&[0, 1, 2, 2], &y, &[0, 1, 2, 3], 3, DEFAULT_EPSILON)
            .unwrap()
            .unwrap();
        assert!(b.macro_f1 >= 1.0 - 10.0 * DEFAULT_EPSILON);
    }

    #[test]
    fn empty_group_is_undefined_but_report_is_valid() {
        let y = labels(&[0, 1]);
        let groups = EvalGroups {
            all: vec![0, 1],
            hete: vec![1],
            hete_min: vec![],
        };
        let r = group_report(&[0, 1], &y, &groups, 2).unwrap();
        assert_eq!(r.hete_min_f1, None);
        assert!(r.overall_f1.is_some() && r.hete_f1.is_some());
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["hete_min_f1"].is_null());
    }
}
