//! Error rates, Brier scores, predictive-density histograms and
//! one-vs-rest combination.

use std::io::{self, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 50;

/// Fraction of positions where the two label vectors differ.
pub fn error_rate<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions, {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("error rate of an empty set".into()));
    }
    let wrong = pred.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / pred.len() as f64)
}

/// Mean of `(1 - p)^2` over the probabilities assigned to the observed labels.
pub fn brier_score(probs_of_true: &[f64]) -> Result<f64> {
    if probs_of_true.is_empty() {
        return Err(Error::InvalidArgument("Brier score of an empty set".into()));
    }
    if let Some(p) = probs_of_true.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!(
            "probability {p} outside [0, 1]"
        )));
    }
    Ok(probs_of_true
        .iter()
        .map(|p| (1.0 - p) * (1.0 - p))
        .sum::<f64>()
        / probs_of_true.len() as f64)
}

/// Column-wise argmax of a `classes x queries` matrix of positive-class
/// probabilities; ties go to the lowest class index.
pub fn multiclass_combine(per_class: &DMatrix<f64>) -> Result<Vec<usize>> {
    if per_class.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "one-vs-rest needs at least two classes".into(),
        ));
    }
    Ok(per_class
        .column_iter()
        .map(|col| {
            let mut best = 0;
            for c in 1..col.len() {
                if col[c] > col[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// Counts of predictive probabilities in fixed-width bins on `[0, 1]`,
/// split by whether the prediction was correct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DensityHistogram {
    pub correct: Vec<usize>,
    pub incorrect: Vec<usize>,
}

impl DensityHistogram {
    pub fn n_bins(&self) -> usize {
        self.correct.len()
    }
}

pub fn density_histogram(
    probs_of_true: &[f64],
    correct: &[bool],
    n_bins: usize,
) -> Result<DensityHistogram> {
    if n_bins < 1 {
        return Err(Error::InvalidArgument(
            "histogram needs at least one bin".into(),
        ));
    }
    if probs_of_true.len() != correct.len() {
        return Err(Error::Dimension(format!(
            "{} probabilities, {} correctness flags",
            probs_of_true.len(),
            correct.len()
        )));
    }
    let mut h = DensityHistogram {
        correct: vec![0; n_bins],
        incorrect: vec![0; n_bins],
    };
    for (&p, &ok) in probs_of_true.iter().zip(correct) {
        let bin = ((p.clamp(0.0, 1.0) * n_bins as f64) as usize).min(n_bins - 1);
        if ok {
            h.correct[bin] += 1;
        } else {
            h.incorrect[bin] += 1;
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub error_rate: f64,
    pub brier: f64,
    pub n_test: usize,
    /// Error rate of each binary task, in class order, for one-vs-rest runs.
    pub per_class_errors: Option<Vec<(i64, f64)>>,
    pub density_histogram: DensityHistogram,
}

impl EvalReport {
    /// Report for binary predictions given the probability each test point's
    /// true label received and the predicted and true labels.
    pub fn binary(
        pred: &[f64],
        truth: &[f64],
        probs_of_true: &[f64],
        n_bins: usize,
    ) -> Result<Self> {
        let correct: Vec<bool> = pred.iter().zip(truth).map(|(p, t)| p == t).collect();
        Ok(EvalReport {
            error_rate: error_rate(pred, truth)?,
            brier: brier_score(probs_of_true)?,
            n_test: truth.len(),
            per_class_errors: None,
            density_histogram: density_histogram(probs_of_true, &correct, n_bins)?,
        })
    }

    /// Machine-readable `key=value` block.
    pub fn write_key_values<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "n_test={}", self.n_test)?;
        writeln!(out, "error_rate={}", self.error_rate)?;
        writeln!(out, "brier={}", self.brier)?;
        if let Some(per) = &self.per_class_errors {
            for (c, e) in per {
                writeln!(out, "error_rate.class{c}={e}")?;
            }
        }
        Ok(())
    }

    /// Histogram as tab-separated rows `bin_lo bin_hi correct incorrect`.
    pub fn write_histogram_tsv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let h = &self.density_histogram;
        let n = h.n_bins();
        writeln!(out, "bin_lo\tbin_hi\tcorrect\tincorrect")?;
        for b in 0..n {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                b as f64 / n as f64,
                (b + 1) as f64 / n as f64,
                h.correct[b],
                h.incorrect[b]
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn error_rates() {
        assert_eq!(error_rate(&[1, -1, 1], &[1, -1, 1]).unwrap(), 0.0);
        assert_eq!(error_rate(&[1, -1], &[-1, 1]).unwrap(), 1.0);
        assert_eq!(error_rate(&[1, -1, 1], &[1, 1, 1]).unwrap(), 1.0 / 3.0);
        assert!(error_rate::<i32>(&[], &[]).is_err());
        assert!(error_rate(&[1], &[1, 1]).is_err());
    }

    #[test]
    fn brier_values() {
        assert_eq!(brier_score(&[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(brier_score(&[0.5; 4]).unwrap(), 0.25);
        assert_eq!(brier_score(&[1.0, 0.0]).unwrap(), 0.5);
        assert!(brier_score(&[1.2]).is_err());
    }

    #[test]
    fn combine_and_ties() {
        let m = DMatrix::from_column_slice(3, 1, &[0.9, 0.1, 0.2]);
        assert_eq!(multiclass_combine(&m).unwrap(), vec![0]);
        let t = DMatrix::from_column_slice(2, 1, &[0.5, 0.5]);
        assert_eq!(multiclass_combine(&t).unwrap(), vec![0]);
        assert!(multiclass_combine(&DMatrix::from_element(1, 3, 0.4)).is_err());
    }

    #[test]
    fn histogram_edges() {
        let h = density_histogram(&[1.0, 1.0, 1.0], &[true; 3], 50).unwrap();
        assert_eq!(h.correct[49], 3);
        assert_eq!(h.correct.iter().sum::<usize>(), 3);
        assert!(h.incorrect.iter().all(|&c| c == 0));
        assert!(density_histogram(&[0.5], &[true], 0).is_err());
    }

    #[test]
    fn report_output() {
        let r = EvalReport::binary(&[1.0, -1.0], &[1.0, 1.0], &[0.9, 0.3], 4).unwrap();
        assert_eq!(r.error_rate, 0.5);
        let mut kv = Vec::new();
        r.write_key_values(&mut kv).unwrap();
        let kv = String::from_utf8(kv).unwrap();
        assert!(kv.contains("error_rate=0.5\n"));
        let mut tsv = Vec::new();
        r.write_histogram_tsv(&mut tsv).unwrap();
        assert_eq!(String::from_utf8(tsv).unwrap().lines().count(), 5);
    }

    proptest! {
        #[test]
        fn brier_is_permutation_invariant(mut p in prop::collection::vec(0.0f64..=1.0, 1..30)) {
            let a = brier_score(&p).unwrap();
            p.reverse();
            prop_assert!((a - brier_score(&p).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn combine_is_monotone_invariant(v in prop::collection::vec(0.0f64..1.0, 12)) {
            let m = DMatrix::from_column_slice(3, 4, &v);
            let t = m.map(|p| (p * 3.0).exp() - 7.0);
            prop_assert_eq!(multiclass_combine(&m).unwrap(), multiclass_combine(&t).unwrap());
        }

        #[test]
        fn combine_is_permutation_equivariant(v in prop::collection::vec(0.0f64..1.0, 12)) {
            let m = DMatrix::from_column_slice(3, 4, &v);
            let perm = [2usize, 0, 1];
            let pm = DMatrix::from_fn(3, 4, |r, c| m[(perm[r], c)]);
            let a = multiclass_combine(&m).unwrap();
            let b = multiclass_combine(&pm).unwrap();
            // row r of pm is class perm[r] of m
            for c in 0..4 {
                prop_assert_eq!(perm[b[c]], a[c]);
            }
        }

        #[test]
        fn histogram_counts_sum(p in prop::collection::vec(0.0f64..=1.0, 0..40), bins in 1usize..60) {
            let ok: Vec<bool> = p.iter().map(|v| *v > 0.5).collect();
            let h = density_histogram(&p, &ok, bins).unwrap();
            prop_assert_eq!(h.correct.iter().sum::<usize>(), ok.iter().filter(|b| **b).count());
            prop_assert_eq!(h.incorrect.iter().sum::<usize>(), ok.iter().filter(|b| !**b).count());
        }
    }
}
