//! Scalar summaries of step-wise accuracies.
//!
//! Domain metrics use the accuracy-matrix convention: `r[i][j]` is the
//! accuracy on evaluation domain `j` after observing domain `i`.
//!
//! * in-domain: mean of the diagonal
//! * next-domain: mean of `r[i][i+1]`
//! * backward transfer: mean of the strict lower triangle (`j < i`)
//! * forward transfer: mean of the strict upper triangle (`j > i`), which
//!   includes the next-domain entries
//! * overall: mean of every entry

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("accuracy series is empty")]
    EmptySeries,
    #[error("accuracy {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("accuracy matrix is not square")]
    NotSquare,
    #[error("metric needs at least {needed} domains, matrix has {size}")]
    MatrixTooSmall { needed: usize, size: usize },
}

fn check_unit(index: usize, value: f64) -> Result<(), MetricsError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(MetricsError::OutOfRange { index, value });
    }
    Ok(())
}

/// Per-step accuracies, one per task, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StepAccuracySeries(Vec<f64>);

impl StepAccuracySeries {
    pub fn new(accuracies: Vec<f64>) -> Result<Self, MetricsError> {
        if accuracies.is_empty() {
            return Err(MetricsError::EmptySeries);
        }
        for (i, &a) in accuracies.iter().enumerate() {
            check_unit(i, a)?;
        }
        Ok(Self(accuracies))
    }

    pub fn push(&mut self, accuracy: f64) -> Result<(), MetricsError> {
        check_unit(self.0.len(), accuracy)?;
        self.0.push(accuracy);
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for StepAccuracySeries {
    type Error = MetricsError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<StepAccuracySeries> for Vec<f64> {
    fn from(s: StepAccuracySeries) -> Self {
        s.0
    }
}

/// Mean over all steps.
pub fn avg_accuracy(series: &StepAccuracySeries) -> f64 {
    series.0.iter().sum::<f64>() / series.0.len() as f64
}

/// Accuracy after the final step.
pub fn last_accuracy(series: &StepAccuracySeries) -> f64 {
    *series.0.last().expect("series is non-empty")
}

/// Square grid of accuracies, `r[i][j]` after domain `i` on domain `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct AccuracyMatrix(Vec<Vec<f64>>);

impl AccuracyMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, MetricsError> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(MetricsError::NotSquare);
        }
        for (i, &a) in rows.iter().flatten().enumerate() {
            check_unit(i, a)?;
        }
        Ok(Self(rows))
    }

    pub fn size(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.0
    }

    /// True when every row equals the first, as for a frozen evaluator.
    pub fn rows_identical(&self) -> bool {
        self.0.iter().all(|r| r == &self.0[0])
    }

    fn mean_where(&self, keep: impl Fn(usize, usize) -> bool) -> f64 {
        let n = self.size();
        let (mut sum, mut count) = (0.0, 0usize);
        for i in 0..n {
            for j in 0..n {
                if keep(i, j) {
                    sum += self.0[i][j];
                    count += 1;
                }
            }
        }
        sum / count as f64
    }

    fn need_two(&self) -> Result<(), MetricsError> {
        if self.size() < 2 {
            return Err(MetricsError::MatrixTooSmall {
                needed: 2,
                size: self.size(),
            });
        }
        Ok(())
    }

    pub fn in_domain(&self) -> f64 {
        self.mean_where(|i, j| i == j)
    }

    pub fn overall(&self) -> f64 {
        self.mean_where(|_, _| true)
    }

    pub fn next_domain(&self) -> Result<f64, MetricsError> {
        self.need_two()?;
        Ok(self.mean_where(|i, j| j == i + 1))
    }

    pub fn backward_transfer(&self) -> Result<f64, MetricsError> {
        self.need_two()?;
        Ok(self.mean_where(|i, j| j < i))
    }

    pub fn forward_transfer(&self) -> Result<f64, MetricsError> {
        self.need_two()?;
        Ok(self.mean_where(|i, j| j > i))
    }
}

impl TryFrom<Vec<Vec<f64>>> for AccuracyMatrix {
    type Error = MetricsError;

    fn try_from(v: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<AccuracyMatrix> for Vec<Vec<f64>> {
    fn from(m: AccuracyMatrix) -> Self {
        m.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub overall: f64,
    pub next_domain: f64,
    pub in_domain: f64,
    pub backward: f64,
    pub forward: f64,
}

pub fn domain_metrics(m: &AccuracyMatrix) -> Result<DomainMetrics, MetricsError> {
    Ok(DomainMetrics {
        overall: m.overall(),
        next_domain: m.next_domain()?,
        in_domain: m.in_domain(),
        backward: m.backward_transfer()?,
        forward: m.forward_transfer()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(v: &[f64]) -> StepAccuracySeries {
        StepAccuracySeries::new(v.to_vec()).unwrap()
    }

    #[test]
    fn avg_cases() {
        assert_eq!(avg_accuracy(&series(&[0.8])), 0.8);
        assert_eq!(avg_accuracy(&series(&[1.0, 0.0])), 0.5);
    }

    #[test]
    fn last_cases() {
        assert_eq!(last_accuracy(&series(&[0.8])), 0.8);
        assert_eq!(last_accuracy(&series(&[0.9, 0.7, 0.6672])), 0.6672);
        let mut s = series(&[0.5]);
        s.push(0.25).unwrap();
        assert_eq!(last_accuracy(&s), 0.25);
    }

    #[test]
    fn series_validation() {
        assert_eq!(StepAccuracySeries::new(vec![]), Err(MetricsError::EmptySeries));
        assert!(matches!(StepAccuracySeries::new(vec![0.5, 1.5]), Err(MetricsError::OutOfRange { index: 1, .. })));
        assert!(StepAccuracySeries::new(vec![f64::NAN]).is_err());
        let mut s = series(&[0.1]);
        assert!(s.push(-0.1).is_err());
        assert!(serde_json::from_str::<StepAccuracySeries>("[]").is_err());
    }

    #[test]
    fn constant_matrix() {
        let m = AccuracyMatrix::new(vec![vec![0.37; 4]; 4]).unwrap();
        let d = domain_metrics(&m).unwrap();
        for v in [d.overall, d.next_domain, d.in_domain, d.backward, d.forward] {
            assert!((v - 0.37).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_two_by_two() {
        let m = AccuracyMatrix::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let d = domain_metrics(&m).unwrap();
        assert_eq!(
            d,
            DomainMetrics {
                overall: 0.5,
                next_domain: 0.0,
                in_domain: 1.0,
                backward: 0.0,
                forward: 0.0
            }
        );
    }

    #[test]
    fn small_matrix() {
        let m = AccuracyMatrix::new(vec![vec![0.7]]).unwrap();
        assert_eq!(m.in_domain(), 0.7);
        assert_eq!(m.overall(), 0.7);
        assert_eq!(m.next_domain(), Err(MetricsError::MatrixTooSmall { needed: 2, size: 1 }));
        assert!(domain_metrics(&m).is_err());
        assert_eq!(AccuracyMatrix::new(vec![vec![0.1, 0.2]]), Err(MetricsError::NotSquare));
    }

    proptest! {
        #[test]
        fn constant_series_average(c in 0.0f64..=1.0, n in 1usize..50) {
            let s = StepAccuracySeries::new(vec![c; n]).unwrap();
            prop_assert!((avg_accuracy(&s) - c).abs() < 1e-12);
            prop_assert_eq!(last_accuracy(&s), c);
        }

        #[test]
        fn metrics_stay_in_unit_interval(n in 2usize..7, seed in prop::collection::vec(0.0f64..=1.0, 49)) {
            let rows: Vec<Vec<f64>> = (0..n).map(|i| seed[i * 7..i * 7 + n].to_vec()).collect();
            let d = domain_metrics(&AccuracyMatrix::new(rows).unwrap()).unwrap();
            for v in [d.overall, d.next_domain, d.in_domain, d.backward, d.forward] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
