//! Accuracy, mistake-repetition rates and sample efficiency.

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::loss::argmax;
use crate::nn::Network;
use crate::selfreg::RegulationState;

/// Temperature-1 argmax prediction for every sample.
pub fn predict_labels(model: &Network, data: &Dataset) -> Result<Vec<usize>> {
    let logits = model.predict_all(data.inputs(), 1024)?;
    Ok((0..data.len()).map(|i| argmax(logits.row(i))).collect())
}

/// Fraction of samples whose prediction matches the label.
pub fn accuracy(model: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(invalid("accuracy of an empty dataset"));
    }
    let predicted = predict_labels(model, data)?;
    Ok(accuracy_of(&predicted, data.labels()))
}

pub fn accuracy_of(predicted: &[usize], labels: &[usize]) -> f64 {
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// One sample's teacher and student predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerEntry {
    pub id: usize,
    pub truth: usize,
    pub teacher: usize,
    pub student: usize,
}

/// Teacher and student predictions over the same (training) samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionLedger {
    entries: Vec<LedgerEntry>,
}

/// A rate that may be undefined because its denominator set is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Value(f64),
    NotApplicable,
}

impl Rate {
    pub fn value(self) -> Option<f64> {
        match self {
            Rate::Value(v) => Some(v),
            Rate::NotApplicable => None,
        }
    }
}

impl std::fmt::Display for Rate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rate::Value(v) => write!(f, "{v}"),
            Rate::NotApplicable => f.write_str("n/a"),
        }
    }
}

impl PredictionLedger {
    pub fn new(entries: Vec<LedgerEntry>) -> Result<Self> {
        let mut ids: Vec<usize> = entries.iter().map(|e| e.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("duplicate sample id in ledger"));
        }
        Ok(Self { entries })
    }

    /// Builds a ledger from label and prediction vectors; ids are positions.
    pub fn from_predictions(truth: &[usize], teacher: &[usize], student: &[usize]) -> Result<Self> {
        if truth.len() != teacher.len() || truth.len() != student.len() {
            return Err(Error::Consistency(format!(
                "ledger lengths differ: {} labels, {} teacher, {} student",
                truth.len(),
                teacher.len(),
                student.len()
            )));
        }
        let entries = (0..truth.len())
            .map(|i| LedgerEntry {
                id: i,
                truth: truth[i],
                teacher: teacher[i],
                student: student[i],
            })
            .collect();
        Ok(Self { entries })
    }

    /// Runs both models over `data` at temperature 1.
    pub fn evaluate(teacher: &Network, student: &Network, data: &Dataset) -> Result<Self> {
        let t = predict_labels(teacher, data)?;
        let s = predict_labels(student, data)?;
        Self::from_predictions(data.labels(), &t, &s)
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of teacher mistakes.
    pub fn teacher_wrong(&self) -> usize {
        self.entries.iter().filter(|e| e.teacher != e.truth).count()
    }

    pub fn teacher_correct(&self) -> usize {
        self.len() - self.teacher_wrong()
    }

    /// `|W_T ∩ C_S| / |W_T|`: share of teacher mistakes the student gets right.
    pub fn success_rate(&self) -> Rate {
        let wrong = self.teacher_wrong();
        if wrong == 0 {
            return Rate::NotApplicable;
        }
        let fixed = self
            .entries
            .iter()
            .filter(|e| e.teacher != e.truth && e.student == e.truth)
            .count();
        Rate::Value(fixed as f64 / wrong as f64)
    }

    /// `|C_T ∩ W_S| / |C_T|`: share of teacher-correct samples the student gets wrong.
    pub fn failure_rate(&self) -> Rate {
        let right = self.teacher_correct();
        if right == 0 {
            return Rate::NotApplicable;
        }
        let broken = self
            .entries
            .iter()
            .filter(|e| e.teacher == e.truth && e.student != e.truth)
            .count();
        Rate::Value(broken as f64 / right as f64)
    }
}

/// Used and presented sample counts of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleEfficiency {
    pub used: u64,
    pub total: u64,
    pub fraction: f64,
}

impl SampleEfficiency {
    pub fn from_counts(used: u64, total: u64) -> Result<Self> {
        if total == 0 {
            return Err(invalid("sample efficiency of a run that presented no samples"));
        }
        if used > total {
            return Err(invalid(format!("{used} used of {total} presented")));
        }
        Ok(Self {
            used,
            total,
            fraction: used as f64 / total as f64,
        })
    }

    /// `used/total (pct%)` with four decimals, e.g. `103476/12000000 (0.8623%)`.
    pub fn display(&self) -> String {
        format!("{}/{} ({:.4}%)", self.used, self.total, 100.0 * self.fraction)
    }
}

pub fn sample_efficiency(state: &RegulationState) -> Result<SampleEfficiency> {
    SampleEfficiency::from_counts(state.used(), state.presented())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger(rows: &[(usize, usize, usize)]) -> PredictionLedger {
        let t: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let a: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let b: Vec<usize> = rows.iter().map(|r| r.2).collect();
        PredictionLedger::from_predictions(&t, &a, &b).unwrap()
    }

    #[test]
    fn success_rate_examples() {
        let l = ledger(&[(0, 1, 0), (1, 0, 1), (2, 2, 2)]);
        assert_eq!(l.success_rate(), Rate::Value(1.0));
        let l = ledger(&[(0, 1, 1), (1, 0, 0), (2, 2, 2)]);
        assert_eq!(l.success_rate(), Rate::Value(0.0));
        let perfect = ledger(&[(0, 0, 1), (1, 1, 1)]);
        assert_eq!(perfect.success_rate(), Rate::NotApplicable);
    }

    #[test]
    fn failure_rate_examples() {
        let l = ledger(&[(0, 0, 0), (1, 1, 1), (2, 0, 0)]);
        assert_eq!(l.failure_rate(), Rate::Value(0.0));
        let mut rows = vec![(1, 1, 1); 1000];
        for r in rows.iter_mut().take(3) {
            r.2 = 0;
        }
        assert_eq!(ledger(&rows).failure_rate(), Rate::Value(0.003));
    }

    #[test]
    fn efficiency_formatting() {
        let e = SampleEfficiency::from_counts(103_476, 12_000_000).unwrap();
        assert_eq!(e.display(), "103476/12000000 (0.8623%)");
        assert_eq!(SampleEfficiency::from_counts(10, 10).unwrap().fraction, 1.0);
        assert!(SampleEfficiency::from_counts(0, 0).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let e = LedgerEntry {
            id: 3,
            truth: 0,
            teacher: 0,
            student: 0,
        };
        assert!(PredictionLedger::new(vec![e, e]).is_err());
    }
}
