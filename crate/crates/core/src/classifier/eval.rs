use std::collections::BTreeSet;
use std::thread;

use serde::{Deserialize, Serialize};

use super::{argmax_column, ClassifierError, ClassifierHead};
use crate::embedding_store::EmbeddingTable;

/// How a step is scored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Prompt subset for decision pooling; `None` uses every prompt.
    /// Must be `None` for pooled heads.
    pub prompts: Option<Vec<usize>>,
    /// Threads to fan the test rows out to; 0 and 1 both mean inline.
    pub workers: usize,
    /// Also count top-5 hits.
    pub top5: bool,
}

/// Counts of (true class, predicted class) over the seen classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Row/column order, ascending.
    pub class_ids: Vec<u32>,
    /// `counts[i][j]`: rows of class `class_ids[i]` predicted as `class_ids[j]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    fn zeros(class_ids: Vec<u32>) -> Self {
        let n = class_ids.len();
        Self {
            class_ids,
            counts: vec![vec![0; n]; n],
        }
    }

    fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, other_row) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in row.iter_mut().zip(other_row) {
                *a += b;
            }
        }
    }

    pub fn size(&self) -> usize {
        self.class_ids.len()
    }

    pub fn trace(&self) -> u64 {
        self.counts.iter().enumerate().map(|(i, r)| r[i]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// `trace / total`; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            total => self.trace() as f64 / total as f64,
        }
    }

    /// Test rows per true class.
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Predictions per class.
    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.size())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    /// Header row of predicted class ids, then one row per true class led by
    /// its id.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in &self.class_ids {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (c, row) in self.class_ids.iter().zip(&self.counts) {
            out.push_str(&c.to_string());
            for n in row {
                out.push_str(&format!(",{n}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn is_square(&self) -> bool {
        self.counts.len() == self.class_ids.len()
            && self.counts.iter().all(|r| r.len() == self.class_ids.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepEvaluation {
    pub num_rows: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub top5_correct: Option<u64>,
    pub confusion: ConfusionMatrix,
}

impl StepEvaluation {
    pub fn top5_accuracy(&self) -> Option<f64> {
        self.top5_correct.map(|n| n as f64 / self.num_rows as f64)
    }
}

/// Scores every test row whose label is in `seen` and tallies top-1 hits.
///
/// `head` must hold exactly the seen classes.
pub fn evaluate_step(
    head: &ClassifierHead,
    test: &EmbeddingTable,
    seen: &[u32],
    opts: &EvalOptions,
) -> Result<StepEvaluation, ClassifierError> {
    let seen: BTreeSet<u32> = seen.iter().copied().collect();
    if let Some(&c) = head.class_ids().iter().find(|c| !seen.contains(c)) {
        return Err(ClassifierError::UnseenLabelInHead(c));
    }
    if let Some(&c) = seen.iter().find(|c| !head.class_ids().contains(c)) {
        return Err(ClassifierError::MissingClassEmbedding(c));
    }
    if test.dim() != head.dim() {
        return Err(ClassifierError::DimMismatch {
            expected: head.dim(),
            found: test.dim(),
        });
    }
    let labels = test.labels().ok_or(ClassifierError::MissingLabels)?;
    let rows: Vec<usize> = (0..test.num_rows())
        .filter(|&i| seen.contains(&labels[i]))
        .collect();
    if rows.is_empty() {
        return Err(ClassifierError::EmptyTestSet);
    }
    let seen: Vec<u32> = seen.into_iter().collect();
    // head column -> confusion index
    let col_index: Vec<usize> = head
        .class_ids()
        .iter()
        .map(|c| seen.binary_search(c).expect("head classes are seen"))
        .collect();

    let tally = |chunk: &[usize]| -> Result<(ConfusionMatrix, u64), ClassifierError> {
        let mut confusion = ConfusionMatrix::zeros(seen.clone());
        let mut top5 = 0u64;
        for &i in chunk {
            let scores = head.scores(test.row(i), opts.prompts.as_deref())?;
            let predicted = col_index[argmax_column(&scores, head.class_ids())];
            let truth = seen.binary_search(&labels[i]).expect("filtered to seen");
            confusion.counts[truth][predicted] += 1;
            if opts.top5 && rank_of(&scores, head.class_ids(), labels[i]) < 5 {
                top5 += 1;
            }
        }
        Ok((confusion, top5))
    };

    let workers = opts.workers.max(1).min(rows.len());
    let chunk_len = rows.len().div_ceil(workers);
    let partials: Vec<Result<(ConfusionMatrix, u64), ClassifierError>> = if workers == 1 {
        vec![tally(&rows)]
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = rows
                .chunks(chunk_len)
                .map(|chunk| s.spawn(move || tally(chunk)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        })
    };

    let mut confusion = ConfusionMatrix::zeros(seen);
    let mut top5 = 0u64;
    for partial in partials {
        let (c, t) = partial?;
        confusion.merge(&c);
        top5 += t;
    }
    let correct = confusion.trace();
    Ok(StepEvaluation {
        num_rows: rows.len() as u64,
        correct,
        accuracy: confusion.accuracy(),
        top5_correct: opts.top5.then_some(top5),
        confusion,
    })
}

/// Number of classes ranked strictly ahead of `class` under the argmax
/// tie rule (higher score, or equal score and lower class id).
fn rank_of(scores: &[f64], class_ids: &[u32], class: u32) -> usize {
    let col = class_ids
        .iter()
        .position(|&c| c == class)
        .expect("class is in head");
    let s = scores[col];
    scores
        .iter()
        .zip(class_ids)
        .filter(|&(&o, &c)| o > s || (o == s && c < class))
        .count()
}

/// The `k` prompts whose single-prompt heads classify `calibration` best.
///
/// Ranked by top-1 hit count, ties to the lower prompt index.
pub fn select_top_k_prompts(
    head: &ClassifierHead,
    calibration: &EmbeddingTable,
    k: usize,
) -> Result<Vec<usize>, ClassifierError> {
    if head.is_pooled() {
        return Err(ClassifierError::AlreadyPooled);
    }
    let num_prompts = head.num_prompts();
    if k == 0 || k > num_prompts {
        return Err(ClassifierError::KOutOfRange { k, num_prompts });
    }
    if calibration.dim() != head.dim() {
        return Err(ClassifierError::DimMismatch {
            expected: head.dim(),
            found: calibration.dim(),
        });
    }
    let labels = calibration.labels().ok_or(ClassifierError::MissingLabels)?;
    if let Some(&bad) = labels.iter().find(|l| !head.class_ids().contains(l)) {
        return Err(ClassifierError::UnknownLabel(bad));
    }
    let mut hits = vec![0u64; num_prompts];
    for (i, &label) in labels.iter().enumerate() {
        let v = calibration.row(i);
        for (p, h) in hits.iter_mut().enumerate() {
            let scores = head.scores(v, Some(&[p]))?;
            if head.class_ids()[argmax_column(&scores, head.class_ids())] == label {
                *h += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..num_prompts).collect();
    order.sort_by(|&a, &b| hits[b].cmp(&hits[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}
