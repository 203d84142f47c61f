//! Text-prototype classifier heads and cosine-similarity prediction.

mod eval;
mod prompts;

use thiserror::Error;

use crate::embedding_store::{l2_norm, EmbeddingTable, Manifest, PromptCell};

pub use eval::{evaluate_step, select_top_k_prompts, ConfusionMatrix, EvalOptions, StepEvaluation};
pub use prompts::{read_class_names, read_templates, render_prompts, NameVariant, PromptSet, PLACEHOLDER};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("template {template} must contain exactly one `{{}}`: {text:?}")]
    MissingPlaceholder { template: usize, text: String },
    #[error("no prompt templates")]
    NoTemplates,
    #[error("class list is empty")]
    EmptyClassList,
    #[error("class name {0:?} listed twice")]
    DuplicateClassName(String),
    #[error("text embeddings do not cover the prompt x class grid: {0}")]
    IncompleteGrid(String),
    #[error("dimension mismatch: head has {expected}, input has {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("operation needs a pooled head")]
    NotPooled,
    #[error("decision pooling needs an unpooled head")]
    AlreadyPooled,
    #[error("prompt subset is empty")]
    EmptyPromptSubset,
    #[error("prompt {prompt} out of range ({num_prompts} prompts)")]
    PromptOutOfRange { prompt: usize, num_prompts: usize },
    #[error("k = {k} outside 1..={num_prompts}")]
    KOutOfRange { k: usize, num_prompts: usize },
    #[error("no test rows belong to the seen classes")]
    EmptyTestSet,
    #[error("head contains class {0}, which is not in the seen set")]
    UnseenLabelInHead(u32),
    #[error("seen class {0} has no text prototype")]
    MissingClassEmbedding(u32),
    #[error("label {0} is not a head class")]
    UnknownLabel(u32),
    #[error("table has no labels")]
    MissingLabels,
    #[error("prototype row {0} has zero norm")]
    ZeroNormRow(usize),
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("invalid head: {0}")]
    InvalidHead(String),
    #[error("i/o failure on {path}: {message}")]
    Io { path: String, message: String },
}

/// Per-class prototypes, optionally one set per prompt template.
///
/// Prototypes are stored as `[num_prompts][num_classes][dim]` and are always
/// unit-normalized; for an unpooled head each prompt slice is a complete
/// single-prompt classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    prototypes: Vec<f32>,
    norms: Vec<f64>,
    num_prompts: usize,
    class_ids: Vec<u32>,
    dim: usize,
    pooled: bool,
    temperature: f64,
}

impl ClassifierHead {
    /// Normalizes each row of `prototypes` (laid out prompt-major) and wraps
    /// them in a head with temperature 1.
    pub fn new(
        prototypes: Vec<f32>,
        dim: usize,
        num_prompts: usize,
        class_ids: Vec<u32>,
        pooled: bool,
    ) -> Result<Self, ClassifierError> {
        if dim == 0 || num_prompts == 0 || class_ids.is_empty() {
            return Err(ClassifierError::InvalidHead("empty head".into()));
        }
        if pooled && num_prompts != 1 {
            return Err(ClassifierError::InvalidHead("pooled heads hold one prompt slice".into()));
        }
        if prototypes.len() != num_prompts * class_ids.len() * dim {
            return Err(ClassifierError::InvalidHead(format!(
                "{} values for {num_prompts} prompts x {} classes x {dim}",
                prototypes.len(),
                class_ids.len()
            )));
        }
        let mut sorted = class_ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(ClassifierError::InvalidHead("duplicate class id".into()));
        }
        let mut data = Vec::with_capacity(prototypes.len());
        let mut norms = Vec::with_capacity(prototypes.len() / dim);
        for (i, row) in prototypes.chunks_exact(dim).enumerate() {
            let n = l2_norm(row);
            if n == 0.0 || !n.is_finite() {
                return Err(ClassifierError::ZeroNormRow(i));
            }
            let unit: Vec<f32> = row.iter().map(|&x| (f64::from(x) / n) as f32).collect();
            norms.push(l2_norm(&unit));
            data.extend(unit);
        }
        Ok(Self {
            prototypes: data,
            norms,
            num_prompts,
            class_ids,
            dim,
            pooled,
            temperature: 1.0,
        })
    }

    /// Unpooled head over the full prompt grid of a text-embedding table.
    ///
    /// Without `prompt_ids` the table is read as a single prompt whose row
    /// `i` is class `i`.
    pub fn from_text_table(table: &EmbeddingTable, manifest: &Manifest) -> Result<Self, ClassifierError> {
        let num_classes = manifest.class_names.len();
        if num_classes == 0 {
            return Err(ClassifierError::EmptyClassList);
        }
        let cells: Vec<PromptCell> = match &manifest.prompt_ids {
            Some(cells) => cells.clone(),
            None => (0..table.num_rows() as u32).map(|c| PromptCell(0, c)).collect(),
        };
        if cells.len() != table.num_rows() {
            return Err(ClassifierError::IncompleteGrid(format!(
                "{} prompt cells for {} rows",
                cells.len(),
                table.num_rows()
            )));
        }
        if !cells.len().is_multiple_of(num_classes) || cells.is_empty() {
            return Err(ClassifierError::IncompleteGrid(format!(
                "{} rows do not tile {num_classes} classes",
                cells.len()
            )));
        }
        let num_prompts = cells.len() / num_classes;
        let dim = table.dim();
        let mut grid = vec![None; cells.len()];
        for (row, cell) in cells.iter().enumerate() {
            if cell.prompt() >= num_prompts || cell.class() >= num_classes {
                return Err(ClassifierError::IncompleteGrid(format!(
                    "cell ({}, {}) outside {num_prompts}x{num_classes}",
                    cell.0, cell.1
                )));
            }
            let slot = &mut grid[cell.prompt() * num_classes + cell.class()];
            if slot.is_some() {
                return Err(ClassifierError::IncompleteGrid(format!(
                    "cell ({}, {}) appears twice",
                    cell.0, cell.1
                )));
            }
            *slot = Some(row);
        }
        let mut prototypes = Vec::with_capacity(cells.len() * dim);
        for slot in grid {
            // each slot is filled: cells.len() distinct in-range cells
            prototypes.extend_from_slice(table.row(slot.expect("grid complete")));
        }
        Self::new(
            prototypes,
            dim,
            num_prompts,
            (0..num_classes as u32).collect(),
            false,
        )
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self, ClassifierError> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(ClassifierError::InvalidTemperature(temperature));
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    pub fn is_pooled(&self) -> bool {
        self.pooled
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Unit prototype of column `col` under prompt `prompt`.
    pub fn prototype(&self, prompt: usize, col: usize) -> &[f32] {
        let row = prompt * self.class_ids.len() + col;
        &self.prototypes[row * self.dim..(row + 1) * self.dim]
    }

    /// Keeps only the columns whose class id is in `classes`, in the order
    /// given there.
    pub fn restrict(&self, classes: &[u32]) -> Result<Self, ClassifierError> {
        let cols = classes
            .iter()
            .map(|&c| {
                self.class_ids
                    .iter()
                    .position(|&k| k == c)
                    .ok_or(ClassifierError::MissingClassEmbedding(c))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let k = self.class_ids.len();
        let mut prototypes = Vec::with_capacity(self.num_prompts * cols.len() * self.dim);
        let mut norms = Vec::with_capacity(self.num_prompts * cols.len());
        for p in 0..self.num_prompts {
            for &col in &cols {
                prototypes.extend_from_slice(self.prototype(p, col));
                norms.push(self.norms[p * k + col]);
            }
        }
        Ok(Self {
            prototypes,
            norms,
            num_prompts: self.num_prompts,
            class_ids: classes.to_vec(),
            dim: self.dim,
            pooled: self.pooled,
            temperature: self.temperature,
        })
    }

    /// Pooled head made from a single prompt slice of an unpooled head.
    pub fn prompt_slice(&self, prompt: usize) -> Result<Self, ClassifierError> {
        self.check_prompt(prompt)?;
        let k = self.class_ids.len();
        let start = prompt * k * self.dim;
        Ok(Self {
            prototypes: self.prototypes[start..start + k * self.dim].to_vec(),
            norms: self.norms[prompt * k..(prompt + 1) * k].to_vec(),
            num_prompts: 1,
            class_ids: self.class_ids.clone(),
            dim: self.dim,
            pooled: true,
            temperature: self.temperature,
        })
    }

    fn check_prompt(&self, prompt: usize) -> Result<(), ClassifierError> {
        if prompt >= self.num_prompts {
            return Err(ClassifierError::PromptOutOfRange {
                prompt,
                num_prompts: self.num_prompts,
            });
        }
        Ok(())
    }

    fn check_dim(&self, v: &[f32]) -> Result<(), ClassifierError> {
        if v.len() != self.dim {
            return Err(ClassifierError::DimMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        Ok(())
    }

    /// Cosine similarity of `v` to every class under one prompt, written to `out`.
    fn cosine_scores(&self, prompt: usize, v: &[f32], v_norm: f64, out: &mut [f64]) {
        let k = self.class_ids.len();
        for (col, slot) in out.iter_mut().enumerate() {
            let dot: f64 = self
                .prototype(prompt, col)
                .iter()
                .zip(v)
                .map(|(&t, &x)| f64::from(t) * f64::from(x))
                .sum();
            *slot = dot / (self.norms[prompt * k + col] * v_norm);
        }
    }

    /// Raw similarity scores for `v`.
    ///
    /// Pooled heads score against their single prototype set. Unpooled heads
    /// average the per-prompt cosine vectors over `prompts` (all prompts when
    /// `None`).
    pub fn scores(&self, v: &[f32], prompts: Option<&[usize]>) -> Result<Vec<f64>, ClassifierError> {
        self.check_dim(v)?;
        let v_norm = l2_norm(v);
        if v_norm == 0.0 || !v_norm.is_finite() {
            return Err(ClassifierError::InvalidHead("image embedding has zero norm".into()));
        }
        let k = self.class_ids.len();
        let mut total = vec![0.0; k];
        if self.pooled {
            if prompts.is_some() {
                return Err(ClassifierError::AlreadyPooled);
            }
            self.cosine_scores(0, v, v_norm, &mut total);
            return Ok(total);
        }
        let all: Vec<usize>;
        let selected = match prompts {
            Some(p) => p,
            None => {
                all = (0..self.num_prompts).collect();
                &all
            }
        };
        if selected.is_empty() {
            return Err(ClassifierError::EmptyPromptSubset);
        }
        let mut scratch = vec![0.0; k];
        for &p in selected {
            self.check_prompt(p)?;
            self.cosine_scores(p, v, v_norm, &mut scratch);
            for (t, s) in total.iter_mut().zip(&scratch) {
                *t += s;
            }
        }
        let n = selected.len() as f64;
        total.iter_mut().for_each(|t| *t /= n);
        Ok(total)
    }
}

/// Probability vector and decision for one image embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub argmax_class: u32,
}

impl Prediction {
    pub fn from_scores(scores: Vec<f64>, class_ids: &[u32], temperature: f64) -> Self {
        let probabilities = softmax(&scores, temperature);
        let col = argmax_column(&scores, class_ids);
        Self {
            argmax_class: class_ids[col],
            scores,
            probabilities,
        }
    }
}

/// Column of the highest score; ties go to the lowest class id.
pub fn argmax_column(scores: &[f64], class_ids: &[u32]) -> usize {
    let mut best = 0;
    for col in 1..scores.len() {
        let (s, b) = (scores[col], scores[best]);
        if s > b || (s == b && class_ids[col] < class_ids[best]) {
            best = col;
        }
    }
    best
}

pub fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (temperature * (s - max)).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean of each class's per-prompt embeddings, renormalized to unit length.
pub fn build_head_embedding_pooling(
    text_table: &EmbeddingTable,
    manifest: &Manifest,
) -> Result<ClassifierHead, ClassifierError> {
    let grid = ClassifierHead::from_text_table(text_table, manifest)?;
    pool_embeddings(&grid)
}

/// Embedding pooling applied to an unpooled head.
pub fn pool_embeddings(head: &ClassifierHead) -> Result<ClassifierHead, ClassifierError> {
    if head.pooled {
        return Ok(head.clone());
    }
    let k = head.num_classes();
    let mut sums = vec![0.0f64; k * head.dim];
    for p in 0..head.num_prompts {
        for col in 0..k {
            let acc = &mut sums[col * head.dim..(col + 1) * head.dim];
            for (a, &x) in acc.iter_mut().zip(head.prototype(p, col)) {
                *a += f64::from(x);
            }
        }
    }
    let n = head.num_prompts as f64;
    let means: Vec<f32> = sums.iter().map(|s| (s / n) as f32).collect();
    ClassifierHead::new(means, head.dim, 1, head.class_ids.clone(), true)?
        .with_temperature(head.temperature)
}

/// Softmax over cosine similarities to a pooled head.
pub fn predict(head: &ClassifierHead, v: &[f32]) -> Result<Prediction, ClassifierError> {
    if !head.pooled {
        return Err(ClassifierError::NotPooled);
    }
    let scores = head.scores(v, None)?;
    Ok(Prediction::from_scores(scores, &head.class_ids, head.temperature))
}

/// Averages per-prompt cosine scores over `prompt_subset` (all prompts when
/// `None`), then applies the softmax.
pub fn predict_decision_pooling(
    head: &ClassifierHead,
    v: &[f32],
    prompt_subset: Option<&[usize]>,
) -> Result<Prediction, ClassifierError> {
    if head.pooled {
        return Err(ClassifierError::AlreadyPooled);
    }
    let scores = head.scores(v, prompt_subset)?;
    Ok(Prediction::from_scores(scores, &head.class_ids, head.temperature))
}
