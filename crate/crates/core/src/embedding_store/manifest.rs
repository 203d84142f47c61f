use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingTable, StoreError};

/// `(prompt index, class index)` of one text-embedding row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCell(pub u32, pub u32);

impl PromptCell {
    pub fn prompt(self) -> usize {
        self.0 as usize
    }

    pub fn class(self) -> usize {
        self.1 as usize
    }
}

/// Human-readable sidecar describing an embedding file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_names: Option<Vec<String>>,
    pub source_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_ids: Option<Vec<PromptCell>>,
    /// Anything else the producer recorded (preprocessing, digests, ...).
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn new(class_names: Vec<String>, source_model: impl Into<String>) -> Self {
        Self {
            class_names,
            domain_names: None,
            source_model: source_model.into(),
            prompt_ids: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let text = fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| StoreError::InvalidManifest(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        self.validate()?;
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| StoreError::InvalidManifest(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| StoreError::io(path, e))
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if let Some(cells) = &self.prompt_ids {
            self.grid_prompts(cells)?;
        }
        Ok(())
    }

    /// Number of prompts in the text grid: the declared count when
    /// `prompt_ids` is present, otherwise one.
    pub fn num_prompts(&self) -> usize {
        match &self.prompt_ids {
            Some(cells) => cells.iter().map(|c| c.prompt() + 1).max().unwrap_or(0),
            None => 1,
        }
    }

    /// Checks that `cells` enumerate every (prompt, class) pair exactly once.
    fn grid_prompts(&self, cells: &[PromptCell]) -> Result<usize, StoreError> {
        let num_classes = self.class_names.len();
        if num_classes == 0 {
            return Err(StoreError::InvalidManifest("empty class list".into()));
        }
        if !cells.len().is_multiple_of(num_classes) {
            return Err(StoreError::InvalidManifest(format!(
                "{} prompt cells do not form a grid over {num_classes} classes",
                cells.len()
            )));
        }
        let num_prompts = cells.len() / num_classes;
        let mut seen = vec![false; cells.len()];
        for cell in cells {
            if cell.prompt() >= num_prompts || cell.class() >= num_classes {
                return Err(StoreError::InvalidManifest(format!(
                    "prompt cell ({}, {}) outside {num_prompts}x{num_classes} grid",
                    cell.0, cell.1
                )));
            }
            let slot = &mut seen[cell.prompt() * num_classes + cell.class()];
            if *slot {
                return Err(StoreError::InvalidManifest(format!(
                    "prompt cell ({}, {}) listed twice",
                    cell.0, cell.1
                )));
            }
            *slot = true;
        }
        Ok(num_prompts)
    }

    /// Every label (and domain id) in `table` must index into this manifest.
    pub fn check_table(&self, table: &EmbeddingTable) -> Result<(), StoreError> {
        if let Some(labels) = table.labels() {
            if let Some(&bad) = labels.iter().find(|&&l| l as usize >= self.class_names.len()) {
                return Err(StoreError::InvariantViolation(format!(
                    "class id {bad} but manifest lists {} classes",
                    self.class_names.len()
                )));
            }
        }
        if let (Some(domains), Some(names)) = (table.domain_ids(), &self.domain_names) {
            if let Some(&bad) = domains.iter().find(|&&d| d as usize >= names.len()) {
                return Err(StoreError::InvariantViolation(format!(
                    "domain id {bad} but manifest lists {} domains",
                    names.len()
                )));
            }
        }
        if let Some(cells) = &self.prompt_ids {
            if cells.len() != table.num_rows() {
                return Err(StoreError::InvariantViolation(format!(
                    "manifest maps {} prompt rows but table has {}",
                    cells.len(),
                    table.num_rows()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn full_grid(prompts: u32, classes: u32) -> Vec<PromptCell> {
        (0..prompts)
            .flat_map(|p| (0..classes).map(move |c| PromptCell(p, c)))
            .collect()
    }

    #[test]
    fn full_grid_is_accepted() {
        let mut m = Manifest::new(names(3), "test-model");
        m.prompt_ids = Some(full_grid(2, 3));
        m.validate().unwrap();
        assert_eq!(m.num_prompts(), 2);
    }

    #[test]
    fn duplicate_cell_is_rejected() {
        let mut m = Manifest::new(names(2), "test-model");
        m.prompt_ids = Some(vec![PromptCell(0, 0), PromptCell(0, 0)]);
        assert!(matches!(m.validate(), Err(StoreError::InvalidManifest(_))));
    }

    #[test]
    fn ragged_grid_is_rejected() {
        let mut m = Manifest::new(names(2), "test-model");
        m.prompt_ids = Some(vec![PromptCell(0, 0), PromptCell(0, 1), PromptCell(1, 0)]);
        assert!(m.validate().is_err());
    }

    #[test]
    fn labels_must_index_class_names() {
        let m = Manifest::new(names(2), "test-model");
        let t = EmbeddingTable::new(vec![1.0, 1.0], 1, Some(vec![0, 2]), None, false).unwrap();
        assert!(m.check_table(&t).is_err());
    }

    #[test]
    fn json_round_trip_keeps_extra_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.manifest.json");
        let mut m = Manifest::new(names(2), "test-model");
        m.domain_names = Some(vec!["s1".into(), "s2".into()]);
        m.extra
            .insert("preprocessing".into(), serde_json::json!("bicubic/center-crop"));
        m.save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"preprocessing\""));
        assert_eq!(Manifest::load(&path).unwrap(), m);
    }
}
