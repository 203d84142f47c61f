use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::embedding_store::PromptCell;

pub const PLACEHOLDER: &str = "{}";

/// Which class-name list the prompts were rendered from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NameVariant {
    #[default]
    Default,
    Curated,
    FirstSynonym,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    templates: Vec<String>,
    class_names: Vec<String>,
    variant: NameVariant,
}

impl PromptSet {
    pub fn new(
        templates: Vec<String>,
        class_names: Vec<String>,
        variant: NameVariant,
    ) -> Result<Self, ClassifierError> {
        if templates.is_empty() {
            return Err(ClassifierError::NoTemplates);
        }
        for (i, t) in templates.iter().enumerate() {
            if t.matches(PLACEHOLDER).count() != 1 {
                return Err(ClassifierError::MissingPlaceholder {
                    template: i,
                    text: t.clone(),
                });
            }
        }
        if class_names.is_empty() {
            return Err(ClassifierError::EmptyClassList);
        }
        let mut unique = BTreeSet::new();
        if let Some(dup) = class_names.iter().find(|n| !unique.insert(n.as_str())) {
            return Err(ClassifierError::DuplicateClassName(dup.clone()));
        }
        Ok(Self {
            templates,
            class_names,
            variant,
        })
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn variant(&self) -> NameVariant {
        self.variant
    }

    /// Row `r` of the rendered list corresponds to this cell.
    pub fn cell_of(&self, row: usize) -> PromptCell {
        let k = self.class_names.len();
        PromptCell((row / k) as u32, (row % k) as u32)
    }

    /// The `prompt_ids` grid matching [`render_prompts`] order.
    pub fn grid(&self) -> Vec<PromptCell> {
        (0..self.templates.len() * self.class_names.len())
            .map(|r| self.cell_of(r))
            .collect()
    }
}

/// Template-major rendering: all classes for template 0, then template 1, ...
pub fn render_prompts(prompts: &PromptSet) -> Vec<String> {
    prompts
        .templates
        .iter()
        .flat_map(|t| {
            prompts
                .class_names
                .iter()
                .map(move |name| t.replacen(PLACEHOLDER, name, 1))
        })
        .collect()
}

fn read_lines(path: &Path) -> Result<Vec<String>, ClassifierError> {
    let text = fs::read_to_string(path).map_err(|e| ClassifierError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .collect())
}

/// One template per line.
pub fn read_templates(path: &Path) -> Result<Vec<String>, ClassifierError> {
    read_lines(path)
}

/// One class name per line; line number is the class id.
pub fn read_class_names(path: &Path) -> Result<Vec<String>, ClassifierError> {
    read_lines(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(templates: &[&str], classes: &[&str]) -> Result<PromptSet, ClassifierError> {
        PromptSet::new(
            templates.iter().map(|s| s.to_string()).collect(),
            classes.iter().map(|s| s.to_string()).collect(),
            NameVariant::Default,
        )
    }

    #[test]
    fn renders_single_prompt() {
        let p = set(&["a photo of a {}."], &["dog"]).unwrap();
        assert_eq!(render_prompts(&p), vec!["a photo of a dog."]);
    }

    #[test]
    fn template_major_order() {
        let p = set(&["a bad photo of a {}.", "a good photo of a {}."], &["cat", "dog", "emu"]).unwrap();
        assert_eq!(
            render_prompts(&p),
            vec![
                "a bad photo of a cat.",
                "a bad photo of a dog.",
                "a bad photo of a emu.",
                "a good photo of a cat.",
                "a good photo of a dog.",
                "a good photo of a emu.",
            ]
        );
    }

    #[test]
    fn rendered_rows_invert_to_full_grid() {
        let templates: Vec<String> = (0..4).map(|i| format!("t{i} <{{}}>")).collect();
        let classes: Vec<String> = (0..5).map(|i| format!("class{i}")).collect();
        let p = PromptSet::new(templates.clone(), classes.clone(), NameVariant::Curated).unwrap();
        let rendered = render_prompts(&p);
        let mut covered = [false; 20];
        for (row, text) in rendered.iter().enumerate() {
            // parse the rendered text back to (template, class)
            let t = text[1..text.find(' ').unwrap()].parse::<usize>().unwrap();
            let name = &text[text.find('<').unwrap() + 1..text.len() - 1];
            let c = classes.iter().position(|n| n == name).unwrap();
            assert_eq!(p.cell_of(row), PromptCell(t as u32, c as u32));
            assert!(!covered[t * 5 + c]);
            covered[t * 5 + c] = true;
        }
        assert!(covered.iter().all(|&c| c));
        assert_eq!(p.grid().len(), 20);
    }

    #[test]
    fn placeholder_count_enforced() {
        assert!(matches!(set(&["no slot"], &["a"]), Err(ClassifierError::MissingPlaceholder { template: 0, .. })));
        assert!(matches!(set(&["{} and {}"], &["a"]), Err(ClassifierError::MissingPlaceholder { .. })));
    }

    #[test]
    fn class_names_validated() {
        assert!(matches!(set(&["{}"], &[]), Err(ClassifierError::EmptyClassList)));
        assert!(matches!(set(&["{}"], &["a", "a"]), Err(ClassifierError::DuplicateClassName(_))));
    }

    #[test]
    fn reads_line_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("templates.txt");
        fs::write(&path, "a photo of a {}.\r\n\nitap of a {}.\n").unwrap();
        assert_eq!(read_templates(&path).unwrap(), vec!["a photo of a {}.", "itap of a {}."]);
    }
}
