//! Synthetic embedding sets: Gaussian clusters around random unit
//! prototypes, with matching text-embedding grids.
//!
//! Used by the test suites and by `czs synth` to produce a runnable demo.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding_store::{l2_normalize, manifest_path, save_table, EmbeddingTable, Manifest, PromptCell, StoreError};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub test_per_class: usize,
    pub train_per_class: usize,
    pub num_prompts: usize,
    pub num_domains: usize,
    /// Per-coordinate std of image noise around the class prototype.
    pub noise: f32,
    /// Per-coordinate std of each prompt's deviation from the prototype.
    pub prompt_noise: f32,
    /// Per-coordinate std of each domain's offset vector.
    pub domain_shift: f32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 100,
            dim: 64,
            test_per_class: 50,
            train_per_class: 20,
            num_prompts: 1,
            num_domains: 1,
            noise: 0.3,
            prompt_noise: 0.05,
            domain_shift: 0.0,
            seed: 0,
        }
    }
}

pub struct SyntheticData {
    /// Unit prototypes, `num_classes x dim`.
    pub prototypes: Vec<Vec<f32>>,
    pub text: EmbeddingTable,
    pub text_manifest: Manifest,
    pub test: EmbeddingTable,
    pub train: EmbeddingTable,
    pub image_manifest: Manifest,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, std: f32) -> Vec<f32> {
    (0..dim)
        .map(|_| {
            let z: f32 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}

fn unit(v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    v.into_iter().map(|x| (f64::from(x) / n) as f32).collect()
}

fn add(a: &[f32], b: &[f32]) -> Vec<f32> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Image split: `per_class` rows per class, domains assigned round-robin.
fn image_split(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticSpec,
    prototypes: &[Vec<f32>],
    shifts: &[Vec<f32>],
    per_class: usize,
) -> Result<EmbeddingTable, StoreError> {
    let mut rows = Vec::with_capacity(spec.num_classes * per_class);
    let mut labels = Vec::with_capacity(rows.capacity());
    let mut domains = Vec::with_capacity(rows.capacity());
    for (c, proto) in prototypes.iter().enumerate() {
        for i in 0..per_class {
            let d = i % spec.num_domains;
            let noisy = add(&add(proto, &gaussian(rng, spec.dim, spec.noise)), &shifts[d]);
            rows.push(noisy);
            labels.push(c as u32);
            domains.push(d as u32);
        }
    }
    let domain_ids = (spec.num_domains > 1).then_some(domains);
    let table = EmbeddingTable::new(rows.concat(), spec.dim, Some(labels), domain_ids, false)?;
    if table.num_rows() == 0 {
        return Ok(table);
    }
    l2_normalize(&table)
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData, StoreError> {
    if spec.num_classes == 0 || spec.dim == 0 || spec.num_prompts == 0 || spec.num_domains == 0 {
        return Err(StoreError::InvariantViolation("synthetic spec has an empty axis".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes: Vec<Vec<f32>> = (0..spec.num_classes)
        .map(|_| unit(gaussian(&mut rng, spec.dim, 1.0)))
        .collect();
    let shifts: Vec<Vec<f32>> = (0..spec.num_domains)
        .map(|_| gaussian(&mut rng, spec.dim, spec.domain_shift))
        .collect();

    let mut text_rows = Vec::with_capacity(spec.num_prompts * spec.num_classes);
    let mut cells = Vec::with_capacity(text_rows.capacity());
    for p in 0..spec.num_prompts {
        for (c, proto) in prototypes.iter().enumerate() {
            let row = if spec.num_prompts == 1 {
                proto.clone()
            } else {
                add(proto, &gaussian(&mut rng, spec.dim, spec.prompt_noise))
            };
            text_rows.push(unit(row));
            cells.push(PromptCell(p as u32, c as u32));
        }
    }
    let text = l2_normalize(&EmbeddingTable::new(text_rows.concat(), spec.dim, None, None, false)?)?;

    let test = image_split(&mut rng, spec, &prototypes, &shifts, spec.test_per_class)?;
    let train = image_split(&mut rng, spec, &prototypes, &shifts, spec.train_per_class)?;

    let class_names: Vec<String> = (0..spec.num_classes).map(|c| format!("class_{c:03}")).collect();
    let mut text_manifest = Manifest::new(class_names.clone(), "synthetic-gaussian");
    text_manifest.prompt_ids = Some(cells);
    let mut image_manifest = Manifest::new(class_names, "synthetic-gaussian");
    if spec.num_domains > 1 {
        image_manifest.domain_names = Some((0..spec.num_domains).map(|d| format!("domain_{d}")).collect());
    }
    Ok(SyntheticData {
        prototypes,
        text,
        text_manifest,
        test,
        train,
        image_manifest,
    })
}

/// Paths of a dataset written by [`write`].
pub struct SyntheticPaths {
    pub test: PathBuf,
    pub train: PathBuf,
    pub text: PathBuf,
}

/// Writes `synthetic_test`, `synthetic_train` and `synthetic_texts` tables
/// (with labels and manifests) into `dir`.
pub fn write(data: &SyntheticData, dir: &Path) -> Result<SyntheticPaths, StoreError> {
    std::fs::create_dir_all(dir).map_err(|e| StoreError::IoFailure {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let paths = SyntheticPaths {
        test: dir.join("synthetic_test.cemb"),
        train: dir.join("synthetic_train.cemb"),
        text: dir.join("synthetic_texts.cemb"),
    };
    save_table(&data.test, &paths.test)?;
    data.image_manifest.save(&manifest_path(&paths.test))?;
    save_table(&data.train, &paths.train)?;
    data.image_manifest.save(&manifest_path(&paths.train))?;
    save_table(&data.text, &paths.text)?;
    data.text_manifest.save(&manifest_path(&paths.text))?;
    Ok(paths)
}
