//! Benchmark manifest loading, validation, subsetting, and fixture synthesis.
//!
//! A manifest is a directory holding `manifest.json` plus image files at
//! relative paths. Ground-truth profiles are parsed through the taxonomy at
//! load time; image bytes are referenced by relative path and sha256 digest,
//! never embedded.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::taxonomy::{
    self, AttributeId, AttributeKind, AttributeProfile, AttributeSpec, TaxonomyDoc,
};

pub const MANIFEST_SCHEMA_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Reference to one image file: relative path plus content digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: String,
    pub sha256: String,
    pub media_type: String,
}

impl ImageRef {
    /// Relative paths only: no roots, no `..` components.
    pub fn path_is_safe(&self) -> bool {
        let p = Path::new(&self.path);
        !p.components().any(|c| {
            matches!(
                c,
                Component::RootDir | Component::Prefix(_) | Component::ParentDir
            )
        })
    }
}

/// One person's curated image set plus complete ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndividualRecord {
    pub individual_id: String,
    pub occupation_tag: String,
    /// Order is significant: it defines image indexing for the pipeline.
    pub images: Vec<ImageRef>,
    pub ground_truth: AttributeProfile,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub schema_version: String,
    pub individuals: Vec<IndividualRecord>,
    pub taxonomy: TaxonomyDoc,
    /// Directory the manifest was loaded from; image paths resolve against it.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn total_images(&self) -> usize {
        self.individuals.iter().map(|r| r.images.len()).sum()
    }

    pub fn individual(&self, id: &str) -> Option<&IndividualRecord> {
        self.individuals.iter().find(|r| r.individual_id == id)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest parse error: {0}")]
    Parse(String),
    #[error("unsupported schema_version {got:?}, expected {expected:?}")]
    SchemaVersionMismatch { got: String, expected: String },
    #[error("invalid ground truth for individual {individual_id}: {detail}")]
    ProfileInvalid {
        individual_id: String,
        detail: String,
    },
    #[error("bad image count {k} for record with {available} images")]
    BadCount { k: usize, available: usize },
}

// On-disk JSON shape. Ground truth is stored as canonical text per attribute.
#[derive(Serialize, Deserialize)]
struct ManifestFile {
    schema_version: String,
    individuals: Vec<IndividualFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    taxonomy_overrides: Option<TaxonomyDoc>,
}

#[derive(Serialize, Deserialize)]
struct IndividualFile {
    individual_id: String,
    occupation_tag: String,
    images: Vec<ImageRef>,
    ground_truth: BTreeMap<AttributeId, String>,
}

/// Load and materialize a manifest, parsing ground truth through the taxonomy.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let base_dir = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let raw = fs::read_to_string(&manifest_path).map_err(|source| DatasetError::Io {
        path: manifest_path.clone(),
        source,
    })?;
    let file: ManifestFile =
        serde_json::from_str(&raw).map_err(|e| DatasetError::Parse(e.to_string()))?;
    if file.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(DatasetError::SchemaVersionMismatch {
            got: file.schema_version,
            expected: MANIFEST_SCHEMA_VERSION.to_string(),
        });
    }
    let taxonomy = file.taxonomy_overrides.unwrap_or_else(TaxonomyDoc::builtin);

    let mut seen_ids = std::collections::BTreeSet::new();
    let mut individuals = Vec::with_capacity(file.individuals.len());
    for ind in file.individuals {
        if !seen_ids.insert(ind.individual_id.clone()) {
            return Err(DatasetError::Parse(format!(
                "duplicate individual_id {:?}",
                ind.individual_id
            )));
        }
        if ind.images.is_empty() {
            return Err(DatasetError::Parse(format!(
                "individual {:?} has no images",
                ind.individual_id
            )));
        }
        for img in &ind.images {
            if !img.path_is_safe() {
                return Err(DatasetError::Parse(format!(
                    "individual {:?}: unsafe image path {:?}",
                    ind.individual_id, img.path
                )));
            }
        }
        let mut profile = AttributeProfile::new();
        for (id, raw_value) in &ind.ground_truth {
            let spec = taxonomy::spec_of(&taxonomy.attributes, *id).ok_or_else(|| {
                DatasetError::ProfileInvalid {
                    individual_id: ind.individual_id.clone(),
                    detail: format!("{id} not in taxonomy"),
                }
            })?;
            let value = taxonomy::parse_value(spec, raw_value).map_err(|e| {
                DatasetError::ProfileInvalid {
                    individual_id: ind.individual_id.clone(),
                    detail: e.to_string(),
                }
            })?;
            profile.set(*id, value);
        }
        individuals.push(IndividualRecord {
            individual_id: ind.individual_id,
            occupation_tag: ind.occupation_tag,
            images: ind.images,
            ground_truth: profile,
        });
    }
    Ok(DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION.to_string(),
        individuals,
        taxonomy,
        base_dir,
    })
}

/// Serialize a manifest back to `manifest.json` under `dir`.
pub fn save_manifest(manifest: &DatasetManifest, dir: &Path) -> Result<PathBuf, DatasetError> {
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let file = ManifestFile {
        schema_version: manifest.schema_version.clone(),
        individuals: manifest
            .individuals
            .iter()
            .map(|r| IndividualFile {
                individual_id: r.individual_id.clone(),
                occupation_tag: r.occupation_tag.clone(),
                images: r.images.clone(),
                ground_truth: r
                    .ground_truth
                    .entries
                    .iter()
                    .map(|(id, v)| (*id, v.render()))
                    .collect(),
            })
            .collect(),
        taxonomy_overrides: Some(manifest.taxonomy.clone()),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&file).expect("manifest serializes");
    fs::write(&path, json.as_bytes()).map_err(|source| DatasetError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// One validation finding, tied to an individual.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Finding {
    ImageCountMismatch {
        individual_id: String,
        expected: usize,
        got: usize,
    },
    HashMismatch {
        individual_id: String,
        path: String,
    },
    MissingImageFile {
        individual_id: String,
        path: String,
    },
    IncompleteGroundTruth {
        individual_id: String,
        missing: Vec<AttributeId>,
    },
    EmptyOccupationTag {
        individual_id: String,
    },
    ProfileViolation {
        individual_id: String,
        detail: String,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub individuals: usize,
    pub images: usize,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Check per-individual image counts, file hashes, ground-truth completeness,
/// and occupation tags. Strict mode additionally requires exactly 10 images
/// per individual (the published dataset scale).
pub fn validate_manifest(manifest: &DatasetManifest, strict_collection_size: bool) -> ValidationReport {
    let mut report = ValidationReport {
        individuals: manifest.individuals.len(),
        images: manifest.total_images(),
        findings: Vec::new(),
    };
    for record in &manifest.individuals {
        let id = &record.individual_id;
        if strict_collection_size && record.images.len() != 10 {
            report.findings.push(Finding::ImageCountMismatch {
                individual_id: id.clone(),
                expected: 10,
                got: record.images.len(),
            });
        }
        for img in &record.images {
            let full = manifest.base_dir.join(&img.path);
            match fs::read(&full) {
                Ok(bytes) => {
                    let digest = hex::encode(Sha256::digest(&bytes));
                    if digest != img.sha256 {
                        report.findings.push(Finding::HashMismatch {
                            individual_id: id.clone(),
                            path: img.path.clone(),
                        });
                    }
                }
                Err(_) => report.findings.push(Finding::MissingImageFile {
                    individual_id: id.clone(),
                    path: img.path.clone(),
                }),
            }
        }
        let missing = record.ground_truth.missing();
        if !missing.is_empty() {
            report.findings.push(Finding::IncompleteGroundTruth {
                individual_id: id.clone(),
                missing,
            });
        }
        if record.occupation_tag.trim().is_empty() {
            report.findings.push(Finding::EmptyOccupationTag {
                individual_id: id.clone(),
            });
        }
        for violation in
            taxonomy::validate_profile(&record.ground_truth, &manifest.taxonomy.attributes)
        {
            report.findings.push(Finding::ProfileViolation {
                individual_id: id.clone(),
                detail: format!("{}: {:?}", violation.attribute, violation.rule),
            });
        }
    }
    report
}

/// Deterministic pseudo-random subset of `k` images, preserving original
/// relative order. The same (record, k, seed) always yields the same subset.
pub fn subset_images(
    record: &IndividualRecord,
    k: usize,
    seed: u64,
) -> Result<IndividualRecord, DatasetError> {
    let n = record.images.len();
    if k == 0 || k > n {
        return Err(DatasetError::BadCount { k, available: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = sample(&mut rng, n, k).into_vec();
    indices.sort_unstable();
    let images = indices.iter().map(|&i| record.images[i].clone()).collect();
    Ok(IndividualRecord {
        images,
        ..record.clone()
    })
}

const FIXTURE_REGIONS: &[&str] = &[
    "East Asia",
    "Western Europe",
    "North America",
    "Southeast Asia",
    "South America",
];
const FIXTURE_OCCUPATIONS: &[&str] = &[
    "teacher",
    "software engineer",
    "nurse",
    "chef",
    "photographer",
    "accountant",
];
const FIXTURE_MBTI: &[&str] = &["INTJ", "ENFP", "ISTP", "ESFJ", "INFP", "ENTJ"];

/// Generate a small synthetic manifest under `out_dir`: deterministic byte
/// blobs as stand-in images, plus complete randomized-but-valid ground truth.
/// Byte-identical output for the same (seed, n, k).
pub fn synthesize_fixture(
    out_dir: &Path,
    seed: u64,
    n_individuals: usize,
    images_per_individual: usize,
) -> Result<DatasetManifest, DatasetError> {
    if n_individuals == 0 || images_per_individual == 0 {
        return Err(DatasetError::BadCount {
            k: n_individuals.min(images_per_individual),
            available: 1,
        });
    }
    fs::create_dir_all(out_dir).map_err(|source| DatasetError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let taxonomy = TaxonomyDoc::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut individuals = Vec::with_capacity(n_individuals);
    for person in 0..n_individuals {
        let individual_id = format!("ind{person:03}");
        let img_dir = out_dir.join("images").join(&individual_id);
        fs::create_dir_all(&img_dir).map_err(|source| DatasetError::Io {
            path: img_dir.clone(),
            source,
        })?;
        let mut images = Vec::with_capacity(images_per_individual);
        for i in 0..images_per_individual {
            // Tiny deterministic blob; real pixels are unnecessary because
            // mock backends key on content hash.
            let mut blob = format!("HEIMG seed={seed} person={person} img={i} ").into_bytes();
            let filler: Vec<u8> = (0..32).map(|_| rng.gen()).collect();
            blob.extend_from_slice(&filler);
            let rel = format!("images/{individual_id}/img{i:02}.bin");
            let full = out_dir.join(&rel);
            fs::write(&full, &blob).map_err(|source| DatasetError::Io {
                path: full.clone(),
                source,
            })?;
            images.push(ImageRef {
                path: rel,
                sha256: hex::encode(Sha256::digest(&blob)),
                media_type: "application/octet-stream".to_string(),
            });
        }
        let occupation = FIXTURE_OCCUPATIONS[rng.gen_range(0..FIXTURE_OCCUPATIONS.len())];
        let ground_truth = random_profile(&mut rng, &taxonomy.attributes, occupation);
        individuals.push(IndividualRecord {
            individual_id,
            occupation_tag: occupation.to_string(),
            images,
            ground_truth,
        });
    }
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION.to_string(),
        individuals,
        taxonomy,
        base_dir: out_dir.to_path_buf(),
    };
    save_manifest(&manifest, out_dir)?;
    Ok(manifest)
}

fn random_profile(
    rng: &mut ChaCha8Rng,
    taxonomy: &[AttributeSpec],
    occupation: &str,
) -> AttributeProfile {
    let mut profile = AttributeProfile::new();
    for spec in taxonomy {
        let raw = match spec.kind {
            AttributeKind::Qualitative => {
                let domain = spec.labels.as_deref().unwrap();
                domain[rng.gen_range(0..domain.len())].clone()
            }
            AttributeKind::Quantitative => rng
                .gen_range(spec.scale_min.unwrap()..=spec.scale_max.unwrap())
                .to_string(),
            AttributeKind::Ambiguous => match spec.id {
                AttributeId::AG => rng.gen_range(18..70).to_string(),
                AttributeId::RE => {
                    FIXTURE_REGIONS[rng.gen_range(0..FIXTURE_REGIONS.len())].to_string()
                }
                AttributeId::OC => occupation.to_string(),
                _ => FIXTURE_MBTI[rng.gen_range(0..FIXTURE_MBTI.len())].to_string(),
            },
        };
        let value = taxonomy::parse_value(spec, &raw).expect("fixture values are valid");
        profile.set(spec.id, value);
    }
    profile
}
