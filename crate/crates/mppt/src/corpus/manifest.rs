//! TOML dataset manifests and delimited-file loading.
//!
//! A manifest names the delimited files that make up a dataset, how their
//! columns map onto [`Example`] fields, and how raw label strings map onto
//! the canonical label set. Rows that cannot be used (unknown label, empty
//! text, ragged record) are recorded in the [`LoadSummary`] rather than
//! silently dropped; structural problems (missing columns, duplicate ids,
//! a bad label map) fail the whole load.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{normalize_text, CorpusError, Example, Split, StanceLabel};

/// Delimiter family for a dataset's files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Csv,
    Tsv,
}

impl FileFormat {
    fn delimiter(self) -> u8 {
        match self {
            FileFormat::Csv => b',',
            FileFormat::Tsv => b'\t',
        }
    }
}

/// Header names for the columns an [`Example`] is built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    /// Unique-id column; when absent ids are synthesized as `file-stem:row`.
    #[serde(default)]
    pub id: Option<String>,
    pub text: String,
    pub target: String,
    /// Label column; absent for unlabeled inference inputs.
    #[serde(default)]
    pub label: Option<String>,
    /// Split column; when absent every file must declare its own split.
    #[serde(default)]
    pub split: Option<String>,
}

/// One delimited file inside a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub path: String,
    /// Split for every row of this file; required unless the manifest maps
    /// a split column.
    #[serde(default)]
    pub split: Option<Split>,
}

/// Parsed dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub format: FileFormat,
    pub columns: ColumnMap,
    /// Raw label string (matched case-insensitively after trimming) to
    /// canonical `favor`/`against`/`none`.
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
    pub files: Vec<DatasetFile>,
}

impl DatasetManifest {
    pub fn from_path(path: &Path) -> Result<DatasetManifest, CorpusError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
        let manifest: DatasetManifest =
            toml::from_str(&raw).map_err(|source| CorpusError::ManifestParse {
                path: path.display().to_string(),
                source: Box::new(source),
            })?;
        manifest.validate()?;
        Ok(manifest)
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.files.is_empty() {
            return Err(CorpusError::InvalidManifest {
                reason: "manifest lists no files".to_string(),
            });
        }
        if self.columns.split.is_none() {
            if let Some(f) = self.files.iter().find(|f| f.split.is_none()) {
                return Err(CorpusError::InvalidManifest {
                    reason: format!(
                        "file `{}` has no split and the manifest maps no split column",
                        f.path
                    ),
                });
            }
        }
        if self.columns.label.is_some() {
            self.validate_label_map()?;
        }
        Ok(())
    }

    fn validate_label_map(&self) -> Result<(), CorpusError> {
        if self.labels.is_empty() {
            return Err(CorpusError::InvalidLabelMap {
                reason: "a label column is mapped but the label table is empty".to_string(),
            });
        }
        let mut covered = BTreeSet::new();
        for (raw, canonical) in &self.labels {
            match StanceLabel::from_canonical(canonical) {
                Some(label) => {
                    covered.insert(label);
                }
                None => {
                    return Err(CorpusError::InvalidLabelMap {
                        reason: format!("`{raw}` maps to unknown label `{canonical}`"),
                    });
                }
            }
        }
        for label in StanceLabel::ALL {
            if !covered.contains(&label) {
                return Err(CorpusError::InvalidLabelMap {
                    reason: format!("no raw value maps to `{label}`"),
                });
            }
        }
        Ok(())
    }

    /// Case-insensitive raw-label lookup table.
    fn label_lookup(&self) -> BTreeMap<String, StanceLabel> {
        self.labels
            .iter()
            .filter_map(|(raw, canonical)| {
                StanceLabel::from_canonical(canonical)
                    .map(|label| (raw.trim().to_lowercase(), label))
            })
            .collect()
    }
}

/// Why a row was rejected during loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RejectReason {
    UnknownLabel(String),
    UnknownSplit(String),
    EmptyField(String),
    BadRow(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::UnknownLabel(v) => write!(f, "unknown label `{v}`"),
            RejectReason::UnknownSplit(v) => write!(f, "unknown split `{v}`"),
            RejectReason::EmptyField(c) => write!(f, "empty `{c}` field"),
            RejectReason::BadRow(e) => write!(f, "malformed row: {e}"),
        }
    }
}

/// One rejected row: which file, which 1-based data row, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub file: String,
    pub row: u64,
    pub reason: RejectReason,
}

/// Row accounting for a completed load.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadSummary {
    pub total_rows: u64,
    pub loaded: u64,
    pub rejections: Vec<Rejection>,
}

impl LoadSummary {
    pub fn rejected(&self) -> u64 {
        self.rejections.len() as u64
    }
}

/// A loaded dataset plus its row accounting.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub name: String,
    pub examples: Vec<Example>,
    pub summary: LoadSummary,
}

fn parse_split(raw: &str) -> Option<Split> {
    match raw.trim().to_lowercase().as_str() {
        "train" | "training" => Some(Split::Train),
        "dev" | "val" | "validation" => Some(Split::Dev),
        "test" => Some(Split::Test),
        _ => None,
    }
}

struct ColumnIndices {
    id: Option<usize>,
    text: usize,
    target: usize,
    label: Option<usize>,
    split: Option<usize>,
}

fn resolve_columns(
    headers: &csv::StringRecord,
    columns: &ColumnMap,
    path: &str,
) -> Result<ColumnIndices, CorpusError> {
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let require = |name: &str| {
        find(name).ok_or_else(|| CorpusError::MissingColumn {
            column: name.to_string(),
            path: path.to_string(),
        })
    };
    let optional = |name: &Option<String>| match name {
        Some(n) => require(n).map(Some),
        None => Ok(None),
    };
    Ok(ColumnIndices {
        id: optional(&columns.id)?,
        text: require(&columns.text)?,
        target: require(&columns.target)?,
        label: optional(&columns.label)?,
        split: optional(&columns.split)?,
    })
}

/// Load every file named by a manifest already parsed from `manifest_path`'s
/// directory-relative paths.
pub fn load_with_manifest(
    manifest: &DatasetManifest,
    base_dir: &Path,
) -> Result<LoadedDataset, CorpusError> {
    manifest.validate()?;
    let label_lookup = manifest.label_lookup();
    let mut examples: Vec<Example> = Vec::new();
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();
    let mut summary = LoadSummary::default();

    for file in &manifest.files {
        let path = base_dir.join(&file.path);
        let display = path.display().to_string();
        let stem = Path::new(&file.path)
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| file.path.clone());
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(manifest.format.delimiter())
            .flexible(true)
            .from_path(&path)
            .map_err(|source| CorpusError::Csv { path: display.clone(), source })?;
        let headers = reader
            .headers()
            .map_err(|source| CorpusError::Csv { path: display.clone(), source })?
            .clone();
        let cols = resolve_columns(&headers, &manifest.columns, &display)?;

        let reject = |summary: &mut LoadSummary, row: u64, reason: RejectReason| {
            summary.rejections.push(Rejection { file: file.path.clone(), row, reason });
        };

        for (i, record) in reader.records().enumerate() {
            let row = i as u64 + 1;
            summary.total_rows += 1;
            let record = match record {
                Ok(r) => r,
                Err(e) => {
                    reject(&mut summary, row, RejectReason::BadRow(e.to_string()));
                    continue;
                }
            };
            let field = |idx: usize| record.get(idx);
            let (Some(text_raw), Some(target_raw)) = (field(cols.text), field(cols.target)) else {
                reject(
                    &mut summary,
                    row,
                    RejectReason::BadRow(format!(
                        "expected at least {} fields, got {}",
                        headers.len(),
                        record.len()
                    )),
                );
                continue;
            };
            let text = normalize_text(text_raw);
            let target = normalize_text(target_raw);
            if text.is_empty() {
                reject(&mut summary, row, RejectReason::EmptyField(manifest.columns.text.clone()));
                continue;
            }
            if target.is_empty() {
                reject(
                    &mut summary,
                    row,
                    RejectReason::EmptyField(manifest.columns.target.clone()),
                );
                continue;
            }
            let label = match cols.label {
                Some(idx) => {
                    let raw = field(idx).unwrap_or("");
                    match label_lookup.get(&raw.trim().to_lowercase()) {
                        Some(&label) => Some(label),
                        None => {
                            reject(&mut summary, row, RejectReason::UnknownLabel(raw.to_string()));
                            continue;
                        }
                    }
                }
                None => None,
            };
            let split = match cols.split {
                Some(idx) => {
                    let raw = field(idx).unwrap_or("");
                    match parse_split(raw) {
                        Some(split) => split,
                        None => {
                            reject(&mut summary, row, RejectReason::UnknownSplit(raw.to_string()));
                            continue;
                        }
                    }
                }
                // validate() guarantees file.split is present in this case.
                None => file.split.expect("validated: file split present"),
            };
            let id = match cols.id {
                Some(idx) => field(idx).unwrap_or("").trim().to_string(),
                None => format!("{stem}:{row}"),
            };
            if id.is_empty() {
                reject(
                    &mut summary,
                    row,
                    RejectReason::EmptyField(
                        manifest.columns.id.clone().unwrap_or_else(|| "id".to_string()),
                    ),
                );
                continue;
            }
            if !seen_ids.insert(id.clone()) {
                return Err(CorpusError::DuplicateId { id, path: display });
            }
            summary.loaded += 1;
            examples.push(Example { id, text, target, label, split });
        }
    }

    Ok(LoadedDataset { name: manifest.name.clone(), examples, summary })
}

/// Parse the manifest at `manifest_path` and load the dataset it describes.
/// File paths inside the manifest resolve relative to the manifest's
/// directory.
pub fn load_dataset(manifest_path: &Path) -> Result<LoadedDataset, CorpusError> {
    let manifest = DatasetManifest::from_path(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    load_with_manifest(&manifest, base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }

    const MANIFEST: &str = r#"
name = "toy"
format = "csv"

[columns]
id = "ID"
text = "Tweet"
target = "Target"
label = "Stance"

[labels]
FAVOR = "favor"
AGAINST = "against"
NONE = "none"

[[files]]
path = "train.csv"
split = "train"

[[files]]
path = "test.csv"
split = "test"
"#;

    #[test]
    fn loads_csv_files_with_per_file_splits() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "train.csv",
            "ID,Target,Tweet,Stance\n1,alpha,hello  world,FAVOR\n2,alpha,more text,AGAINST\n",
        );
        write(dir.path(), "test.csv", "ID,Target,Tweet,Stance\n3,beta,eval text,NONE\n");
        let manifest_path = write(dir.path(), "toy.toml", MANIFEST);
        let loaded = load_dataset(&manifest_path).unwrap();
        assert_eq!(loaded.name, "toy");
        assert_eq!(loaded.summary.total_rows, 3);
        assert_eq!(loaded.summary.loaded, 3);
        assert!(loaded.summary.rejections.is_empty());
        assert_eq!(loaded.examples[0].text, "hello world");
        assert_eq!(loaded.examples[0].label, Some(StanceLabel::Favor));
        assert_eq!(loaded.examples[0].split, Split::Train);
        assert_eq!(loaded.examples[2].split, Split::Test);
    }

    #[test]
    fn records_rejections_instead_of_dropping_rows() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "train.csv",
            concat!(
                "ID,Target,Tweet,Stance\n",
                "1,alpha,good row,FAVOR\n",
                "2,alpha,strange label,MAYBE\n",
                "3,alpha,   ,FAVOR\n",
                "4,alpha,short row\n",
                "5,alpha,another good row,NONE\n",
            ),
        );
        write(dir.path(), "test.csv", "ID,Target,Tweet,Stance\n9,beta,t,NONE\n");
        let manifest_path = write(dir.path(), "toy.toml", MANIFEST);
        let loaded = load_dataset(&manifest_path).unwrap();
        assert_eq!(loaded.summary.total_rows, 6);
        assert_eq!(loaded.summary.loaded, 3);
        assert_eq!(loaded.summary.rejected(), 3);
        let reasons: Vec<&RejectReason> =
            loaded.summary.rejections.iter().map(|r| &r.reason).collect();
        assert!(matches!(reasons[0], RejectReason::UnknownLabel(v) if v == "MAYBE"));
        assert!(matches!(reasons[1], RejectReason::EmptyField(c) if c == "Tweet"));
        assert!(matches!(reasons[2], RejectReason::UnknownLabel(v) if v.is_empty()));
        assert_eq!(loaded.summary.rejections[1].row, 3);
        assert_eq!(loaded.summary.total_rows, loaded.summary.loaded + loaded.summary.rejected());
    }

    #[test]
    fn missing_column_is_a_hard_error() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "train.csv", "ID,Topic,Tweet,Stance\n1,alpha,x,FAVOR\n");
        write(dir.path(), "test.csv", "ID,Topic,Tweet,Stance\n2,beta,y,NONE\n");
        let manifest_path = write(dir.path(), "toy.toml", MANIFEST);
        let err = load_dataset(&manifest_path).unwrap_err();
        assert!(matches!(err, CorpusError::MissingColumn { column, .. } if column == "Target"));
    }

    #[test]
    fn duplicate_ids_are_a_hard_error() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "train.csv", "ID,Target,Tweet,Stance\n1,alpha,x,FAVOR\n1,alpha,y,NONE\n");
        write(dir.path(), "test.csv", "ID,Target,Tweet,Stance\n2,beta,z,NONE\n");
        let manifest_path = write(dir.path(), "toy.toml", MANIFEST);
        let err = load_dataset(&manifest_path).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { id, .. } if id == "1"));
    }

    #[test]
    fn label_map_must_cover_all_three_labels() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = MANIFEST.replace("NONE = \"none\"\n", "");
        write(dir.path(), "train.csv", "ID,Target,Tweet,Stance\n1,alpha,x,FAVOR\n");
        write(dir.path(), "test.csv", "ID,Target,Tweet,Stance\n2,beta,y,AGAINST\n");
        let manifest_path = write(dir.path(), "toy.toml", &manifest);
        let err = load_dataset(&manifest_path).unwrap_err();
        assert!(matches!(err, CorpusError::InvalidLabelMap { reason } if reason.contains("none")));
    }

    #[test]
    fn label_map_rejects_unknown_canonical_values() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = MANIFEST.replace("FAVOR = \"favor\"", "FAVOR = \"positive\"");
        let manifest_path = write(dir.path(), "toy.toml", &manifest);
        let err = DatasetManifest::from_path(&manifest_path).unwrap_err();
        assert!(
            matches!(err, CorpusError::InvalidLabelMap { reason } if reason.contains("positive"))
        );
    }

    #[test]
    fn split_column_overrides_are_parsed_per_row() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = r#"
name = "zs"
format = "tsv"

[columns]
text = "post"
target = "topic"
label = "lab"
split = "seen"

[labels]
pro = "favor"
con = "against"
neutral = "none"

[[files]]
path = "all.tsv"
"#;
        write(
            dir.path(),
            "all.tsv",
            concat!(
                "post\ttopic\tlab\tseen\n",
                "a\tt1\tpro\ttrain\n",
                "b\tt2\tcon\tVal\n",
                "c\tt3\tneutral\ttest\n",
                "d\tt4\tpro\tholdout\n",
            ),
        );
        let manifest_path = write(dir.path(), "zs.toml", manifest);
        let loaded = load_dataset(&manifest_path).unwrap();
        assert_eq!(loaded.summary.loaded, 3);
        assert_eq!(loaded.examples[0].split, Split::Train);
        assert_eq!(loaded.examples[1].split, Split::Dev);
        assert_eq!(loaded.examples[2].split, Split::Test);
        assert!(matches!(
            loaded.summary.rejections[0].reason,
            RejectReason::UnknownSplit(ref v) if v == "holdout"
        ));
        // No id column: ids are synthesized and unique.
        assert_eq!(loaded.examples[0].id, "all:1");
    }

    #[test]
    fn manifest_requires_split_source() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = MANIFEST.replace("split = \"train\"\n", "");
        let manifest_path = write(dir.path(), "toy.toml", &manifest);
        let err = DatasetManifest::from_path(&manifest_path).unwrap_err();
        assert!(matches!(err, CorpusError::InvalidManifest { reason } if reason.contains("split")));
    }
}
