//! Locating and loading DocRED-layout splits.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use relmention::corpus::{parse_docred, relation_names_in, Document, RelationSchema};
use sha2::{Digest, Sha256};

use crate::UsageError;

pub const TRAIN_FILES: [&str; 2] = ["train_annotated.json", "train.json"];

#[derive(Debug, Clone)]
pub struct DataDir {
    pub root: PathBuf,
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub rel_info: Option<PathBuf>,
}

impl DataDir {
    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(UsageError(format!("data directory {} does not exist", root.display())).into());
        }
        let existing = |name: &str| Some(root.join(name)).filter(|p| p.is_file());
        let train = TRAIN_FILES.iter().find_map(|n| existing(n)).ok_or_else(|| {
            UsageError(format!(
                "data directory {} has neither {}",
                root.display(),
                TRAIN_FILES.join(" nor ")
            ))
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            train,
            dev: existing("dev.json"),
            test: existing("test.json"),
            rel_info: existing("rel_info.json"),
        })
    }

    /// Relations from `rel_info.json`, or the sorted label names of the
    /// training split.
    pub fn schema(&self) -> Result<RelationSchema> {
        match &self.rel_info {
            Some(p) => Ok(RelationSchema::from_json(&read(p)?).with_context(|| format!("reading {}", p.display()))?),
            None => {
                let names = relation_names_in(&read(&self.train)?)?;
                Ok(RelationSchema::new(names.into_iter().collect())
                    .with_context(|| format!("inferring relations from {}", self.train.display()))?)
            }
        }
    }

    pub fn split(&self, name: &str) -> Result<PathBuf> {
        let found = match name {
            "train" => Some(self.train.clone()),
            "dev" => self.dev.clone(),
            "test" => self.test.clone(),
            other => return Err(UsageError(format!("unknown split {other:?} (expected train, dev or test)")).into()),
        };
        found.ok_or_else(|| UsageError(format!("{} has no {name} split", self.root.display())).into())
    }

    /// Every split file present, in train/dev/test order.
    pub fn files(&self) -> Vec<PathBuf> {
        std::iter::once(self.train.clone())
            .chain(self.dev.clone())
            .chain(self.test.clone())
            .collect()
    }
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_split(path: &Path, schema: &RelationSchema) -> Result<Vec<Document>> {
    Ok(parse_docred(&read(path)?, schema).with_context(|| format!("parsing {}", path.display()))?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of each existing input file, keyed by path.
pub fn hash_inputs(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), sha256_hex(&read(p)?))))
        .collect()
}
