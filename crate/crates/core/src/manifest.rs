//! Dataset manifest: one entry per scan, fraction 0 being the simulation scan.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::FractionEntry;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestCase {
    pub patient_id: String,
    pub fraction_index: u32,
    pub current_image: PathBuf,
    /// Ground-truth annotation of this scan.
    #[serde(default)]
    pub current_mask: Option<PathBuf>,
}

impl ManifestCase {
    pub fn case_id(&self) -> String {
        format!("{}_f{}", self.patient_id, self.fraction_index)
    }
}

impl FractionEntry for ManifestCase {
    fn patient_id(&self) -> &str {
        &self.patient_id
    }

    fn fraction_index(&self) -> u32 {
        self.fraction_index
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// Base for relative case paths; itself relative to the manifest file.
    pub root: PathBuf,
    pub cases: Vec<ManifestCase>,
}

impl DatasetManifest {
    /// Parse and validate; `root` is resolved against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        if m.root.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            m.root = base.join(&m.root);
        }
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| Error::io_at(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Version, contiguous fractions from 0 per patient, unique entries, and
    /// existing files.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Manifest(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut per_patient: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
        for c in &self.cases {
            per_patient
                .entry(&c.patient_id)
                .or_default()
                .push(c.fraction_index);
        }
        for (patient, fractions) in &mut per_patient {
            fractions.sort_unstable();
            for (expected, &f) in fractions.iter().enumerate() {
                if f != expected as u32 {
                    return Err(Error::Manifest(format!(
                        "patient {patient}: fractions {fractions:?} are not contiguous from 0"
                    )));
                }
            }
        }
        for c in &self.cases {
            for p in std::iter::once(&c.current_image).chain(c.current_mask.as_ref()) {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::Manifest(format!(
                        "case {}: {} does not exist",
                        c.case_id(),
                        full.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Cases ordered by `(patient_id, fraction_index)`.
    pub fn sorted_cases(&self) -> Vec<&ManifestCase> {
        let mut v: Vec<_> = self.cases.iter().collect();
        v.sort_by(|a, b| (&a.patient_id, a.fraction_index).cmp(&(&b.patient_id, b.fraction_index)));
        v
    }
}
