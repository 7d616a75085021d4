//! CSV dataset manifests: `path,label,subject_id`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Healthy = 0,
    Tumor = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Healthy),
            1 => Some(Label::Tumor),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Healthy => "healthy",
            Label::Tumor => "tumor",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "0" | "healthy" => Ok(Label::Healthy),
            "1" | "tumor" => Ok(Label::Tumor),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub path: PathBuf,
    pub label: Label,
    pub subject_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
    pub source: String,
}

impl Manifest {
    pub fn new(samples: Vec<Sample>, source: impl Into<String>) -> Self {
        Self {
            samples,
            class_names: vec![Label::Healthy.to_string(), Label::Tumor.to_string()],
            source: source.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    /// Training needs both classes present.
    pub fn check_trainable(&self) -> Result<()> {
        for label in [Label::Healthy, Label::Tumor] {
            if self.count(label) == 0 {
                return Err(Error::invalid(
                    "Manifest",
                    format!("{}: no `{label}` samples", self.source),
                ));
            }
        }
        Ok(())
    }
}

pub const HEADER: [&str; 3] = ["path", "label", "subject_id"];

/// Parses a manifest; relative paths resolve against the manifest's
/// directory and every referenced file must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: u64, msg: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut columns = [0usize; 3];
    for (slot, name) in columns.iter_mut().zip(HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| err(1, format!("missing column `{name}`")))?;
    }

    let mut samples = Vec::new();
    let mut seen: HashMap<PathBuf, u64> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(columns[i]).unwrap_or("");
        let raw = field(0);
        if raw.is_empty() {
            return Err(err(line, "empty path".into()));
        }
        let label: Label = field(1).parse().map_err(|m| err(line, m))?;
        let subject_id = field(2).to_string();
        if subject_id.is_empty() {
            return Err(err(line, "empty subject_id".into()));
        }
        let resolved = base.join(raw);
        if let Some(first) = seen.insert(resolved.clone(), line) {
            return Err(err(line, format!("duplicate path `{raw}` (first on line {first})")));
        }
        if !resolved.is_file() {
            return Err(err(line, format!("cannot read `{}`", resolved.display())));
        }
        samples.push(Sample {
            path: resolved,
            label,
            subject_id,
        });
    }
    Ok(Manifest::new(samples, path.display().to_string()))
}

/// Writes a manifest, storing paths relative to its directory when possible.
pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = HEADER.join(",");
    out.push('\n');
    for s in &manifest.samples {
        let rel = s.path.strip_prefix(base).unwrap_or(&s.path);
        out.push_str(&format!("{},{},{}\n", rel.display(), s.label, s.subject_id));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
