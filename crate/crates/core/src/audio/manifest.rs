use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::AudioError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn parse(s: &str) -> Result<Self, AudioError> {
        match s {
            "p" => Ok(Label::Positive),
            "n" => Ok(Label::Negative),
            other => Err(AudioError::Manifest(format!("label must be `p` or `n`, got `{other}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Positive => "p",
            Label::Negative => "n",
        }
    }

    pub fn as_binary(&self) -> u8 {
        match self {
            Label::Positive => 1,
            Label::Negative => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Breath,
    Cough,
    Speech,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Breath, Task::Cough, Task::Speech];

    pub fn parse(s: &str) -> Result<Self, AudioError> {
        match s {
            "breath" => Ok(Task::Breath),
            "cough" => Ok(Task::Cough),
            "speech" => Ok(Task::Speech),
            other => Err(AudioError::Manifest(format!(
                "task must be breath/cough/speech, got `{other}`"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Breath => "breath",
            Task::Cough => "cough",
            Task::Speech => "speech",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    /// Path as written in the manifest; relative paths resolve against the
    /// manifest's directory.
    pub path: String,
    pub label: Label,
    pub task: Task,
}

/// Whether to require every referenced audio file to exist at load time.
/// Label-only consumers (AUC scoring) skip the check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathCheck {
    Require,
    Skip,
}

/// CSV-backed dataset index with header `id,path,label,task`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path, check: PathCheck) -> Result<Self, AudioError> {
        let base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| AudioError::Manifest(format!("{}: {e}", path.display())))?;
        {
            let headers = reader
                .headers()
                .map_err(|e| AudioError::Manifest(e.to_string()))?;
            let expect = ["id", "path", "label", "task"];
            if headers.iter().collect::<Vec<_>>() != expect {
                return Err(AudioError::Manifest(format!(
                    "{}: header must be `id,path,label,task`, got `{}`",
                    path.display(),
                    headers.iter().collect::<Vec<_>>().join(",")
                )));
            }
        }
        let mut entries = Vec::new();
        let mut ids = BTreeSet::new();
        for record in reader.records() {
            let record = record.map_err(|e| AudioError::Manifest(e.to_string()))?;
            if record.len() != 4 {
                return Err(AudioError::Manifest(format!(
                    "{}: expected 4 fields, got {}",
                    path.display(),
                    record.len()
                )));
            }
            let entry = ManifestEntry {
                id: record[0].to_string(),
                path: record[1].to_string(),
                label: Label::parse(&record[2])?,
                task: Task::parse(&record[3])?,
            };
            if !ids.insert(entry.id.clone()) {
                return Err(AudioError::Manifest(format!("duplicate id `{}`", entry.id)));
            }
            entries.push(entry);
        }
        let manifest = Self { base_dir, entries };
        if check == PathCheck::Require {
            for e in &manifest.entries {
                let p = manifest.resolve(e);
                if !p.exists() {
                    return Err(AudioError::Manifest(format!(
                        "audio file for id `{}` not found: {}",
                        e.id,
                        p.display()
                    )));
                }
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<(), AudioError> {
        let mut out = String::from("id,path,label,task\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{}\n", e.id, e.path, e.label.as_str(), e.task.as_str()));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Absolute path of an entry's audio file.
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn filter_task(&self, task: Task) -> DatasetManifest {
        DatasetManifest {
            base_dir: self.base_dir.clone(),
            entries: self.entries.iter().filter(|e| e.task == task).cloned().collect(),
        }
    }

    /// Map id -> binary label (positive = 1).
    pub fn labels(&self) -> std::collections::BTreeMap<String, u8> {
        self.entries
            .iter()
            .map(|e| (e.id.clone(), e.label.as_binary()))
            .collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_manifest(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("manifest.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.wav"), b"stub").unwrap();
        let p = write_manifest(dir.path(), "id,path,label,task\nx1,a.wav,p,breath\n");
        let m = DatasetManifest::load(&p, PathCheck::Require).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(m.entries[0].label, Label::Positive);
        assert_eq!(m.entries[0].task, Task::Breath);
        assert!(m.resolve(&m.entries[0]).exists());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(
            dir.path(),
            "id,path,label,task\nx1,a.wav,p,breath\nx1,b.wav,n,cough\n",
        );
        assert!(DatasetManifest::load(&p, PathCheck::Skip).is_err());
    }

    #[test]
    fn missing_file_fails_when_paths_required() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(dir.path(), "id,path,label,task\nx1,missing.wav,n,speech\n");
        assert!(DatasetManifest::load(&p, PathCheck::Require).is_err());
        assert!(DatasetManifest::load(&p, PathCheck::Skip).is_ok());
    }

    #[test]
    fn save_load_roundtrip_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(
            dir.path(),
            "id,path,label,task\nx1,a.wav,p,breath\nx2,b.wav,n,cough\n",
        );
        let m = DatasetManifest::load(&p, PathCheck::Skip).unwrap();
        let p2 = dir.path().join("copy.csv");
        m.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }
}
