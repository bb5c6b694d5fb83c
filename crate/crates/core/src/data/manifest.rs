use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Head;

/// Scene classification is single-label with random temporal crops during
/// training; tagging is multi-label on complete segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Scene,
    Tagging,
}

impl Task {
    pub fn multi_label(self) -> bool {
        self == Task::Tagging
    }

    pub fn head(self) -> Head {
        match self {
            Task::Scene => Head::Softmax,
            Task::Tagging => Head::Sigmoid,
        }
    }

    pub fn default_folds(self) -> usize {
        match self {
            Task::Scene => 4,
            Task::Tagging => 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Resolved against the manifest's directory.
    pub path: PathBuf,
    /// Class indices, sorted and unique. Exactly one for scene manifests.
    pub labels: Vec<usize>,
    /// In `1..=num_folds`.
    pub fold: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub task: Task,
    pub class_names: Vec<String>,
    pub num_folds: usize,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
struct Row {
    path: String,
    labels: String,
    fold: usize,
}

/// One class name per non-empty line; order defines class indices.
pub fn read_classes(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if names.is_empty() {
        return Err(Error::Manifest(format!("{} lists no classes", path.display())));
    }
    let mut seen = HashMap::new();
    for (i, n) in names.iter().enumerate() {
        if let Some(j) = seen.insert(n.as_str(), i) {
            return Err(Error::Manifest(format!("class {n:?} listed twice (lines {} and {})", j + 1, i + 1)));
        }
    }
    Ok(names)
}

impl Manifest {
    /// Reads `path,labels,fold` rows; `labels` is `;`-separated. Class order
    /// comes from `classes_path`.
    pub fn load(
        path: impl AsRef<Path>,
        classes_path: impl AsRef<Path>,
        task: Task,
        num_folds: usize,
    ) -> Result<Self> {
        let path = path.as_ref();
        let class_names = read_classes(classes_path)?;
        let index: HashMap<&str, usize> =
            class_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let base = path.parent().unwrap_or(Path::new(""));
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;

        let mut entries = Vec::new();
        for (line, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
            let at = || format!("{} row {}", path.display(), line + 1);
            let mut labels = Vec::new();
            for name in row.labels.split(';').map(str::trim).filter(|s| !s.is_empty()) {
                let &i = index
                    .get(name)
                    .ok_or_else(|| Error::Manifest(format!("{}: unknown class {name:?}", at())))?;
                labels.push(i);
            }
            labels.sort_unstable();
            labels.dedup();
            if !task.multi_label() && labels.len() != 1 {
                return Err(Error::Manifest(format!(
                    "{}: single-label entry has {} labels",
                    at(),
                    labels.len()
                )));
            }
            if row.fold == 0 || row.fold > num_folds {
                return Err(Error::Manifest(format!(
                    "{}: fold {} outside 1..={num_folds}",
                    at(),
                    row.fold
                )));
            }
            entries.push(ManifestEntry {
                path: base.join(&row.path),
                labels,
                fold: row.fold,
            });
        }
        if entries.is_empty() {
            return Err(Error::Manifest(format!("{} has no entries", path.display())));
        }
        Ok(Self {
            task,
            class_names,
            num_folds,
            entries,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Entry indices `(train, validation)` for `fold`: validation holds the
    /// entries of that fold, training everything else.
    pub fn split(&self, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if fold == 0 || fold > self.num_folds {
            return Err(Error::Manifest(format!("fold {fold} outside 1..={}", self.num_folds)));
        }
        let (val, train): (Vec<usize>, Vec<usize>) =
            (0..self.entries.len()).partition(|&i| self.entries[i].fold == fold);
        Ok((train, val))
    }
}

/// Writes a manifest CSV with paths relative to its directory.
pub fn write_manifest(path: impl AsRef<Path>, rows: &[(String, Vec<String>, usize)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let fail = |e: csv::Error| Error::Manifest(format!("{}: {e}", path.display()));
    w.write_record(["path", "labels", "fold"]).map_err(fail)?;
    for (p, labels, fold) in rows {
        w.write_record([p.as_str(), &labels.join(";"), &fold.to_string()]).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(classes: &[&str], rows: &str) -> (tempfile::TempDir, PathBuf, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.csv");
        let c = dir.path().join("classes.txt");
        std::fs::write(&c, classes.join("\n")).unwrap();
        std::fs::write(&m, format!("path,labels,fold\n{rows}")).unwrap();
        (dir, m, c)
    }

    #[test]
    fn scene_manifest_with_four_folds() {
        let classes: Vec<String> = (0..15).map(|i| format!("scene{i}")).collect();
        let refs: Vec<&str> = classes.iter().map(String::as_str).collect();
        let rows: String = (0..30).map(|i| format!("a{i}.wav,scene{},{}\n", i % 15, i % 4 + 1)).collect();
        let (_d, m, c) = setup(&refs, &rows);
        let man = Manifest::load(&m, &c, Task::Scene, 4).unwrap();
        assert_eq!(man.num_classes(), 15);
        assert_eq!(man.entries.len(), 30);
        assert_eq!(man.entries[3].labels, vec![3]);
        assert!(man.entries[0].path.ends_with("a0.wav"));
    }

    #[test]
    fn tagging_manifest_allows_empty_and_multiple_labels() {
        let tags = ["c", "m", "f", "v", "p", "b", "o"];
        let (_d, m, c) = setup(&tags, "x.wav,,1\ny.wav,m;c;m,5\n");
        let man = Manifest::load(&m, &c, Task::Tagging, 5).unwrap();
        assert_eq!(man.num_classes(), 7);
        assert!(man.entries[0].labels.is_empty());
        assert_eq!(man.entries[1].labels, vec![0, 1]);
    }

    #[test]
    fn rejects_bad_rows() {
        let (_d, m, c) = setup(&["a", "b"], "x.wav,a,9\n");
        assert!(matches!(Manifest::load(&m, &c, Task::Scene, 4), Err(Error::Manifest(_))));
        let (_d, m, c) = setup(&["a", "b"], "x.wav,zzz,1\n");
        assert!(Manifest::load(&m, &c, Task::Scene, 4).is_err());
        let (_d, m, c) = setup(&["a", "b"], "x.wav,a;b,1\n");
        assert!(Manifest::load(&m, &c, Task::Scene, 4).is_err());
        let (_d, m, _) = setup(&["a"], "x.wav,a,1\n");
        assert!(Manifest::load(&m, m.with_file_name("missing.txt"), Task::Scene, 4).is_err());
    }

    #[test]
    fn folds_partition_entries() {
        let rows: String = (0..23).map(|i| format!("a{i}.wav,a,{}\n", i % 4 + 1)).collect();
        let (_d, m, c) = setup(&["a"], &rows);
        let man = Manifest::load(&m, &c, Task::Scene, 4).unwrap();
        let mut seen = vec![0; 23];
        for fold in 1..=4 {
            let (train, val) = man.split(fold).unwrap();
            assert_eq!(train.len() + val.len(), 23);
            assert!(train.iter().all(|i| !val.contains(i)));
            for &i in &val {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&n| n == 1));
        assert!(man.split(5).is_err());
    }
}
