//! CSV manifest plus JSON sidecar.
//!
//! The CSV header is `path,label,subject_id,lm_x1,lm_y1,...,lm_x5,lm_y5,neutral_path`
//! where `label` is a class name. The sidecar (same stem, `.json`) holds
//! `class_names` and `image_size`. Relative paths resolve against the
//! manifest's directory. Row numbers in errors are file line numbers, the
//! header being line 1.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::landmarks::LandmarkSet;
use crate::error::{FmpnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FaceSample {
    pub image_path: String,
    pub label: usize,
    pub subject_id: String,
    pub landmarks: LandmarkSet,
    pub neutral_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub samples: Vec<FaceSample>,
    pub class_names: Vec<String>,
    pub image_size: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    class_names: Vec<String>,
    image_size: usize,
}

const HEADER: [&str; 14] = [
    "path", "label", "subject_id", "lm_x1", "lm_y1", "lm_x2", "lm_y2", "lm_x3", "lm_y3", "lm_x4",
    "lm_y4", "lm_x5", "lm_y5", "neutral_path",
];

pub fn sidecar_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("json")
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let sidecar_file = sidecar_path(path);
    let sidecar: Sidecar = serde_json::from_str(
        &fs::read_to_string(&sidecar_file).map_err(|e| FmpnError::io(&sidecar_file, e))?,
    )?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = DatasetManifest::new(root, sidecar.class_names, sidecar.image_size)?;

    let text = fs::read_to_string(path).map_err(|e| FmpnError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| FmpnError::Parse {
        row: 1,
        message: e.to_string(),
    })?;
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(FmpnError::Parse {
            row: 1,
            message: format!("expected header `{}`", HEADER.join(",")),
        });
    }

    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| FmpnError::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != HEADER.len() {
            return Err(FmpnError::Parse {
                row,
                message: format!("expected {} fields, found {}", HEADER.len(), record.len()),
            });
        }
        let label_name = record[1].trim();
        let label = manifest.class_index(label_name).ok_or_else(|| FmpnError::Validation {
            row,
            message: format!("unknown class \"{label_name}\""),
        })?;
        let mut points = [[0.0; 2]; 5];
        for (j, p) in points.iter_mut().enumerate() {
            for (a, v) in p.iter_mut().enumerate() {
                let field = record[3 + 2 * j + a].trim();
                *v = field.parse().map_err(|_| FmpnError::Parse {
                    row,
                    message: format!("bad landmark coordinate \"{field}\""),
                })?;
            }
        }
        let landmarks = LandmarkSet::new(points).map_err(|e| FmpnError::Parse {
            row,
            message: e.to_string(),
        })?;
        let neutral = record[13].trim();
        let neutral_path = if neutral.is_empty() {
            None
        } else {
            if !manifest.resolve(neutral).is_file() {
                return Err(FmpnError::Validation {
                    row,
                    message: format!("neutral image \"{neutral}\" does not exist"),
                });
            }
            Some(neutral.to_string())
        };
        manifest.samples.push(FaceSample {
            image_path: record[0].trim().to_string(),
            label,
            subject_id: record[2].trim().to_string(),
            landmarks,
            neutral_path,
        });
    }
    Ok(manifest)
}

impl DatasetManifest {
    pub fn new(root: PathBuf, class_names: Vec<String>, image_size: usize) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(FmpnError::Manifest("at least two classes are required".into()));
        }
        let distinct: HashSet<&String> = class_names.iter().collect();
        if distinct.len() != class_names.len() {
            return Err(FmpnError::Manifest("class names must be distinct".into()));
        }
        if image_size == 0 {
            return Err(FmpnError::Manifest("image_size must be positive".into()));
        }
        Ok(DatasetManifest {
            root,
            samples: Vec::new(),
            class_names,
            image_size,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Distinct subject ids in ascending order.
    pub fn subjects(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.samples.iter().map(|s| s.subject_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Manifest restricted to the given sample indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> DatasetManifest {
        DatasetManifest {
            root: self.root.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            class_names: self.class_names.clone(),
            image_size: self.image_size,
        }
    }

    /// Writes the CSV and its JSON sidecar. Paths are written verbatim.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let io_err = |e: csv::Error| FmpnError::io(path, std::io::Error::other(e));
        writer.write_record(HEADER).map_err(io_err)?;
        for s in &self.samples {
            let mut rec = vec![
                s.image_path.clone(),
                self.class_names[s.label].clone(),
                s.subject_id.clone(),
            ];
            for p in s.landmarks.points() {
                rec.push(format!("{}", p[0]));
                rec.push(format!("{}", p[1]));
            }
            rec.push(s.neutral_path.clone().unwrap_or_default());
            writer.write_record(&rec).map_err(io_err)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| FmpnError::io(path, std::io::Error::other(e.to_string())))?;
        fs::write(path, bytes).map_err(|e| FmpnError::io(path, e))?;
        let sidecar = Sidecar {
            class_names: self.class_names.clone(),
            image_size: self.image_size,
        };
        let side = sidecar_path(path);
        fs::write(&side, serde_json::to_string_pretty(&sidecar)?).map_err(|e| FmpnError::io(&side, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEVEN: &str = r#"{"class_names": ["anger","contempt","disgust","fear","happiness","sadness","surprise"], "image_size": 64}"#;

    fn write(dir: &Path, csv: &str, sidecar: &str) -> PathBuf {
        let p = dir.join("m.csv");
        fs::write(&p, csv).unwrap();
        fs::write(dir.join("m.json"), sidecar).unwrap();
        p
    }

    fn header() -> String {
        HEADER.join(",") + "\n"
    }

    #[test]
    fn empty_sample_section() {
        let dir = tempfile::tempdir().unwrap();
        let m = load_manifest(&write(dir.path(), &header(), SEVEN)).unwrap();
        assert_eq!(m.samples.len(), 0);
        assert_eq!(m.num_classes(), 7);
    }

    #[test]
    fn rows_keep_file_order() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("n.png"), b"").unwrap();
        let lm = "1,2,3,4,5,6,7,8,9,10";
        let csv = format!(
            "{}c.png,fear,s2,{lm},n.png\na.png,anger,s1,{lm},\nb.png,surprise,s1,{lm},\n",
            header()
        );
        let m = load_manifest(&write(dir.path(), &csv, SEVEN)).unwrap();
        let paths: Vec<_> = m.samples.iter().map(|s| s.image_path.as_str()).collect();
        assert_eq!(paths, ["c.png", "a.png", "b.png"]);
        assert_eq!(m.samples[0].label, 3);
        assert_eq!(m.samples[0].neutral_path.as_deref(), Some("n.png"));
        assert_eq!(m.samples[1].neutral_path, None);
        assert_eq!(m.samples[2].landmarks.points()[4], [9.0, 10.0]);
    }

    #[test]
    fn unknown_class_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let csv = format!("{}a.png,joy,s1,1,2,3,4,5,6,7,8,9,10,\n", header());
        match load_manifest(&write(dir.path(), &csv, SEVEN)) {
            Err(FmpnError::Validation { row, message }) => {
                assert_eq!(row, 2);
                assert!(message.contains("joy"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let dir = tempfile::tempdir().unwrap();
        let csv = format!(
            "{}a.png,fear,s1,1,2,3,4,5,6,7,8,9,10,\nb.png,fear,s1,1,2,x,4,5,6,7,8,9,10,\n",
            header()
        );
        match load_manifest(&write(dir.path(), &csv, SEVEN)) {
            Err(FmpnError::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        let csv = format!("{}a.png,fear,s1,1,2\n", header());
        assert!(matches!(
            load_manifest(&write(dir.path(), &csv, SEVEN)),
            Err(FmpnError::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn dangling_neutral_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let csv = format!("{}a.png,fear,s1,1,2,3,4,5,6,7,8,9,10,missing.png\n", header());
        assert!(matches!(
            load_manifest(&write(dir.path(), &csv, SEVEN)),
            Err(FmpnError::Validation { row: 2, .. })
        ));
    }

    #[test]
    fn sidecar_validation() {
        let dir = tempfile::tempdir().unwrap();
        let one = r#"{"class_names": ["a"], "image_size": 64}"#;
        assert!(load_manifest(&write(dir.path(), &header(), one)).is_err());
        let dup = r#"{"class_names": ["a", "a"], "image_size": 64}"#;
        assert!(load_manifest(&write(dir.path(), &header(), dup)).is_err());
    }

    #[test]
    fn save_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DatasetManifest::new(dir.path().to_path_buf(), vec!["a".into(), "b".into()], 32).unwrap();
        fs::write(dir.path().join("n.png"), b"").unwrap();
        m.samples.push(FaceSample {
            image_path: "x.png".into(),
            label: 1,
            subject_id: "s7".into(),
            landmarks: LandmarkSet::new([[1.5, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0], [9.0, 10.25]]).unwrap(),
            neutral_path: Some("n.png".into()),
        });
        let p = dir.path().join("out.csv");
        m.save(&p).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), m);
    }
}
