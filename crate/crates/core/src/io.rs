//! File formats: CSV tables with header rows and JSON documents, plus
//! atomic writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AnnotationCrop, HistologicPattern, PatchGeometry, PatchPrediction, ProbabilityVector, Rect};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

impl IoError {
    pub fn malformed(path: &Path, message: impl Into<String>) -> Self {
        IoError::Malformed {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

/// Writes through a sibling temp file and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let unwritable = |source| IoError::Unwritable {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(unwritable)?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(unwritable)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        unwritable(e)
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| IoError::malformed(path, e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::malformed(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let bytes = fs::read(path).map_err(|source| IoError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| IoError::malformed(path, format!("row {}: {e}", i + 1))))
        .collect()
}

/// Serializes rows with a header; the header is written even for no rows.
pub fn csv_string<T: Serialize>(header: &[&str], rows: &[T]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.serialize(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub slide_id: String,
    pub path: PathBuf,
}

/// `slide_id,path`. Relative paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, IoError> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut rows: Vec<ManifestRow> = read_csv(path)?;
    let mut seen = std::collections::BTreeSet::new();
    for row in &mut rows {
        if row.slide_id.is_empty() {
            return Err(IoError::malformed(path, "empty slide_id"));
        }
        if !seen.insert(row.slide_id.clone()) {
            return Err(IoError::malformed(path, format!("duplicate slide_id {}", row.slide_id)));
        }
        if row.path.is_relative() {
            row.path = base.join(&row.path);
        }
    }
    Ok(rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRow {
    slide_id: String,
    x: u32,
    y: u32,
    width: u32,
    height: u32,
    label: HistologicPattern,
}

/// `slide_id,x,y,width,height,label`.
pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationCrop>, IoError> {
    read_csv::<AnnotationRow>(path)?
        .into_iter()
        .map(|r| {
            let rect = Rect {
                x: r.x,
                y: r.y,
                width: r.width,
                height: r.height,
            };
            AnnotationCrop::new(r.slide_id, rect, r.label).map_err(|e| IoError::malformed(path, e.to_string()))
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct PatchCoordRow<'a> {
    slide_id: &'a str,
    x: u32,
    y: u32,
    side: u32,
}

/// `slide_id,x,y,side`.
pub fn patch_coords_csv(slide_id: &str, patches: &[PatchGeometry]) -> String {
    let rows: Vec<PatchCoordRow> = patches
        .iter()
        .map(|g| PatchCoordRow {
            slide_id,
            x: g.x,
            y: g.y,
            side: g.side,
        })
        .collect();
    csv_string(&["slide_id", "x", "y", "side"], &rows)
}

const PREDICTION_HEADER: [&str; 9] = [
    "slide_id",
    "x",
    "y",
    "p_lepidic",
    "p_acinar",
    "p_papillary",
    "p_micropapillary",
    "p_solid",
    "p_benign",
];

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    slide_id: String,
    x: u32,
    y: u32,
    p_lepidic: f64,
    p_acinar: f64,
    p_papillary: f64,
    p_micropapillary: f64,
    p_solid: f64,
    p_benign: f64,
}

/// `slide_id,x,y,p_lepidic,...,p_benign`. Probabilities print in shortest
/// round-trip form, so reading back gives identical values.
pub fn predictions_csv(slide_id: &str, predictions: &[PatchPrediction]) -> String {
    let rows: Vec<PredictionRow> = predictions
        .iter()
        .map(|p| {
            let v = p.probs().values();
            PredictionRow {
                slide_id: slide_id.to_string(),
                x: p.geometry().x,
                y: p.geometry().y,
                p_lepidic: v[0],
                p_acinar: v[1],
                p_papillary: v[2],
                p_micropapillary: v[3],
                p_solid: v[4],
                p_benign: v[5],
            }
        })
        .collect();
    csv_string(&PREDICTION_HEADER, &rows)
}

/// Reads predictions grouped by slide id, in file order. The CSV carries no
/// patch side, so `side` supplies it.
pub fn read_predictions(path: &Path, side: u32) -> Result<BTreeMap<String, Vec<PatchPrediction>>, IoError> {
    let mut out: BTreeMap<String, Vec<PatchPrediction>> = BTreeMap::new();
    for (i, r) in read_csv::<PredictionRow>(path)?.into_iter().enumerate() {
        let probs = ProbabilityVector::new([
            r.p_lepidic,
            r.p_acinar,
            r.p_papillary,
            r.p_micropapillary,
            r.p_solid,
            r.p_benign,
        ])
        .map_err(|e| IoError::malformed(path, format!("row {}: {e}", i + 1)))?;
        let geometry =
            PatchGeometry::new(r.x, r.y, side).map_err(|e| IoError::malformed(path, format!("row {}: {e}", i + 1)))?;
        out.entry(r.slide_id)
            .or_default()
            .push(PatchPrediction::new(geometry, probs));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let preds = vec![
            PatchPrediction::new(
                PatchGeometry::new(0, 179, 224).unwrap(),
                ProbabilityVector::new([0.1, 0.2, 0.3, 0.05, 0.25, 0.1]).unwrap(),
            ),
            PatchPrediction::new(
                PatchGeometry::new(5, 0, 224).unwrap(),
                ProbabilityVector::one_hot(HistologicPattern::Solid),
            ),
        ];
        write_atomic(&path, predictions_csv("s1", &preds).as_bytes()).unwrap();
        let back = read_predictions(&path, 224).unwrap();
        assert_eq!(back["s1"], preds);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("slide_id,x,y,p_lepidic,p_acinar,p_papillary,p_micropapillary,p_solid,p_benign\n"));
    }

    #[test]
    fn manifest_rules() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "slide_id,path\na,img/a.png\nb,/abs/b.png\n").unwrap();
        let rows = read_manifest(&path).unwrap();
        assert_eq!(rows[0].path, dir.path().join("img/a.png"));
        assert_eq!(rows[1].path, PathBuf::from("/abs/b.png"));
        fs::write(&path, "slide_id,path\na,x.png\na,y.png\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(IoError::Malformed { .. })));
        fs::write(&path, "slide,file\na,x.png\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(IoError::Malformed { .. })));
        assert!(matches!(
            read_manifest(&dir.path().join("missing.csv")),
            Err(IoError::Unreadable { .. })
        ));
    }

    #[test]
    fn annotations_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        fs::write(&path, "slide_id,x,y,width,height,label\ns,1,2,30,40,Acinar\n").unwrap();
        let crops = read_annotations(&path).unwrap();
        assert_eq!(crops[0].label, HistologicPattern::Acinar);
        assert_eq!(crops[0].rect.width, 30);
        fs::write(&path, "slide_id,x,y,width,height,label\ns,1,2,30,40,cribriform\n").unwrap();
        assert!(read_annotations(&path).is_err());
    }

    #[test]
    fn empty_tables_keep_header() {
        assert_eq!(patch_coords_csv("s", &[]), "slide_id,x,y,side\n");
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.json");
        write_json(&path, &serde_json::json!({"a": 1})).unwrap();
        let names: Vec<_> = fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec![std::ffi::OsString::from("out.json")]);
    }
}
