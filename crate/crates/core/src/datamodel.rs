//! Core domain types, dataset ingestion/validation, and camera-ID splitting.
//!
//! Wire formats (all plain JSON):
//! - `annotations.json`: `{"images": [{"id", "file_name", "camera_id",
//!   "time_of_day", "width", "height"}], "annotations": [{"id", "image_id",
//!   "category_id", "bbox": [x, y, w, h]}], "categories": [{"id", "name"}]}`
//! - `predictions.json`: array of `{"image_id", "category_id",
//!   "bbox": [x, y, w, h], "score"}`
//! - `split.json`: object mapping split name to an array of camera ids.
//!
//! Boxes are `[x, y, w, h]` with `(x, y)` the top-left corner, in pixels.
//! Everything is validated at load time; downstream modules may assume the
//! invariants hold (in particular `w > 0` and `h > 0`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Scene illumination tag, serialized as a single letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TimeOfDay {
    #[serde(rename = "M")]
    Morning,
    #[serde(rename = "A")]
    Afternoon,
    #[serde(rename = "E")]
    Evening,
    #[serde(rename = "N")]
    Night,
}

impl TimeOfDay {
    /// All tags in canonical (reporting) order.
    pub const ALL: [TimeOfDay; 4] = [
        TimeOfDay::Morning,
        TimeOfDay::Afternoon,
        TimeOfDay::Evening,
        TimeOfDay::Night,
    ];

    pub fn letter(self) -> &'static str {
        match self {
            TimeOfDay::Morning => "M",
            TimeOfDay::Afternoon => "A",
            TimeOfDay::Evening => "E",
            TimeOfDay::Night => "N",
        }
    }
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.letter())
    }
}

/// Object class with a stable integer id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

/// The default five-class registry used by the simulation harness and tests.
pub fn default_categories() -> Vec<Category> {
    ["Bus", "Bike", "Car", "Pedestrian", "Truck"]
        .iter()
        .enumerate()
        .map(|(i, name)| Category {
            id: i as u64 + 1,
            name: (*name).to_string(),
        })
        .collect()
}

/// Axis-aligned box, `[x, y, w, h]` top-left convention, pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", from = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    fn check(&self, what: &str) -> Result<()> {
        let finite = [self.x, self.y, self.w, self.h]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain(format!("{what}: bbox has non-finite values")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::Domain(format!(
                "{what}: bbox size must be positive, got w={} h={}",
                self.w, self.h
            )));
        }
        Ok(())
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// Per-image metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    #[serde(rename = "id")]
    pub image_id: u64,
    pub file_name: String,
    pub camera_id: u32,
    pub time_of_day: TimeOfDay,
    pub width: u32,
    pub height: u32,
}

/// Ground-truth (or pseudo-) annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(rename = "id")]
    pub ann_id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
}

/// One detector output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub score: f64,
}

/// A validated dataset: scenes, annotations, and the category registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    #[serde(skip)]
    pub name: String,
    #[serde(rename = "images")]
    pub scenes: Vec<SceneMeta>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        scenes: Vec<SceneMeta>,
        annotations: Vec<Annotation>,
        categories: Vec<Category>,
    ) -> Result<Self> {
        let d = Dataset {
            name: name.into(),
            scenes,
            annotations,
            categories,
        };
        d.validate()?;
        Ok(d)
    }

    /// Checks every invariant: unique ids, resolvable references, positive
    /// box and image sizes.
    pub fn validate(&self) -> Result<()> {
        let mut image_ids = BTreeSet::new();
        for s in &self.scenes {
            if !image_ids.insert(s.image_id) {
                return Err(Error::Integrity(format!("duplicate image id {}", s.image_id)));
            }
            if s.width == 0 || s.height == 0 {
                return Err(Error::Domain(format!(
                    "image {} has nonpositive dimensions {}x{}",
                    s.image_id, s.width, s.height
                )));
            }
        }
        let mut cat_ids = BTreeSet::new();
        let mut cat_names = BTreeSet::new();
        for c in &self.categories {
            if c.id == 0 {
                return Err(Error::Domain(format!("category id must be >= 1: {:?}", c.name)));
            }
            if !cat_ids.insert(c.id) {
                return Err(Error::Integrity(format!("duplicate category id {}", c.id)));
            }
            if c.name.is_empty() {
                return Err(Error::Domain(format!("category {} has an empty name", c.id)));
            }
            if !cat_names.insert(c.name.clone()) {
                return Err(Error::Integrity(format!("duplicate category name {:?}", c.name)));
            }
        }
        let mut ann_ids = BTreeSet::new();
        for a in &self.annotations {
            if !ann_ids.insert(a.ann_id) {
                return Err(Error::Integrity(format!("duplicate annotation id {}", a.ann_id)));
            }
            if !image_ids.contains(&a.image_id) {
                return Err(Error::Integrity(format!(
                    "annotation {} references missing image {}",
                    a.ann_id, a.image_id
                )));
            }
            if !cat_ids.contains(&a.category_id) {
                return Err(Error::Integrity(format!(
                    "annotation {} references unknown category {}",
                    a.ann_id, a.category_id
                )));
            }
            a.bbox.check(&format!("annotation {}", a.ann_id))?;
        }
        Ok(())
    }

    pub fn category(&self, id: u64) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn scene_ids(&self) -> BTreeSet<u64> {
        self.scenes.iter().map(|s| s.image_id).collect()
    }

    /// Annotations grouped per image, in input order.
    pub fn annotations_by_image(&self) -> BTreeMap<u64, Vec<&Annotation>> {
        let mut map: BTreeMap<u64, Vec<&Annotation>> = BTreeMap::new();
        for a in &self.annotations {
            map.entry(a.image_id).or_default().push(a);
        }
        map
    }

    /// A copy containing only scenes with the given tag (and their
    /// annotations). The category registry is kept whole.
    pub fn restrict_to_tag(&self, tag: TimeOfDay) -> Dataset {
        let scenes: Vec<SceneMeta> = self
            .scenes
            .iter()
            .filter(|s| s.time_of_day == tag)
            .cloned()
            .collect();
        let ids: BTreeSet<u64> = scenes.iter().map(|s| s.image_id).collect();
        Dataset {
            name: format!("{}[{}]", self.name, tag),
            annotations: self
                .annotations
                .iter()
                .filter(|a| ids.contains(&a.image_id))
                .cloned()
                .collect(),
            scenes,
            categories: self.categories.clone(),
        }
    }

    /// A copy keeping only the annotations whose id is in `keep`. Scenes and
    /// categories are untouched.
    pub fn restrict_annotations(&self, keep: &BTreeSet<u64>) -> Dataset {
        Dataset {
            name: self.name.clone(),
            scenes: self.scenes.clone(),
            annotations: self
                .annotations
                .iter()
                .filter(|a| keep.contains(&a.ann_id))
                .cloned()
                .collect(),
            categories: self.categories.clone(),
        }
    }
}

/// Disjoint camera-id sets, one per named split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitSpec {
    pub splits: BTreeMap<String, BTreeSet<u32>>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeMap<u32, &str> = BTreeMap::new();
        for (name, cameras) in &self.splits {
            for cam in cameras {
                if let Some(other) = seen.insert(*cam, name) {
                    return Err(Error::Domain(format!(
                        "camera {cam} appears in both {other:?} and {name:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Loads and fully validates an `annotations.json` file. The dataset name is
/// taken from the file stem.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = io::read_to_string(path)?;
    let mut d: Dataset = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    d.name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    d.validate()?;
    Ok(d)
}

/// Writes a dataset in canonical order (scenes, annotations, and categories
/// sorted by id), so two content-equal datasets serialize identically.
pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let mut canon = d.clone();
    canon.scenes.sort_by_key(|s| s.image_id);
    canon.annotations.sort_by_key(|a| a.ann_id);
    canon.categories.sort_by_key(|c| c.id);
    let mut text = serde_json::to_string_pretty(&canon).expect("dataset serializes");
    text.push('\n');
    io::write_atomic(path, text.as_bytes())
}

/// Loads a `predictions.json` file and sorts it by (image_id, descending
/// score). Scores outside `[0, 1]` and degenerate boxes are rejected.
pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = io::read_to_string(path)?;
    let mut preds: Vec<Prediction> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    for (i, p) in preds.iter().enumerate() {
        if !p.score.is_finite() || p.score < 0.0 || p.score > 1.0 {
            return Err(Error::Domain(format!(
                "prediction {i}: score {} outside [0, 1]",
                p.score
            )));
        }
        p.bbox.check(&format!("prediction {i}"))?;
    }
    preds.sort_by(|a, b| {
        a.image_id
            .cmp(&b.image_id)
            .then(b.score.partial_cmp(&a.score).expect("scores are finite"))
    });
    Ok(preds)
}

/// Writes predictions as a JSON array in their current order.
pub fn save_predictions(preds: &[Prediction], path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(preds).expect("predictions serialize");
    text.push('\n');
    io::write_atomic(path, text.as_bytes())
}

/// Loads a `split.json` file and checks that the camera sets are disjoint.
pub fn load_split(path: &Path) -> Result<SplitSpec> {
    let text = io::read_to_string(path)?;
    let spec: SplitSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Partitions a dataset by camera id. Each output dataset holds exactly the
/// scenes (and their annotations) whose camera is in the split's set; scenes
/// whose camera appears in no split are omitted entirely.
pub fn split_by_camera(d: &Dataset, spec: &SplitSpec) -> Result<BTreeMap<String, Dataset>> {
    spec.validate()?;
    let mut out = BTreeMap::new();
    for (name, cameras) in &spec.splits {
        let scenes: Vec<SceneMeta> = d
            .scenes
            .iter()
            .filter(|s| cameras.contains(&s.camera_id))
            .cloned()
            .collect();
        let ids: BTreeSet<u64> = scenes.iter().map(|s| s.image_id).collect();
        let annotations = d
            .annotations
            .iter()
            .filter(|a| ids.contains(&a.image_id))
            .cloned()
            .collect();
        out.insert(
            name.clone(),
            Dataset {
                name: name.clone(),
                scenes,
                annotations,
                categories: d.categories.clone(),
            },
        );
    }
    Ok(out)
}

/// Counts scenes per (camera_id, time_of_day) cell.
pub fn tag_histogram(d: &Dataset) -> BTreeMap<(u32, TimeOfDay), u64> {
    let mut hist = BTreeMap::new();
    for s in &d.scenes {
        *hist.entry((s.camera_id, s.time_of_day)).or_insert(0) += 1;
    }
    hist
}
