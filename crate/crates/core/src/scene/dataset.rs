use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::{is_missing, LaneLabel, Scene, MISSING};
use crate::error::{Error, Result};
use crate::tensor::{Image, Mask};

pub const ANNOTATION_FILE: &str = "anno.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

/// One line of `anno.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRecord {
    raw_file: String,
    lanes: Vec<Vec<f64>>,
    h_samples: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exist: Option<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub record: usize,
    pub road_mask: String,
    pub lane_mask: String,
    pub env_mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub split: String,
    /// Snapshot of whatever produced the dataset (generator or poison config).
    pub config: serde_json::Value,
    pub entries: Vec<ManifestEntry>,
}

fn record_id(i: usize) -> String {
    format!("{i:05}")
}

fn save_rgb(img: &Image, path: &Path) -> Result<()> {
    let (h, w, ch) = img.shape();
    if ch != 3 {
        return Err(Error::DatasetWrite(format!(
            "only 3-channel images can be written, got {ch}"
        )));
    }
    let buf = RgbImage::from_raw(w as u32, h as u32, img.to_u8())
        .ok_or_else(|| Error::DatasetWrite("buffer size mismatch".into()))?;
    buf.save(path).map_err(|e| Error::DatasetWrite(format!("{}: {e}", path.display())))
}

fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    let buf = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, mask.to_u8())
        .ok_or_else(|| Error::DatasetWrite("mask buffer size mismatch".into()))?;
    buf.save(path).map_err(|e| Error::DatasetWrite(format!("{}: {e}", path.display())))
}

/// Writes scenes as PNG images, single-channel PNG masks, `anno.jsonl` and
/// `manifest.json` under `root`.
pub fn write_dataset(
    scenes: &[Scene],
    root: &Path,
    seed: u64,
    split: &str,
    config: serde_json::Value,
) -> Result<DatasetManifest> {
    for dir in ["images", "masks"] {
        let p = root.join(dir);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let anno_path = root.join(ANNOTATION_FILE);
    let file = fs::File::create(&anno_path).map_err(|e| Error::io(&anno_path, e))?;
    let mut anno = BufWriter::new(file);
    let mut entries = Vec::with_capacity(scenes.len());

    for (i, scene) in scenes.iter().enumerate() {
        scene.validate()?;
        let id = record_id(i);
        let entry = ManifestEntry {
            image: format!("images/{id}.png"),
            record: i,
            road_mask: format!("masks/{id}_road.png"),
            lane_mask: format!("masks/{id}_lane.png"),
            env_mask: format!("masks/{id}_env.png"),
        };
        save_rgb(&scene.image, &root.join(&entry.image))?;
        save_mask(&scene.road_mask, &root.join(&entry.road_mask))?;
        save_mask(&scene.lane_mask, &root.join(&entry.lane_mask))?;
        save_mask(&scene.env_mask, &root.join(&entry.env_mask))?;

        let label = &scene.label;
        let record = AnnotationRecord {
            raw_file: entry.image.clone(),
            lanes: label.lanes.clone(),
            h_samples: label.row_anchors.clone(),
            exist: Some(label.exist.iter().map(|e| u8::from(*e)).collect()),
        };
        let line = serde_json::to_string(&record)?;
        writeln!(anno, "{line}").map_err(|e| Error::io(&anno_path, e))?;
        entries.push(entry);
    }
    anno.flush().map_err(|e| Error::io(&anno_path, e))?;

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed,
        split: split.to_string(),
        config,
        entries,
    };
    let mpath = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

fn parse_err(record: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        record: record.into(),
        message: message.into(),
    }
}

fn load_mask(root: &Path, rel: &str, h: usize, w: usize) -> Result<Mask> {
    let path = root.join(rel);
    let img = image::open(&path)
        .map_err(|e| parse_err(rel, format!("cannot read mask: {e}")))?
        .to_luma8();
    if (img.height() as usize, img.width() as usize) != (h, w) {
        return Err(parse_err(rel, "mask size differs from image"));
    }
    Mask::from_vec(h, w, img.as_raw().iter().map(|v| *v >= 128).collect())
}

fn label_from_record(rec: AnnotationRecord, width: usize) -> Result<LaneLabel> {
    let id = rec.raw_file.clone();
    let m = rec.h_samples.len();
    let n = rec.lanes.len();
    let exist: Vec<bool> = match rec.exist {
        Some(e) => {
            if e.len() != n {
                return Err(parse_err(&id, format!("{} exist flags for {n} lanes", e.len())));
            }
            e.iter().map(|v| *v != 0).collect()
        }
        None => rec
            .lanes
            .iter()
            .map(|l| l.iter().any(|c| !is_missing(*c)))
            .collect(),
    };
    let mut lanes = Vec::with_capacity(n);
    for (i, lane) in rec.lanes.into_iter().enumerate() {
        if lane.len() != m {
            return Err(parse_err(
                &id,
                format!("lane {i} has {} points but there are {m} h_samples", lane.len()),
            ));
        }
        // TuSimple marks absent points with any negative value; normalise to -2.
        let lane: Vec<f64> = lane
            .into_iter()
            .map(|c| if c < 0.0 { MISSING } else { c })
            .collect();
        lanes.push(lane);
    }
    let label = LaneLabel {
        row_anchors: rec.h_samples,
        lanes,
        exist,
        width,
    };
    label.validate().map_err(|e| parse_err(&id, e.to_string()))?;
    Ok(label)
}

/// Inverse of [`write_dataset`]. Errors name the offending record.
pub fn read_dataset(root: &Path) -> Result<(DatasetManifest, Vec<Scene>)> {
    let mpath = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| parse_err(MANIFEST_FILE, e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(parse_err(
            MANIFEST_FILE,
            format!("unsupported manifest version {}", manifest.version),
        ));
    }

    let anno_path = root.join(ANNOTATION_FILE);
    let file = fs::File::open(&anno_path).map_err(|e| Error::io(&anno_path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&anno_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err(format!("{ANNOTATION_FILE}:{}", lineno + 1), e.to_string()))?;
        records.push(Some(rec));
    }

    let mut scenes = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let rec = records
            .get_mut(entry.record)
            .and_then(Option::take)
            .ok_or_else(|| parse_err(&entry.image, "annotation record missing or reused"))?;
        if rec.raw_file != entry.image {
            return Err(parse_err(
                &entry.image,
                format!("annotation refers to {}", rec.raw_file),
            ));
        }
        let ipath = root.join(&entry.image);
        let rgb = image::open(&ipath)
            .map_err(|e| parse_err(&entry.image, format!("cannot read image: {e}")))?
            .to_rgb8();
        let (h, w) = (rgb.height() as usize, rgb.width() as usize);
        let image = Image::from_u8(h, w, 3, rgb.as_raw())?;
        let label = label_from_record(rec, w)?;
        if let Some(r) = label.row_anchors.iter().find(|r| **r >= h) {
            return Err(parse_err(&entry.image, format!("h_sample {r} outside image")));
        }
        scenes.push(Scene {
            image,
            label,
            road_mask: load_mask(root, &entry.road_mask, h, w)?,
            lane_mask: load_mask(root, &entry.lane_mask, h, w)?,
            env_mask: load_mask(root, &entry.env_mask, h, w)?,
        });
    }
    Ok((manifest, scenes))
}
