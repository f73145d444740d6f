//! MARS-style directory layout.
//!
//! ```text
//! <root>/<person:04>/<person:04>C<cam>T<tracklet:04>F<frame:03>.<png|jpg>
//! <root>/attributes.csv          tracklet_id,<attr1>,<attr2>,...
//! <root>/attributes.schema.json  {"attributes":[{"name","arity","group"}]}
//! ```
//!
//! The schema sidecar always sits next to the CSV with the `.schema.json`
//! extension.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::schema::AttributeSchema;
use super::Tracklet;
use crate::error::{Error, Result};

pub const ATTRIBUTE_CSV: &str = "attributes.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameName {
    pub person_id: u32,
    pub camera_id: u32,
    pub tracklet_index: u32,
    pub frame_index: u32,
    /// `0001C1T0001` part of `0001C1T0001F003.png`.
    pub tracklet_id: String,
}

fn take_digits(s: &str) -> Option<(u32, &str)> {
    let end = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    if end == 0 {
        return None;
    }
    Some((s[..end].parse().ok()?, &s[end..]))
}

/// Parses `<person>C<cam>T<tracklet>F<frame>.<ext>`.
pub fn parse_frame_name(file_name: &str) -> Option<FrameName> {
    let (stem, ext) = file_name.rsplit_once('.')?;
    if !matches!(ext.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg") {
        return None;
    }
    let (person_id, rest) = take_digits(stem)?;
    let (camera_id, rest) = take_digits(rest.strip_prefix('C')?)?;
    let (tracklet_index, rest) = take_digits(rest.strip_prefix('T')?)?;
    let f_pos = stem.len() - rest.len();
    let (frame_index, rest) = take_digits(rest.strip_prefix('F')?)?;
    if !rest.is_empty() {
        return None;
    }
    Some(FrameName {
        person_id,
        camera_id,
        tracklet_index,
        frame_index,
        tracklet_id: stem[..f_pos].to_string(),
    })
}

fn schema_path(csv: &Path) -> PathBuf {
    csv.with_extension("schema.json")
}

/// Writes tracklets, the attribute CSV and its schema sidecar under `root`.
pub fn export_dataset(tracklets: &[Tracklet], schema: &AttributeSchema, root: &Path) -> Result<()> {
    fs::create_dir_all(root)?;
    let csv_path = root.join(ATTRIBUTE_CSV);
    let mut csv = csv::Writer::from_path(&csv_path)?;
    let mut header = vec!["tracklet_id".to_string()];
    header.extend(schema.attributes().iter().map(|a| a.name.clone()));
    csv.write_record(&header)?;
    for t in tracklets {
        schema.validate_labels(&t.attributes)?;
        let dir = root.join(format!("{:04}", t.person_id));
        fs::create_dir_all(&dir)?;
        for (i, frame) in t.frames.iter().enumerate() {
            frame.save(dir.join(format!("{}F{:03}.png", t.tracklet_id, i)))?;
        }
        let mut row = vec![t.tracklet_id.clone()];
        row.extend(schema.attributes().iter().map(|a| t.attributes[&a.name].to_string()));
        csv.write_record(&row)?;
    }
    csv.flush()?;
    schema.write_json(&schema_path(&csv_path))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub schema: AttributeSchema,
    pub tracklets: Vec<Tracklet>,
    /// Tracklets found on disk but absent from the attribute CSV.
    pub dropped: usize,
}

fn read_attribute_csv(path: &Path, schema: &AttributeSchema) -> Result<BTreeMap<String, BTreeMap<String, u32>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("tracklet_id") {
        return Err(Error::layout(path, "first CSV column must be `tracklet_id`"));
    }
    let mut columns = Vec::new();
    for a in schema.attributes() {
        let col = header
            .iter()
            .position(|h| h == a.name)
            .ok_or_else(|| Error::layout(path, format!("CSV lacks attribute column `{}`", a.name)))?;
        columns.push((a.name.clone(), col));
    }
    let mut out = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let mut labels = BTreeMap::new();
        for (name, col) in &columns {
            let raw = rec.get(*col).unwrap_or_default();
            let v: u32 = raw.trim().parse().map_err(|_| {
                Error::layout(path, format!("row {}: `{name}` is not an integer: `{raw}`", line + 2))
            })?;
            labels.insert(name.clone(), v);
        }
        schema
            .validate_labels(&labels)
            .map_err(|e| Error::layout(path, format!("row {}: {e}", line + 2)))?;
        out.insert(id, labels);
    }
    Ok(out)
}

/// Reads a MARS-style tree. Tracklets without an attribute row are dropped
/// and counted.
pub fn load_mars_layout(root: &Path, attribute_csv: &Path) -> Result<LoadedDataset> {
    if !attribute_csv.is_file() {
        return Err(Error::MissingAnnotation(attribute_csv.to_path_buf()));
    }
    let sp = schema_path(attribute_csv);
    if !sp.is_file() {
        return Err(Error::MissingAnnotation(sp));
    }
    let schema = AttributeSchema::read_json(&sp)?;
    let labels = read_attribute_csv(attribute_csv, &schema)?;

    let mut person_dirs: Vec<PathBuf> = Vec::new();
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        if path.is_dir() {
            person_dirs.push(path);
        }
    }
    person_dirs.sort();

    // tracklet id -> (person, camera, frames keyed by index)
    let mut found: BTreeMap<String, (u32, u32, BTreeMap<u32, PathBuf>)> = BTreeMap::new();
    for dir in person_dirs {
        let dir_name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let folder_pid: u32 = dir_name
            .parse()
            .map_err(|_| Error::layout(&dir, "identity folder name is not numeric"))?;
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.sort();
        for file in files {
            let name = file.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let parsed = parse_frame_name(name)
                .ok_or_else(|| Error::layout(&file, format!("malformed frame file name `{name}`")))?;
            if parsed.person_id != folder_pid {
                return Err(Error::layout(
                    &file,
                    format!("frame belongs to identity {} but sits in folder {folder_pid}", parsed.person_id),
                ));
            }
            let entry = found
                .entry(parsed.tracklet_id.clone())
                .or_insert_with(|| (parsed.person_id, parsed.camera_id, BTreeMap::new()));
            if entry.2.insert(parsed.frame_index, file.clone()).is_some() {
                return Err(Error::layout(&file, "duplicate frame index"));
            }
        }
    }

    let mut tracklets = Vec::new();
    let mut dropped = 0;
    for (tracklet_id, (person_id, camera_id, frame_paths)) in found {
        let Some(attrs) = labels.get(&tracklet_id) else {
            dropped += 1;
            continue;
        };
        let frames = frame_paths
            .values()
            .map(|p| Ok(Arc::new(image::open(p)?.to_rgb8())))
            .collect::<Result<Vec<_>>>()?;
        tracklets.push(Tracklet {
            tracklet_id,
            person_id,
            camera_id,
            frames,
            attributes: attrs.clone(),
        });
    }
    if dropped > 0 {
        log::warn!(
            "dropped {dropped} tracklet(s) under {} with no row in {}",
            root.display(),
            attribute_csv.display()
        );
    }
    Ok(LoadedDataset {
        schema,
        tracklets,
        dropped,
    })
}
