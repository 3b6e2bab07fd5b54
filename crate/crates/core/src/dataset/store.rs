//! Datasets on disk: one VGRID file per grid plus `manifest.json`.
//!
//! Each manifest record names the placed (`transformed`) grid and, optionally,
//! the canonical (`normalized`) grid. When the latter is missing on import it
//! is recovered by warping the placed grid through the inverse placement.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Category, Dataset, PartLabel, PartRecord, Shape, Split};
use crate::error::{Error, Result};
use crate::geometry::{apply_affine, read_vgrid, write_vgrid, AffineTransform, VoxelGrid};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub shape_id: u64,
    pub label: PartLabel,
    pub scale: f64,
    pub translation: [f64; 3],
    pub split: Split,
    pub transformed: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub category: Category,
    pub resolution: usize,
    pub records: Vec<ManifestRecord>,
}

fn write_grid(dir: &Path, name: &str, grid: &VoxelGrid) -> Result<()> {
    write_vgrid(grid, BufWriter::new(File::create(dir.join(name))?))
}

fn read_grid(dir: &Path, name: &str, resolution: usize) -> Result<VoxelGrid> {
    if name.contains("..") || Path::new(name).is_absolute() {
        return Err(Error::Format(format!("grid path `{name}` escapes the dataset directory")));
    }
    let g = read_vgrid(BufReader::new(File::open(dir.join(name))?))?;
    if g.resolution() != resolution {
        return Err(Error::ResolutionMismatch { expected: resolution, actual: g.resolution() });
    }
    Ok(g)
}

/// Writes every part of `data` into `dir` (created if needed).
pub fn export_dataset(data: &Dataset, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut records = Vec::new();
    for (split, shapes) in [(Split::Train, &data.train), (Split::Test, &data.test)] {
        for shape in shapes {
            for p in &shape.parts {
                let stem = format!("{:05}_{}", shape.id, p.label.as_str());
                let transformed = format!("{stem}_t.vgrid");
                let normalized = format!("{stem}_n.vgrid");
                write_grid(dir, &transformed, &p.transformed)?;
                write_grid(dir, &normalized, &p.normalized)?;
                records.push(ManifestRecord {
                    shape_id: shape.id,
                    label: p.label,
                    scale: p.xf.scale,
                    translation: p.xf.translation,
                    split,
                    transformed,
                    normalized: Some(normalized),
                });
            }
        }
    }
    let manifest = Manifest { category: data.category, resolution: data.resolution, records };
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(MANIFEST_FILE))?), &manifest)?;
    Ok(manifest)
}

/// Reads a dataset written by [`export_dataset`] or assembled by hand.
pub fn import_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(dir.join(MANIFEST_FILE))?))?;
    let r = manifest.resolution;
    let mut data = Dataset { category: manifest.category, resolution: r, train: Vec::new(), test: Vec::new() };
    for rec in &manifest.records {
        let xf = AffineTransform::new(rec.scale, rec.translation)?;
        let transformed = read_grid(dir, &rec.transformed, r)?;
        let normalized = match &rec.normalized {
            Some(name) => read_grid(dir, name, r)?,
            None => apply_affine(&transformed, &xf.inverse())?,
        };
        let part = PartRecord { label: rec.label, normalized, transformed, xf, shape_id: rec.shape_id };
        let shapes = match rec.split {
            Split::Train => &mut data.train,
            Split::Test => &mut data.test,
        };
        match shapes.iter_mut().find(|s| s.id == rec.shape_id) {
            Some(s) => {
                if s.parts.iter().any(|p| p.label == rec.label) {
                    return Err(Error::Format(format!("shape {} lists {:?} twice", rec.shape_id, rec.label)));
                }
                s.parts.push(part)
            }
            None => shapes.push(Shape { id: rec.shape_id, category: manifest.category, spec: None, parts: vec![part] }),
        }
    }
    let train_ids: Vec<u64> = data.train.iter().map(|s| s.id).collect();
    if let Some(s) = data.test.iter().find(|s| train_ids.contains(&s.id)) {
        return Err(Error::Format(format!("shape {} appears in both splits", s.id)));
    }
    if data.train.is_empty() && data.test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(data)
}
