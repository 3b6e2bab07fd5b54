//! Part-segmented training shapes and the derived training sets.

mod procedural;
mod store;

pub use procedural::{Aabb, BackStyle, Category, LegStyle, PartLabel, ShapeSpec, FLOOR};
pub use store::{export_dataset, import_dataset, Manifest, ManifestRecord, MANIFEST_FILE};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose_assembly, placement_for_bounds, AffineTransform, VoxelGrid};
use crate::latent::{LatentCode, PartEncoder};

/// Default number of partial-assembly samples drawn per shape.
pub const DEFAULT_PER_SHAPE: usize = 4;

/// One labeled part: its canonical (normalized) voxels, its placed
/// (transformed) voxels and the placement between them.
#[derive(Clone, Debug, PartialEq)]
pub struct PartRecord {
    pub label: PartLabel,
    pub normalized: VoxelGrid,
    pub transformed: VoxelGrid,
    pub xf: AffineTransform,
    pub shape_id: u64,
}

/// All parts of one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub id: u64,
    pub category: Category,
    pub spec: Option<ShapeSpec>,
    pub parts: Vec<PartRecord>,
}

impl Shape {
    pub fn assembly(&self) -> Result<VoxelGrid> {
        let grids: Vec<VoxelGrid> = self.parts.iter().map(|p| p.transformed.clone()).collect();
        compose_assembly(&grids)
    }

    pub fn labels(&self) -> Vec<PartLabel> {
        self.parts.iter().map(|p| p.label).collect()
    }

    pub fn part(&self, label: PartLabel) -> Option<&PartRecord> {
        self.parts.iter().find(|p| p.label == label)
    }
}

/// Labels every shape of a category carries. Chairs may also have arms.
pub fn template_labels(category: Category, arms: bool) -> Vec<PartLabel> {
    match category {
        Category::Chair if arms => vec![PartLabel::Seat, PartLabel::Back, PartLabel::Legs, PartLabel::Arms],
        Category::Chair => vec![PartLabel::Seat, PartLabel::Back, PartLabel::Legs],
        Category::Table => vec![PartLabel::Top, PartLabel::Legs],
    }
}

/// Rasterizes a shape's parts at resolution `r`.
pub fn generate_shape(spec: &ShapeSpec, resolution: usize, shape_id: u64) -> Result<Vec<PartRecord>> {
    spec.validate()?;
    if resolution < 4 {
        return Err(Error::InvalidSpec(format!("resolution {resolution} is too small")));
    }
    let mut parts = Vec::new();
    for (label, boxes) in spec.part_boxes() {
        let boxes: Vec<Aabb> = boxes.iter().map(|b| b.snapped(resolution)).collect();
        let (lo, hi) = Aabb::union_bounds(&boxes);
        let xf = placement_for_bounds(lo, hi)?;
        let inv = xf.inverse();
        let mut transformed = VoxelGrid::zeros(resolution);
        let mut normalized = VoxelGrid::zeros(resolution);
        for b in &boxes {
            transformed.fill_box(b.lo, b.hi);
            normalized.fill_box_coverage(inv.apply_point(b.lo), inv.apply_point(b.hi));
        }
        parts.push(PartRecord { label, normalized, transformed, xf, shape_id });
    }
    Ok(parts)
}

/// A generated dataset split 4:1 into train and test shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub category: Category,
    pub resolution: usize,
    pub train: Vec<Shape>,
    pub test: Vec<Shape>,
}

impl Dataset {
    pub fn train_parts(&self) -> impl Iterator<Item = &PartRecord> {
        self.train.iter().flat_map(|s| &s.parts)
    }

    pub fn test_parts(&self) -> impl Iterator<Item = &PartRecord> {
        self.test.iter().flat_map(|s| &s.parts)
    }
}

/// Per-shape seed, independent of generation order.
fn shape_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Generates `n` shapes and splits them 4:1 by a seeded shuffle. Shape ids are
/// `0..n`.
pub fn make_dataset(category: Category, n: usize, seed: u64, resolution: usize) -> Result<Dataset> {
    if n < 5 {
        return Err(Error::InvalidArgument(format!("need at least 5 shapes, got {n}")));
    }
    let mut shapes = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let spec = ShapeSpec::sample(category, shape_seed(seed, i));
        let parts = generate_shape(&spec, resolution, i)?;
        shapes.push(Shape { id: i, category, spec: Some(spec), parts });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 4 / 5;
    let mut slots: Vec<Option<Shape>> = shapes.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<Shape> {
        let mut v: Vec<Shape> = idx.iter().map(|&i| slots[i].take().unwrap()).collect();
        v.sort_by_key(|s| s.id);
        v
    };
    let train = take(&order[..n_train]);
    let test = take(&order[n_train..]);
    Ok(Dataset { category, resolution, train, test })
}

/// A partial assembly paired with a complementary part to suggest.
#[derive(Clone, Debug, PartialEq)]
pub struct PsnSample {
    pub shape_id: u64,
    pub assembly: VoxelGrid,
    pub assembly_labels: Vec<PartLabel>,
    pub target_label: PartLabel,
    pub target: VoxelGrid,
    pub target_latent: Option<LatentCode>,
    pub assembly_code: Option<LatentCode>,
}

impl PsnSample {
    pub fn is_sealed(&self) -> bool {
        self.target_latent.is_some() && self.assembly_code.is_some()
    }
}

/// Samples plus the number of shapes skipped for having a single part.
#[derive(Clone, Debug, PartialEq)]
pub struct PsnSamples {
    pub samples: Vec<PsnSample>,
    pub skipped: usize,
}

/// Draws `per_shape` samples from every shape with at least two parts. Each
/// assembly is a uniformly chosen non-empty proper subset of the shape's
/// placed parts; the target is a uniformly chosen part outside it.
pub fn make_psn_samples(shapes: &[Shape], per_shape: usize, seed: u64) -> Result<PsnSamples> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    let mut skipped = 0;
    for shape in shapes {
        let n = shape.parts.len();
        if n < 2 {
            skipped += 1;
            continue;
        }
        for _ in 0..per_shape {
            // masks 1..2^n - 2 are exactly the non-empty proper subsets
            let mask: u32 = rng.gen_range(1..(1u32 << n) - 1);
            let inside: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let outside: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 0).collect();
            let target = &shape.parts[*outside.choose(&mut rng).unwrap()];
            let grids: Vec<VoxelGrid> = inside.iter().map(|&i| shape.parts[i].transformed.clone()).collect();
            samples.push(PsnSample {
                shape_id: shape.id,
                assembly: compose_assembly(&grids)?,
                assembly_labels: inside.iter().map(|&i| shape.parts[i].label).collect(),
                target_label: target.label,
                target: target.normalized.clone(),
                target_latent: None,
                assembly_code: None,
            });
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} single-part shapes");
    }
    Ok(PsnSamples { samples, skipped })
}

/// Fills in target and assembly codes with `encoder`.
pub fn seal_latents(samples: Vec<PsnSample>, encoder: &dyn PartEncoder) -> Result<Vec<PsnSample>> {
    if samples.is_empty() {
        return Ok(samples);
    }
    let targets: Vec<&VoxelGrid> = samples.iter().map(|s| &s.target).collect();
    let assemblies: Vec<&VoxelGrid> = samples.iter().map(|s| &s.assembly).collect();
    let z = encoder.encode_batch(&targets)?;
    let y = encoder.encode_batch(&assemblies)?;
    Ok(samples
        .into_iter()
        .zip(z.into_iter().zip(y))
        .map(|(mut s, (z, y))| {
            s.target_latent = Some(z);
            s.assembly_code = Some(y);
            s
        })
        .collect())
}

/// Whether the occupied voxels form a single 26-connected component.
pub fn is_connected(grid: &VoxelGrid, threshold: f32) -> bool {
    let r = grid.resolution() as i64;
    let occ: Vec<[usize; 3]> = grid.occupied_indices(threshold).collect();
    let Some(&start) = occ.first() else {
        return true;
    };
    let mut seen = vec![false; grid.values().len()];
    let mut stack = vec![start];
    seen[grid.index(start[0], start[1], start[2])] = true;
    let mut reached = 1;
    while let Some([x, y, z]) = stack.pop() {
        for dx in -1..=1i64 {
            for dy in -1..=1i64 {
                for dz in -1..=1i64 {
                    let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    if [nx, ny, nz].iter().any(|&c| c < 0 || c >= r) {
                        continue;
                    }
                    let (nx, ny, nz) = (nx as usize, ny as usize, nz as usize);
                    let i = grid.index(nx, ny, nz);
                    if !seen[i] && grid.values()[i] >= threshold {
                        seen[i] = true;
                        reached += 1;
                        stack.push([nx, ny, nz]);
                    }
                }
            }
        }
    }
    reached == occ.len()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}
