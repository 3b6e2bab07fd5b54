//! Voxel grids, uniform-scale placement transforms, point clouds and meshes.
//!
//! Every grid lives in the axis-aligned frame `[-0.5, 0.5]^3`. Voxel `i` along
//! an axis has its center at `(i + 0.5) / R - 0.5`. Storage is x-major: the
//! flat index of `(x, y, z)` is `(x * R + y) * R + z`.

mod io;
mod mesh;
mod warp;

pub use io::{read_obj, read_vgrid, write_obj, write_pointcloud_csv, write_vgrid, VGRID_MAGIC};
pub use mesh::{marching_cubes, sample_mesh_points};
pub use warp::{apply_affine, resize, scale_axes, warp_backward, warp_forward};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default working resolution.
pub const DEFAULT_RESOLUTION: usize = 32;

/// Fraction of the frame a normalized part's bounding box spans.
pub const NORMALIZED_EXTENT: f64 = 0.8;

/// Dense cubic occupancy volume with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    resolution: usize,
    values: Vec<f32>,
}

impl VoxelGrid {
    pub fn zeros(resolution: usize) -> Self {
        assert!(resolution > 0, "resolution must be positive");
        Self {
            resolution,
            values: vec![0.0; resolution * resolution * resolution],
        }
    }

    pub fn filled(resolution: usize, value: f32) -> Self {
        let mut g = Self::zeros(resolution);
        g.values.fill(value.clamp(0.0, 1.0));
        g
    }

    /// Builds a grid from raw values, clamping each into `[0, 1]`.
    pub fn from_values(resolution: usize, values: Vec<f32>) -> Result<Self> {
        if resolution == 0 || values.len() != resolution * resolution * resolution {
            return Err(Error::Shape(format!(
                "{} values do not form a {resolution}^3 grid",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite voxel value".into()));
        }
        let values = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self { resolution, values })
    }

    /// Samples `f` at every voxel center.
    pub fn from_fn(resolution: usize, mut f: impl FnMut([f64; 3]) -> f32) -> Self {
        let mut g = Self::zeros(resolution);
        for x in 0..resolution {
            for y in 0..resolution {
                for z in 0..resolution {
                    let c = g.center([x, y, z]);
                    let i = g.index(x, y, z);
                    g.values[i] = f(c).clamp(0.0, 1.0);
                }
            }
        }
        g
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.resolution + y) * self.resolution + z
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.values[i] = v.clamp(0.0, 1.0);
    }

    /// Center of voxel `idx` in frame coordinates.
    pub fn center(&self, idx: [usize; 3]) -> [f64; 3] {
        let r = self.resolution as f64;
        idx.map(|i| (i as f64 + 0.5) / r - 0.5)
    }

    pub fn voxel_size(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    /// Number of voxels with value `>= threshold`.
    pub fn count_occupied(&self, threshold: f32) -> usize {
        self.values.iter().filter(|&&v| v >= threshold).count()
    }

    pub fn is_empty(&self, threshold: f32) -> bool {
        self.count_occupied(threshold) == 0
    }

    /// Binary copy: 1 where `value >= threshold`, else 0.
    pub fn threshold(&self, threshold: f32) -> Self {
        Self {
            resolution: self.resolution,
            values: self
                .values
                .iter()
                .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Indices of voxels with value `>= threshold`.
    pub fn occupied_indices(&self, threshold: f32) -> impl Iterator<Item = [usize; 3]> + '_ {
        let r = self.resolution;
        self.values
            .iter()
            .enumerate()
            .filter(move |(_, &v)| v >= threshold)
            .map(move |(i, _)| [i / (r * r), (i / r) % r, i % r])
    }

    /// Fills the voxels whose centers fall inside the box `[lo, hi]` with 1.
    pub fn fill_box(&mut self, lo: [f64; 3], hi: [f64; 3]) {
        let r = self.resolution;
        let range = |a: f64, b: f64| {
            // centers (i + 0.5)/R - 0.5 in [a, b]
            let first = ((a + 0.5) * r as f64 - 0.5).ceil().max(0.0) as usize;
            let last = ((b + 0.5) * r as f64 - 0.5).floor();
            if last < 0.0 {
                return first..first;
            }
            first..(last as usize + 1).min(r)
        };
        for x in range(lo[0], hi[0]) {
            for y in range(lo[1], hi[1]) {
                for z in range(lo[2], hi[2]) {
                    let i = self.index(x, y, z);
                    self.values[i] = 1.0;
                }
            }
        }
    }

    /// Like [`fill_box`](Self::fill_box) but each voxel receives the fraction
    /// of its cell covered by the box; overlapping boxes combine by max.
    pub fn fill_box_coverage(&mut self, lo: [f64; 3], hi: [f64; 3]) {
        let r = self.resolution;
        let rf = r as f64;
        let cover = |a: usize, i: usize| {
            let (c0, c1) = (i as f64 / rf - 0.5, (i + 1) as f64 / rf - 0.5);
            ((hi[a].min(c1) - lo[a].max(c0)) * rf).max(0.0)
        };
        let span = |a: usize| {
            let first = ((lo[a] + 0.5) * rf).floor().clamp(0.0, rf) as usize;
            let last = ((hi[a] + 0.5) * rf).ceil().clamp(0.0, rf) as usize;
            first..last
        };
        for x in span(0) {
            for y in span(1) {
                for z in span(2) {
                    let c = (cover(0, x) * cover(1, y) * cover(2, z)) as f32;
                    let i = self.index(x, y, z);
                    self.values[i] = self.values[i].max(c);
                }
            }
        }
    }

    /// Axis-aligned bounds `[lo, hi]` of the occupied voxels, measured on voxel
    /// boundaries (not centers).
    pub fn occupied_bounds(&self, threshold: f32) -> Option<([f64; 3], [f64; 3])> {
        let mut min = [usize::MAX; 3];
        let mut max = [0usize; 3];
        let mut any = false;
        for idx in self.occupied_indices(threshold) {
            any = true;
            for a in 0..3 {
                min[a] = min[a].min(idx[a]);
                max[a] = max[a].max(idx[a]);
            }
        }
        if !any {
            return None;
        }
        let r = self.resolution as f64;
        Some((
            min.map(|i| i as f64 / r - 0.5),
            max.map(|i| (i + 1) as f64 / r - 0.5),
        ))
    }

    /// Voxel intersection-over-union after thresholding both grids.
    pub fn iou(&self, other: &VoxelGrid, threshold: f32) -> Result<f64> {
        check_same_resolution(self, other)?;
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.values.iter().zip(&other.values) {
            let (a, b) = (a >= threshold, b >= threshold);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }

    /// Block-averages down by an integer factor.
    pub fn downsample(&self, factor: usize) -> Result<VoxelGrid> {
        if factor == 0 || self.resolution % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "factor {factor} does not divide resolution {}",
                self.resolution
            )));
        }
        let r = self.resolution / factor;
        let mut out = VoxelGrid::zeros(r);
        let norm = (factor * factor * factor) as f32;
        for x in 0..self.resolution {
            for y in 0..self.resolution {
                for z in 0..self.resolution {
                    let i = out.index(x / factor, y / factor, z / factor);
                    out.values[i] += self.get(x, y, z) / norm;
                }
            }
        }
        Ok(out)
    }
}

fn check_same_resolution(a: &VoxelGrid, b: &VoxelGrid) -> Result<()> {
    if a.resolution != b.resolution {
        return Err(Error::ResolutionMismatch {
            expected: a.resolution,
            actual: b.resolution,
        });
    }
    Ok(())
}

/// Uniform scale followed by translation: `x' = scale * x + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub scale: f64,
    pub translation: [f64; 3],
}

impl AffineTransform {
    pub const IDENTITY: Self = Self {
        scale: 1.0,
        translation: [0.0; 3],
    };

    pub fn new(scale: f64, translation: [f64; 3]) -> Result<Self> {
        let xf = Self { scale, translation };
        xf.validate()?;
        Ok(xf)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::InvalidTransform(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        if self.translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidTransform("non-finite translation".into()));
        }
        Ok(())
    }

    pub fn inverse(&self) -> Self {
        Self {
            scale: 1.0 / self.scale,
            translation: self.translation.map(|t| -t / self.scale),
        }
    }

    /// `other ∘ self`: apply `self` first, then `other`.
    pub fn then(&self, other: &AffineTransform) -> Self {
        Self {
            scale: self.scale * other.scale,
            translation: [0, 1, 2]
                .map(|a| other.scale * self.translation[a] + other.translation[a]),
        }
    }

    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| self.scale * p[a] + self.translation[a])
    }
}

/// A set of 3D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite point".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Translates to the centroid and divides by the largest point norm.
    pub fn normalize_unit_sphere(&mut self) {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for a in 0..3 {
                c[a] += p[a] / n;
            }
        }
        let mut max_norm: f64 = 0.0;
        for p in &mut self.points {
            for a in 0..3 {
                p[a] -= c[a];
            }
            max_norm = max_norm.max(norm(*p));
        }
        if max_norm > 1e-12 {
            for p in &mut self.points {
                for v in p.iter_mut() {
                    *v /= max_norm;
                }
            }
        } else {
            self.points.iter_mut().for_each(|p| *p = [0.0; 3]);
        }
    }
}

#[inline]
pub(crate) fn norm(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Indexed triangle mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn validate(&self) -> Result<()> {
        for f in &self.faces {
            if f.iter().any(|&i| i >= self.vertices.len()) {
                return Err(Error::InvalidMesh(format!("face {f:?} indexes past {} vertices", self.vertices.len())));
            }
            if f[0] == f[1] && f[1] == f[2] {
                return Err(Error::InvalidMesh(format!("degenerate face {f:?}")));
            }
        }
        Ok(())
    }

    pub fn triangle(&self, f: usize) -> [[f64; 3]; 3] {
        self.faces[f].map(|i| self.vertices[i])
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| triangle_area(self.triangle(f))).sum()
    }

    /// True when every undirected edge is shared by exactly two faces.
    pub fn is_watertight(&self) -> bool {
        let mut edges = std::collections::HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
            }
        }
        !edges.is_empty() && edges.values().all(|&c| c == 2)
    }
}

pub(crate) fn triangle_area(t: [[f64; 3]; 3]) -> f64 {
    let u = [0, 1, 2].map(|a| t[1][a] - t[0][a]);
    let v = [0, 1, 2].map(|a| t[2][a] - t[0][a]);
    norm(cross(u, v)) * 0.5
}

pub(crate) fn cross(u: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ]
}

/// Voxelwise maximum of equally sized grids: the union of placed parts.
pub fn compose_assembly(parts: &[VoxelGrid]) -> Result<VoxelGrid> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("no parts to compose".into()))?;
    let mut out = first.clone();
    for p in &parts[1..] {
        check_same_resolution(first, p)?;
        for (o, &v) in out.values.iter_mut().zip(&p.values) {
            *o = o.max(v);
        }
    }
    Ok(out)
}

/// One point per occupied voxel center, rescaled into the unit sphere.
pub fn voxel_to_pointcloud(grid: &VoxelGrid, threshold: f32) -> Result<PointCloud> {
    let points: Vec<[f64; 3]> = grid
        .occupied_indices(threshold)
        .map(|idx| grid.center(idx))
        .collect();
    if points.is_empty() {
        return Err(Error::EmptyShape);
    }
    let mut cloud = PointCloud { points };
    cloud.normalize_unit_sphere();
    Ok(cloud)
}

/// Re-centers and rescales a part so its bounding box spans a centered cube
/// covering [`NORMALIZED_EXTENT`] of the frame. The returned transform maps the
/// normalized part back onto the input.
pub fn normalize_part(grid: &VoxelGrid) -> Result<(VoxelGrid, AffineTransform)> {
    let xf = normalizing_transform(grid)?;
    let normalized = apply_affine(grid, &xf.inverse())?;
    Ok((normalized, xf))
}

/// The placement transform of a part relative to its normalized frame.
pub fn normalizing_transform(grid: &VoxelGrid) -> Result<AffineTransform> {
    let (lo, hi) = grid.occupied_bounds(0.5).ok_or(Error::EmptyShape)?;
    placement_for_bounds(lo, hi)
}

/// Placement transform for a part whose bounding box is `[lo, hi]`.
pub fn placement_for_bounds(lo: [f64; 3], hi: [f64; 3]) -> Result<AffineTransform> {
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    AffineTransform::new(
        extent / NORMALIZED_EXTENT,
        [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a])),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(r: usize, idx: [usize; 3]) -> VoxelGrid {
        let mut g = VoxelGrid::zeros(r);
        g.set(idx[0], idx[1], idx[2], 1.0);
        g
    }

    #[test]
    fn coverage_fill_sums_to_box_volume() {
        let mut g = VoxelGrid::zeros(16);
        let (lo, hi) = ([-0.23, -0.1, 0.05], [0.11, 0.3, 0.17]);
        g.fill_box_coverage(lo, hi);
        let volume: f64 = (0..3).map(|a| (hi[a] - lo[a]) * 16.0).product();
        let total: f64 = g.values().iter().map(|&v| v as f64).sum();
        assert!((total - volume).abs() < 1e-3, "{total} vs {volume}");
        assert!(g.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let mut aligned = VoxelGrid::zeros(16);
        aligned.fill_box_coverage([-0.25, -0.25, -0.25], [0.25, 0.25, 0.25]);
        let mut binary = VoxelGrid::zeros(16);
        binary.fill_box([-0.25, -0.25, -0.25], [0.25, 0.25, 0.25]);
        assert_eq!(aligned, binary);
    }

    #[test]
    fn compose_disjoint_and_max() {
        let a = single(8, [1, 1, 1]);
        let b = single(8, [5, 5, 5]);
        let c = compose_assembly(&[a.clone(), b]).unwrap();
        assert_eq!(c.count_occupied(0.5), 2);
        assert_eq!(compose_assembly(&[a.clone(), a.clone()]).unwrap(), a);

        let mut lo = VoxelGrid::zeros(4);
        lo.set(0, 0, 0, 0.3);
        let mut hi = VoxelGrid::zeros(4);
        hi.set(0, 0, 0, 0.8);
        assert_eq!(compose_assembly(&[lo, hi]).unwrap().get(0, 0, 0), 0.8);
    }

    #[test]
    fn compose_rejects_mixed_resolutions() {
        let err = compose_assembly(&[VoxelGrid::zeros(4), VoxelGrid::zeros(8)]).unwrap_err();
        assert!(matches!(err, Error::ResolutionMismatch { .. }));
        assert!(compose_assembly(&[]).is_err());
    }

    #[test]
    fn pointcloud_single_and_symmetric() {
        let pc = voxel_to_pointcloud(&single(8, [3, 6, 2]), 0.5).unwrap();
        assert_eq!(pc.points, vec![[0.0, 0.0, 0.0]]);

        let mut g = VoxelGrid::zeros(8);
        g.set(1, 3, 3, 1.0);
        g.set(6, 3, 3, 1.0);
        let pc = voxel_to_pointcloud(&g, 0.5).unwrap();
        assert_eq!(pc.len(), 2);
        let xs: Vec<f64> = pc.points.iter().map(|p| p[0]).collect();
        assert!((xs[0] + 1.0).abs() < 1e-12 && (xs[1] - 1.0).abs() < 1e-12);
        for p in &pc.points {
            assert!(p[1].abs() < 1e-12 && p[2].abs() < 1e-12);
        }

        assert!(matches!(
            voxel_to_pointcloud(&VoxelGrid::zeros(8), 0.5),
            Err(Error::EmptyShape)
        ));
    }

    #[test]
    fn transform_validation() {
        assert!(AffineTransform::new(0.0, [0.0; 3]).is_err());
        assert!(AffineTransform::new(-1.0, [0.0; 3]).is_err());
        let xf = AffineTransform::new(0.5, [0.1, 0.2, -0.3]).unwrap();
        let back = xf.then(&xf.inverse());
        assert!((back.scale - 1.0).abs() < 1e-12);
        assert!(back.translation.iter().all(|t| t.abs() < 1e-12));
    }

    #[test]
    fn normalize_fixed_point() {
        let r = 32;
        let mut g = VoxelGrid::zeros(r);
        // bounding box exactly 0.8 wide, centered
        g.fill_box([-0.4, -0.4, -0.1], [0.4, 0.4, 0.1]);
        let (n, xf) = normalize_part(&g).unwrap();
        assert!((xf.scale - 1.0).abs() < 0.05, "{xf:?}");
        assert!(xf.translation.iter().all(|t| t.abs() < 1.0 / r as f64));
        assert!(n.iou(&g, 0.5).unwrap() > 0.9);
    }

    #[test]
    fn normalize_octant_corner_round_trip() {
        let r = 32;
        let mut g = VoxelGrid::zeros(r);
        g.fill_box([0.1, 0.15, 0.05], [0.45, 0.4, 0.45]);
        let (lo, hi) = g.occupied_bounds(0.5).unwrap();
        let (n, xf) = normalize_part(&g).unwrap();
        for a in 0..3 {
            assert!(xf.translation[a] > 0.0);
            assert!((xf.translation[a] - 0.5 * (lo[a] + hi[a])).abs() < 1e-12);
        }
        let back = apply_affine(&n, &xf).unwrap();
        assert!(back.iou(&g, 0.5).unwrap() >= 0.9);
        assert!(normalize_part(&VoxelGrid::zeros(r)).is_err());
    }

    #[test]
    fn fill_box_counts() {
        let mut g = VoxelGrid::zeros(4);
        // centers at -0.375, -0.125, 0.125, 0.375
        g.fill_box([-0.2, -0.5, -0.5], [0.2, 0.5, 0.0]);
        assert_eq!(g.count_occupied(0.5), 2 * 4 * 2);
    }

    #[test]
    fn downsample_averages() {
        let g = VoxelGrid::filled(4, 1.0);
        let d = g.downsample(2).unwrap();
        assert_eq!(d.resolution(), 2);
        assert!(d.values().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        assert!(g.downsample(3).is_err());
    }
}
