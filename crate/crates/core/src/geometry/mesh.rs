//! Iso-surface extraction and surface point sampling.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{cross, triangle_area, PointCloud, TriangleMesh, VoxelGrid};
use crate::error::{Error, Result};

// Six tetrahedra around the cube diagonal (0,0,0)-(1,1,1). Neighboring cubes
// split their shared face along the same diagonal, so the surface closes.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Cube corner `c` (bit 0 = x, bit 1 = y, bit 2 = z).
#[inline]
fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// Extracts the `iso` level set of the voxel-center field as a closed triangle
/// mesh, using a tetrahedral decomposition of each grid cell.
///
/// Values `>= iso` are inside. The field is padded with one layer of zeros so
/// surfaces touching the grid boundary still close.
pub fn marching_cubes(grid: &VoxelGrid, iso: f32) -> Result<TriangleMesh> {
    let any_in = grid.values().iter().any(|&v| v >= iso);
    let any_out = grid.values().iter().any(|&v| v < iso);
    if !(any_in && any_out) {
        return Err(Error::EmptySurface);
    }

    let r = grid.resolution();
    let p = r + 2;
    let value = |i: [usize; 3]| -> f32 {
        if i.iter().any(|&k| k == 0 || k == p - 1) {
            0.0
        } else {
            grid.get(i[0] - 1, i[1] - 1, i[2] - 1)
        }
    };
    let pos = |i: [usize; 3]| -> [f64; 3] { i.map(|k| (k as f64 - 0.5) / r as f64 - 0.5) };
    let key = |i: [usize; 3]| -> usize { (i[0] * p + i[1]) * p + i[2] };

    let mut mesh = TriangleMesh::default();
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();

    for x in 0..p - 1 {
        for y in 0..p - 1 {
            for z in 0..p - 1 {
                let corners: [[usize; 3]; 8] = std::array::from_fn(|c| {
                    let o = corner_offset(c);
                    [x + o[0], y + o[1], z + o[2]]
                });
                let vals: [f32; 8] = corners.map(value);
                let inside = vals.map(|v| v >= iso);
                if inside.iter().all(|&b| b) || inside.iter().all(|&b| !b) {
                    continue;
                }
                for tet in TETS {
                    let ins: Vec<usize> = tet.iter().copied().filter(|&c| inside[c]).collect();
                    let outs: Vec<usize> = tet.iter().copied().filter(|&c| !inside[c]).collect();
                    if ins.is_empty() || outs.is_empty() {
                        continue;
                    }
                    let mut vert = |a: usize, b: usize| -> usize {
                        let (ka, kb) = (key(corners[a]), key(corners[b]));
                        let k = (ka.min(kb), ka.max(kb));
                        *edge_vertex.entry(k).or_insert_with(|| {
                            let (va, vb) = (vals[a] as f64, vals[b] as f64);
                            let f = ((iso as f64 - va) / (vb - va)).clamp(0.0, 1.0);
                            let (pa, pb) = (pos(corners[a]), pos(corners[b]));
                            mesh.vertices.push([0, 1, 2].map(|i| pa[i] + f * (pb[i] - pa[i])));
                            mesh.vertices.len() - 1
                        })
                    };
                    let mut tris: Vec<[usize; 3]> = Vec::with_capacity(2);
                    match (ins.len(), outs.len()) {
                        (1, 3) => tris.push([vert(ins[0], outs[0]), vert(ins[0], outs[1]), vert(ins[0], outs[2])]),
                        (3, 1) => tris.push([vert(outs[0], ins[0]), vert(outs[0], ins[1]), vert(outs[0], ins[2])]),
                        (2, 2) => {
                            let a = vert(ins[0], outs[0]);
                            let b = vert(ins[0], outs[1]);
                            let c = vert(ins[1], outs[1]);
                            let d = vert(ins[1], outs[0]);
                            tris.push([a, b, c]);
                            tris.push([a, c, d]);
                        }
                        _ => unreachable!(),
                    }
                    // orient outward: from the inside corners toward the outside ones
                    let centroid = |cs: &[usize]| -> [f64; 3] {
                        let mut m = [0.0; 3];
                        for &c in cs {
                            let q = pos(corners[c]);
                            for i in 0..3 {
                                m[i] += q[i] / cs.len() as f64;
                            }
                        }
                        m
                    };
                    let (ci, co) = (centroid(&ins), centroid(&outs));
                    let dir = [0, 1, 2].map(|i| co[i] - ci[i]);
                    for mut t in tris {
                        let [a, b, c] = t.map(|i| mesh.vertices[i]);
                        let n = cross([0, 1, 2].map(|i| b[i] - a[i]), [0, 1, 2].map(|i| c[i] - a[i]));
                        if n[0] * dir[0] + n[1] * dir[1] + n[2] * dir[2] < 0.0 {
                            t.swap(1, 2);
                        }
                        mesh.faces.push(t);
                    }
                }
            }
        }
    }
    if mesh.faces.is_empty() {
        return Err(Error::EmptySurface);
    }
    Ok(mesh)
}

/// Draws `n` points uniformly over the mesh surface. Deterministic in `seed`.
pub fn sample_mesh_points(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    mesh.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += triangle_area(mesh.triangle(f));
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let u = rng.gen::<f64>() * total;
            let f = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let [a, b, c] = mesh.triangle(f);
            let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
            let s = r1.sqrt();
            let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
            [0, 1, 2].map(|i| wa * a[i] + wb * b[i] + wc * c[i])
        })
        .collect();
    PointCloud::new(points)
}
