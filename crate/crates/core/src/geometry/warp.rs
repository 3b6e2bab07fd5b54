//! Trilinear resampling under scale-and-translate warps.
//!
//! The output voxel at center `c` reads the input field at `(c - t) / s`.
//! Neighbors outside the grid read as zero. The raw `warp_*` functions work
//! on flat `f64` buffers so training code can backpropagate through them.

use super::{AffineTransform, VoxelGrid};
use crate::error::{Error, Result};

/// Warps `grid` by `xf`, returning a grid of the same resolution.
pub fn apply_affine(grid: &VoxelGrid, xf: &AffineTransform) -> Result<VoxelGrid> {
    xf.validate()?;
    let input: Vec<f64> = grid.values().iter().map(|&v| v as f64).collect();
    let out = resample(&input, grid.resolution(), [xf.scale; 3], xf.translation);
    VoxelGrid::from_values(grid.resolution(), out.into_iter().map(|v| v as f32).collect())
}

/// Per-axis rescale about the frame center.
pub fn scale_axes(grid: &VoxelGrid, scales: [f64; 3]) -> Result<VoxelGrid> {
    if scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidTransform(format!("axis scales must be positive, got {scales:?}")));
    }
    let input: Vec<f64> = grid.values().iter().map(|&v| v as f64).collect();
    let out = resample(&input, grid.resolution(), scales, [0.0; 3]);
    VoxelGrid::from_values(grid.resolution(), out.into_iter().map(|v| v as f32).collect())
}

/// Trilinear resampling of the same frame onto a grid of `resolution` cells
/// per axis.
pub fn resize(grid: &VoxelGrid, resolution: usize) -> Result<VoxelGrid> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let r = grid.resolution();
    if r == resolution {
        return Ok(grid.clone());
    }
    let input: Vec<f64> = grid.values().iter().map(|&v| v as f64).collect();
    let axis: Vec<f64> = (0..resolution).map(|i| (i as f64 + 0.5) / resolution as f64 * r as f64 - 0.5).collect();
    let mut out = Vec::with_capacity(resolution.pow(3));
    for &ux in &axis {
        for &uy in &axis {
            for &uz in &axis {
                out.push(trilinear(&input, r, [ux, uy, uz]) as f32);
            }
        }
    }
    VoxelGrid::from_values(resolution, out)
}

/// Forward warp of a raw `r^3` field.
pub fn warp_forward(input: &[f64], r: usize, scale: f64, translation: [f64; 3]) -> Vec<f64> {
    resample(input, r, [scale; 3], translation)
}

/// Gradients of `sum(grad_out * warp_forward(input, ..))` with respect to the
/// input field, the scale and the translation.
pub fn warp_backward(
    input: &[f64],
    r: usize,
    scale: f64,
    translation: [f64; 3],
    grad_out: &[f64],
) -> (Vec<f64>, f64, [f64; 3]) {
    debug_assert_eq!(input.len(), r * r * r);
    let rf = r as f64;
    let mut grad_in = vec![0.0; input.len()];
    let mut grad_s = 0.0;
    let mut grad_t = [0.0; 3];
    let coord = |i: usize, a: usize| -> (f64, f64) {
        let c = (i as f64 + 0.5) / rf - 0.5;
        let q = (c - translation[a]) / scale;
        (q, (q + 0.5) * rf - 0.5)
    };
    for x in 0..r {
        let (qx, ux) = coord(x, 0);
        for y in 0..r {
            let (qy, uy) = coord(y, 1);
            for z in 0..r {
                let g = grad_out[(x * r + y) * r + z];
                if g == 0.0 {
                    continue;
                }
                let (qz, uz) = coord(z, 2);
                let du = trilinear_scatter(input, &mut grad_in, r, [ux, uy, uz], g);
                let q = [qx, qy, qz];
                for a in 0..3 {
                    // u_a = ((c_a - t_a)/s + 0.5) R - 0.5
                    grad_t[a] += g * du[a] * (-rf / scale);
                    grad_s += g * du[a] * (-rf * q[a] / scale);
                }
            }
        }
    }
    (grad_in, grad_s, grad_t)
}

fn resample(input: &[f64], r: usize, scales: [f64; 3], translation: [f64; 3]) -> Vec<f64> {
    let rf = r as f64;
    let axis = |a: usize| -> Vec<f64> {
        (0..r)
            .map(|i| {
                let c = (i as f64 + 0.5) / rf - 0.5;
                ((c - translation[a]) / scales[a] + 0.5) * rf - 0.5
            })
            .collect()
    };
    let (ux, uy, uz) = (axis(0), axis(1), axis(2));
    let mut out = vec![0.0; r * r * r];
    for x in 0..r {
        for y in 0..r {
            for z in 0..r {
                out[(x * r + y) * r + z] = trilinear(input, r, [ux[x], uy[y], uz[z]]);
            }
        }
    }
    out
}

#[inline]
fn axis_taps(u: f64, r: usize) -> Option<(isize, f64)> {
    if !(u > -1.0 && u < r as f64) {
        return None;
    }
    let i0 = u.floor();
    Some((i0 as isize, u - i0))
}

#[inline]
fn fetch(input: &[f64], r: usize, x: isize, y: isize, z: isize) -> f64 {
    let ri = r as isize;
    if x < 0 || y < 0 || z < 0 || x >= ri || y >= ri || z >= ri {
        0.0
    } else {
        input[((x * ri + y) * ri + z) as usize]
    }
}

fn trilinear(input: &[f64], r: usize, u: [f64; 3]) -> f64 {
    let (Some((x0, fx)), Some((y0, fy)), Some((z0, fz))) =
        (axis_taps(u[0], r), axis_taps(u[1], r), axis_taps(u[2], r))
    else {
        return 0.0;
    };
    let mut acc = 0.0;
    for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dz, wz) in [(0, 1.0 - fz), (1, fz)] {
                let w = wx * wy * wz;
                if w != 0.0 {
                    acc += w * fetch(input, r, x0 + dx, y0 + dy, z0 + dz);
                }
            }
        }
    }
    acc
}

/// Scatters `g * weight` into `grad_in` and returns d(sample)/du.
fn trilinear_scatter(input: &[f64], grad_in: &mut [f64], r: usize, u: [f64; 3], g: f64) -> [f64; 3] {
    let (Some((x0, fx)), Some((y0, fy)), Some((z0, fz))) =
        (axis_taps(u[0], r), axis_taps(u[1], r), axis_taps(u[2], r))
    else {
        return [0.0; 3];
    };
    let ri = r as isize;
    let mut du = [0.0; 3];
    for (dx, wx, sx) in [(0, 1.0 - fx, -1.0), (1, fx, 1.0)] {
        for (dy, wy, sy) in [(0, 1.0 - fy, -1.0), (1, fy, 1.0)] {
            for (dz, wz, sz) in [(0, 1.0 - fz, -1.0), (1, fz, 1.0)] {
                let (x, y, z) = (x0 + dx, y0 + dy, z0 + dz);
                if x < 0 || y < 0 || z < 0 || x >= ri || y >= ri || z >= ri {
                    continue;
                }
                let i = ((x * ri + y) * ri + z) as usize;
                let v = input[i];
                grad_in[i] += g * wx * wy * wz;
                du[0] += v * sx * wy * wz;
                du[1] += v * wx * sy * wz;
                du[2] += v * wx * wy * sz;
            }
        }
    }
    du
}
