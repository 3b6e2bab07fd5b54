//! On-disk formats: `VGRID/1` voxel files, Wavefront OBJ and point CSV.
//!
//! `VGRID/1` layout: 8-byte magic `VGRID\0\0\1`, little-endian `u32` resolution
//! `R`, then `R^3` little-endian `f32` values in x-major order.

use std::io::{BufRead, Read, Write};

use super::{PointCloud, TriangleMesh, VoxelGrid};
use crate::error::{Error, Result};

pub const VGRID_MAGIC: [u8; 8] = *b"VGRID\0\0\x01";

pub fn write_vgrid(grid: &VoxelGrid, mut w: impl Write) -> Result<()> {
    w.write_all(&VGRID_MAGIC)?;
    w.write_all(&(grid.resolution() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(grid.values().len() * 4);
    for v in grid.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_vgrid(mut r: impl Read) -> Result<VoxelGrid> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != VGRID_MAGIC {
        return Err(Error::Format("bad VGRID magic".into()));
    }
    let mut res = [0u8; 4];
    r.read_exact(&mut res)?;
    let res = u32::from_le_bytes(res) as usize;
    if res == 0 || res > 1024 {
        return Err(Error::Format(format!("implausible VGRID resolution {res}")));
    }
    let mut buf = vec![0u8; res * res * res * 4];
    r.read_exact(&mut buf)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after VGRID payload".into()));
    }
    let values: Vec<f32> = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Format("VGRID value outside [0, 1]".into()));
    }
    VoxelGrid::from_values(res, values)
}

/// Writes `v` and `f` records only. Coordinates use six decimals so output is
/// stable across runs.
pub fn write_obj(mesh: &TriangleMesh, mut w: impl Write) -> Result<()> {
    let mut s = String::with_capacity(mesh.vertices.len() * 32 + mesh.faces.len() * 24);
    for v in &mesh.vertices {
        s.push_str(&format!("v {:.6} {:.6} {:.6}\n", v[0], v[1], v[2]));
    }
    for f in &mesh.faces {
        s.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}

/// Reads `v` and triangular `f` records; other records are ignored. Face
/// entries of the form `i/j/k` use the vertex index only.
pub fn read_obj(r: impl BufRead) -> Result<TriangleMesh> {
    let mut mesh = TriangleMesh::default();
    for line in r.lines() {
        let line = line?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| Error::Format(format!("bad vertex: {e}"))))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(Error::Format(format!("short vertex record: {line}")));
                }
                mesh.vertices.push([c[0], c[1], c[2]]);
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or(t);
                        head.parse::<usize>()
                            .ok()
                            .filter(|&i| i >= 1)
                            .map(|i| i - 1)
                            .ok_or_else(|| Error::Format(format!("bad face index `{t}`")))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::Format(format!("short face record: {line}")));
                }
                // fan-triangulate polygons
                for k in 1..idx.len() - 1 {
                    mesh.faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    mesh.validate()?;
    Ok(mesh)
}

pub fn write_pointcloud_csv(cloud: &PointCloud, mut w: impl Write) -> Result<()> {
    let mut s = String::from("x,y,z\n");
    for p in &cloud.points {
        s.push_str(&format!("{},{},{}\n", p[0], p[1], p[2]));
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}
