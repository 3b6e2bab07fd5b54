//! Builds a part, places it with an affine warp, composes an assembly and
//! writes the surface as OBJ.
//!
//! `cargo run --example voxel_geometry -- out.obj`

use partsynth::geometry::{apply_affine, compose_assembly, marching_cubes, normalize_part, write_obj, AffineTransform, VoxelGrid};

fn main() -> partsynth::Result<()> {
    let mut seat = VoxelGrid::zeros(32);
    seat.fill_box([-0.35, -0.05, -0.35], [0.35, 0.05, 0.35]);
    let (normalized, xf) = normalize_part(&seat)?;
    println!("seat: {} voxels, normalizing scale {:.3}", seat.count_occupied(0.5), xf.scale);

    let back = apply_affine(&normalized, &AffineTransform::new(0.4, [0.0, 0.25, -0.3])?)?;
    let chair = compose_assembly(&[seat, back])?;
    let mesh = marching_cubes(&chair, 0.5)?;
    println!(
        "assembly: {} voxels, mesh {} vertices / {} faces, watertight {}",
        chair.count_occupied(0.5),
        mesh.vertices.len(),
        mesh.faces.len(),
        mesh.is_watertight()
    );
    if let Some(path) = std::env::args().nth(1) {
        write_obj(&mesh, std::fs::File::create(&path)?)?;
        println!("wrote {path}");
    }
    Ok(())
}
