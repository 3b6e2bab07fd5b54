//! Fits the implicit occupancy decoder to codes from a small PCN and decodes
//! fields at two resolutions.

use partsynth::dataset::{make_dataset, Category, PartRecord};
use partsynth::implicit::train_implicit;
use partsynth::pcn::train_pcn;
use partsynth::pipeline::{implicit_pairs, PipelineConfig};
use partsynth::psn::Kind;

fn main() -> partsynth::Result<()> {
    let data = make_dataset(Category::Chair, 10, 5, 16)?;
    let smoke = PipelineConfig::smoke(Kind::Cimle);
    let parts: Vec<PartRecord> = data.train_parts().cloned().collect();
    let (pcn, _) = train_pcn(&parts, &smoke.pcn)?;
    let pairs = implicit_pairs(&pcn, &parts)?;
    let (decoder, report) = train_implicit(&pairs, &smoke.implicit)?;
    println!("final loss {:.4} after {} epochs", report.losses.last().unwrap(), report.losses.len());

    let (grid, z) = &pairs[0];
    for r in [16, 32] {
        let field = decoder.decode_field(z, r)?;
        println!("R={r}: {} occupied voxels", field.count_occupied(0.5));
    }
    println!("IoU against the training part at R=16: {:.3}", decoder.decode_field(z, 16)?.iou(grid, 0.5)?);
    Ok(())
}
