//! Diversity and generative metrics on procedural shapes.

use partsynth::dataset::{make_dataset, Category, PartLabel};
use partsynth::metrics::{generative_report, pairwise_diversity, surface_cloud};

fn main() -> partsynth::Result<()> {
    let data = make_dataset(Category::Chair, 15, 11, 32)?;
    let seats: Vec<_> = data.train.iter().filter_map(|s| s.part(PartLabel::Seat)).take(4).map(|p| p.transformed.clone()).collect();
    let div = pairwise_diversity(&seats, 0)?;
    println!(
        "seats: {} pairs, ED {:.3}, CDx100 {:.3}, EMDx100 {:.3}",
        div.pair_count, div.mean_ed, div.cd_x100, div.emd_x100
    );

    let clouds = |shapes: &[partsynth::dataset::Shape]| -> partsynth::Result<Vec<_>> {
        shapes.iter().enumerate().map(|(i, s)| surface_cloud(&s.assembly()?, 512, i as u64)).collect()
    };
    let (train, test) = (clouds(&data.train[..6])?, clouds(&data.test)?);
    let r = generative_report(&train, &test)?;
    println!("train vs test: COV {:.2}, MMDx1000 {:.3}, JSDx100 {:.3}", r.cov, r.mmd_x1000, r.jsd_x100);
    let same = generative_report(&test, &test)?;
    println!("test vs itself: COV {:.2}, MMD {}, JSD {}", same.cov, same.mmd, same.jsd);
    Ok(())
}
