//! Generates a procedural chair set, writes it to disk and reads it back.
//!
//! `cargo run --example dataset -- [DIR]`

use partsynth::dataset::{export_dataset, import_dataset, make_dataset, make_psn_samples, Category};

fn main() -> partsynth::Result<()> {
    let data = make_dataset(Category::Chair, 20, 7, 32)?;
    println!("{} train / {} test shapes, {} train parts", data.train.len(), data.test.len(), data.train_parts().count());
    for shape in data.train.iter().take(3) {
        let labels: Vec<&str> = shape.labels().iter().map(|l| l.as_str()).collect();
        println!("  shape {}: {}", shape.id, labels.join(", "));
    }

    let samples = make_psn_samples(&data.train, 4, 0)?;
    println!("{} suggestion-training samples", samples.samples.len());

    let dir = match std::env::args().nth(1) {
        Some(d) => std::path::PathBuf::from(d),
        None => std::env::temp_dir().join("partsynth-dataset-example"),
    };
    let manifest = export_dataset(&data, &dir)?;
    let back = import_dataset(&dir)?;
    println!("{} records in {}, round trip equal: {}", manifest.records.len(), dir.display(), back.train.iter().zip(&data.train).all(|(a, b)| a.parts == b.parts));
    Ok(())
}
