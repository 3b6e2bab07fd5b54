//! Trains the smoke pipeline, grows shapes automatically and walks one
//! session by hand.

use partsynth::dataset::{make_dataset, Category};
use partsynth::pipeline::{train_all, PipelineConfig};
use partsynth::psn::Kind;
use partsynth::synthesis::{auto_sample, Initial, SynthesisConfig, SynthesisSession};

fn main() -> partsynth::Result<()> {
    let data = make_dataset(Category::Chair, 10, 1, 16)?;
    let models = train_all(&data, &PipelineConfig::smoke(Kind::Cimle))?.models;
    let config = SynthesisConfig::default();

    for (i, leaf) in auto_sample(&models, &config, 3, 4, 42)?.iter().enumerate() {
        println!("auto shape {i}: {} parts, {} voxels", leaf.parts.len(), leaf.assembly.count_occupied(0.5));
    }

    let mut session = SynthesisSession::start("demo", Initial::Random { seed: 7 }, models, config)?;
    let set = session.propose(0, 1)?;
    for (i, s) in set.items.iter().enumerate() {
        println!("suggestion {i}: scale {:.3}, preview {} voxels", s.xf.scale, s.preview.count_occupied(0.5));
    }
    let child = session.select(0, 0)?;
    let doc = session.to_document();
    println!("node {child} selected; session document has {} nodes", doc.nodes.len());
    Ok(())
}
