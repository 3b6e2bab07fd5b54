//! The command-line workflow as library calls: generate data, train the
//! three stages, synthesize and evaluate, all inside a temporary directory.

use partsynth::commands::{evaluate, gen_data, synth_auto, train, Protocol, TrainStage};
use partsynth::config::RunConfig;
use partsynth::pipeline::PipelineConfig;
use partsynth::psn::Kind;

fn main() -> partsynth::Result<()> {
    let dir = std::env::temp_dir().join("partsynth-pipeline-example");
    let _ = std::fs::remove_dir_all(&dir);
    let smoke = PipelineConfig::smoke(Kind::Cimle);
    let mut config = RunConfig::default();
    config.data.shapes = 10;
    config.data.resolution = 16;
    config.data.per_shape = 2;
    config.pcn = Some(smoke.pcn);
    config.implicit = Some(smoke.implicit);
    config.psn.epochs = Some(smoke.psn.epochs);
    config.psn.hidden = Some(smoke.psn.hidden);
    config.psn.noise_dim = Some(smoke.psn.noise_dim);
    config.resolve_paths(&dir);

    println!("{:?}", gen_data(&config)?);
    for stage in [TrainStage::Pcn, TrainStage::Implicit, TrainStage::Psn] {
        let s = train(&config, stage, None)?;
        println!("{stage:?}: {} epochs, final loss {:.4}", s.epochs, s.final_loss);
    }
    let out = dir.join("shapes");
    for o in synth_auto(&config, 3, 3, 1, &out)? {
        println!("{} ({} parts) {}", o.obj.display(), o.parts, &o.digest[..12]);
    }
    let report = evaluate(&config, Protocol::Table4, &out, Some(&config.data.dir), &dir.join("table4.json"))?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}
