//! The operations behind the `partsynth` binary.
//!
//! Each command takes a resolved [`RunConfig`] plus its own arguments and
//! returns a serializable summary. [`exit_code`] maps failures onto the
//! process exit status.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::dataset::{export_dataset, import_dataset, make_dataset, Dataset, PartRecord, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::geometry::{read_obj, read_vgrid, write_obj, PointCloud, VoxelGrid};
use crate::implicit::{train_implicit, ImplicitModel};
use crate::metrics::{generative_report, mesh_surface_cloud, pairwise_diversity, surface_cloud, DiversityReport, GenerativeReport};
use crate::pcn::{train_pcn, PcnModel};
use crate::pipeline::{implicit_training_pairs, psn_samples, CheckpointDir};
use crate::psn::{train_psn, Kind, PsnInfo, SuggestionModel};
use crate::service::{AppState, ServiceConfig};
use crate::synthesis::{auto_sessions, Models};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Missing(_) | Error::InvalidArgument(_) | Error::InvalidKind(_) | Error::InvalidSpec(_) | Error::ResolutionMismatch { .. } => {
            EXIT_USAGE
        }
        _ => EXIT_INTERNAL,
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Missing(format!("{what} not found at {}", path.display())))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenDataSummary {
    pub dir: PathBuf,
    pub train_shapes: usize,
    pub test_shapes: usize,
    pub parts: usize,
}

/// Generates a procedural dataset into `config.data.dir`.
pub fn gen_data(config: &RunConfig) -> Result<GenDataSummary> {
    let d = &config.data;
    let data = make_dataset(d.category, d.shapes, d.seed, d.resolution)?;
    let manifest = export_dataset(&data, &d.dir)?;
    Ok(GenDataSummary { dir: d.dir.clone(), train_shapes: data.train.len(), test_shapes: data.test.len(), parts: manifest.records.len() })
}

fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    require(&config.data.dir.join(MANIFEST_FILE), "dataset manifest")?;
    import_dataset(&config.data.dir)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainStage {
    Pcn,
    Implicit,
    Psn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub stage: TrainStage,
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub epochs: usize,
    pub final_loss: f64,
}

/// Trains one stage from the dataset in `config.data.dir` and writes its
/// checkpoint and loss curve into the checkpoint directory. `kind` picks the
/// suggestion model and defaults to the config's.
pub fn train(config: &RunConfig, stage: TrainStage, kind: Option<Kind>) -> Result<TrainSummary> {
    let ck = CheckpointDir(config.paths.checkpoints.clone());
    std::fs::create_dir_all(&ck.0)?;
    let load_pcn = || -> Result<PcnModel> {
        require(&ck.pcn(), "pcn checkpoint")?;
        PcnModel::load(ck.pcn())
    };
    match stage {
        TrainStage::Pcn => {
            let data = load_dataset(config)?;
            let parts: Vec<PartRecord> = data.train_parts().cloned().collect();
            let (model, report) = train_pcn(&parts, &config.pcn_config())?;
            model.save(ck.pcn())?;
            let csv = config.paths.checkpoints.join("pcn_loss.csv");
            report.write_csv(create(&csv)?)?;
            let final_loss = report.epochs.last().map_or(f64::NAN, |e| e.total());
            Ok(TrainSummary { stage, checkpoint: ck.pcn(), loss_csv: csv, epochs: report.epochs.len(), final_loss })
        }
        TrainStage::Implicit => {
            let pcn = load_pcn()?;
            let data = load_dataset(config)?;
            let implicit = config.implicit_config();
            let (model, report) = train_implicit(&implicit_training_pairs(&pcn, data.train_parts(), &implicit)?, &implicit)?;
            model.save(ck.implicit())?;
            let csv = config.paths.checkpoints.join("implicit_loss.csv");
            let mut w = create(&csv)?;
            writeln!(w, "epoch,loss")?;
            for (i, l) in report.losses.iter().enumerate() {
                writeln!(w, "{i},{l:.8}")?;
            }
            w.flush()?;
            let final_loss = report.losses.last().copied().unwrap_or(f64::NAN);
            Ok(TrainSummary { stage, checkpoint: ck.implicit(), loss_csv: csv, epochs: report.losses.len(), final_loss })
        }
        TrainStage::Psn => {
            let kind = kind.unwrap_or_else(|| config.psn_kind());
            let pcn = load_pcn()?;
            let data = load_dataset(config)?;
            let samples = psn_samples(&pcn, &data.train, config.data.per_shape, config.data.seed)?;
            let (model, report) = train_psn(&samples, &config.psn_config(kind))?;
            model.save(ck.psn(kind))?;
            let csv = config.paths.checkpoints.join(format!("psn_{kind}_loss.csv"));
            report.write_csv(create(&csv)?)?;
            let final_loss = report.epochs.last().map_or(f64::NAN, |e| e.loss);
            Ok(TrainSummary { stage, checkpoint: ck.psn(kind), loss_csv: csv, epochs: report.epochs.len(), final_loss })
        }
    }
}

/// Models for `kind`, failing with [`Error::Missing`] on absent checkpoints.
pub fn load_models(config: &RunConfig, kind: Kind) -> Result<Models> {
    let ck = CheckpointDir(config.paths.checkpoints.clone());
    require(&ck.pcn(), "pcn checkpoint")?;
    require(&ck.implicit(), "implicit checkpoint")?;
    require(&ck.psn(kind), &format!("{kind} checkpoint"))?;
    Models::new(
        Arc::new(PcnModel::load(ck.pcn())?),
        Arc::new(ImplicitModel::load(ck.implicit())?),
        Arc::new(SuggestionModel::load(ck.psn(kind))?),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthOutput {
    pub obj: PathBuf,
    pub session: PathBuf,
    pub parts: usize,
    /// SHA-256 of the OBJ bytes.
    pub digest: String,
}

/// Grows `n` shapes for `rounds` rounds with random selections and writes
/// `shape_NNN.obj` plus `shape_NNN.json` (the session) into `out`.
pub fn synth_auto(config: &RunConfig, rounds: usize, n: usize, seed: u64, out: &Path) -> Result<Vec<SynthOutput>> {
    if rounds == 0 {
        return Err(Error::InvalidArgument("--auto needs at least one round".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("--auto needs at least one shape".into()));
    }
    let models = load_models(config, config.psn_kind())?;
    std::fs::create_dir_all(out)?;
    let mut written = Vec::with_capacity(n);
    for (i, (session, leaf)) in auto_sessions(&models, &config.synthesis, rounds, n, seed)?.into_iter().enumerate() {
        let obj = out.join(format!("shape_{i:03}.obj"));
        let json = out.join(format!("shape_{i:03}.json"));
        let mut bytes = Vec::new();
        write_obj(&session.export_node(leaf, models.resolution())?, &mut bytes)?;
        std::fs::write(&obj, &bytes)?;
        std::fs::write(&json, serde_json::to_vec_pretty(&session.to_document())?)?;
        written.push(SynthOutput {
            obj,
            session: json,
            parts: session.node(leaf)?.parts.len(),
            digest: hex::encode(Sha256::digest(&bytes)),
        });
    }
    Ok(written)
}

/// Runs the HTTP service until the process is stopped. Sessions persist
/// under `<output>/sessions`.
pub fn serve(config: &RunConfig, addr: SocketAddr) -> Result<()> {
    let ck = CheckpointDir(config.paths.checkpoints.clone());
    require(&ck.pcn(), "pcn checkpoint")?;
    require(&ck.implicit(), "implicit checkpoint")?;
    let models = ck.load_models()?;
    if models.is_empty() {
        return Err(Error::Missing(format!("no suggestion checkpoint in {}", ck.0.display())));
    }
    let state = AppState::new(
        models,
        ServiceConfig {
            max_depth: config.synthesis.max_depth,
            session_dir: Some(config.paths.output.join("sessions")),
            ..ServiceConfig::default()
        },
    );
    let restored = state.restore_sessions()?;
    log::info!("restored {restored} sessions");
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(crate::service::serve(addr, state))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Pairwise diversity of the part grids in one directory.
    Table1,
    /// Coverage, MMD and JSD of generated shapes against references.
    Table4,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Protocol::Table1),
            "table4" => Ok(Protocol::Table4),
            other => Err(Error::InvalidArgument(format!("unknown protocol `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "lowercase")]
pub enum EvalReport {
    Table1(DiversityReport),
    Table4(GenerativeReport),
}

fn files_with(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().and_then(|s| s.to_str()) == Some(ext))
        .collect();
    out.sort();
    Ok(out)
}

fn read_grid(path: &Path) -> Result<VoxelGrid> {
    read_vgrid(BufReader::new(File::open(path)?))
}

/// Surface clouds for every input in `dir`: the test-split assemblies of a
/// dataset directory, or its OBJ meshes and VGRID grids. Cloud `i` is
/// sampled with a seed derived from `seed` and `i`, so the same directory
/// always yields the same clouds.
pub fn load_clouds(dir: &Path, points: usize, seed: u64) -> Result<Vec<PointCloud>> {
    require(dir, "input directory")?;
    let sample_seed = |i: usize| seed.wrapping_add(i as u64);
    if dir.join(MANIFEST_FILE).exists() {
        let data = import_dataset(dir)?;
        return data.test.iter().enumerate().map(|(i, s)| surface_cloud(&s.assembly()?, points, sample_seed(i))).collect();
    }
    let mut clouds = Vec::new();
    for path in files_with(dir, "obj")? {
        let mesh = read_obj(BufReader::new(File::open(&path)?))?;
        clouds.push(mesh_surface_cloud(&mesh, points, sample_seed(clouds.len()))?);
    }
    for path in files_with(dir, "vgrid")? {
        clouds.push(surface_cloud(&read_grid(&path)?, points, sample_seed(clouds.len()))?);
    }
    if clouds.is_empty() {
        return Err(Error::InvalidArgument(format!("no OBJ or VGRID inputs in {}", dir.display())));
    }
    Ok(clouds)
}

/// Evaluates `gen` (and `reference` for table4) and writes the JSON report
/// to `report`.
pub fn evaluate(config: &RunConfig, protocol: Protocol, gen: &Path, reference: Option<&Path>, report: &Path) -> Result<EvalReport> {
    let seed = config.metrics.seed;
    let out = match protocol {
        Protocol::Table1 => {
            require(gen, "input directory")?;
            let paths = files_with(gen, "vgrid")?;
            if paths.len() < 2 {
                return Err(Error::InvalidArgument(format!("table1 needs at least two VGRID parts in {}", gen.display())));
            }
            let parts = paths.iter().map(|p| read_grid(p)).collect::<Result<Vec<_>>>()?;
            EvalReport::Table1(pairwise_diversity(&parts, seed)?)
        }
        Protocol::Table4 => {
            let reference = reference.ok_or_else(|| Error::InvalidArgument("table4 needs --ref".into()))?;
            let n = config.metrics.surface_points;
            let g = load_clouds(gen, n, seed)?;
            let r = load_clouds(reference, n, seed)?;
            EvalReport::Table4(generative_report(&g, &r)?)
        }
    };
    let mut w = create(report)?;
    serde_json::to_writer_pretty(&mut w, &out)?;
    writeln!(w)?;
    w.flush()?;
    Ok(out)
}

/// Summary of a suggestion checkpoint.
pub fn psn_info(path: &Path) -> Result<PsnInfo> {
    require(path, "suggestion checkpoint")?;
    Ok(SuggestionModel::load(path)?.info())
}
