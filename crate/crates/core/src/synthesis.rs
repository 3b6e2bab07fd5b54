//! Iterative part-by-part synthesis.
//!
//! A session is a tree of assemblies. Proposing at a node encodes its
//! assembly, asks the suggestion model for `k` part codes and, for each code,
//! decodes a voxel part to localize, decodes the implicit field for the
//! geometry, warps it into place and composes it with the assembly. Selecting
//! one item turns its preview into a child node. Suggestion sets are
//! single-use: a select consumes the set and a new propose replaces it.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_affine, compose_assembly, marching_cubes, resize, scale_axes, AffineTransform, TriangleMesh, VoxelGrid};
use crate::implicit::ImplicitModel;
use crate::latent::LatentCode;
use crate::pcn::PcnModel;
use crate::psn::{Kind, SuggestionModel};

const THRESHOLD: f32 = 0.5;
/// Random starts retried before giving up on an empty decode.
const RANDOM_START_ATTEMPTS: usize = 16;

/// The three trained networks a session runs on.
#[derive(Clone)]
pub struct Models {
    pub pcn: Arc<PcnModel>,
    pub implicit: Arc<ImplicitModel>,
    pub psn: Arc<SuggestionModel>,
    digests: ModelDigests,
}

/// SHA-256 digests of the serialized checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDigests {
    pub pcn: String,
    pub implicit: String,
    pub psn: String,
}

impl Models {
    /// Checks that every model is trained and that latent sizes agree.
    pub fn new(pcn: Arc<PcnModel>, implicit: Arc<ImplicitModel>, psn: Arc<SuggestionModel>) -> Result<Self> {
        if !pcn.is_trained() {
            return Err(Error::ModelNotReady("part composition network is untrained".into()));
        }
        if !implicit.is_trained() {
            return Err(Error::ModelNotReady("implicit decoder is untrained".into()));
        }
        if !psn.is_trained() {
            return Err(Error::ModelNotReady(format!("{} suggestion model is untrained", psn.kind())));
        }
        let d = pcn.latent_dim();
        if implicit.latent_dim() != d || psn.latent_dim() != d {
            return Err(Error::InvalidArgument(format!(
                "latent sizes disagree: pcn {d}, implicit {}, psn {}",
                implicit.latent_dim(),
                psn.latent_dim()
            )));
        }
        let digests = ModelDigests {
            pcn: pcn.to_checkpoint().digest(),
            implicit: implicit.to_checkpoint().digest(),
            psn: psn.to_checkpoint().digest(),
        };
        Ok(Self { pcn, implicit, psn, digests })
    }

    pub fn digests(&self) -> &ModelDigests {
        &self.digests
    }

    pub fn resolution(&self) -> usize {
        self.pcn.resolution()
    }

    fn place_code(&self, z: &LatentCode, xf: &AffineTransform, resolution: usize) -> Result<VoxelGrid> {
        apply_affine(&self.implicit.decode_field(z, resolution)?, xf)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Suggestions per propose.
    pub k: usize,
    /// Nodes deeper than this cannot be proposed from.
    pub max_depth: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { k: 4, max_depth: 8 }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// A part in an assembly: its code and where it goes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedPart {
    pub code: LatentCode,
    pub xf: AffineTransform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssemblyNode {
    pub id: u64,
    pub parent: Option<u64>,
    pub assembly: VoxelGrid,
    pub parts: Vec<PlacedPart>,
    pub depth: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Suggestion {
    pub code: LatentCode,
    pub xf: AffineTransform,
    /// Implicit field in the normalized frame.
    pub field: VoxelGrid,
    /// The field warped into place.
    pub placed: VoxelGrid,
    /// Source assembly composed with `placed`.
    pub preview: VoxelGrid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuggestionSet {
    pub node: u64,
    pub seed: u64,
    pub items: Vec<Suggestion>,
}

/// How the root part was obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum Initial {
    /// A code drawn uniformly from the unit box, decoded by the implicit
    /// decoder.
    Random { seed: u64 },
    /// A part in the normalized frame.
    Part(VoxelGrid),
}

pub struct SynthesisSession {
    pub id: String,
    config: SynthesisConfig,
    models: Models,
    initial: Initial,
    nodes: BTreeMap<u64, AssemblyNode>,
    pending: BTreeMap<u64, SuggestionSet>,
    next_id: u64,
}

/// Resolves a random start into its code and placed field.
fn random_root(models: &Models, seed: u64) -> Result<(LatentCode, AffineTransform, VoxelGrid)> {
    let r = models.resolution();
    let d = models.pcn.latent_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RANDOM_START_ATTEMPTS {
        let z = LatentCode::new((0..d).map(|_| rng.gen::<f32>()).collect());
        let field = models.implicit.decode_field(&z, r)?;
        if field.is_empty(THRESHOLD) {
            continue;
        }
        let xf = models.pcn.localize(&field)?;
        let placed = apply_affine(&field, &xf)?;
        if !placed.is_empty(THRESHOLD) {
            return Ok((z, xf, placed));
        }
    }
    Err(Error::EmptyShape)
}

fn explicit_root(models: &Models, part: &VoxelGrid) -> Result<(LatentCode, AffineTransform, VoxelGrid)> {
    if part.resolution() != models.resolution() {
        return Err(Error::ResolutionMismatch { expected: models.resolution(), actual: part.resolution() });
    }
    if part.is_empty(THRESHOLD) {
        return Err(Error::EmptyShape);
    }
    let z = models.pcn.encode(part)?;
    let xf = models.pcn.localize(part)?;
    Ok((z, xf, apply_affine(part, &xf)?))
}

impl SynthesisSession {
    /// New session whose root holds the initial part placed by the
    /// localization network.
    pub fn start(id: impl Into<String>, initial: Initial, models: Models, config: SynthesisConfig) -> Result<Self> {
        config.validate()?;
        let (code, xf, placed) = match &initial {
            Initial::Random { seed } => random_root(&models, *seed)?,
            Initial::Part(p) => explicit_root(&models, p)?,
        };
        let root = AssemblyNode { id: 0, parent: None, assembly: placed, parts: vec![PlacedPart { code, xf }], depth: 0 };
        Ok(Self {
            id: id.into(),
            config,
            models,
            initial,
            nodes: BTreeMap::from([(0, root)]),
            pending: BTreeMap::new(),
            next_id: 1,
        })
    }

    pub fn config(&self) -> &SynthesisConfig {
        &self.config
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    pub fn initial(&self) -> &Initial {
        &self.initial
    }

    pub fn root(&self) -> &AssemblyNode {
        &self.nodes[&0]
    }

    pub fn node(&self, id: u64) -> Result<&AssemblyNode> {
        self.nodes.get(&id).ok_or(Error::UnknownNode(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &AssemblyNode> {
        self.nodes.values()
    }

    pub fn children(&self, id: u64) -> impl Iterator<Item = &AssemblyNode> {
        self.nodes.values().filter(move |n| n.parent == Some(id))
    }

    pub fn pending(&self, node: u64) -> Option<&SuggestionSet> {
        self.pending.get(&node)
    }

    pub fn pending_sets(&self) -> impl Iterator<Item = &SuggestionSet> {
        self.pending.values()
    }

    /// Draws `k` suggestions at `node`, replacing any pending set there.
    pub fn propose(&mut self, node: u64, seed: u64) -> Result<&SuggestionSet> {
        let source = self.node(node)?;
        if source.depth >= self.config.max_depth {
            return Err(Error::DepthLimit(self.config.max_depth));
        }
        let m = &self.models;
        let r = m.resolution();
        let y = m.pcn.encode(&source.assembly)?;
        let codes = m.psn.suggest(&y, self.config.k, seed)?;
        let voxel_parts = m.pcn.decode_all(&codes)?;
        let xfs = m.pcn.localize_all(&voxel_parts.iter().collect::<Vec<_>>())?;
        let mut items = Vec::with_capacity(codes.len());
        for (code, xf) in codes.into_iter().zip(xfs) {
            let field = m.implicit.decode_field(&code, r)?;
            let placed = apply_affine(&field, &xf)?;
            let preview = compose_assembly(&[source.assembly.clone(), placed.clone()])?;
            items.push(Suggestion { code, xf, field, placed, preview });
        }
        self.pending.insert(node, SuggestionSet { node, seed, items });
        Ok(&self.pending[&node])
    }

    /// Turns item `index` of the pending set at `node` into a child node.
    pub fn select(&mut self, node: u64, index: usize) -> Result<u64> {
        let parent = self.node(node)?;
        let set = self.pending.get(&node).ok_or(Error::StaleSuggestions(node))?;
        let item = set.items.get(index).ok_or(Error::IndexOutOfRange { index, len: set.items.len() })?;
        let mut parts = parent.parts.clone();
        parts.push(PlacedPart { code: item.code.clone(), xf: item.xf });
        let child = AssemblyNode {
            id: self.next_id,
            parent: Some(node),
            assembly: item.preview.clone(),
            parts,
            depth: parent.depth + 1,
        };
        self.pending.remove(&node);
        self.next_id += 1;
        let id = child.id;
        self.nodes.insert(id, child);
        Ok(id)
    }

    /// Mesh of `node` with every part re-decoded at `resolution`.
    pub fn export_node(&self, node: u64, resolution: usize) -> Result<TriangleMesh> {
        marching_cubes(&self.compose_at(node, resolution)?, THRESHOLD)
    }

    /// The assembly of `node` rebuilt from its parts at `resolution`.
    pub fn compose_at(&self, node: u64, resolution: usize) -> Result<VoxelGrid> {
        let n = self.node(node)?;
        let mut placed = Vec::with_capacity(n.parts.len());
        for (i, p) in n.parts.iter().enumerate() {
            let g = match (&self.initial, i) {
                (Initial::Part(part), 0) => apply_affine(&resize(part, resolution)?, &p.xf)?,
                _ => self.models.place_code(&p.code, &p.xf, resolution)?,
            };
            placed.push(g);
        }
        compose_assembly(&placed)
    }

    /// Serializable record of the tree; pending sets are not kept.
    pub fn to_document(&self) -> SessionDocument {
        SessionDocument {
            id: self.id.clone(),
            config: self.config.clone(),
            psn_kind: self.models.psn.kind(),
            digests: self.models.digests.clone(),
            initial: match &self.initial {
                Initial::Random { seed } => InitialRecord::Random { seed: *seed },
                Initial::Part(g) => InitialRecord::Part { resolution: g.resolution(), values: g.values().to_vec() },
            },
            nodes: self
                .nodes
                .values()
                .map(|n| NodeRecord { id: n.id, parent: n.parent, depth: n.depth, parts: n.parts.clone() })
                .collect(),
        }
    }

    /// Rebuilds a session from its record. The models must have the digests
    /// stored in the record.
    pub fn from_document(doc: &SessionDocument, models: Models) -> Result<Self> {
        if &doc.digests != models.digests() {
            return Err(Error::WrongModel {
                expected: format!("{:?}", doc.digests),
                actual: format!("{:?}", models.digests()),
            });
        }
        let initial = match &doc.initial {
            InitialRecord::Random { seed } => Initial::Random { seed: *seed },
            InitialRecord::Part { resolution, values } => Initial::Part(VoxelGrid::from_values(*resolution, values.clone())?),
        };
        let mut s = Self::start(doc.id.clone(), initial, models, doc.config.clone())?;
        let mut records: Vec<&NodeRecord> = doc.nodes.iter().collect();
        records.sort_by_key(|n| n.id);
        let root = records.first().ok_or_else(|| Error::Format("session has no nodes".into()))?;
        if root.id != 0 || root.parent.is_some() || root.parts != s.root().parts {
            return Err(Error::Format("root node does not match the initial part".into()));
        }
        let r = s.models.resolution();
        for rec in &records[1..] {
            let parent = rec.parent.and_then(|p| s.nodes.get(&p)).ok_or_else(|| Error::Format(format!("node {} has no earlier parent", rec.id)))?;
            if rec.depth != parent.depth + 1 || rec.parts.len() != rec.depth + 1 || rec.parts[..rec.depth] != parent.parts[..] {
                return Err(Error::Format(format!("node {} is inconsistent with its parent", rec.id)));
            }
            let new = rec.parts.last().unwrap();
            let placed = s.models.place_code(&new.code, &new.xf, r)?;
            let assembly = compose_assembly(&[parent.assembly.clone(), placed])?;
            s.nodes.insert(rec.id, AssemblyNode { id: rec.id, parent: rec.parent, assembly, parts: rec.parts.clone(), depth: rec.depth });
            s.next_id = s.next_id.max(rec.id + 1);
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum InitialRecord {
    Random { seed: u64 },
    Part { resolution: usize, values: Vec<f32> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: u64,
    pub parent: Option<u64>,
    pub depth: usize,
    pub parts: Vec<PlacedPart>,
}

/// JSON form of a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionDocument {
    pub id: String,
    pub config: SynthesisConfig,
    pub psn_kind: Kind,
    pub digests: ModelDigests,
    pub initial: InitialRecord,
    pub nodes: Vec<NodeRecord>,
}

/// Leaves of `n_shapes` random-start sessions, each grown for `rounds`
/// rounds with a uniformly random choice among the suggestions.
pub fn auto_sample(models: &Models, config: &SynthesisConfig, rounds: usize, n_shapes: usize, seed: u64) -> Result<Vec<AssemblyNode>> {
    Ok(auto_sessions(models, config, rounds, n_shapes, seed)?
        .into_iter()
        .map(|(s, leaf)| s.nodes[&leaf].clone())
        .collect())
}

/// Like [`auto_sample`] but returns the sessions and their leaf ids.
pub fn auto_sessions(
    models: &Models,
    config: &SynthesisConfig,
    rounds: usize,
    n_shapes: usize,
    seed: u64,
) -> Result<Vec<(SynthesisSession, u64)>> {
    if rounds == 0 {
        return Err(Error::InvalidArgument("at least one round is required".into()));
    }
    let config = SynthesisConfig { max_depth: config.max_depth.max(rounds), ..config.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_shapes);
    for i in 0..n_shapes {
        let mut s = SynthesisSession::start(format!("auto-{seed}-{i}"), Initial::Random { seed: rng.gen() }, models.clone(), config.clone())?;
        let mut leaf = 0;
        for _ in 0..rounds {
            let k = s.propose(leaf, rng.gen())?.items.len();
            leaf = s.select(leaf, rng.gen_range(0..k))?;
        }
        out.push((s, leaf));
    }
    Ok(out)
}

/// Per-axis rescale of a part about the frame center.
pub fn edit_initial(part: &VoxelGrid, axis_scales: [f64; 3]) -> Result<VoxelGrid> {
    scale_axes(part, axis_scales)
}
