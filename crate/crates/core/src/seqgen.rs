//! Visual sentences: bounded DFS walks and look-around rotations over a
//! [`NavGraph`], with the action between consecutive states derived from geometry
//! and capture dates.

use std::collections::HashSet;
use std::sync::Mutex;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, GeoPoint};
use crate::panograph::{month_index, NavGraph, NodeId, PanoNode, MAX_MOVE_M};
use crate::tokenize::{round_to, splitmix64, IMAGE_TOKENS_PER_SAMPLE, IMAGE_VOCAB};

pub const DISTANCE_STEP_M: f64 = 0.1;
pub const HEADING_STEP_DEG: f64 = 0.1;
pub const MAX_DELTA_YEARS: i32 = 30;
pub const LOOKAROUND_VIEWS: usize = 4;
/// 4! orderings of the four look-around views.
pub const LOOKAROUND_PERMUTATIONS: usize = 24;

#[derive(Debug, Error)]
pub enum SeqError {
    #[error("unknown origin node {0}")]
    UnknownOrigin(NodeId),
    #[error("max_paths_per_node must be >= 1 and max_samples_per_sequence >= 2")]
    BadLimits,
    #[error("path step {from} -> {to} is not a graph edge")]
    InvalidPath { from: NodeId, to: NodeId },
    #[error("action {from} -> {to} out of range: {reason}")]
    ActionOutOfRange {
        from: NodeId,
        to: NodeId,
        reason: String,
    },
    #[error("observing node {node} at heading {heading}: {message}")]
    View {
        node: NodeId,
        heading: f64,
        message: String,
    },
    #[error("writing sentence: {0}")]
    Sink(String),
}

/// Commanded move: quantized distance and heading plus a canonical date offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub distance: f64,
    pub heading: f64,
    pub d_month: u8,
    pub d_year: i8,
}

impl Action {
    pub const ZERO: Action = Action {
        distance: 0.0,
        heading: 0.0,
        d_month: 0,
        d_year: 0,
    };

    pub fn delta_months(&self) -> i32 {
        12 * self.d_year as i32 + self.d_month as i32
    }

    pub fn is_static(&self) -> bool {
        self.distance == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub pos: GeoPoint,
    pub month: u8,
    pub year: u16,
}

impl State {
    pub fn of(node: &PanoNode) -> Self {
        State {
            pos: node.pos,
            month: node.month,
            year: node.year,
        }
    }

    pub fn months(&self) -> i32 {
        month_index(self.month, self.year)
    }

    /// Dead-reckons `action` from this state.
    pub fn apply(&self, action: &Action) -> State {
        let total = self.months() + action.delta_months();
        State {
            pos: geo::destination(self.pos, action.distance, action.heading),
            month: (total.rem_euclid(12) + 1) as u8,
            year: total.div_euclid(12) as u16,
        }
    }
}

/// One observation/state/action step.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_tokens: Vec<u16>,
    pub state: State,
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceKind {
    Dfs,
    Lookaround,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub origin: NodeId,
    pub path: Vec<NodeId>,
    pub kind: SentenceKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualSentence {
    pub samples: Vec<Sample>,
    pub provenance: Provenance,
}

/// Supplies the 1024 image tokens for a node viewed toward an absolute heading.
pub trait ViewSource: Sync {
    fn observe(&self, node: &PanoNode, heading_deg: f64) -> Result<Vec<u16>, SeqError>;
}

/// Cheap stand-in that hashes (node, heading) into image ids without rendering.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashedViews;

impl ViewSource for HashedViews {
    fn observe(&self, node: &PanoNode, heading_deg: f64) -> Result<Vec<u16>, SeqError> {
        let h = (heading_deg / HEADING_STEP_DEG).round() as u64;
        let seed = splitmix64(node.id.0 ^ h.rotate_left(40));
        Ok((0..IMAGE_TOKENS_PER_SAMPLE as u64)
            .map(|i| (splitmix64(seed ^ i) % IMAGE_VOCAB as u64) as u16)
            .collect())
    }
}

/// Quantized action from one node to another.
pub fn derive_action(from: &PanoNode, to: &PanoNode) -> Result<Action, SeqError> {
    let out_of_range = |reason: String| SeqError::ActionOutOfRange {
        from: from.id,
        to: to.id,
        reason,
    };
    let distance = round_to(geo::haversine_m(from.pos, to.pos), DISTANCE_STEP_M);
    if distance > MAX_MOVE_M {
        return Err(out_of_range(format!("distance {distance} m exceeds {MAX_MOVE_M} m")));
    }
    let heading = if distance == 0.0 {
        0.0
    } else {
        let b = geo::initial_bearing_deg(from.pos, to.pos).expect("distinct positions");
        geo::normalize_deg(round_to(b, HEADING_STEP_DEG))
    };
    let total = to.months() - from.months();
    let d_year = total.div_euclid(12);
    if d_year.abs() > MAX_DELTA_YEARS {
        return Err(out_of_range(format!("{total} months exceeds ±{MAX_DELTA_YEARS} years")));
    }
    Ok(Action {
        distance,
        heading,
        d_month: total.rem_euclid(12) as u8,
        d_year: d_year as i8,
    })
}

/// Simple paths from `origin` in DFS pre-order, neighbors in ascending id order.
/// Every prefix of at least two nodes is a path; stops after `max_paths` paths and
/// never extends a path beyond `max_len` nodes.
pub fn enumerate_paths(
    g: &NavGraph,
    origin: NodeId,
    max_paths: usize,
    max_len: usize,
) -> Result<Vec<Vec<NodeId>>, SeqError> {
    if max_paths == 0 || max_len < 2 {
        return Err(SeqError::BadLimits);
    }
    let start = g.index_of(origin).ok_or(SeqError::UnknownOrigin(origin))?;
    let mut out = Vec::new();
    let mut path = vec![start];
    let mut on_path = vec![false; g.len()];
    on_path[start] = true;
    // next neighbor slot to try at each depth
    let mut cursor = vec![0usize];
    while let Some(&u) = path.last() {
        let depth = path.len() - 1;
        let neighbors = g.neighbor_indices(u);
        let next = if path.len() < max_len {
            let from = cursor[depth];
            neighbors[from..]
                .iter()
                .position(|&v| !on_path[v])
                .map(|k| (from + k, neighbors[from + k]))
        } else {
            None
        };
        match next {
            Some((slot, v)) => {
                cursor[depth] = slot + 1;
                path.push(v);
                on_path[v] = true;
                cursor.push(0);
                out.push(path.iter().map(|&i| g.nodes()[i].id).collect());
                if out.len() == max_paths {
                    break;
                }
            }
            None => {
                cursor.pop();
                if let Some(v) = path.pop() {
                    on_path[v] = false;
                }
            }
        }
    }
    Ok(out)
}

/// Builds the sentence for a graph walk. Each sample is viewed toward its outgoing
/// action heading; zero-displacement steps keep the previous view direction. The
/// last sample repeats the final view heading with no displacement or date change.
pub fn assemble_sentence(path: &[NodeId], g: &NavGraph, views: &dyn ViewSource) -> Result<VisualSentence, SeqError> {
    let origin = *path.first().ok_or(SeqError::BadLimits)?;
    let nodes: Vec<&PanoNode> = path
        .iter()
        .map(|&id| g.node(id).ok_or(SeqError::UnknownOrigin(id)))
        .collect::<Result<_, _>>()?;
    for w in path.windows(2) {
        if !g.has_edge(w[0], w[1]) {
            return Err(SeqError::InvalidPath { from: w[0], to: w[1] });
        }
    }
    let mut samples = Vec::with_capacity(path.len());
    let mut view_heading = geo::normalize_deg(round_to(nodes[0].base_heading, HEADING_STEP_DEG));
    for (i, node) in nodes.iter().enumerate() {
        let action = match nodes.get(i + 1) {
            Some(next) => {
                let a = derive_action(node, next)?;
                if !a.is_static() {
                    view_heading = a.heading;
                }
                a
            }
            None => Action {
                heading: view_heading,
                ..Action::ZERO
            },
        };
        samples.push(Sample {
            image_tokens: views.observe(node, view_heading)?,
            state: State::of(node),
            action,
        });
    }
    Ok(VisualSentence {
        samples,
        provenance: Provenance {
            origin,
            path: path.to_vec(),
            kind: SentenceKind::Dfs,
        },
    })
}

/// All 24 orderings of the four views, lexicographic.
pub fn lookaround_orders() -> Vec<[usize; LOOKAROUND_VIEWS]> {
    let mut out = Vec::with_capacity(LOOKAROUND_PERMUTATIONS);
    for a in 0..4 {
        for b in (0..4).filter(|&b| b != a) {
            for c in (0..4).filter(|&c| c != a && c != b) {
                out.push([a, b, c, 6 - a - b - c]);
            }
        }
    }
    out
}

/// Absolute headings of the four look-around views of `node`.
pub fn lookaround_headings(node: &PanoNode) -> [f64; LOOKAROUND_VIEWS] {
    std::array::from_fn(|k| geo::normalize_deg(round_to(node.base_heading + 90.0 * k as f64, HEADING_STEP_DEG)))
}

/// Static rotation sentences for one node. `perms` of `None` emits all 24 orders;
/// `Some(k)` emits `k` distinct orders chosen by `seed`, in lexicographic order.
pub fn gen_lookaround(
    node: &PanoNode,
    perms: Option<usize>,
    seed: u64,
    views: &dyn ViewSource,
) -> Result<Vec<VisualSentence>, SeqError> {
    let orders = lookaround_orders();
    let chosen: Vec<usize> = match perms {
        None => (0..orders.len()).collect(),
        Some(k) if k >= orders.len() => (0..orders.len()).collect(),
        Some(k) => {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(node.id.0)));
            let mut idx = sample_indices(&mut rng, orders.len(), k).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    if chosen.is_empty() {
        return Ok(Vec::new());
    }
    let headings = lookaround_headings(node);
    let images = headings
        .iter()
        .map(|&h| views.observe(node, h))
        .collect::<Result<Vec<_>, _>>()?;
    let state = State::of(node);
    Ok(chosen
        .into_iter()
        .map(|o| {
            let order = orders[o];
            let samples = (0..LOOKAROUND_VIEWS)
                .map(|i| {
                    let next = order[(i + 1).min(LOOKAROUND_VIEWS - 1)];
                    Sample {
                        image_tokens: images[order[i]].clone(),
                        state,
                        action: Action {
                            heading: headings[next],
                            ..Action::ZERO
                        },
                    }
                })
                .collect();
            VisualSentence {
                samples,
                provenance: Provenance {
                    origin: node.id,
                    path: vec![node.id],
                    kind: SentenceKind::Lookaround,
                },
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqConfig {
    pub max_paths_per_node: usize,
    pub max_samples_per_sequence: usize,
    /// Look-around orders per node; `None` for all 24.
    pub lookaround_perms: Option<usize>,
    pub seed: u64,
}

impl Default for SeqConfig {
    fn default() -> Self {
        SeqConfig {
            max_paths_per_node: 32,
            max_samples_per_sequence: 13,
            lookaround_perms: Some(4),
            seed: 0,
        }
    }
}

/// Origin-id modulo partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shard {
    pub index: u64,
    pub count: u64,
}

impl Shard {
    pub const ALL: Shard = Shard { index: 0, count: 1 };

    pub fn new(index: u64, count: u64) -> Option<Shard> {
        (count > 0 && index < count).then_some(Shard { index, count })
    }

    pub fn owns(&self, id: NodeId) -> bool {
        id.0 % self.count == self.index
    }
}

/// Every sentence rooted at one origin: DFS walks first, then look-around orders.
pub fn sentences_for_origin(
    g: &NavGraph,
    origin: NodeId,
    views: &dyn ViewSource,
    cfg: &SeqConfig,
) -> Result<Vec<VisualSentence>, SeqError> {
    let mut out = Vec::new();
    for path in enumerate_paths(g, origin, cfg.max_paths_per_node, cfg.max_samples_per_sequence)? {
        out.push(assemble_sentence(&path, g, views)?);
    }
    let node = g.node(origin).ok_or(SeqError::UnknownOrigin(origin))?;
    out.extend(gen_lookaround(node, cfg.lookaround_perms, cfg.seed, views)?);
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenCounts {
    pub sequences: u64,
    pub samples: u64,
    pub panoramas: u64,
    /// Distinct (node, view heading) pairs rendered.
    pub unique_views: u64,
}

const ORIGIN_CHUNK: usize = 64;

/// Remembers every distinct (node, heading) the inner source is asked for.
struct RecordingViews<'a> {
    inner: &'a dyn ViewSource,
    seen: Mutex<HashSet<(NodeId, u32)>>,
}

impl ViewSource for RecordingViews<'_> {
    fn observe(&self, node: &PanoNode, heading_deg: f64) -> Result<Vec<u16>, SeqError> {
        let key = (node.id, (heading_deg / HEADING_STEP_DEG).round() as u32);
        self.seen.lock().expect("view log lock").insert(key);
        self.inner.observe(node, heading_deg)
    }
}

/// Generates every sentence for the shard's origins, in ascending origin order,
/// handing them to `sink` one at a time. Origins are processed in parallel in
/// fixed-size chunks; output order does not depend on thread count.
pub fn generate<F>(
    g: &NavGraph,
    views: &dyn ViewSource,
    cfg: &SeqConfig,
    shard: Shard,
    mut sink: F,
) -> Result<GenCounts, SeqError>
where
    F: FnMut(VisualSentence) -> Result<(), SeqError>,
{
    let origins: Vec<NodeId> = g.nodes().iter().map(|n| n.id).filter(|&id| shard.owns(id)).collect();
    let recorder = RecordingViews {
        inner: views,
        seen: Mutex::new(HashSet::new()),
    };
    let mut counts = GenCounts::default();
    for chunk in origins.chunks(ORIGIN_CHUNK) {
        let batches: Vec<Result<Vec<VisualSentence>, SeqError>> = chunk
            .par_iter()
            .map(|&o| sentences_for_origin(g, o, &recorder, cfg))
            .collect();
        for batch in batches {
            for sentence in batch? {
                counts.sequences += 1;
                counts.samples += sentence.samples.len() as u64;
                sink(sentence)?;
            }
        }
        counts.panoramas += chunk.len() as u64;
    }
    counts.unique_views = recorder.seen.into_inner().expect("view log lock").len() as u64;
    Ok(counts)
}
