//! Navigable environment over a [`NavGraph`]: transitions driven by actions,
//! transition validity, coordinate-token masking and a graph-walking policy.
//!
//! A step dead-reckons the action from the current node and snaps the target to a
//! nearby capture, preferring one with exactly the requested date. The result
//! depends only on the current node and the action.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, GeoPoint};
use crate::panograph::{pair_kinds, NavGraph, NodeGrid, NodeId, MAX_MOVE_M};
use crate::roadnet::RoadNetwork;
use crate::seqgen::{derive_action, Action, SeqError, State, ViewSource, MAX_DELTA_YEARS};
use crate::tokenize::{Modality, ModalityLayout, TokenId, TokenVocab};

pub const DEFAULT_SNAP_RADIUS_M: f64 = 7.5;
pub const DEFAULT_MASK_TOL_M: f64 = 2.0;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("node {0} is not in the graph")]
    UnknownNode(NodeId),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("anchor ({lat}, {lon}) is outside the coordinate vocabulary")]
    AnchorOutOfRange { lat: f64, lon: f64 },
    #[error("move distance must be in [0, {MAX_MOVE_M}] and tolerance >= 0, got {move_d} / {tol}")]
    BadRadius { move_d: f64, tol: f64 },
    #[error(transparent)]
    View(#[from] SeqError),
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub snap_radius_m: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            snap_radius_m: DEFAULT_SNAP_RADIUS_M,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub next_node: NodeId,
    /// Action from the current node to `next_node`.
    pub realized_action: Action,
    pub requested_action: Action,
    pub valid: bool,
}

/// One session's position. Only [`Env::reset`] creates these, so the node always
/// exists in the environment's graph.
#[derive(Debug, Clone)]
pub struct EnvState {
    node: NodeId,
    seed: u64,
    /// Last nonzero travel heading; the view direction for [`Env::observe`].
    heading: f64,
    rng: ChaCha8Rng,
}

impl EnvState {
    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    Node(NodeId),
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub image_tokens: Vec<u16>,
    pub state: State,
    pub heading: f64,
    /// Graph neighbors with the action that reaches each.
    pub neighbors: Vec<(NodeId, Action)>,
}

/// Read-only environment; any number of sessions may share one.
pub struct Env<'a> {
    graph: &'a NavGraph,
    net: &'a RoadNetwork,
    cfg: EnvConfig,
    grid: NodeGrid,
}

impl<'a> Env<'a> {
    pub fn new(graph: &'a NavGraph, net: &'a RoadNetwork, cfg: EnvConfig) -> Self {
        let positions: Vec<GeoPoint> = graph.nodes().iter().map(|n| n.pos).collect();
        Env {
            graph,
            net,
            cfg,
            grid: NodeGrid::new(&positions, cfg.snap_radius_m.max(1e-3)),
        }
    }

    pub fn graph(&self) -> &NavGraph {
        self.graph
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn reset(&self, start: Start, seed: u64) -> Result<EnvState, EnvError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let node = match start {
            Start::Node(id) => self.graph.node(id).ok_or(EnvError::UnknownNode(id))?,
            Start::Random => {
                if self.graph.is_empty() {
                    return Err(EnvError::EmptyGraph);
                }
                &self.graph.nodes()[rng.gen_range(0..self.graph.len())]
            }
        };
        Ok(EnvState {
            node: node.id,
            seed,
            heading: node.base_heading,
            rng,
        })
    }

    /// Resolves `action` from `from`. Never fails: unknown nodes, out-of-range
    /// actions, targets with no capture nearby and targets that are not a graph
    /// transition all come back with `valid == false` and `next_node == from`.
    pub fn step_from(&self, from: NodeId, action: &Action) -> StepResult {
        let invalid = StepResult {
            next_node: from,
            realized_action: Action::ZERO,
            requested_action: *action,
            valid: false,
        };
        let Some(cur) = self.graph.node(from) else {
            return invalid;
        };
        let in_range = action.distance.is_finite()
            && (0.0..=MAX_MOVE_M).contains(&action.distance)
            && action.heading.is_finite()
            && action.d_month < 12
            && (action.d_year as i32).abs() <= MAX_DELTA_YEARS;
        if !in_range {
            return invalid;
        }
        let target = State::of(cur).apply(action);
        let want = target.months();
        let nodes = self.graph.nodes();
        // (date mismatch in months, distance, id): exact dates win, then nearest
        let best = self
            .grid
            .candidates(target.pos)
            .into_iter()
            .map(|i| &nodes[i])
            .map(|n| ((n.months() - want).abs(), geo::haversine_m(n.pos, target.pos), n.id))
            .filter(|&(_, d, _)| d <= self.cfg.snap_radius_m)
            .min_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        let Some((_, _, next)) = best else {
            return invalid;
        };
        if next != from && !self.graph.has_edge(from, next) {
            return invalid;
        }
        let to = self.graph.node(next).expect("candidate is a graph node");
        StepResult {
            next_node: next,
            realized_action: derive_action(cur, to).unwrap_or(Action::ZERO),
            requested_action: *action,
            valid: true,
        }
    }

    /// Applies `action` to the session; invalid steps leave it where it was.
    pub fn step(&self, s: &mut EnvState, action: &Action) -> StepResult {
        let r = self.step_from(s.node, action);
        if r.valid {
            s.node = r.next_node;
            if r.realized_action.distance > 0.0 {
                s.heading = r.realized_action.heading;
            }
        }
        r
    }

    pub fn observe(&self, s: &EnvState, views: &dyn ViewSource) -> Result<Observation, EnvError> {
        let node = self.graph.node(s.node).ok_or(EnvError::UnknownNode(s.node))?;
        let neighbors = self
            .graph
            .neighbors(s.node)
            .map_err(|_| EnvError::UnknownNode(s.node))?
            .into_iter()
            .map(|v| Ok((v, derive_action(node, self.graph.node(v).expect("neighbor exists"))?)))
            .collect::<Result<Vec<_>, SeqError>>()?;
        Ok(Observation {
            image_tokens: views.observe(node, s.heading)?,
            state: State::of(node),
            heading: s.heading,
            neighbors,
        })
    }

    /// Picks a neighbor uniformly with the session's generator and returns the
    /// action that reaches it; the zero action for isolated nodes.
    pub fn oracle_policy(&self, s: &mut EnvState) -> Action {
        let Ok(neighbors) = self.graph.neighbors(s.node) else {
            return Action::ZERO;
        };
        if neighbors.is_empty() {
            return Action::ZERO;
        }
        let pick = neighbors[s.rng.gen_range(0..neighbors.len())];
        let (u, v) = (self.graph.node(s.node), self.graph.node(pick));
        derive_action(u.expect("current node"), v.expect("neighbor")).unwrap_or(Action::ZERO)
    }

    pub fn valid_transition(&self, u: NodeId, v: NodeId) -> Result<bool, EnvError> {
        valid_transition(u, v, self.graph, self.net)
    }
}

/// Whether moving from `u` to `v` is permitted: a road path of at most the move
/// cap joins them, or they are co-located captures from different dates. A node
/// may always stay where it is. Recomputed from the road network rather than read
/// from the graph's edge lists.
pub fn valid_transition(u: NodeId, v: NodeId, g: &NavGraph, net: &RoadNetwork) -> Result<bool, EnvError> {
    let a = g.node(u).ok_or(EnvError::UnknownNode(u))?;
    let b = g.node(v).ok_or(EnvError::UnknownNode(v))?;
    if u == v {
        return Ok(true);
    }
    let k = pair_kinds(a, b, net, g.config());
    Ok(k.spatial || k.temporal)
}

/// Admissible coordinate token ids per axis, each ascending and contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoordMask {
    pub lat: Vec<TokenId>,
    pub lon: Vec<TokenId>,
}

/// Latitude and longitude tokens whose bin center lies within `move_d + tol`
/// meters of the anchor along that axis. Longitude meters are measured at the
/// anchor's latitude. The pair of axis bounds is a box that contains the disk of
/// reachable positions.
pub fn admissible_coord_tokens(
    anchor: GeoPoint,
    move_d: f64,
    tol: f64,
    vocab: &TokenVocab,
) -> Result<CoordMask, EnvError> {
    if !(0.0..=MAX_MOVE_M).contains(&move_d) || !(tol >= 0.0 && tol.is_finite()) {
        return Err(EnvError::BadRadius { move_d, tol });
    }
    let out_of_range = || EnvError::AnchorOutOfRange {
        lat: anchor.lat,
        lon: anchor.lon,
    };
    vocab.encode_value(Modality::Latitude, anchor.lat).map_err(|_| out_of_range())?;
    vocab.encode_value(Modality::Longitude, anchor.lon).map_err(|_| out_of_range())?;
    let radius = move_d + tol;
    Ok(CoordMask {
        lat: axis_tokens(
            vocab.layout(Modality::Latitude),
            anchor.lat,
            radius,
            geo::meters_per_degree_lat(),
        ),
        lon: axis_tokens(
            vocab.layout(Modality::Longitude),
            anchor.lon,
            radius,
            geo::meters_per_degree_lon(anchor.lat),
        ),
    })
}

fn axis_tokens(l: &ModalityLayout, anchor: f64, radius_m: f64, m_per_deg: f64) -> Vec<TokenId> {
    let admissible = |k: usize| (l.center(k) - anchor).abs() * m_per_deg <= radius_m;
    let last = l.reachable - 1;
    let bin_of = |v: f64| ((v - l.min) / l.precision).round().clamp(0.0, last as f64) as usize;
    let nearest = bin_of(anchor);
    if !admissible(nearest) {
        return Vec::new();
    }
    let span = radius_m / m_per_deg;
    // estimates, then settled with the exact predicate
    let mut lo = bin_of(anchor - span).min(nearest);
    let mut hi = bin_of(anchor + span).max(nearest);
    while lo > 0 && admissible(lo - 1) {
        lo -= 1;
    }
    while lo < nearest && !admissible(lo) {
        lo += 1;
    }
    while hi < last && admissible(hi + 1) {
        hi += 1;
    }
    while hi > nearest && !admissible(hi) {
        hi -= 1;
    }
    (lo..=hi).map(|k| (l.offset + k) as TokenId).collect()
}

/// Sets every coordinate logit outside `mask` to negative infinity. `logits` is
/// indexed by token id and must cover the coordinate ranges.
pub fn mask_logits(logits: &mut [f32], vocab: &TokenVocab, mask: &CoordMask) {
    for (modality, allowed) in [(Modality::Latitude, &mask.lat), (Modality::Longitude, &mask.lon)] {
        let l = vocab.layout(modality);
        let (keep_lo, keep_hi) = match (allowed.first(), allowed.last()) {
            (Some(&a), Some(&b)) => (a as usize, b as usize),
            _ => (usize::MAX, 0),
        };
        for id in l.offset..l.offset + l.size {
            if !(keep_lo..=keep_hi).contains(&id) {
                logits[id] = f32::NEG_INFINITY;
            }
        }
    }
}

/// One line of an environment trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub node: NodeId,
    pub state: State,
    #[serde(flatten)]
    pub result: StepResult,
}

/// Runs the oracle policy for `steps` steps, recording each transition along
/// with the resulting state.
pub fn rollout(env: &Env, s: &mut EnvState, steps: u64) -> Vec<TraceRecord> {
    (0..steps)
        .map(|step| {
            let node = s.node;
            let action = env.oracle_policy(s);
            let result = env.step(s, &action);
            let state = State::of(env.graph.node(s.node).expect("session node exists"));
            TraceRecord {
                step,
                node,
                state,
                result,
            }
        })
        .collect()
}

pub fn write_trace<W: Write>(records: &[TraceRecord], sink: &mut W) -> Result<(), EnvError> {
    for r in records {
        serde_json::to_writer(&mut *sink, r).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(source: R) -> Result<Vec<TraceRecord>, EnvError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EnvError::Trace {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panograph::{build_graph, GraphConfig};
    use crate::roadnet::{parse_osm, ParseConfig};
    use crate::synth::{synthetic_city, CityConfig};

    fn small_city() -> (NavGraph, RoadNetwork) {
        let city = synthetic_city(&CityConfig {
            streets_ns: 3,
            streets_ew: 3,
            ..CityConfig::default()
        });
        let net = parse_osm(&city.osm_xml, &ParseConfig::default()).unwrap();
        let g = build_graph(city.nodes, &net, &GraphConfig::default()).unwrap();
        (g, net)
    }

    #[test]
    fn zero_action_stays() {
        let (g, net) = small_city();
        let env = Env::new(&g, &net, EnvConfig::default());
        let id = g.nodes()[10].id;
        let r = env.step_from(id, &Action::ZERO);
        assert!(r.valid);
        assert_eq!(r.next_node, id);
    }

    #[test]
    fn every_edge_replays_to_its_target() {
        let (g, net) = small_city();
        let env = Env::new(&g, &net, EnvConfig::default());
        for &(u, v) in g.spatial_edges().iter().chain(g.temporal_edges()) {
            for (a, b) in [(u, v), (v, u)] {
                let act = derive_action(g.node(a).unwrap(), g.node(b).unwrap()).unwrap();
                let r = env.step_from(a, &act);
                assert!(r.valid && r.next_node == b, "{a} -> {b}: {r:?}");
            }
        }
    }

    #[test]
    fn move_into_block_interior_is_invalid() {
        let (g, net) = small_city();
        let env = Env::new(&g, &net, EnvConfig::default());
        // southern street node mid-block; north of it is the roadless interior
        let mid = geo::destination(CityConfig::default().origin, 75.0, 90.0);
        let n = g
            .nodes()
            .iter()
            .min_by(|a, b| geo::haversine_m(a.pos, mid).total_cmp(&geo::haversine_m(b.pos, mid)))
            .unwrap();
        let act = Action {
            distance: 50.0,
            heading: 0.0,
            d_month: 0,
            d_year: 0,
        };
        let r = env.step_from(n.id, &act);
        assert!(!r.valid);
        assert_eq!(r.next_node, n.id);
    }

    #[test]
    fn out_of_range_action_is_invalid() {
        let (g, net) = small_city();
        let env = Env::new(&g, &net, EnvConfig::default());
        let act = Action {
            distance: 60.0,
            ..Action::ZERO
        };
        assert!(!env.step_from(g.nodes()[0].id, &act).valid);
    }

    #[test]
    fn valid_transition_matches_edges_on_all_close_pairs() {
        let (g, net) = small_city();
        let nodes = g.nodes();
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                if geo::haversine_m(nodes[i].pos, nodes[j].pos) > 50.0 {
                    continue;
                }
                let want = g.has_edge(nodes[i].id, nodes[j].id);
                assert_eq!(valid_transition(nodes[i].id, nodes[j].id, &g, &net).unwrap(), want);
            }
        }
        assert!(matches!(
            valid_transition(NodeId(999_999), nodes[0].id, &g, &net),
            Err(EnvError::UnknownNode(_))
        ));
    }

    #[test]
    fn oracle_rollout_is_deterministic_and_valid() {
        let (g, net) = small_city();
        let env = Env::new(&g, &net, EnvConfig::default());
        let run = |seed| {
            let mut s = env.reset(Start::Random, seed).unwrap();
            rollout(&env, &mut s, 300)
        };
        let a = run(5);
        assert_eq!(a, run(5));
        for r in &a {
            assert!(r.result.valid);
            assert!(valid_transition(r.node, r.result.next_node, &g, &net).unwrap());
        }
        let mut buf = Vec::new();
        write_trace(&a, &mut buf).unwrap();
        assert_eq!(read_trace(buf.as_slice()).unwrap(), a);
    }

    #[test]
    fn zero_radius_mask_is_own_bin() {
        let vocab = TokenVocab::default();
        let lat_l = vocab.layout(Modality::Latitude);
        let lon_l = vocab.layout(Modality::Longitude);
        let anchor = GeoPoint {
            lat: lat_l.center(3000),
            lon: lon_l.center(4000),
        };
        let m = admissible_coord_tokens(anchor, 0.0, 0.0, &vocab).unwrap();
        assert_eq!(m.lat, vec![(lat_l.offset + 3000) as TokenId]);
        assert_eq!(m.lon, vec![(lon_l.offset + 4000) as TokenId]);
    }

    #[test]
    fn mask_clips_at_vocab_edge() {
        let vocab = TokenVocab::default();
        let lat_l = vocab.layout(Modality::Latitude);
        let anchor = GeoPoint {
            lat: lat_l.min,
            lon: vocab.layout(Modality::Longitude).min,
        };
        let m = admissible_coord_tokens(anchor, 50.0, 0.0, &vocab).unwrap();
        assert_eq!(m.lat[0] as usize, lat_l.offset);
        assert!(m.lat.len() < 50);
        let outside = GeoPoint { lat: 10.0, lon: 0.0 };
        assert!(admissible_coord_tokens(outside, 1.0, 0.0, &vocab).is_err());
        assert!(admissible_coord_tokens(anchor, 51.0, 0.0, &vocab).is_err());
    }

    #[test]
    fn masked_logits_keep_only_admissible() {
        let vocab = TokenVocab::default();
        let anchor = GeoPoint { lat: 37.54, lon: -122.30 };
        let m = admissible_coord_tokens(anchor, 10.0, 1.0, &vocab).unwrap();
        let mut logits = vec![0.0f32; vocab.total];
        mask_logits(&mut logits, &vocab, &m);
        let kept: Vec<usize> = (0..vocab.total).filter(|&i| logits[i].is_finite()).collect();
        let coord_kept = kept
            .iter()
            .filter(|&&i| matches!(vocab.modality_of(i as TokenId), Some(Modality::Latitude | Modality::Longitude)))
            .count();
        assert_eq!(coord_kept, m.lat.len() + m.lon.len());
        assert_eq!(logits[0], 0.0);
    }
}
