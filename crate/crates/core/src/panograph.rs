//! Spatiotemporal navigation graph over panorama captures.
//!
//! Two captures are spatial neighbors when they are at most `max_move_m` apart and
//! joined by a drivable road path of at most that length. Captures within
//! `temporal_link_radius_m` of each other taken on different dates are temporal
//! neighbors. Edges are undirected and stored once with the lower id first.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, BBox, GeoPoint};
use crate::roadnet::{RoadNetwork, DEFAULT_SNAP_TOL_M};

pub const MAX_MOVE_M: f64 = 50.0;
pub const DEFAULT_TEMPORAL_LINK_RADIUS_M: f64 = 5.0;
pub const MIN_YEAR: u16 = 2000;
pub const MAX_YEAR: u16 = 2030;
const GRAPH_FORMAT_VERSION: u32 = 1;
/// Largest |Δ months| whose canonical (Δmonth, Δyear) fits the action vocabulary
/// in both directions.
pub const MAX_TEMPORAL_DELTA_MONTHS: i32 = 360;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph is empty: no panorama survived validation ({dropped} dropped)")]
    EmptyGraph { dropped: usize },
    #[error("panorama {id}: {reason}")]
    InvalidNode { id: String, reason: String },
    #[error("duplicate panorama id {0}")]
    DuplicateId(NodeId),
    #[error("spatial holdout fraction must be in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("metadata {path}: {message}")]
    Metadata { path: String, message: String },
    #[error("graph file: {0}")]
    Format(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One panorama capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanoNode {
    pub id: NodeId,
    pub pos: GeoPoint,
    pub month: u8,
    pub year: u16,
    pub image_ref: String,
    /// True-north heading of the panorama's horizontal center.
    #[serde(default)]
    pub base_heading: f64,
}

impl PanoNode {
    /// Months since year 0, used for temporal deltas.
    pub fn months(&self) -> i32 {
        month_index(self.month, self.year)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |reason: String| GraphError::InvalidNode {
            id: self.id.to_string(),
            reason,
        };
        if !self.pos.is_valid() {
            return Err(bad(format!("invalid position ({}, {})", self.pos.lat, self.pos.lon)));
        }
        if !(1..=12).contains(&self.month) {
            return Err(bad(format!("month {} outside 1..=12", self.month)));
        }
        if !(MIN_YEAR..=MAX_YEAR).contains(&self.year) {
            return Err(bad(format!("year {} outside {MIN_YEAR}..={MAX_YEAR}", self.year)));
        }
        if !self.base_heading.is_finite() {
            return Err(bad("base heading is not finite".into()));
        }
        Ok(())
    }
}

pub fn month_index(month: u8, year: u16) -> i32 {
    year as i32 * 12 + month as i32 - 1
}

#[derive(Debug, Deserialize)]
struct MetadataRecord {
    id: u64,
    lat: f64,
    lon: f64,
    month: u8,
    year: u16,
    #[serde(default)]
    image_path: String,
    #[serde(default)]
    base_heading: f64,
}

impl From<MetadataRecord> for PanoNode {
    fn from(r: MetadataRecord) -> Self {
        PanoNode {
            id: NodeId(r.id),
            pos: GeoPoint { lat: r.lat, lon: r.lon },
            month: r.month,
            year: r.year,
            image_ref: r.image_path,
            base_heading: r.base_heading,
        }
    }
}

/// Reads panorama metadata: CSV (by `.csv` extension) or JSONL with columns
/// `id, lat, lon, month, year, image_path` and optional `base_heading`.
pub fn load_metadata(path: &Path) -> Result<Vec<PanoNode>, GraphError> {
    let err = |message: String| GraphError::Metadata {
        path: path.display().to_string(),
        message,
    };
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let records: Vec<MetadataRecord> = if is_csv {
        let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
        reader
            .deserialize()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| err(format!("record {}: {e}", i + 1))))
            .collect::<Result<_, _>>()?
    } else {
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| err(format!("line {}: {e}", i + 1))))
            .collect::<Result<_, _>>()?
    };
    let nodes: Vec<PanoNode> = records.into_iter().map(PanoNode::from).collect();
    for n in &nodes {
        n.validate()?;
    }
    Ok(nodes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub max_move_m: f64,
    pub temporal_link_radius_m: f64,
    pub snap_tol_m: f64,
    pub bbox: Option<BBox>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            max_move_m: MAX_MOVE_M,
            temporal_link_radius_m: DEFAULT_TEMPORAL_LINK_RADIUS_M,
            snap_tol_m: DEFAULT_SNAP_TOL_M,
            bbox: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    TestTemporal,
    TestSpatiotemporal,
}

impl Split {
    pub fn is_test(self) -> bool {
        self != Split::Train
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    OutsideBbox,
    Unsnappable { nearest_m: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropDiagnostic {
    pub id: NodeId,
    #[serde(flatten)]
    pub reason: DropReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeKinds {
    pub spatial: bool,
    pub temporal: bool,
}

/// Immutable navigation graph. Nodes are kept in ascending id order, so neighbor
/// lists sorted by index are also sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct NavGraph {
    config: GraphConfig,
    bbox: BBox,
    nodes: Vec<PanoNode>,
    index: HashMap<NodeId, usize>,
    spatial_edges: Vec<(NodeId, NodeId)>,
    temporal_edges: Vec<(NodeId, NodeId)>,
    adjacency: Vec<Vec<usize>>,
    splits: Vec<Split>,
    dropped: Vec<DropDiagnostic>,
}

/// Uniform grid over node positions for radius queries.
#[derive(Debug, Clone)]
pub struct NodeGrid {
    cell_lat_deg: f64,
    cell_lon_deg: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl NodeGrid {
    pub fn new(points: &[GeoPoint], cell_m: f64) -> Self {
        let max_abs_lat = points.iter().fold(0.0f64, |m, p| m.max(p.lat.abs()));
        // 1% slack keeps haversine neighbors inside the 3×3 block
        let cell_m = cell_m * 1.01;
        let mut grid = NodeGrid {
            cell_lat_deg: cell_m / geo::meters_per_degree_lat(),
            cell_lon_deg: cell_m / geo::meters_per_degree_lon(max_abs_lat.min(89.0)),
            cells: HashMap::new(),
        };
        for (i, &p) in points.iter().enumerate() {
            grid.cells.entry(grid.cell_of(p)).or_default().push(i);
        }
        grid
    }

    fn cell_of(&self, p: GeoPoint) -> (i64, i64) {
        (
            (p.lon / self.cell_lon_deg).floor() as i64,
            (p.lat / self.cell_lat_deg).floor() as i64,
        )
    }

    /// Indices in the 3×3 cell neighborhood of `p`; a superset of everything within
    /// one cell size, in ascending order.
    pub fn candidates(&self, p: GeoPoint) -> Vec<usize> {
        let (ci, cj) = self.cell_of(p);
        let mut out = Vec::new();
        for i in ci - 1..=ci + 1 {
            for j in cj - 1..=cj + 1 {
                if let Some(v) = self.cells.get(&(i, j)) {
                    out.extend_from_slice(v);
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Edge predicate for one pair, evaluated from geometry, dates and the road network.
pub fn pair_kinds(a: &PanoNode, b: &PanoNode, net: &RoadNetwork, cfg: &GraphConfig) -> EdgeKinds {
    let d = geo::haversine_m(a.pos, b.pos);
    let dt = b.months() - a.months();
    if dt.abs() > MAX_TEMPORAL_DELTA_MONTHS {
        return EdgeKinds {
            spatial: false,
            temporal: false,
        };
    }
    EdgeKinds {
        spatial: d <= cfg.max_move_m && net.road_path_exists(a.pos, b.pos, cfg.max_move_m, cfg.snap_tol_m),
        temporal: d <= cfg.temporal_link_radius_m && dt != 0,
    }
}

/// Builds the graph. Nodes outside the configured box or farther than `snap_tol_m`
/// from any drivable segment are dropped and reported.
pub fn build_graph(nodes: Vec<PanoNode>, net: &RoadNetwork, cfg: &GraphConfig) -> Result<NavGraph, GraphError> {
    let mut seen = HashSet::new();
    for n in &nodes {
        n.validate()?;
        if !seen.insert(n.id) {
            return Err(GraphError::DuplicateId(n.id));
        }
    }
    let verdicts: Vec<Option<DropReason>> = nodes
        .par_iter()
        .map(|n| {
            if cfg.bbox.is_some_and(|b| !b.contains(n.pos)) {
                return Some(DropReason::OutsideBbox);
            }
            match net.nearest_centerline(n.pos) {
                Ok((d, _)) if d <= cfg.snap_tol_m => None,
                Ok((d, _)) => Some(DropReason::Unsnappable { nearest_m: Some(d) }),
                Err(_) => Some(DropReason::Unsnappable { nearest_m: None }),
            }
        })
        .collect();
    let mut kept = Vec::with_capacity(nodes.len());
    let mut dropped = Vec::new();
    for (n, verdict) in nodes.into_iter().zip(verdicts) {
        match verdict {
            None => kept.push(n),
            Some(reason) => dropped.push(DropDiagnostic { id: n.id, reason }),
        }
    }
    dropped.sort_by_key(|d| d.id);
    if kept.is_empty() {
        return Err(GraphError::EmptyGraph { dropped: dropped.len() });
    }
    kept.sort_by_key(|n| n.id);

    let reach = cfg.max_move_m.max(cfg.temporal_link_radius_m);
    let positions: Vec<GeoPoint> = kept.iter().map(|n| n.pos).collect();
    let grid = NodeGrid::new(&positions, reach);
    let pairs: Vec<Vec<(usize, EdgeKinds)>> = (0..kept.len())
        .into_par_iter()
        .map(|i| {
            grid.candidates(kept[i].pos)
                .into_iter()
                .filter(|&j| j > i)
                .map(|j| (j, pair_kinds(&kept[i], &kept[j], net, cfg)))
                .filter(|(_, k)| k.spatial || k.temporal)
                .collect()
        })
        .collect();

    let mut spatial = Vec::new();
    let mut temporal = Vec::new();
    for (i, row) in pairs.into_iter().enumerate() {
        for (j, k) in row {
            let e = (kept[i].id, kept[j].id);
            if k.spatial {
                spatial.push(e);
            }
            if k.temporal {
                temporal.push(e);
            }
        }
    }
    let bbox = cfg
        .bbox
        .unwrap_or_else(|| BBox::enclosing(positions.iter().copied()).expect("non-empty"));
    let splits = vec![Split::Train; kept.len()];
    Ok(NavGraph::assemble(cfg.clone(), bbox, kept, spatial, temporal, splits, dropped))
}

/// Tags nodes: captured in a holdout year → temporal test; south of the line
/// cutting off the bottom `spatial_frac` of the box height → spatiotemporal test.
pub fn split_graph(mut g: NavGraph, holdout_years: &[u16], spatial_frac: f64) -> Result<NavGraph, GraphError> {
    if !(spatial_frac > 0.0 && spatial_frac < 1.0) {
        return Err(GraphError::BadFraction(spatial_frac));
    }
    let cut = g.spatial_holdout_latitude(spatial_frac);
    for (n, split) in g.nodes.iter().zip(g.splits.iter_mut()) {
        *split = if holdout_years.contains(&n.year) {
            Split::TestTemporal
        } else if n.pos.lat < cut {
            Split::TestSpatiotemporal
        } else {
            Split::Train
        };
    }
    Ok(g)
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    version: u32,
    config: GraphConfig,
    bbox: BBox,
    nodes: Vec<NodeRecord>,
    spatial_edges: Vec<(NodeId, NodeId)>,
    temporal_edges: Vec<(NodeId, NodeId)>,
    dropped: Vec<DropDiagnostic>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRecord {
    #[serde(flatten)]
    node: PanoNode,
    split: Split,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub train_nodes: usize,
    pub test_temporal_nodes: usize,
    pub test_spatiotemporal_nodes: usize,
    pub spatial_edges: usize,
    pub temporal_edges: usize,
    pub dropped: usize,
}

impl NavGraph {
    fn assemble(
        config: GraphConfig,
        bbox: BBox,
        nodes: Vec<PanoNode>,
        spatial_edges: Vec<(NodeId, NodeId)>,
        temporal_edges: Vec<(NodeId, NodeId)>,
        splits: Vec<Split>,
        dropped: Vec<DropDiagnostic>,
    ) -> Self {
        let index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for &(u, v) in spatial_edges.iter().chain(&temporal_edges) {
            let (iu, iv) = (index[&u], index[&v]);
            adjacency[iu].push(iv);
            adjacency[iv].push(iu);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        NavGraph {
            config,
            bbox,
            nodes,
            index,
            spatial_edges,
            temporal_edges,
            adjacency,
            splits,
            dropped,
        }
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn nodes(&self) -> &[PanoNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&PanoNode> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn spatial_edges(&self) -> &[(NodeId, NodeId)] {
        &self.spatial_edges
    }

    pub fn temporal_edges(&self) -> &[(NodeId, NodeId)] {
        &self.temporal_edges
    }

    pub fn dropped(&self) -> &[DropDiagnostic] {
        &self.dropped
    }

    pub fn split(&self, id: NodeId) -> Option<Split> {
        self.index.get(&id).map(|&i| self.splits[i])
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Neighbor indices of the node at `idx`, ascending.
    pub fn neighbor_indices(&self, idx: usize) -> &[usize] {
        &self.adjacency[idx]
    }

    pub fn neighbors(&self, id: NodeId) -> Result<Vec<NodeId>, GraphError> {
        let i = self.index_of(id).ok_or(GraphError::UnknownNode(id))?;
        Ok(self.adjacency[i].iter().map(|&j| self.nodes[j].id).collect())
    }

    pub fn edge_kinds(&self, u: NodeId, v: NodeId) -> EdgeKinds {
        let key = if u <= v { (u, v) } else { (v, u) };
        EdgeKinds {
            spatial: self.spatial_edges.binary_search(&key).is_ok(),
            temporal: self.temporal_edges.binary_search(&key).is_ok(),
        }
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        let k = self.edge_kinds(u, v);
        k.spatial || k.temporal
    }

    pub fn spatial_holdout_latitude(&self, spatial_frac: f64) -> f64 {
        self.bbox.min.lat + spatial_frac * self.bbox.height_deg()
    }

    /// Subgraph induced by the nodes whose split satisfies `keep`.
    pub fn induced(&self, keep: impl Fn(Split) -> bool) -> NavGraph {
        let retained: HashSet<NodeId> = self
            .nodes
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| keep(s))
            .map(|(n, _)| n.id)
            .collect();
        let filter = |edges: &[(NodeId, NodeId)]| -> Vec<(NodeId, NodeId)> {
            edges
                .iter()
                .copied()
                .filter(|(u, v)| retained.contains(u) && retained.contains(v))
                .collect()
        };
        let (nodes, splits): (Vec<PanoNode>, Vec<Split>) = self
            .nodes
            .iter()
            .zip(&self.splits)
            .filter(|(n, _)| retained.contains(&n.id))
            .map(|(n, &s)| (n.clone(), s))
            .unzip();
        NavGraph::assemble(
            self.config.clone(),
            self.bbox,
            nodes,
            filter(&self.spatial_edges),
            filter(&self.temporal_edges),
            splits,
            Vec::new(),
        )
    }

    pub fn stats(&self) -> GraphStats {
        let count = |s: Split| self.splits.iter().filter(|&&x| x == s).count();
        GraphStats {
            nodes: self.nodes.len(),
            train_nodes: count(Split::Train),
            test_temporal_nodes: count(Split::TestTemporal),
            test_spatiotemporal_nodes: count(Split::TestSpatiotemporal),
            spatial_edges: self.spatial_edges.len(),
            temporal_edges: self.temporal_edges.len(),
            dropped: self.dropped.len(),
        }
    }

    /// Stable JSON: nodes ascending by id, edges as `[lower, higher]` pairs in
    /// ascending order.
    pub fn to_json(&self) -> String {
        let file = GraphFile {
            version: GRAPH_FORMAT_VERSION,
            config: self.config.clone(),
            bbox: self.bbox,
            nodes: self
                .nodes
                .iter()
                .zip(&self.splits)
                .map(|(n, &split)| NodeRecord { node: n.clone(), split })
                .collect(),
            spatial_edges: self.spatial_edges.clone(),
            temporal_edges: self.temporal_edges.clone(),
            dropped: self.dropped.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("graph serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<NavGraph, GraphError> {
        let file: GraphFile = serde_json::from_str(text).map_err(|e| GraphError::Format(e.to_string()))?;
        if file.version != GRAPH_FORMAT_VERSION {
            return Err(GraphError::Format(format!("unsupported version {}", file.version)));
        }
        let mut records = file.nodes;
        records.sort_by_key(|r| r.node.id);
        let mut seen = HashSet::new();
        for r in &records {
            r.node.validate()?;
            if !seen.insert(r.node.id) {
                return Err(GraphError::DuplicateId(r.node.id));
            }
        }
        let canon = |edges: Vec<(NodeId, NodeId)>| -> Result<Vec<(NodeId, NodeId)>, GraphError> {
            let mut out: Vec<(NodeId, NodeId)> = edges
                .into_iter()
                .map(|(u, v)| if u <= v { (u, v) } else { (v, u) })
                .collect();
            for &(u, v) in &out {
                for id in [u, v] {
                    if !seen.contains(&id) {
                        return Err(GraphError::UnknownNode(id));
                    }
                }
                if u == v {
                    return Err(GraphError::Format(format!("self-loop on {u}")));
                }
            }
            out.sort_unstable();
            out.dedup();
            Ok(out)
        };
        let spatial = canon(file.spatial_edges)?;
        let temporal = canon(file.temporal_edges)?;
        let (nodes, splits) = records.into_iter().map(|r| (r.node, r.split)).unzip();
        Ok(NavGraph::assemble(
            file.config,
            file.bbox,
            nodes,
            spatial,
            temporal,
            splits,
            file.dropped,
        ))
    }

    pub fn load(path: &Path) -> Result<NavGraph, GraphError> {
        let text = std::fs::read_to_string(path).map_err(|e| GraphError::Format(format!("{}: {e}", path.display())))?;
        NavGraph::from_json(&text)
    }
}
