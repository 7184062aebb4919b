//! Drivable road network parsed from an OpenStreetMap extract.
//!
//! Ways are filtered by their `highway` tag, exploded into straight segments between
//! consecutive way nodes, optionally clipped to a bounding box, and registered in a
//! uniform 50 m grid. Segments that share an endpoint vertex are junction-adjacent.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, BBox, GeoPoint, SegmentProjection};

/// Edge length of a spatial index cell.
pub const GRID_CELL_M: f64 = 50.0;
pub const DEFAULT_SNAP_TOL_M: f64 = 15.0;
const SEGMENTS_FORMAT_VERSION: u32 = 1;

pub const DEFAULT_DRIVABLE: &[&str] = &[
    "motorway",
    "trunk",
    "primary",
    "secondary",
    "tertiary",
    "residential",
    "unclassified",
    "service",
    "living_street",
    "motorway_link",
    "trunk_link",
    "primary_link",
    "secondary_link",
    "tertiary_link",
];

#[derive(Debug, Error)]
pub enum RoadError {
    #[error("malformed road document at line {line}, column {column}: {message}")]
    Malformed {
        line: u32,
        column: u32,
        message: String,
    },
    #[error("no drivable road segments remain after filtering")]
    EmptyNetwork,
    #[error("unrecognized road document (expected OSM XML, GeoJSON FeatureCollection or segment JSON)")]
    UnknownFormat,
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(pub u32);

#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub id: SegmentId,
    pub a: GeoPoint,
    pub b: GeoPoint,
    pub way_id: i64,
    pub highway_class: String,
    pub a_vertex: u32,
    pub b_vertex: u32,
}

impl RoadSegment {
    pub fn length_m(&self) -> f64 {
        geo::haversine_m(self.a, self.b)
    }
}

#[derive(Debug, Clone)]
pub struct ParseConfig {
    pub drivable: Vec<String>,
    pub bbox: Option<BBox>,
}

impl Default for ParseConfig {
    fn default() -> Self {
        ParseConfig {
            drivable: DEFAULT_DRIVABLE.iter().map(|s| s.to_string()).collect(),
            bbox: None,
        }
    }
}

impl ParseConfig {
    pub fn is_drivable(&self, class: &str) -> bool {
        self.drivable.iter().any(|c| c == class)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum VertexKey {
    Osm(i64),
    Coord(u64, u64),
    Listed(u32),
}

impl VertexKey {
    fn coord(p: GeoPoint) -> Self {
        VertexKey::Coord(p.lat.to_bits(), p.lon.to_bits())
    }
}

#[derive(Default)]
struct NetworkBuilder {
    vertex_ids: HashMap<VertexKey, u32>,
    vertices: Vec<GeoPoint>,
    segments: Vec<RoadSegment>,
}

impl NetworkBuilder {
    fn vertex(&mut self, key: VertexKey, p: GeoPoint) -> u32 {
        if let Some(&v) = self.vertex_ids.get(&key) {
            return v;
        }
        let v = self.vertices.len() as u32;
        self.vertices.push(p);
        self.vertex_ids.insert(key, v);
        v
    }

    fn add(&mut self, cfg: &ParseConfig, ends: [(VertexKey, GeoPoint); 2], way_id: i64, class: &str) {
        let [(ka, pa), (kb, pb)] = ends;
        let (ka, pa, kb, pb) = match cfg.bbox {
            None => (ka, pa, kb, pb),
            Some(bbox) => match clip_to_bbox(pa, pb, &bbox) {
                None => return,
                Some((ca, cb)) => {
                    let ka = if ca == pa { ka } else { VertexKey::coord(ca) };
                    let kb = if cb == pb { kb } else { VertexKey::coord(cb) };
                    (ka, ca, kb, cb)
                }
            },
        };
        if pa == pb || ka == kb {
            return;
        }
        let a_vertex = self.vertex(ka, pa);
        let b_vertex = self.vertex(kb, pb);
        self.segments.push(RoadSegment {
            id: SegmentId(self.segments.len() as u32),
            a: pa,
            b: pb,
            way_id,
            highway_class: class.to_string(),
            a_vertex,
            b_vertex,
        });
    }

    fn finish(self) -> Result<RoadNetwork, RoadError> {
        if self.segments.is_empty() {
            return Err(RoadError::EmptyNetwork);
        }
        Ok(RoadNetwork::from_parts(self.vertices, self.segments))
    }
}

/// Liang-Barsky clip in lat/lon space.
fn clip_to_bbox(a: GeoPoint, b: GeoPoint, bbox: &BBox) -> Option<(GeoPoint, GeoPoint)> {
    let (dx, dy) = (b.lon - a.lon, b.lat - a.lat);
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    let checks = [
        (-dx, a.lon - bbox.min.lon),
        (dx, bbox.max.lon - a.lon),
        (-dy, a.lat - bbox.min.lat),
        (dy, bbox.max.lat - a.lat),
    ];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    let at = |t: f64| {
        if t == 0.0 {
            a
        } else if t == 1.0 {
            b
        } else {
            GeoPoint {
                lat: a.lat + t * dy,
                lon: a.lon + t * dx,
            }
        }
    };
    Some((at(t0), at(t1)))
}

/// Uniform grid over segment bounding boxes.
#[derive(Debug, Clone)]
struct SegmentGrid {
    origin: GeoPoint,
    cell_lat_deg: f64,
    cell_lon_deg: f64,
    min_cell: (i64, i64),
    max_cell: (i64, i64),
    cells: HashMap<(i64, i64), Vec<u32>>,
}

impl SegmentGrid {
    fn build(segments: &[RoadSegment]) -> Self {
        let bbox = BBox::enclosing(segments.iter().flat_map(|s| [s.a, s.b])).expect("non-empty network");
        let ref_lat = 0.5 * (bbox.min.lat + bbox.max.lat);
        let mut grid = SegmentGrid {
            origin: bbox.min,
            cell_lat_deg: GRID_CELL_M / geo::meters_per_degree_lat(),
            cell_lon_deg: GRID_CELL_M / geo::meters_per_degree_lon(ref_lat),
            min_cell: (i64::MAX, i64::MAX),
            max_cell: (i64::MIN, i64::MIN),
            cells: HashMap::new(),
        };
        for s in segments {
            let lo = grid.cell_of(GeoPoint {
                lat: s.a.lat.min(s.b.lat),
                lon: s.a.lon.min(s.b.lon),
            });
            let hi = grid.cell_of(GeoPoint {
                lat: s.a.lat.max(s.b.lat),
                lon: s.a.lon.max(s.b.lon),
            });
            for i in lo.0..=hi.0 {
                for j in lo.1..=hi.1 {
                    grid.cells.entry((i, j)).or_default().push(s.id.0);
                }
            }
            grid.min_cell = (grid.min_cell.0.min(lo.0), grid.min_cell.1.min(lo.1));
            grid.max_cell = (grid.max_cell.0.max(hi.0), grid.max_cell.1.max(hi.1));
        }
        grid
    }

    /// (column, row) of the cell containing `p`.
    fn cell_of(&self, p: GeoPoint) -> (i64, i64) {
        (
            ((p.lon - self.origin.lon) / self.cell_lon_deg).floor() as i64,
            ((p.lat - self.origin.lat) / self.cell_lat_deg).floor() as i64,
        )
    }

    /// Smallest planar extent of one cell, measured in the frame centered at `p`.
    fn min_cell_extent_m(&self, p: GeoPoint) -> f64 {
        let w = self.cell_lon_deg * geo::meters_per_degree_lon(p.lat);
        let h = self.cell_lat_deg * geo::meters_per_degree_lat();
        w.min(h)
    }

    /// Visits the cells at Chebyshev distance exactly `r` from `center` that
    /// intersect the occupied extent.
    fn ring(&self, center: (i64, i64), r: i64, mut visit: impl FnMut(&[u32])) {
        let (ci, cj) = center;
        let i_lo = (ci - r).max(self.min_cell.0);
        let i_hi = (ci + r).min(self.max_cell.0);
        let j_lo = (cj - r).max(self.min_cell.1);
        let j_hi = (cj + r).min(self.max_cell.1);
        for i in i_lo..=i_hi {
            for j in j_lo..=j_hi {
                if (i - ci).abs() != r && (j - cj).abs() != r {
                    continue;
                }
                if let Some(ids) = self.cells.get(&(i, j)) {
                    visit(ids);
                }
            }
        }
    }

    fn ring_covers_extent(&self, center: (i64, i64), r: i64) -> bool {
        center.0 - r <= self.min_cell.0
            && center.0 + r >= self.max_cell.0
            && center.1 - r <= self.min_cell.1
            && center.1 + r >= self.max_cell.1
    }
}

/// Immutable drivable network with a spatial index.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    segments: Vec<RoadSegment>,
    vertices: Vec<GeoPoint>,
    vertex_segments: Vec<Vec<u32>>,
    grid: SegmentGrid,
}

impl PartialEq for RoadNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.segments == other.segments && self.vertices == other.vertices
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snap {
    pub segment: SegmentId,
    pub projection: SegmentProjection,
}

#[derive(Serialize, Deserialize)]
struct SegmentsDoc {
    version: u32,
    vertices: Vec<[f64; 2]>,
    segments: Vec<SegmentRecord>,
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    id: u32,
    way_id: i64,
    highway: String,
    a: u32,
    b: u32,
}

impl RoadNetwork {
    fn from_parts(vertices: Vec<GeoPoint>, segments: Vec<RoadSegment>) -> Self {
        let mut vertex_segments = vec![Vec::new(); vertices.len()];
        for s in &segments {
            vertex_segments[s.a_vertex as usize].push(s.id.0);
            vertex_segments[s.b_vertex as usize].push(s.id.0);
        }
        let grid = SegmentGrid::build(&segments);
        RoadNetwork {
            segments,
            vertices,
            vertex_segments,
            grid,
        }
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn segment(&self, id: SegmentId) -> &RoadSegment {
        &self.segments[id.0 as usize]
    }

    pub fn vertices(&self) -> &[GeoPoint] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Segments sharing an endpoint with `id`, in ascending id order.
    pub fn junction_neighbors(&self, id: SegmentId) -> Vec<SegmentId> {
        let s = self.segment(id);
        let mut out: Vec<SegmentId> = [s.a_vertex, s.b_vertex]
            .iter()
            .flat_map(|&v| self.vertex_segments[v as usize].iter())
            .filter(|&&o| o != id.0)
            .map(|&o| SegmentId(o))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn bbox(&self) -> BBox {
        BBox::enclosing(self.vertices.iter().copied()).expect("non-empty network")
    }

    fn distance_to(&self, p: GeoPoint, id: u32) -> SegmentProjection {
        let s = &self.segments[id as usize];
        geo::project_to_segment(p, s.a, s.b).expect("segments have distinct endpoints")
    }

    /// Closest segment to `p`, ties broken by lowest segment id.
    pub fn nearest_centerline(&self, p: GeoPoint) -> Result<(f64, SegmentId), RoadError> {
        if self.segments.is_empty() {
            return Err(RoadError::EmptyNetwork);
        }
        let center = self.grid.cell_of(p);
        let extent = self.grid.min_cell_extent_m(p) * 0.999;
        let mut best: Option<(f64, u32)> = None;
        let mut r = 0i64;
        loop {
            self.grid.ring(center, r, |ids| {
                for &id in ids {
                    let d = self.distance_to(p, id).distance_m;
                    let better = match best {
                        None => true,
                        Some((bd, bid)) => d < bd || (d == bd && id < bid),
                    };
                    if better {
                        best = Some((d, id));
                    }
                }
            });
            if let Some((bd, _)) = best {
                // unscanned segments lie at least r whole cells away
                if bd < r as f64 * extent {
                    break;
                }
            }
            if self.grid.ring_covers_extent(center, r) {
                break;
            }
            r += 1;
        }
        let (d, id) = best.expect("ring scan covers every segment");
        Ok((d, SegmentId(id)))
    }

    /// Every segment within `radius_m` of `p`, ascending by segment id.
    pub fn segments_within(&self, p: GeoPoint, radius_m: f64) -> Vec<Snap> {
        let center = self.grid.cell_of(p);
        let extent = self.grid.min_cell_extent_m(p) * 0.999;
        let rings = (radius_m / extent).ceil() as i64 + 1;
        let mut ids = Vec::new();
        for r in 0..=rings {
            self.grid.ring(center, r, |cell| ids.extend_from_slice(cell));
            if self.grid.ring_covers_extent(center, r) {
                break;
            }
        }
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter()
            .filter_map(|id| {
                let projection = self.distance_to(p, id);
                (projection.distance_m <= radius_m).then_some(Snap {
                    segment: SegmentId(id),
                    projection,
                })
            })
            .collect()
    }

    /// Nearest segment within `tol_m`, if any.
    pub fn snap(&self, p: GeoPoint, tol_m: f64) -> Option<(f64, SegmentId)> {
        match self.nearest_centerline(p) {
            Ok((d, id)) if d <= tol_m => Some((d, id)),
            _ => None,
        }
    }

    /// Whether `a` and `b` both snap to the network within `snap_tol_m` and are joined by
    /// a walk along connected segments no longer than `max_len_m`.
    pub fn road_path_exists(&self, a: GeoPoint, b: GeoPoint, max_len_m: f64, snap_tol_m: f64) -> bool {
        // canonical argument order makes the answer exactly symmetric
        let (a, b) = if (a.lat, a.lon) <= (b.lat, b.lon) { (a, b) } else { (b, a) };
        let from = self.segments_within(a, snap_tol_m);
        if from.is_empty() {
            return false;
        }
        let to = self.segments_within(b, snap_tol_m);
        if to.is_empty() {
            return false;
        }
        for sa in &from {
            for sb in &to {
                if sa.segment == sb.segment
                    && geo::haversine_m(sa.projection.foot, sb.projection.foot) <= max_len_m
                {
                    return true;
                }
            }
        }
        let reach = self.bounded_dijkstra(&from, max_len_m);
        to.iter().any(|sb| {
            let s = self.segment(sb.segment);
            [(s.a_vertex, s.a), (s.b_vertex, s.b)].iter().any(|&(v, p)| {
                reach
                    .get(&v)
                    .is_some_and(|d| d + geo::haversine_m(p, sb.projection.foot) <= max_len_m)
            })
        })
    }

    /// Shortest walking distance to every vertex reachable within `limit` from the snap feet.
    fn bounded_dijkstra(&self, sources: &[Snap], limit: f64) -> HashMap<u32, f64> {
        #[derive(PartialEq)]
        struct Item(f64, u32);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Item {
            fn cmp(&self, other: &Self) -> Ordering {
                other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
            }
        }

        let mut dist: HashMap<u32, f64> = HashMap::new();
        let mut heap = BinaryHeap::new();
        let relax = |v: u32, d: f64, dist: &mut HashMap<u32, f64>, heap: &mut BinaryHeap<Item>| {
            if d > limit {
                return;
            }
            let e = dist.entry(v).or_insert(f64::INFINITY);
            if d < *e {
                *e = d;
                heap.push(Item(d, v));
            }
        };
        for snap in sources {
            let s = self.segment(snap.segment);
            relax(s.a_vertex, geo::haversine_m(snap.projection.foot, s.a), &mut dist, &mut heap);
            relax(s.b_vertex, geo::haversine_m(snap.projection.foot, s.b), &mut dist, &mut heap);
        }
        while let Some(Item(d, v)) = heap.pop() {
            if d > dist[&v] {
                continue;
            }
            for &sid in &self.vertex_segments[v as usize] {
                let s = &self.segments[sid as usize];
                let other = if s.a_vertex == v { s.b_vertex } else { s.a_vertex };
                relax(other, d + s.length_m(), &mut dist, &mut heap);
            }
        }
        dist
    }

    /// Documented segment JSON: `{"version":1,"vertices":[[lat,lon],..],"segments":[{"id","way_id","highway","a","b"}]}`.
    pub fn to_segments_json(&self) -> String {
        let doc = SegmentsDoc {
            version: SEGMENTS_FORMAT_VERSION,
            vertices: self.vertices.iter().map(|p| [p.lat, p.lon]).collect(),
            segments: self
                .segments
                .iter()
                .map(|s| SegmentRecord {
                    id: s.id.0,
                    way_id: s.way_id,
                    highway: s.highway_class.clone(),
                    a: s.a_vertex,
                    b: s.b_vertex,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("segment document serializes")
    }

    pub fn from_path(path: &Path, cfg: &ParseConfig) -> Result<Self, RoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| RoadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        parse_osm(&text, cfg)
    }
}

/// Parses OSM XML, a GeoJSON FeatureCollection of LineStrings, or the segment JSON
/// written by [`RoadNetwork::to_segments_json`], choosing by content.
pub fn parse_osm(doc: &str, cfg: &ParseConfig) -> Result<RoadNetwork, RoadError> {
    let trimmed = doc.trim_start();
    if trimmed.starts_with('<') {
        return parse_osm_xml(doc, cfg);
    }
    if trimmed.starts_with('{') {
        let value: serde_json::Value = serde_json::from_str(doc).map_err(json_error)?;
        if value.get("type").and_then(|t| t.as_str()) == Some("FeatureCollection") {
            return parse_geojson_value(&value, cfg);
        }
        if value.get("segments").is_some() {
            return parse_segments_json(doc, cfg);
        }
    }
    Err(RoadError::UnknownFormat)
}

fn json_error(e: serde_json::Error) -> RoadError {
    RoadError::Malformed {
        line: e.line() as u32,
        column: e.column() as u32,
        message: e.to_string(),
    }
}

pub fn parse_osm_xml(doc: &str, cfg: &ParseConfig) -> Result<RoadNetwork, RoadError> {
    let xml = roxmltree::Document::parse(doc).map_err(|e| {
        let pos = e.pos();
        RoadError::Malformed {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let malformed = |node: roxmltree::Node, message: String| {
        let pos = xml.text_pos_at(node.range().start);
        RoadError::Malformed {
            line: pos.row,
            column: pos.col,
            message,
        }
    };
    let attr = |node: roxmltree::Node, name: &str| -> Result<String, RoadError> {
        node.attribute(name)
            .map(str::to_string)
            .ok_or_else(|| malformed(node, format!("<{}> missing attribute `{name}`", node.tag_name().name())))
    };

    let mut nodes: HashMap<i64, GeoPoint> = HashMap::new();
    for node in xml.descendants().filter(|n| n.has_tag_name("node")) {
        let id: i64 = attr(node, "id")?
            .parse()
            .map_err(|_| malformed(node, "node id is not an integer".into()))?;
        let lat: f64 = attr(node, "lat")?
            .parse()
            .map_err(|_| malformed(node, "node lat is not a number".into()))?;
        let lon: f64 = attr(node, "lon")?
            .parse()
            .map_err(|_| malformed(node, "node lon is not a number".into()))?;
        let p = GeoPoint::new(lat, lon).map_err(|e| malformed(node, e.to_string()))?;
        nodes.insert(id, p);
    }

    let mut builder = NetworkBuilder::default();
    for way in xml.descendants().filter(|n| n.has_tag_name("way")) {
        let way_id: i64 = attr(way, "id")?
            .parse()
            .map_err(|_| malformed(way, "way id is not an integer".into()))?;
        let class = way
            .children()
            .filter(|c| c.has_tag_name("tag"))
            .find(|t| t.attribute("k") == Some("highway"))
            .and_then(|t| t.attribute("v"));
        let Some(class) = class else { continue };
        if !cfg.is_drivable(class) {
            continue;
        }
        let mut refs = Vec::new();
        for nd in way.children().filter(|c| c.has_tag_name("nd")) {
            let r: i64 = attr(nd, "ref")?
                .parse()
                .map_err(|_| malformed(nd, "nd ref is not an integer".into()))?;
            refs.push(r);
        }
        for pair in refs.windows(2) {
            // references to nodes outside the extract break the way
            let (Some(&pa), Some(&pb)) = (nodes.get(&pair[0]), nodes.get(&pair[1])) else {
                continue;
            };
            builder.add(
                cfg,
                [(VertexKey::Osm(pair[0]), pa), (VertexKey::Osm(pair[1]), pb)],
                way_id,
                class,
            );
        }
    }
    builder.finish()
}

pub fn parse_geojson(doc: &str, cfg: &ParseConfig) -> Result<RoadNetwork, RoadError> {
    let value: serde_json::Value = serde_json::from_str(doc).map_err(json_error)?;
    parse_geojson_value(&value, cfg)
}

fn parse_geojson_value(value: &serde_json::Value, cfg: &ParseConfig) -> Result<RoadNetwork, RoadError> {
    let bad = |i: usize, message: &str| RoadError::Malformed {
        line: 0,
        column: 0,
        message: format!("feature {i}: {message}"),
    };
    let features = value
        .get("features")
        .and_then(|f| f.as_array())
        .ok_or_else(|| bad(0, "FeatureCollection without a `features` array"))?;
    let mut builder = NetworkBuilder::default();
    for (i, feature) in features.iter().enumerate() {
        let Some(class) = feature.pointer("/properties/highway").and_then(|v| v.as_str()) else {
            continue;
        };
        if !cfg.is_drivable(class) {
            continue;
        }
        let geometry = feature.get("geometry").ok_or_else(|| bad(i, "missing geometry"))?;
        if geometry.get("type").and_then(|t| t.as_str()) != Some("LineString") {
            return Err(bad(i, "geometry is not a LineString"));
        }
        let coords = geometry
            .get("coordinates")
            .and_then(|c| c.as_array())
            .ok_or_else(|| bad(i, "LineString without coordinates"))?;
        let mut points = Vec::with_capacity(coords.len());
        for c in coords {
            let pair = c.as_array().filter(|a| a.len() >= 2);
            let (Some(lon), Some(lat)) = (
                pair.and_then(|a| a[0].as_f64()),
                pair.and_then(|a| a[1].as_f64()),
            ) else {
                return Err(bad(i, "coordinate is not a [lon, lat] pair"));
            };
            points.push(GeoPoint::new(lat, lon).map_err(|e| bad(i, &e.to_string()))?);
        }
        let way_id = feature
            .pointer("/properties/way_id")
            .and_then(|v| v.as_i64())
            .or_else(|| feature.get("id").and_then(|v| v.as_i64()))
            .unwrap_or(i as i64);
        for w in points.windows(2) {
            builder.add(
                cfg,
                [(VertexKey::coord(w[0]), w[0]), (VertexKey::coord(w[1]), w[1])],
                way_id,
                class,
            );
        }
    }
    builder.finish()
}

pub fn parse_segments_json(doc: &str, cfg: &ParseConfig) -> Result<RoadNetwork, RoadError> {
    let parsed: SegmentsDoc = serde_json::from_str(doc).map_err(json_error)?;
    let mut builder = NetworkBuilder::default();
    for (i, s) in parsed.segments.iter().enumerate() {
        if !cfg.is_drivable(&s.highway) {
            continue;
        }
        let vertex = |v: u32| -> Result<GeoPoint, RoadError> {
            let [lat, lon] = *parsed.vertices.get(v as usize).ok_or_else(|| RoadError::Malformed {
                line: 0,
                column: 0,
                message: format!("segment {i} references missing vertex {v}"),
            })?;
            GeoPoint::new(lat, lon).map_err(|e| RoadError::Malformed {
                line: 0,
                column: 0,
                message: format!("vertex {v}: {e}"),
            })
        };
        let (pa, pb) = (vertex(s.a)?, vertex(s.b)?);
        builder.add(
            cfg,
            [(VertexKey::Listed(s.a), pa), (VertexKey::Listed(s.b), pb)],
            s.way_id,
            &s.highway,
        );
    }
    builder.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{destination, meters_per_degree_lat};

    fn gp(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint { lat, lon }
    }

    const ONE_WAY: &str = r#"<?xml version="1.0"?>
<osm version="0.6">
  <node id="1" lat="37.5500" lon="-122.3000"/>
  <node id="2" lat="37.5500" lon="-122.2990"/>
  <node id="3" lat="37.5500" lon="-122.2980"/>
  <node id="4" lat="37.5510" lon="-122.2990"/>
  <way id="10">
    <nd ref="1"/><nd ref="2"/><nd ref="3"/>
    <tag k="highway" v="residential"/>
  </way>
  FOOTWAY
</osm>"#;

    const FOOTWAY: &str = r#"<way id="11"><nd ref="2"/><nd ref="4"/><tag k="highway" v="footway"/></way>"#;

    #[test]
    fn one_residential_way_gives_two_segments() {
        let net = parse_osm(&ONE_WAY.replace("FOOTWAY", ""), &ParseConfig::default()).unwrap();
        assert_eq!(net.len(), 2);
        assert_eq!(net.segments()[0].highway_class, "residential");
    }

    #[test]
    fn footway_is_excluded() {
        let net = parse_osm(&ONE_WAY.replace("FOOTWAY", FOOTWAY), &ParseConfig::default()).unwrap();
        assert_eq!(net.len(), 2);
        assert!(net.segments().iter().all(|s| s.way_id == 10));
    }

    #[test]
    fn only_footways_is_empty_network() {
        let doc = ONE_WAY.replace("FOOTWAY", FOOTWAY).replace("residential", "path");
        assert!(matches!(
            parse_osm(&doc, &ParseConfig::default()),
            Err(RoadError::EmptyNetwork)
        ));
    }

    #[test]
    fn malformed_xml_reports_position() {
        let err = parse_osm("<osm>\n  <node id=\"1\" lat=\"x\" lon=\"0\"/>\n</osm>", &ParseConfig::default())
            .unwrap_err();
        match err {
            RoadError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_osm("<osm><way></osm>", &ParseConfig::default()),
            Err(RoadError::Malformed { .. })
        ));
    }

    #[test]
    fn junction_adjacency_is_symmetric() {
        let net = parse_osm(&ONE_WAY.replace("FOOTWAY", ""), &ParseConfig::default()).unwrap();
        assert_eq!(net.junction_neighbors(SegmentId(0)), vec![SegmentId(1)]);
        assert_eq!(net.junction_neighbors(SegmentId(1)), vec![SegmentId(0)]);
    }

    #[test]
    fn bbox_clipping_cuts_segments() {
        let cfg = ParseConfig {
            bbox: Some(BBox::new(gp(37.54, -122.2995), gp(37.56, -122.2975)).unwrap()),
            ..ParseConfig::default()
        };
        let net = parse_osm(&ONE_WAY.replace("FOOTWAY", ""), &cfg).unwrap();
        assert_eq!(net.len(), 2);
        assert!((net.segments()[0].a.lon - -122.2995).abs() < 1e-12);
        assert!(net.segments().iter().all(|s| cfg.bbox.unwrap().contains(s.a)));
    }

    #[test]
    fn geojson_form_parses() {
        let doc = r#"{"type":"FeatureCollection","features":[
          {"type":"Feature","properties":{"highway":"primary"},
           "geometry":{"type":"LineString","coordinates":[[-122.30,37.55],[-122.299,37.55],[-122.298,37.551]]}},
          {"type":"Feature","properties":{"highway":"cycleway"},
           "geometry":{"type":"LineString","coordinates":[[-122.30,37.56],[-122.299,37.56]]}}]}"#;
        let net = parse_osm(doc, &ParseConfig::default()).unwrap();
        assert_eq!(net.len(), 2);
        assert_eq!(net.vertices().len(), 3);
    }

    #[test]
    fn nearest_on_segment_is_zero() {
        let net = parse_osm(&ONE_WAY.replace("FOOTWAY", ""), &ParseConfig::default()).unwrap();
        let (d, id) = net.nearest_centerline(gp(37.55, -122.2995)).unwrap();
        assert!(d < 1e-9);
        assert_eq!(id, SegmentId(0));
    }

    #[test]
    fn nearest_tie_goes_to_lower_id() {
        let net = parse_osm(&ONE_WAY.replace("FOOTWAY", ""), &ParseConfig::default()).unwrap();
        // the shared vertex is at distance zero from both segments
        let shared = gp(37.55, -122.299);
        assert_eq!(net.distance_to(shared, 0).distance_m, 0.0);
        assert_eq!(net.distance_to(shared, 1).distance_m, 0.0);
        assert_eq!(net.nearest_centerline(shared).unwrap(), (0.0, SegmentId(0)));
    }

    #[test]
    fn same_segment_path() {
        let net = parse_osm(&ONE_WAY.replace("FOOTWAY", ""), &ParseConfig::default()).unwrap();
        let a = gp(37.55, -122.2999);
        let b = destination(a, 10.0, 90.0);
        assert!(net.road_path_exists(a, b, 50.0, 15.0));
        assert!(net.road_path_exists(b, a, 50.0, 15.0));
        assert!(!net.road_path_exists(a, b, 9.0, 0.5));
    }

    /// Perpendicular ways joined at junction J, with `a` 20 m west and `b` 22 m north.
    fn perpendicular() -> (RoadNetwork, GeoPoint, GeoPoint) {
        let j = gp(37.54, -122.30);
        let west = destination(j, 200.0, 270.0);
        let north = destination(j, 200.0, 0.0);
        let doc = format!(
            r#"<osm>
            <node id="1" lat="{}" lon="{}"/><node id="2" lat="{}" lon="{}"/><node id="3" lat="{}" lon="{}"/>
            <way id="1"><nd ref="1"/><nd ref="2"/><tag k="highway" v="residential"/></way>
            <way id="2"><nd ref="2"/><nd ref="3"/><tag k="highway" v="tertiary"/></way>
            </osm>"#,
            west.lat, west.lon, j.lat, j.lon, north.lat, north.lon
        );
        let net = parse_osm(&doc, &ParseConfig::default()).unwrap();
        (net, destination(j, 20.0, 270.0), gp(j.lat + 22.0 / meters_per_degree_lat(), j.lon))
    }

    #[test]
    fn junction_path_length_threshold() {
        let (net, a, b) = perpendicular();
        assert!(net.road_path_exists(a, b, 50.0, 15.0));
        assert!(net.road_path_exists(b, a, 50.0, 15.0));
        // straight-line distance is ~29.7 m, walk is 42 m
        assert!(!net.road_path_exists(a, b, 40.0, 1.0));
        assert!(!net.road_path_exists(b, a, 40.0, 1.0));
    }

    #[test]
    fn disconnected_components_have_no_path() {
        let doc = r#"<osm>
          <node id="1" lat="37.5500" lon="-122.3000"/><node id="2" lat="37.5500" lon="-122.2995"/>
          <node id="3" lat="37.5501" lon="-122.2994"/><node id="4" lat="37.5501" lon="-122.2990"/>
          <way id="1"><nd ref="1"/><nd ref="2"/><tag k="highway" v="service"/></way>
          <way id="2"><nd ref="3"/><nd ref="4"/><tag k="highway" v="service"/></way>
        </osm>"#;
        let net = parse_osm(doc, &ParseConfig::default()).unwrap();
        let a = gp(37.55, -122.2996);
        let b = gp(37.5501, -122.2993);
        assert!(!net.road_path_exists(a, b, 50.0, 2.0));
        // unsnappable
        assert!(!net.road_path_exists(gp(37.56, -122.2996), b, 50.0, 2.0));
    }

    #[test]
    fn reserialized_network_is_identical() {
        let net = parse_osm(&ONE_WAY.replace("FOOTWAY", FOOTWAY), &ParseConfig::default()).unwrap();
        let again = parse_osm(&net.to_segments_json(), &ParseConfig::default()).unwrap();
        assert_eq!(net, again);
    }
}
