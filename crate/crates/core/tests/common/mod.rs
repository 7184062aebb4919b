#![allow(dead_code)]

use panonav::panograph::{build_graph, split_graph, GraphConfig, NavGraph, NodeId};
use panonav::roadnet::{parse_osm, ParseConfig, RoadNetwork};
use panonav::synth::{synthetic_city, City, CityConfig};
use serde_json::json;

pub struct Fixture {
    pub city: City,
    pub net: RoadNetwork,
    /// Full graph with split tags.
    pub graph: NavGraph,
}

pub const HOLDOUT_YEARS: [u16; 2] = [2023, 2024];
pub const SPATIAL_FRAC: f64 = 0.1;

pub fn fixture(cfg: &CityConfig) -> Fixture {
    let city = synthetic_city(cfg);
    let net = parse_osm(&city.osm_xml, &ParseConfig::default()).expect("fixture roads parse");
    let g = build_graph(city.nodes.clone(), &net, &GraphConfig::default()).expect("fixture graph");
    let graph = split_graph(g, &HOLDOUT_YEARS, SPATIAL_FRAC).expect("split");
    Fixture { city, net, graph }
}

pub fn small_city() -> CityConfig {
    CityConfig {
        streets_ns: 3,
        streets_ew: 3,
        block_m: 60.0,
        ..CityConfig::default()
    }
}

/// A graph with arbitrary topology, built through the serialized form.
pub fn graph_from_edges(n: u64, edges: &[(u64, u64)]) -> NavGraph {
    let nodes: Vec<_> = (0..n)
        .map(|i| {
            json!({
                "id": i, "pos": {"lat": 37.54 + i as f64 * 1e-4, "lon": -122.30},
                "month": 1, "year": 2020, "image_ref": "", "base_heading": 0.0, "split": "train"
            })
        })
        .collect();
    let doc = json!({
        "version": 1,
        "config": {"max_move_m": 50.0, "temporal_link_radius_m": 5.0, "snap_tol_m": 15.0, "bbox": null},
        "bbox": {"min": {"lat": 37.5, "lon": -122.4}, "max": {"lat": 37.6, "lon": -122.2}},
        "nodes": nodes,
        "spatial_edges": edges,
        "temporal_edges": [],
        "dropped": []
    });
    NavGraph::from_json(&doc.to_string()).expect("hand-built graph")
}

/// Every simple path from `origin` with 2..=max_len nodes, found by filtering all
/// injective node sequences, in lexicographic order (a prefix sorts before its
/// extensions, which is DFS pre-order with ascending neighbors).
pub fn all_simple_paths(g: &NavGraph, origin: NodeId, max_len: usize) -> Vec<Vec<NodeId>> {
    let ids: Vec<NodeId> = g.nodes().iter().map(|n| n.id).collect();
    let mut seqs = vec![vec![origin]];
    let mut frontier = vec![vec![origin]];
    for _ in 1..max_len.min(ids.len()) {
        let mut next = Vec::new();
        for s in &frontier {
            for &v in &ids {
                if !s.contains(&v) {
                    let mut t = s.clone();
                    t.push(v);
                    next.push(t);
                }
            }
        }
        seqs.extend(next.iter().cloned());
        frontier = next;
    }
    let mut out: Vec<Vec<NodeId>> = seqs
        .into_iter()
        .filter(|s| s.len() >= 2 && s.windows(2).all(|w| g.has_edge(w[0], w[1])))
        .collect();
    out.sort();
    out
}
