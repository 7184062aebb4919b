//! Builds and splits the navigation graph of the synthetic city and prints its
//! statistics.

use panonav::panograph::{build_graph, split_graph, GraphConfig, Split};
use panonav::roadnet::{parse_osm, ParseConfig};
use panonav::synth::{synthetic_city, CityConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let city = synthetic_city(&CityConfig::default());
    let net = parse_osm(&city.osm_xml, &ParseConfig::default())?;
    println!("{} road segments", net.len());
    let g = build_graph(city.nodes, &net, &GraphConfig::default())?;
    let g = split_graph(g, &[2023, 2024], 0.1)?;
    println!("{}", serde_json::to_string_pretty(&g.stats())?);
    let count = |s: Split| g.splits().iter().filter(|&&x| x == s).count();
    println!(
        "train {} / temporal test {} / spatiotemporal test {}",
        count(Split::Train),
        count(Split::TestTemporal),
        count(Split::TestSpatiotemporal)
    );
    let train = g.induced(|s| s == Split::Train);
    println!("training subgraph: {} nodes, {} spatial edges", train.len(), train.spatial_edges().len());
    Ok(())
}
