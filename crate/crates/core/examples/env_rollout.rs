//! Runs the oracle policy through the navigation environment and reports how
//! often each step stayed on the road graph.

use panonav::env::{rollout, Env, EnvConfig, Start};
use panonav::panograph::{build_graph, GraphConfig};
use panonav::roadnet::{parse_osm, ParseConfig};
use panonav::seqgen::Action;
use panonav::synth::{synthetic_city, CityConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let city = synthetic_city(&CityConfig::default());
    let net = parse_osm(&city.osm_xml, &ParseConfig::default())?;
    let g = build_graph(city.nodes, &net, &GraphConfig::default())?;
    let env = Env::new(&g, &net, EnvConfig::default());

    let mut s = env.reset(Start::Random, 7)?;
    let trace = rollout(&env, &mut s, 20);
    for r in trace.iter().take(5) {
        println!("{:>2}: {} -> {}  {:.1} m", r.step, r.node, r.result.next_node, r.result.realized_action.distance);
    }
    let valid = trace.iter().filter(|r| r.result.valid).count();
    println!("{valid}/{} oracle steps valid", trace.len());

    // a move into a city block has no panorama to land on
    let lost = env.step_from(trace[0].node, &Action { distance: 30.0, heading: 45.0, d_month: 0, d_year: 0 });
    println!("diagonal 30 m move: valid={} (stays at {})", lost.valid, lost.next_node);
    Ok(())
}
