//! Generates visual sentences from a few origins of the synthetic city and shows
//! one path sentence and one look-around sentence.

use panonav::panograph::{build_graph, GraphConfig};
use panonav::roadnet::{parse_osm, ParseConfig};
use panonav::seqgen::{sentences_for_origin, HashedViews, SentenceKind, SeqConfig};
use panonav::synth::{synthetic_city, CityConfig};
use panonav::tokenize::TokenVocab;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let city = synthetic_city(&CityConfig::default());
    let net = parse_osm(&city.osm_xml, &ParseConfig::default())?;
    let g = build_graph(city.nodes, &net, &GraphConfig::default())?;
    let cfg = SeqConfig { max_paths_per_node: 8, max_samples_per_sequence: 5, ..SeqConfig::default() };
    let origin = g.nodes()[g.len() / 2].id;
    let sentences = sentences_for_origin(&g, origin, &HashedViews, &cfg)?;
    println!("{} sentences from node {origin}", sentences.len());
    let vocab = TokenVocab::default();
    for kind in [SentenceKind::Dfs, SentenceKind::Lookaround] {
        let s = sentences.iter().rev().find(|s| s.provenance.kind == kind).expect("both kinds");
        println!("\n{kind:?} through {:?} ({} tokens)", s.provenance.path, vocab.encode_sentence(s)?.len());
        for x in &s.samples {
            println!(
                "  ({:.6}, {:.6}) {:02}/{}  move {:5.1} m @ {:5.1}°",
                x.state.pos.lat, x.state.pos.lon, x.state.month, x.state.year, x.action.distance, x.action.heading
            );
        }
    }
    Ok(())
}
