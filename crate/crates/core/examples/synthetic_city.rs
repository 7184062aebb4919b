//! Writes a synthetic street-grid city (road extract, metadata, panoramas) to a
//! directory, ready for `panonav build-graph`.
//!
//!     cargo run --example synthetic_city -- /tmp/city

use panonav::synth::{write_city, CityConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "synthetic_city".into());
    let city = write_city(dir.as_ref(), &CityConfig::default(), Some(256))?;
    let recaptures = city.nodes.iter().filter(|n| n.year < 2014 || n.year > 2020).count();
    println!(
        "{} panoramas ({} recaptures) written to {dir}/ with roads.osm and metadata.csv",
        city.nodes.len(),
        recaptures
    );
    Ok(())
}
