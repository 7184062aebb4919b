//! Renders the four look-around views of one synthetic panorama as PNGs.
//!
//!     cargo run --example project_views -- /tmp/views

use panonav::project::{project_lookaround, LOOKAROUND_OFFSETS};
use panonav::synth::{synthetic_city, synthetic_panorama, CityConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "views".into());
    std::fs::create_dir_all(&out)?;
    let city = synthetic_city(&CityConfig::default());
    let node = &city.nodes[0];
    let pano = synthetic_panorama(node, 1024);
    pano.pixels().save(format!("{out}/panorama.png"))?;
    for (off, view) in LOOKAROUND_OFFSETS.iter().zip(project_lookaround(&pano, 256, 256)?) {
        let heading = panonav::geo::normalize_deg(node.base_heading + off);
        let path = format!("{out}/view_{heading:05.1}.png");
        view.save(&path)?;
        println!("{path}");
    }
    Ok(())
}
