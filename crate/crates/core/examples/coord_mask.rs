//! Restricts coordinate logits to the positions reachable by a predicted move.

use panonav::env::{admissible_coord_tokens, mask_logits};
use panonav::geo::GeoPoint;
use panonav::tokenize::{Modality, TokenVocab};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let v = TokenVocab::default();
    let anchor = GeoPoint { lat: 37.54321, lon: -122.30123 };
    for d in [0.0, 5.0, 20.0, 50.0] {
        let m = admissible_coord_tokens(anchor, d, 2.0, &v)?;
        println!("move {d:>4} m: {:>3} latitude tokens, {:>3} longitude tokens", m.lat.len(), m.lon.len());
    }
    let m = admissible_coord_tokens(anchor, 10.0, 2.0, &v)?;
    let mut logits = vec![0.0f32; v.total];
    mask_logits(&mut logits, &v, &m);
    let lat = v.layout(Modality::Latitude);
    let open = logits[lat.offset..lat.offset + lat.size].iter().filter(|x| x.is_finite()).count();
    println!("after masking: {open} of {} latitude logits remain", lat.size);
    Ok(())
}
