//! Prints the token vocabulary and round-trips one sample through it.

use panonav::geo::GeoPoint;
use panonav::seqgen::{Action, Sample, State};
use panonav::tokenize::{Modality, TokenVocab};

fn main() {
    let v = TokenVocab::default();
    println!("{:<12} {:>7} {:>6} {:>9}", "modality", "offset", "size", "precision");
    for m in Modality::ALL {
        let l = v.layout(m);
        println!("{:<12} {:>7} {:>6} {:>9}", m.to_string(), l.offset, l.size, l.precision);
    }
    println!("special tokens from {}, total {}", v.special_offset, v.total);

    let s = Sample {
        image_tokens: (0..1024).map(|i| (i * 7 % 8192) as u16).collect(),
        state: State {
            pos: GeoPoint { lat: 37.5471234, lon: -122.3012345 },
            month: 6,
            year: 2019,
        },
        action: Action { distance: 12.34, heading: 359.97, d_month: 0, d_year: 0 },
    };
    let ids = v.encode_sample(&s).expect("in range");
    let back = v.decode_sample(&ids).expect("well formed");
    println!("{} tokens per sample; non-image tail {:?}", ids.len(), &ids[1024..]);
    println!("state  {:?} -> {:?}", s.state.pos, back.state.pos);
    println!("action {:.2} m @ {:.2}° -> {:.1} m @ {:.1}°", s.action.distance, s.action.heading, back.action.distance, back.action.heading);
}
