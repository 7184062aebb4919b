//! Computes the evaluation tables on made-up predictions: localization error CDF,
//! road adherence and perplexity by year.

use panonav::eval::{
    error_cdf, perplexity_by_bucket, road_adherence, write_csv, AdherenceRecord, BucketKey, GeorefRecord, NllRecord,
    WidthConvention, DEFAULT_LANE_WIDTHS_M,
};
use panonav::geo;
use panonav::roadnet::{parse_osm, ParseConfig};
use panonav::synth::{synthetic_city, CityConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let city = synthetic_city(&CityConfig::default());
    let net = parse_osm(&city.osm_xml, &ParseConfig::default())?;

    let georef: Vec<GeorefRecord> = city
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| GeorefRecord {
            predicted: geo::destination(n.pos, (i % 40) as f64, (i * 37 % 360) as f64),
            truth: n.pos,
            year: Some(n.year),
            split: None,
        })
        .collect();
    println!("error CDF");
    write_csv(&error_cdf(&georef, &[1.0, 5.0, 10.0, 25.0, 50.0])?, std::io::stdout())?;

    let adherence: Vec<AdherenceRecord> = georef
        .iter()
        .map(|r| AdherenceRecord { resulting_state: r.predicted, action_distance: 10.0 })
        .collect();
    println!("\nroad adherence");
    write_csv(&road_adherence(&adherence, &net, &DEFAULT_LANE_WIDTHS_M, WidthConvention::HalfWidth)?, std::io::stdout())?;

    let nll: Vec<NllRecord> = city
        .nodes
        .iter()
        .map(|n| NllRecord {
            nll: 1.0 + (n.year as f64 - 2010.0) * 0.05,
            year: n.year,
            month: n.month,
            action_distance: 0.0,
            d_month: 0,
            d_year: 0,
        })
        .collect();
    println!("\nperplexity by year");
    write_csv(&perplexity_by_bucket(&nll, BucketKey::Year)?, std::io::stdout())?;
    Ok(())
}
