mod common;

use std::sync::OnceLock;

use image::{Rgb, RgbImage};
use panonav::env::admissible_coord_tokens;
use panonav::eval::{error_cdf, perplexity_by_bucket, BucketKey, GeorefRecord, NllRecord};
use panonav::geo::{self, GeoPoint};
use panonav::panograph::Split;
use panonav::project::{project_view, Equirect, ViewSpec};
use panonav::seqgen::{derive_action, Action, Sample, State};
use panonav::tokenize::{Modality, TokenVocab};
use proptest::prelude::*;

use common::{fixture, small_city, Fixture};

fn small() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| fixture(&small_city()))
}

fn point() -> impl Strategy<Value = GeoPoint> {
    (37.51f64..37.57, -122.34f64..-122.25).prop_map(|(lat, lon)| GeoPoint { lat, lon })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn destination_inverts_bearing_and_distance(p in point(), d in 0.5f64..500.0, h in 0.0f64..360.0) {
        let q = geo::destination(p, d, h);
        prop_assert!((geo::haversine_m(p, q) - d).abs() < 1e-6);
        let b = geo::initial_bearing_deg(p, q).unwrap();
        let diff = (b - h).rem_euclid(360.0);
        prop_assert!(diff.min(360.0 - diff) < 1e-6);
    }

    #[test]
    fn haversine_is_a_symmetric_metric(a in point(), b in point(), c in point()) {
        let ab = geo::haversine_m(a, b);
        prop_assert_eq!(ab, geo::haversine_m(b, a));
        prop_assert!(ab >= 0.0 && geo::haversine_m(a, a) == 0.0);
        prop_assert!(ab <= geo::haversine_m(a, c) + geo::haversine_m(c, b) + 1e-6);
    }

    #[test]
    fn sample_round_trip_within_half_step(
        p in point(), month in 1u8..=12, year in 2000u16..=2030,
        d in 0.0f64..=50.0, h in 0.0f64..360.0, dm in 0u8..12, dy in -30i8..=30,
        img in proptest::collection::vec(0u16..8192, 1024),
    ) {
        let v = TokenVocab::default();
        let s = Sample {
            image_tokens: img,
            state: State { pos: p, month, year },
            action: Action { distance: d, heading: h, d_month: dm, d_year: dy },
        };
        let ids = v.encode_sample(&s).unwrap();
        prop_assert!(ids.iter().all(|&t| (t as usize) < v.total));
        let back = v.decode_sample(&ids).unwrap();
        prop_assert_eq!(v.encode_sample(&back).unwrap(), ids);
        prop_assert!((back.state.pos.lat - p.lat).abs() <= 0.5e-5 + 1e-9);
        prop_assert!((back.state.pos.lon - p.lon).abs() <= 0.5e-5 + 1e-9);
        prop_assert!((back.action.distance - d).abs() <= 0.05 + 1e-9);
        let dh = (back.action.heading - h).rem_euclid(360.0);
        prop_assert!(dh.min(360.0 - dh) <= 0.05 + 1e-9);
    }

    #[test]
    fn view_rotation_matches_column_shift(k in 0u32..64, heading in 0.0f64..360.0, pitch in -40.0f64..40.0) {
        let w = 64;
        let img = RgbImage::from_fn(w, w / 2, |x, y| Rgb([(x * 4) as u8, (y * 8) as u8, ((x ^ y) * 3) as u8]));
        let shifted = RgbImage::from_fn(w, w / 2, |x, y| *img.get_pixel((x + w - k) % w, y));
        let spec = ViewSpec { heading, pitch, fov: 80.0, width: 24, height: 16 };
        let a = project_view(&Equirect::new(img, 0.0).unwrap(), &spec).unwrap();
        let turned = ViewSpec { heading: heading + 360.0 * k as f64 / w as f64, ..spec };
        let b = project_view(&Equirect::new(shifted, 0.0).unwrap(), &turned).unwrap();
        let worst = a.as_raw().iter().zip(b.as_raw()).map(|(x, y)| (*x as i32 - *y as i32).abs()).max().unwrap();
        prop_assert!(worst <= 1, "differs by {}", worst);
    }

    #[test]
    fn perplexity_ignores_record_order(
        nll in proptest::collection::vec((0.0f64..6.0, 2015u16..2020, 1u8..=12), 1..60),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut recs: Vec<NllRecord> = nll
            .iter()
            .map(|&(nll, year, month)| NllRecord { nll, year, month, action_distance: 3.0, d_month: 0, d_year: 0 })
            .collect();
        let a = perplexity_by_bucket(&recs, BucketKey::Month).unwrap();
        recs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(perplexity_by_bucket(&recs, BucketKey::Month).unwrap(), a.clone());
        prop_assert_eq!(a.iter().map(|r| r.count).sum::<usize>(), recs.len());
        prop_assert!(a.iter().all(|r| r.perplexity >= 1.0));
    }

    #[test]
    fn error_cdf_is_monotone(errs in proptest::collection::vec(0.0f64..200.0, 1..100)) {
        let truth = GeoPoint { lat: 37.54, lon: -122.3 };
        let recs: Vec<GeorefRecord> = errs
            .iter()
            .map(|&e| GeorefRecord { predicted: geo::destination(truth, e, 10.0), truth, year: None, split: None })
            .collect();
        let t: Vec<f64> = (0..=40).map(|i| 5.0 * i as f64).collect();
        let rows = error_cdf(&recs, &t).unwrap();
        prop_assert!(rows.windows(2).all(|w| w[0].fraction <= w[1].fraction));
        prop_assert_eq!(rows.last().unwrap().fraction, 1.0);
    }

    #[test]
    fn mask_grows_with_radius_and_holds_anchor(p in point(), d in 0.0f64..50.0, extra in 0.0f64..20.0) {
        let v = TokenVocab::default();
        let tol = v.layout(Modality::Latitude).precision * geo::meters_per_degree_lat();
        let small = admissible_coord_tokens(p, d, tol, &v).unwrap();
        let big = admissible_coord_tokens(p, (d + extra).min(50.0), tol, &v).unwrap();
        prop_assert!(small.lat.iter().all(|t| big.lat.contains(t)));
        prop_assert!(small.lon.iter().all(|t| big.lon.contains(t)));
        prop_assert!(small.lat.contains(&v.encode_value(Modality::Latitude, p.lat).unwrap()));
        prop_assert!(small.lon.contains(&v.encode_value(Modality::Longitude, p.lon).unwrap()));
        // any point reached by a move of length d stays inside the mask
        let q = geo::destination(p, d, 37.0 * extra);
        prop_assert!(small.lat.contains(&v.encode_value(Modality::Latitude, q.lat).unwrap()));
        prop_assert!(small.lon.contains(&v.encode_value(Modality::Longitude, q.lon).unwrap()));
    }

    #[test]
    fn road_paths_and_edges_are_symmetric(i in 0usize..10_000, j in 0usize..10_000) {
        let f = small();
        let nodes = f.graph.nodes();
        let (a, b) = (&nodes[i % nodes.len()], &nodes[j % nodes.len()]);
        prop_assert_eq!(
            f.net.road_path_exists(a.pos, b.pos, 50.0, 15.0),
            f.net.road_path_exists(b.pos, a.pos, 50.0, 15.0)
        );
        prop_assert_eq!(f.graph.has_edge(a.id, b.id), f.graph.has_edge(b.id, a.id));
        if a.id != b.id && f.graph.has_edge(a.id, b.id) {
            let fwd = derive_action(a, b).unwrap();
            let back = derive_action(b, a).unwrap();
            prop_assert!((fwd.distance - back.distance).abs() < 1e-9);
        }
    }
}

#[test]
fn induced_subgraphs_keep_only_their_split() {
    let f = small();
    let train = f.graph.induced(|s| s == Split::Train);
    let test = f.graph.induced(Split::is_test);
    assert_eq!(train.len() + test.len(), f.graph.len());
    for g in [&train, &test] {
        for &(u, v) in g.spatial_edges().iter().chain(g.temporal_edges()) {
            assert!(g.node(u).is_some() && g.node(v).is_some());
            assert!(f.graph.has_edge(u, v));
        }
    }
}
