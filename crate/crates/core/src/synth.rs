//! Synthetic street-grid city: an OSM document, panorama metadata and procedural
//! panoramas. Used by tests, examples and demos in place of real captures.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geo::{self, GeoPoint};
use crate::panograph::{NodeId, PanoNode};
use crate::project::{project_view, Equirect, ProjectError, ViewSpec};
use crate::seqgen::{SeqError, ViewSource};
use crate::tokenize::{splitmix64, ImageTokenizer, StubTokenizer};

#[derive(Debug, Clone, PartialEq)]
pub struct CityConfig {
    /// South-west street intersection.
    pub origin: GeoPoint,
    pub streets_ns: usize,
    pub streets_ew: usize,
    pub block_m: f64,
    pub spacing_m: f64,
    /// Per-axis positional noise, uniform in ±jitter.
    pub jitter_m: f64,
    /// Every n-th node gets a second capture at another date.
    pub recapture_every: usize,
    pub recapture_offset_m: f64,
    pub seed: u64,
}

impl Default for CityConfig {
    fn default() -> Self {
        CityConfig {
            origin: GeoPoint { lat: 37.530, lon: -122.310 },
            streets_ns: 6,
            streets_ew: 6,
            block_m: 150.0,
            spacing_m: 7.5,
            jitter_m: 1.0,
            recapture_every: 3,
            recapture_offset_m: 2.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct City {
    pub osm_xml: String,
    pub nodes: Vec<PanoNode>,
}

struct Frame {
    origin: GeoPoint,
    mpd_lon: f64,
}

impl Frame {
    /// Rounded to nanodegrees so text round trips reproduce it exactly.
    fn at(&self, x: f64, y: f64) -> GeoPoint {
        let nano = |v: f64| format!("{v:.9}").parse::<f64>().expect("formatted float");
        GeoPoint {
            lat: nano(self.origin.lat + y / geo::meters_per_degree_lat()),
            lon: nano(self.origin.lon + x / self.mpd_lon),
        }
    }
}

/// Builds the city. Roads run along every grid line; nodes sit along them with
/// small jitter. Recaptures use years disjoint from the base captures, and some
/// fall in 2023/2024 so a temporal holdout is non-empty. Block interiors are
/// roadless.
pub fn synthetic_city(cfg: &CityConfig) -> City {
    let frame = Frame {
        origin: cfg.origin,
        mpd_lon: geo::meters_per_degree_lon(cfg.origin.lat),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut osm = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<osm version=\"0.6\" generator=\"synth\">\n");
    let vertex = |x: f64, y: f64, osm: &mut String| -> u64 {
        // id from integer grid coordinates keeps shared intersections shared
        let id = 1 + (((x / cfg.block_m).round() as u64) << 16) + (y / cfg.block_m).round() as u64;
        let p = frame.at(x, y);
        if !osm.contains(&format!("<node id=\"{id}\" ")) {
            writeln!(osm, "  <node id=\"{id}\" lat=\"{:.9}\" lon=\"{:.9}\"/>", p.lat, p.lon).unwrap();
        }
        id
    };
    let mut ways = String::new();
    let mut way_id = 1000;
    for i in 0..cfg.streets_ns {
        let x = i as f64 * cfg.block_m;
        let refs: Vec<u64> = (0..cfg.streets_ew)
            .map(|j| vertex(x, j as f64 * cfg.block_m, &mut osm))
            .collect();
        push_way(&mut ways, way_id, &refs, "residential");
        way_id += 1;
    }
    for j in 0..cfg.streets_ew {
        let y = j as f64 * cfg.block_m;
        let refs: Vec<u64> = (0..cfg.streets_ns)
            .map(|i| vertex(i as f64 * cfg.block_m, y, &mut osm))
            .collect();
        push_way(&mut ways, way_id, &refs, if j == 0 { "primary" } else { "residential" });
        way_id += 1;
    }
    // a footpath cutting diagonally through the first block; not drivable
    let a = vertex(0.0, 0.0, &mut osm);
    let b = vertex(cfg.block_m, cfg.block_m, &mut osm);
    push_way(&mut ways, way_id, &[a, b], "footway");
    osm.push_str(&ways);
    osm.push_str("</osm>\n");

    let steps_per_block = (cfg.block_m / cfg.spacing_m).round() as usize;
    let mut nodes = Vec::new();
    let mut next_id = 1u64;
    let mut place = |x: f64, y: f64, year: u16, month: u8, rng: &mut ChaCha8Rng, nodes: &mut Vec<PanoNode>| {
        let jx = rng.gen_range(-cfg.jitter_m..=cfg.jitter_m);
        let jy = rng.gen_range(-cfg.jitter_m..=cfg.jitter_m);
        let id = next_id;
        next_id += 1;
        nodes.push(PanoNode {
            id: NodeId(id),
            pos: frame.at(x + jx, y + jy),
            month,
            year,
            image_ref: format!("pano_{id:05}.png"),
            base_heading: (rng.gen_range(0..3600) as f64) / 10.0,
        });
    };
    let mut count = 0usize;
    let mut street = |xs: Vec<(f64, f64)>, idx: usize, ew: bool, rng: &mut ChaCha8Rng, nodes: &mut Vec<PanoNode>| {
        let base_year = 2014 + (idx % 7) as u16;
        let base_month = 1 + (idx * 5 % 12) as u8;
        for (x, y) in xs {
            place(x, y, base_year, base_month, rng, nodes);
            count += 1;
            if count % cfg.recapture_every == 0 {
                let year = if count % (4 * cfg.recapture_every) == 0 {
                    2023 + (count / (4 * cfg.recapture_every) % 2) as u16
                } else {
                    2008 + (count % 5) as u16
                };
                let (ox, oy) = if ew {
                    (0.0, cfg.recapture_offset_m)
                } else {
                    (cfg.recapture_offset_m, 0.0)
                };
                place(x + ox, y + oy, year, 1 + (count % 12) as u8, rng, nodes);
            }
        }
    };
    let per_line_ew = (cfg.streets_ns - 1) * steps_per_block + 1;
    let per_line_ns = (cfg.streets_ew - 1) * steps_per_block + 1;
    for j in 0..cfg.streets_ew {
        let y = j as f64 * cfg.block_m;
        let pts = (0..per_line_ew).map(|k| (k as f64 * cfg.spacing_m, y)).collect();
        street(pts, j, true, &mut rng, &mut nodes);
    }
    for i in 0..cfg.streets_ns {
        let x = i as f64 * cfg.block_m;
        // intersections already carry a node from the east-west pass
        let pts = (0..per_line_ns)
            .filter(|k| k % steps_per_block != 0)
            .map(|k| (x, k as f64 * cfg.spacing_m))
            .collect();
        street(pts, cfg.streets_ew + i, false, &mut rng, &mut nodes);
    }
    City { osm_xml: osm, nodes }
}

fn push_way(out: &mut String, id: u64, refs: &[u64], class: &str) {
    writeln!(out, "  <way id=\"{id}\">").unwrap();
    for r in refs {
        writeln!(out, "    <nd ref=\"{r}\"/>").unwrap();
    }
    writeln!(out, "    <tag k=\"highway\" v=\"{class}\"/>\n  </way>").unwrap();
}

/// Writes panorama metadata as CSV with the columns the graph loader expects.
pub fn write_metadata_csv(path: &Path, nodes: &[PanoNode]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "lat", "lon", "month", "year", "image_path", "base_heading"])?;
    for n in nodes {
        w.write_record([
            n.id.0.to_string(),
            n.pos.lat.to_string(),
            n.pos.lon.to_string(),
            n.month.to_string(),
            n.year.to_string(),
            n.image_ref.clone(),
            n.base_heading.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `roads.osm` and `metadata.csv` for `cfg` into `dir`, plus panoramas
/// under `dir/panos` when `pano_width` is given. Returns the city.
pub fn write_city(dir: &Path, cfg: &CityConfig, pano_width: Option<u32>) -> std::io::Result<City> {
    let city = synthetic_city(cfg);
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("roads.osm"), &city.osm_xml)?;
    write_metadata_csv(&dir.join("metadata.csv"), &city.nodes).map_err(std::io::Error::other)?;
    if let Some(w) = pano_width {
        let panos = dir.join("panos");
        std::fs::create_dir_all(&panos)?;
        write_panoramas(&panos, &city.nodes, w).map_err(std::io::Error::other)?;
    }
    Ok(city)
}

/// Smooth, node-specific equirectangular panorama: a sky gradient above the
/// horizon and a tinted wave pattern below it.
pub fn synthetic_panorama(node: &PanoNode, width: u32) -> Equirect {
    let width = width.max(2) & !1;
    let height = width / 2;
    let seed = splitmix64(node.id.0);
    let tint = [(seed & 0xff) as f64, (seed >> 8 & 0xff) as f64, (seed >> 16 & 0xff) as f64];
    let img = RgbImage::from_fn(width, height, |x, y| {
        let lon = x as f64 / width as f64 * std::f64::consts::TAU;
        let lat = 0.5 - y as f64 / height as f64;
        let wave = (lon * (1 + (seed >> 24) % 4) as f64 + (seed >> 32) as f64).sin();
        let px = if lat > 0.0 {
            let sky = 150.0 + 100.0 * lat;
            [sky * 0.6, sky * 0.8, sky]
        } else {
            let ground = 60.0 + 40.0 * wave;
            [ground + tint[0] * 0.3, ground + tint[1] * 0.3, ground + tint[2] * 0.3]
        };
        Rgb(px.map(|v| v.clamp(0.0, 255.0) as u8))
    });
    Equirect::new(img, node.base_heading).expect("2:1 by construction")
}

/// Writes one PNG per node into `dir`, named by `image_ref`.
pub fn write_panoramas(dir: &Path, nodes: &[PanoNode], width: u32) -> Result<(), ProjectError> {
    for n in nodes {
        let path = dir.join(&n.image_ref);
        synthetic_panorama(n, width).pixels().save(&path).map_err(|source| ProjectError::Image {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

/// Renders procedural panoramas on the fly and tokenizes small projected views.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticViews {
    pub pano_width: u32,
    pub view_size: u32,
}

impl Default for SyntheticViews {
    fn default() -> Self {
        SyntheticViews {
            pano_width: 128,
            view_size: 32,
        }
    }
}

impl ViewSource for SyntheticViews {
    fn observe(&self, node: &PanoNode, heading_deg: f64) -> Result<Vec<u16>, SeqError> {
        let pano = synthetic_panorama(node, self.pano_width);
        let spec = ViewSpec::toward(heading_deg).with_size(self.view_size, self.view_size);
        let err = |message: String| SeqError::View {
            node: node.id,
            heading: heading_deg,
            message,
        };
        let view = project_view(&pano, &spec).map_err(|e| err(e.to_string()))?;
        StubTokenizer.tokenize(&view).map_err(|e| err(e.to_string()))
    }
}
