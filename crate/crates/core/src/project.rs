//! Gnomonic (rectilinear) views rendered from 2:1 equirectangular panoramas.
//!
//! Panorama pixel `(W/2, H/2)` looks toward the capture's base heading on the
//! horizon. Yaw increases to the right (clockwise from north), pitch increases
//! upward. Sampling is bilinear, wrapping horizontally and clamping at the poles.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::{Rgb, RgbImage};
use thiserror::Error;

use crate::panograph::{NodeId, PanoNode};
use crate::seqgen::{SeqError, ViewSource};
use crate::tokenize::ImageTokenizer;

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("equirectangular image must be 2:1 and non-empty, got {width}x{height}")]
    Aspect { width: u32, height: u32 },
    #[error("field of view must be in (0, 180) degrees, got {0}")]
    Fov(f64),
    #[error("output size must be non-zero, got {0}x{1}")]
    OutputSize(u32, u32),
    #[error("{path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

#[derive(Debug, Clone)]
pub struct Equirect {
    pixels: RgbImage,
    /// True-north heading of the image's horizontal center.
    pub base_heading: f64,
}

impl Equirect {
    pub fn new(pixels: RgbImage, base_heading: f64) -> Result<Self, ProjectError> {
        let (width, height) = pixels.dimensions();
        if width == 0 || height == 0 || width != 2 * height {
            return Err(ProjectError::Aspect { width, height });
        }
        Ok(Equirect { pixels, base_heading })
    }

    pub fn open(path: &Path, base_heading: f64) -> Result<Self, ProjectError> {
        let img = image::open(path).map_err(|source| ProjectError::Image {
            path: path.display().to_string(),
            source,
        })?;
        Equirect::new(img.to_rgb8(), base_heading)
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    /// Bilinear sample at continuous pixel-index coordinates.
    pub fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let (w, h) = (self.width() as i64, self.height() as i64);
        let v = v.clamp(0.0, (h - 1) as f64);
        let x0f = u.floor();
        let y0f = v.floor();
        let (fx, fy) = (u - x0f, v - y0f);
        let x0 = (x0f as i64).rem_euclid(w) as u32;
        let x1 = ((x0f as i64) + 1).rem_euclid(w) as u32;
        let y0 = y0f as u32;
        let y1 = (y0f as i64 + 1).min(h - 1) as u32;
        let px = |x, y| self.pixels.get_pixel(x, y).0;
        let (a, b, c, d) = (px(x0, y0), px(x1, y0), px(x0, y1), px(x1, y1));
        std::array::from_fn(|k| {
            let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
            let bottom = c[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
            top * (1.0 - fy) + bottom * fy
        })
    }

    /// Continuous pixel coordinates of a direction given relative to the base heading.
    pub fn coords_of(&self, rel_yaw_deg: f64, pitch_deg: f64) -> (f64, f64) {
        let (w, h) = (self.width() as f64, self.height() as f64);
        (w / 2.0 + rel_yaw_deg / 360.0 * w, h / 2.0 - pitch_deg / 180.0 * h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewSpec {
    /// Absolute heading in degrees clockwise from north.
    pub heading: f64,
    pub pitch: f64,
    /// Horizontal field of view in degrees.
    pub fov: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for ViewSpec {
    fn default() -> Self {
        ViewSpec {
            heading: 0.0,
            pitch: 0.0,
            fov: 90.0,
            width: 512,
            height: 512,
        }
    }
}

impl ViewSpec {
    pub fn toward(heading: f64) -> Self {
        ViewSpec {
            heading,
            ..ViewSpec::default()
        }
    }

    pub fn with_size(mut self, width: u32, height: u32) -> Self {
        self.width = width;
        self.height = height;
        self
    }
}

/// Renders a pinhole view of `img` for `spec`.
pub fn project_view(img: &Equirect, spec: &ViewSpec) -> Result<RgbImage, ProjectError> {
    if !(spec.fov > 0.0 && spec.fov < 180.0) {
        return Err(ProjectError::Fov(spec.fov));
    }
    if spec.width == 0 || spec.height == 0 {
        return Err(ProjectError::OutputSize(spec.width, spec.height));
    }
    let (w, h) = (spec.width as f64, spec.height as f64);
    let focal = (w / 2.0) / (spec.fov.to_radians() / 2.0).tan();
    let yaw = (spec.heading - img.base_heading).to_radians();
    let pitch = spec.pitch.to_radians();
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let mut out = RgbImage::new(spec.width, spec.height);
    for (i, j, px) in out.enumerate_pixels_mut() {
        let x = (i as f64 + 0.5 - w / 2.0) / focal;
        let up = -(j as f64 + 0.5 - h / 2.0) / focal;
        // pitch about the camera's right axis, then yaw about the vertical
        let y1 = up * cp + sp;
        let z1 = -up * sp + cp;
        let x2 = x * cy + z1 * sy;
        let z2 = -x * sy + z1 * cy;
        let lon = x2.atan2(z2).to_degrees();
        let lat = y1.atan2(x2.hypot(z2)).to_degrees();
        let (u, v) = img.coords_of(lon, lat);
        let c = img.sample(u, v);
        *px = Rgb(c.map(|v| v.round().clamp(0.0, 255.0) as u8));
    }
    Ok(out)
}

/// Relative yaws of the four look-around views.
pub const LOOKAROUND_OFFSETS: [f64; 4] = [0.0, 90.0, 180.0, 270.0];

/// Four 90° views on the horizon starting at the base heading.
pub fn project_lookaround(img: &Equirect, width: u32, height: u32) -> Result<[RgbImage; 4], ProjectError> {
    let views = LOOKAROUND_OFFSETS
        .iter()
        .map(|off| project_view(img, &ViewSpec::toward(img.base_heading + off).with_size(width, height)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(views.try_into().expect("four views"))
}

/// Loads each node's panorama from disk, renders the requested view and tokenizes it.
/// Recently used panoramas are kept decoded.
pub struct ProjectedViews<T> {
    root: PathBuf,
    tokenizer: T,
    width: u32,
    height: u32,
    cache: Mutex<(HashMap<NodeId, Arc<Equirect>>, VecDeque<NodeId>)>,
    capacity: usize,
}

impl<T: ImageTokenizer> ProjectedViews<T> {
    pub fn new(root: impl Into<PathBuf>, tokenizer: T, width: u32, height: u32) -> Self {
        ProjectedViews {
            root: root.into(),
            tokenizer,
            width,
            height,
            cache: Mutex::new((HashMap::new(), VecDeque::new())),
            capacity: 256,
        }
    }

    fn panorama(&self, node: &PanoNode) -> Result<Arc<Equirect>, ProjectError> {
        if let Some(p) = self.cache.lock().expect("cache lock").0.get(&node.id) {
            return Ok(p.clone());
        }
        let pano = Arc::new(Equirect::open(&self.root.join(&node.image_ref), node.base_heading)?);
        let mut guard = self.cache.lock().expect("cache lock");
        let (map, order) = &mut *guard;
        if map.insert(node.id, pano.clone()).is_none() {
            order.push_back(node.id);
        }
        while order.len() > self.capacity {
            if let Some(old) = order.pop_front() {
                map.remove(&old);
            }
        }
        Ok(pano)
    }
}

impl<T: ImageTokenizer> ViewSource for ProjectedViews<T> {
    fn observe(&self, node: &PanoNode, heading_deg: f64) -> Result<Vec<u16>, SeqError> {
        let err = |message: String| SeqError::View {
            node: node.id,
            heading: heading_deg,
            message,
        };
        let pano = self.panorama(node).map_err(|e| err(e.to_string()))?;
        let view = project_view(&pano, &ViewSpec::toward(heading_deg).with_size(self.width, self.height))
            .map_err(|e| err(e.to_string()))?;
        self.tokenizer.tokenize(&view).map_err(|e| err(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32) -> Equirect {
        let h = w / 2;
        let img = RgbImage::from_fn(w, h, |x, y| {
            let t = x as f64 / w as f64 * std::f64::consts::TAU;
            Rgb([
                (127.5 + 127.0 * t.sin()) as u8,
                (127.5 + 127.0 * t.cos()) as u8,
                (y * 255 / (h - 1)) as u8,
            ])
        });
        Equirect::new(img, 0.0).unwrap()
    }

    #[test]
    fn aspect_and_fov_validated() {
        assert!(matches!(
            Equirect::new(RgbImage::new(30, 20), 0.0),
            Err(ProjectError::Aspect { .. })
        ));
        let e = gradient(64);
        let spec = ViewSpec {
            fov: 180.0,
            ..ViewSpec::default()
        };
        assert!(matches!(project_view(&e, &spec), Err(ProjectError::Fov(_))));
    }

    #[test]
    fn constant_panorama_gives_constant_view() {
        let e = Equirect::new(RgbImage::from_pixel(128, 64, Rgb([17, 200, 99])), 12.0).unwrap();
        let v = project_view(&e, &ViewSpec::toward(33.3).with_size(40, 30)).unwrap();
        assert!(v.pixels().all(|p| p.0 == [17, 200, 99]));
        let four = project_lookaround(&e, 16, 16).unwrap();
        assert!(four.iter().all(|v| v == &four[0]));
    }

    #[test]
    fn center_ray_hits_panorama_center() {
        let e = gradient(256);
        let v = project_view(&e, &ViewSpec::toward(0.0).with_size(33, 33)).unwrap();
        assert_eq!(v.get_pixel(16, 16), e.pixels().get_pixel(128, 64));
    }

    #[test]
    fn base_heading_offsets_yaw() {
        let mut e = gradient(256);
        e.base_heading = 40.0;
        let v = project_view(&e, &ViewSpec::toward(130.0).with_size(33, 33)).unwrap();
        // 90° right of the image center
        assert_eq!(v.get_pixel(16, 16), e.pixels().get_pixel(192, 64));
    }

    #[test]
    fn deterministic_output() {
        let e = gradient(128);
        let spec = ViewSpec::toward(77.0).with_size(20, 20);
        assert_eq!(project_view(&e, &spec).unwrap(), project_view(&e, &spec).unwrap());
    }

    #[test]
    fn small_heading_change_is_small_image_change() {
        let e = gradient(512);
        let a = project_view(&e, &ViewSpec::toward(10.0).with_size(64, 64)).unwrap();
        let b = project_view(&e, &ViewSpec::toward(10.1).with_size(64, 64)).unwrap();
        let total: u64 = a
            .as_raw()
            .iter()
            .zip(b.as_raw())
            .map(|(x, y)| (*x as i64 - *y as i64).unsigned_abs())
            .sum();
        let mean = total as f64 / a.as_raw().len() as f64;
        assert!(mean < 1.0, "{mean}");
    }

    #[test]
    fn lookaround_edges_tile_the_horizon() {
        let e = gradient(1024);
        let n = 64;
        let views = project_lookaround(&e, n, n).unwrap();
        for k in 0..4 {
            let right = views[k].get_pixel(n - 1, n / 2).0;
            let left = views[(k + 1) % 4].get_pixel(0, n / 2).0;
            for c in 0..3 {
                assert!((right[c] as i32 - left[c] as i32).abs() <= 8, "{k}: {right:?} {left:?}");
            }
        }
    }
}
