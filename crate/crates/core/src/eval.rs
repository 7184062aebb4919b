//! Evaluation aggregates: georeferencing error CDFs, road adherence by lane
//! width, bucketed perplexity and action-magnitude CDFs, each with a CSV form.
//!
//! Inputs are JSONL, one record per line:
//!
//! ```text
//! georef:     {"predicted":{"lat":..,"lon":..},"truth":{"lat":..,"lon":..},"year":2023,"split":"test_temporal"}
//! adherence:  {"resulting_state":{"lat":..,"lon":..},"action_distance":12.5}
//! nll:        {"nll":2.1,"year":2019,"month":6,"action_distance":7.5,"d_month":0,"d_year":0}
//! magnitude:  {"distance":7.5}
//! ```
//!
//! `year` and `split` are optional on georef records. CSV headers are fixed per
//! [`CSV_SCHEMA_VERSION`].

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, GeoPoint};
use crate::panograph::MAX_MOVE_M;
use crate::roadnet::RoadNetwork;

pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Lane widths reported by default, in meters.
pub const DEFAULT_LANE_WIDTHS_M: [f64; 9] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no input records")]
    EmptyInput,
    #[error("road network has no segments")]
    EmptyNetwork,
    #[error("thresholds must be finite and ascending")]
    Thresholds,
    #[error("record {record}: {message}")]
    BadRecord { record: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeorefRecord {
    pub predicted: GeoPoint,
    pub truth: GeoPoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdherenceRecord {
    pub resulting_state: GeoPoint,
    pub action_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NllRecord {
    pub nll: f64,
    pub year: u16,
    pub month: u8,
    pub action_distance: f64,
    pub d_month: u8,
    pub d_year: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeRecord {
    pub distance: f64,
}

/// Records that can check their own field ranges.
pub trait Validate {
    fn validate(&self) -> Result<(), String>;
}

impl Validate for GeorefRecord {
    fn validate(&self) -> Result<(), String> {
        if self.predicted.is_valid() && self.truth.is_valid() {
            Ok(())
        } else {
            Err("points must be finite, valid coordinates".into())
        }
    }
}

impl Validate for AdherenceRecord {
    fn validate(&self) -> Result<(), String> {
        if !self.resulting_state.is_valid() {
            return Err("resulting_state is not a valid coordinate".into());
        }
        if !(0.0..=MAX_MOVE_M).contains(&self.action_distance) {
            return Err(format!("action_distance {} outside [0, {MAX_MOVE_M}]", self.action_distance));
        }
        Ok(())
    }
}

impl Validate for NllRecord {
    fn validate(&self) -> Result<(), String> {
        if !(self.nll.is_finite() && self.nll >= 0.0) {
            return Err(format!("nll must be finite and non-negative, got {}", self.nll));
        }
        if !self.action_distance.is_finite() || self.action_distance < 0.0 {
            return Err(format!("bad action_distance {}", self.action_distance));
        }
        Ok(())
    }
}

impl Validate for MagnitudeRecord {
    fn validate(&self) -> Result<(), String> {
        if self.distance.is_finite() && self.distance >= 0.0 {
            Ok(())
        } else {
            Err(format!("bad distance {}", self.distance))
        }
    }
}

/// Reads and validates JSONL records; errors name the 1-based record line.
pub fn read_records<T: DeserializeOwned + Validate, R: BufRead>(source: R) -> Result<Vec<T>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| EvalError::BadRecord { record: i + 1, message };
        let rec: T = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        rec.validate().map_err(bad)?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    #[serde(rename = "threshold_m")]
    pub threshold: f64,
    pub fraction: f64,
    pub count: usize,
    pub total: usize,
}

fn check_thresholds(t: &[f64]) -> Result<(), EvalError> {
    if t.iter().all(|v| v.is_finite()) && t.windows(2).all(|w| w[0] <= w[1]) {
        Ok(())
    } else {
        Err(EvalError::Thresholds)
    }
}

fn cdf(mut values: Vec<f64>, thresholds: &[f64]) -> Result<Vec<CdfRow>, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    check_thresholds(thresholds)?;
    values.sort_by(f64::total_cmp);
    let total = values.len();
    Ok(thresholds
        .iter()
        .map(|&t| {
            let count = values.partition_point(|&v| v <= t);
            CdfRow {
                threshold: t,
                fraction: count as f64 / total as f64,
                count,
                total,
            }
        })
        .collect())
}

/// Fraction of predictions within each distance threshold of the truth.
pub fn error_cdf(records: &[GeorefRecord], thresholds: &[f64]) -> Result<Vec<CdfRow>, EvalError> {
    let errors = records
        .par_iter()
        .map(|r| geo::haversine_m(r.predicted, r.truth))
        .collect();
    cdf(errors, thresholds)
}

/// Fraction of actions whose distance is at most each threshold.
pub fn action_magnitude_cdf(distances: &[f64], thresholds: &[f64]) -> Result<Vec<CdfRow>, EvalError> {
    cdf(distances.to_vec(), thresholds)
}

/// 0..=100 m in 1 m steps.
pub fn default_error_thresholds() -> Vec<f64> {
    (0..=100).map(f64::from).collect()
}

/// 0..=50 m in 1 m steps.
pub fn default_magnitude_thresholds() -> Vec<f64> {
    (0..=50).map(f64::from).collect()
}

/// How a lane width turns into a distance bound from the centerline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthConvention {
    /// Valid within `w / 2` of the centerline.
    #[default]
    HalfWidth,
    /// Valid within `w` of the centerline.
    FullWidth,
}

impl WidthConvention {
    pub fn bound(self, width: f64) -> f64 {
        match self {
            WidthConvention::HalfWidth => width / 2.0,
            WidthConvention::FullWidth => width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdherenceRow {
    #[serde(rename = "width_m")]
    pub width: f64,
    #[serde(rename = "all_actions_valid_pct")]
    pub all_pct: f64,
    /// Absent when every action was static.
    #[serde(rename = "nonzero_move_valid_pct")]
    pub nonzero_pct: Option<f64>,
    #[serde(rename = "all_count")]
    pub all_count: usize,
    #[serde(rename = "nonzero_count")]
    pub nonzero_count: usize,
}

/// Centerline distance for each record, in input order.
pub fn centerline_distances(records: &[AdherenceRecord], net: &RoadNetwork) -> Result<Vec<f64>, EvalError> {
    if net.is_empty() {
        return Err(EvalError::EmptyNetwork);
    }
    records
        .par_iter()
        .map(|r| {
            net.nearest_centerline(r.resulting_state)
                .map(|(d, _)| d)
                .map_err(|_| EvalError::EmptyNetwork)
        })
        .collect()
}

/// Share of resulting states that stay on the road at each lane width, over all
/// actions and over actions that actually move.
pub fn road_adherence(
    records: &[AdherenceRecord],
    net: &RoadNetwork,
    widths: &[f64],
    convention: WidthConvention,
) -> Result<Vec<AdherenceRow>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    check_thresholds(widths)?;
    let dists = centerline_distances(records, net)?;
    let moving: Vec<bool> = records.iter().map(|r| r.action_distance > 0.0).collect();
    let nonzero_count = moving.iter().filter(|&&m| m).count();
    Ok(widths
        .iter()
        .map(|&w| {
            let bound = convention.bound(w);
            let mut valid_all = 0;
            let mut valid_moving = 0;
            for (d, &m) in dists.iter().zip(&moving) {
                if *d <= bound {
                    valid_all += 1;
                    valid_moving += m as usize;
                }
            }
            AdherenceRow {
                width: w,
                all_pct: 100.0 * valid_all as f64 / records.len() as f64,
                nonzero_pct: (nonzero_count > 0).then(|| 100.0 * valid_moving as f64 / nonzero_count as f64),
                all_count: records.len(),
                nonzero_count,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "key")]
pub enum BucketKey {
    Year,
    Month,
    /// Action distance grouped into `[k·width, (k+1)·width)` buckets.
    Distance { width: f64 },
    DeltaMonth,
    DeltaYear,
}

impl BucketKey {
    pub fn name(&self) -> &'static str {
        match self {
            BucketKey::Year => "year",
            BucketKey::Month => "month",
            BucketKey::Distance { .. } => "distance",
            BucketKey::DeltaMonth => "d_month",
            BucketKey::DeltaYear => "d_year",
        }
    }

    fn index(&self, r: &NllRecord) -> i64 {
        match *self {
            BucketKey::Year => r.year as i64,
            BucketKey::Month => r.month as i64,
            BucketKey::Distance { width } => (r.action_distance / width).floor() as i64,
            BucketKey::DeltaMonth => r.d_month as i64,
            BucketKey::DeltaYear => r.d_year as i64,
        }
    }

    fn label(&self, index: i64) -> f64 {
        match *self {
            BucketKey::Distance { width } => index as f64 * width,
            _ => index as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityRow {
    pub key: String,
    /// Bucket value, or the lower edge for distance buckets.
    pub bucket: f64,
    pub perplexity: f64,
    pub mean_nll: f64,
    pub count: usize,
}

/// `exp(mean nll)` per bucket, ascending by bucket. Each bucket's sum is taken
/// over its values in sorted order, so results do not depend on record order.
pub fn perplexity_by_bucket(records: &[NllRecord], key: BucketKey) -> Result<Vec<PerplexityRow>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if let BucketKey::Distance { width } = key {
        if !(width > 0.0 && width.is_finite()) {
            return Err(EvalError::Thresholds);
        }
    }
    let mut buckets: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for r in records {
        buckets.entry(key.index(r)).or_default().push(r.nll);
    }
    Ok(buckets
        .into_iter()
        .map(|(idx, mut v)| {
            v.sort_by(f64::total_cmp);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            PerplexityRow {
                key: key.name().to_string(),
                bucket: key.label(idx),
                perplexity: mean.exp(),
                mean_nll: mean,
                count: v.len(),
            }
        })
        .collect())
}

/// Writes rows as CSV with a header line.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], sink: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadnet::{parse_segments_json, ParseConfig};

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint { lat, lon }
    }

    fn georef_with_error(err_m: f64) -> GeorefRecord {
        let truth = pt(37.54, -122.30);
        GeorefRecord {
            predicted: geo::destination(truth, err_m, 45.0),
            truth,
            year: None,
            split: None,
        }
    }

    #[test]
    fn counts_within_threshold() {
        let recs: Vec<_> = [5.0, 15.0, 25.0].map(georef_with_error).to_vec();
        let rows = error_cdf(&recs, &[10.0]).unwrap();
        assert!((rows[0].fraction - 1.0 / 3.0).abs() < 1e-12);
        let zero = vec![georef_with_error(0.0); 4];
        assert!(error_cdf(&zero, &[0.0, 1.0]).unwrap().iter().all(|r| r.fraction == 1.0));
        assert!(matches!(error_cdf(&[], &[1.0]), Err(EvalError::EmptyInput)));
        assert!(matches!(error_cdf(&recs, &[2.0, 1.0]), Err(EvalError::Thresholds)));
    }

    #[test]
    fn magnitude_counts() {
        let rows = action_magnitude_cdf(&[0.0, 5.0, 10.0], &[0.0, 5.0]).unwrap();
        assert!((rows[1].fraction - 2.0 / 3.0).abs() < 1e-12);
        assert!((rows[0].fraction - 1.0 / 3.0).abs() < 1e-12);
    }

    fn straight_road() -> RoadNetwork {
        let doc = r#"{"version":1,"vertices":[[37.54,-122.31],[37.54,-122.29]],"segments":[{"id":0,"way_id":1,"highway":"residential","a":0,"b":1}]}"#;
        parse_segments_json(doc, &ParseConfig::default()).unwrap()
    }

    #[test]
    fn lateral_offset_adherence() {
        let net = straight_road();
        let recs: Vec<_> = (0..20)
            .map(|i| AdherenceRecord {
                resulting_state: geo::destination(pt(37.54, -122.305 + i as f64 * 1e-4), 1.75, 0.0),
                action_distance: (i % 3) as f64,
            })
            .collect();
        let rows = road_adherence(&recs, &net, &[3.0, 4.0], WidthConvention::HalfWidth).unwrap();
        assert_eq!(rows[0].all_pct, 0.0);
        assert_eq!(rows[1].all_pct, 100.0);
        assert_eq!(rows[1].nonzero_pct, Some(100.0));
        let full = road_adherence(&recs, &net, &[2.0], WidthConvention::FullWidth).unwrap();
        assert_eq!(full[0].all_pct, 100.0);
    }

    #[test]
    fn perplexity_arithmetic() {
        let rec = |nll: f64, year| NllRecord {
            nll,
            year,
            month: 1,
            action_distance: 3.0,
            d_month: 0,
            d_year: 0,
        };
        let recs = [rec(2f64.ln(), 2020), rec(8f64.ln(), 2020), rec(0.0, 2021)];
        let rows = perplexity_by_bucket(&recs, BucketKey::Year).unwrap();
        assert_eq!(rows.len(), 2);
        assert!((rows[0].perplexity - 4.0).abs() < 1e-12);
        assert_eq!(rows[0].count, 2);
        assert_eq!(rows[1].perplexity, 1.0);
        let d = perplexity_by_bucket(&recs, BucketKey::Distance { width: 5.0 }).unwrap();
        assert_eq!((d.len(), d[0].bucket), (1, 0.0));
    }

    #[test]
    fn records_are_validated_with_line_numbers() {
        let text = "{\"nll\":1.0,\"year\":2020,\"month\":1,\"action_distance\":0,\"d_month\":0,\"d_year\":0}\n\n{\"nll\":-1.0,\"year\":2020,\"month\":1,\"action_distance\":0,\"d_month\":0,\"d_year\":0}\n";
        match read_records::<NllRecord, _>(text.as_bytes()) {
            Err(EvalError::BadRecord { record, .. }) => assert_eq!(record, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_headers_are_fixed() {
        let mut out = Vec::new();
        write_csv(&error_cdf(&[georef_with_error(1.0)], &[1.0]).unwrap(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("threshold_m,fraction,count,total\n"), "{text}");
        let mut out = Vec::new();
        let rows = road_adherence(
            &[AdherenceRecord {
                resulting_state: pt(37.54, -122.30),
                action_distance: 0.0,
            }],
            &straight_road(),
            &DEFAULT_LANE_WIDTHS_M,
            WidthConvention::HalfWidth,
        )
        .unwrap();
        write_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("width_m,all_actions_valid_pct,nonzero_move_valid_pct,all_count,nonzero_count\n1.0,100.0,,1,0\n"), "{text}");
        assert_eq!(text.lines().count(), 10);
    }
}
