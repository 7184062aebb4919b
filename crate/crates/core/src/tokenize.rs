//! Discrete vocabulary for every modality of an observation/state/action sample.
//!
//! The default layout places the nine content modalities contiguously, in sample
//! order, followed by 30 special tokens:
//!
//! | modality    | offset | size  | range                     | precision |
//! |-------------|--------|-------|---------------------------|-----------|
//! | image       | 0      | 8192  |                           |           |
//! | latitude    | 8192   | 6723  | 37.50555 .. 37.57277      | 1e-5      |
//! | longitude   | 14915  | 10000 | -122.34916 .. -122.249168 | 1e-5      |
//! | month       | 24915  | 12    | 1 .. 12                   | 1         |
//! | year        | 24927  | 31    | 2000 .. 2030              | 1         |
//! | distance    | 24958  | 501   | 0.0 .. 50.0               | 0.1       |
//! | heading     | 25459  | 3601  | 0.0 .. 359.9              | 0.1       |
//! | Δmonth      | 29060  | 12    | 0 .. 11                   | 1         |
//! | Δyear       | 29072  | 61    | -30 .. 30                 | 1         |
//! | specials    | 29133  | 30    |                           |           |
//!
//! Total 29163. Heading bin 3600 is reserved and never produced (headings wrap at
//! 360°). The last longitude bin is clamped.
//!
//! Specials, relative to the special offset: 0 sequence start, 1 sequence end,
//! 2/3 image group start/end, 4/5 state group start/end, 6/7 action group
//! start/end, 8 padding, 9..=29 reserved.

use std::io::{BufRead, Write};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::seqgen::{Action, Sample, State, VisualSentence};

pub type TokenId = u32;

pub const IMAGE_TOKENS_PER_SAMPLE: usize = 1024;
pub const IMAGE_VOCAB: usize = 8192;
/// Image, state and action content tokens in one sample.
pub const CONTENT_TOKENS_PER_SAMPLE: usize = IMAGE_TOKENS_PER_SAMPLE + 2 + 2 + 4;
/// Group delimiters around image, state and action.
pub const DELIMITERS_PER_SAMPLE: usize = 6;
pub const TOKENS_PER_SAMPLE: usize = CONTENT_TOKENS_PER_SAMPLE + DELIMITERS_PER_SAMPLE;

#[derive(Debug, Error, PartialEq)]
pub enum TokenizeError {
    #[error("inconsistent range for {modality}: {detail}")]
    InconsistentRange { modality: Modality, detail: String },
    #[error("{modality} value {value} outside expressible range [{min}, {max}]")]
    OutOfRange {
        modality: Modality,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("{field} = {value} cannot be encoded: {reason}")]
    Field {
        field: &'static str,
        value: String,
        reason: String,
    },
    #[error("token id {id} is outside the vocabulary of {total}")]
    OutOfVocab { id: TokenId, total: usize },
    #[error("token id {id} is a reserved {modality} bin")]
    ReservedBin { id: TokenId, modality: Modality },
    #[error("truncated sample: expected {expected} tokens, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("unexpected token {found} at position {position}, expected {expected}")]
    Unexpected {
        position: usize,
        expected: String,
        found: TokenId,
    },
    #[error("image tokenizer produced {0} ids, expected 1024")]
    ImageLength(usize),
    #[error("image has zero area")]
    EmptyImage,
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {source}")]
    Token {
        line: usize,
        #[source]
        source: TokenizeError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Latitude,
    Longitude,
    Month,
    Year,
    Distance,
    Heading,
    DeltaMonth,
    DeltaYear,
}

impl Modality {
    pub const ALL: [Modality; 9] = [
        Modality::Image,
        Modality::Latitude,
        Modality::Longitude,
        Modality::Month,
        Modality::Year,
        Modality::Distance,
        Modality::Heading,
        Modality::DeltaMonth,
        Modality::DeltaYear,
    ];
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Modality::Image => "image",
            Modality::Latitude => "latitude",
            Modality::Longitude => "longitude",
            Modality::Month => "month",
            Modality::Year => "year",
            Modality::Distance => "distance",
            Modality::Heading => "heading",
            Modality::DeltaMonth => "delta_month",
            Modality::DeltaYear => "delta_year",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Special {
    SeqStart,
    SeqEnd,
    ImageStart,
    ImageEnd,
    StateStart,
    StateEnd,
    ActionStart,
    ActionEnd,
    Pad,
}

impl Special {
    pub const NAMED: [Special; 9] = [
        Special::SeqStart,
        Special::SeqEnd,
        Special::ImageStart,
        Special::ImageEnd,
        Special::StateStart,
        Special::StateEnd,
        Special::ActionStart,
        Special::ActionEnd,
        Special::Pad,
    ];

    fn index(self) -> usize {
        Special::NAMED.iter().position(|&s| s == self).unwrap()
    }
}

/// Range and precision for one modality before layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub modality: Modality,
    pub min: f64,
    pub max: f64,
    pub precision: f64,
    /// Explicit bin count; derived from the range when absent.
    pub bins: Option<usize>,
    /// Values wrap modulo `period` instead of clamping.
    pub period: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabConfig {
    pub modalities: Vec<ModalitySpec>,
    pub specials: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        let spec = |modality, min, max, precision, bins, period| ModalitySpec {
            modality,
            min,
            max,
            precision,
            bins,
            period,
        };
        VocabConfig {
            modalities: vec![
                spec(Modality::Image, 0.0, 8191.0, 1.0, Some(IMAGE_VOCAB), None),
                spec(Modality::Latitude, 37.50555, 37.57277, 1e-5, Some(6723), None),
                spec(Modality::Longitude, -122.34916, -122.249168, 1e-5, Some(10000), None),
                spec(Modality::Month, 1.0, 12.0, 1.0, Some(12), None),
                spec(Modality::Year, 2000.0, 2030.0, 1.0, Some(31), None),
                spec(Modality::Distance, 0.0, 50.0, 0.1, Some(501), None),
                spec(Modality::Heading, 0.0, 359.9, 0.1, Some(3601), Some(360.0)),
                spec(Modality::DeltaMonth, 0.0, 11.0, 1.0, Some(12), None),
                spec(Modality::DeltaYear, -30.0, 30.0, 1.0, Some(61), None),
            ],
            specials: 30,
        }
    }
}

impl VocabConfig {
    /// Default layout with the spatial ranges replaced.
    pub fn with_region(lat: (f64, f64), lon: (f64, f64)) -> Self {
        let mut cfg = VocabConfig::default();
        for m in &mut cfg.modalities {
            let range = match m.modality {
                Modality::Latitude => lat,
                Modality::Longitude => lon,
                _ => continue,
            };
            m.min = range.0;
            m.max = range.1;
            m.bins = None;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityLayout {
    pub modality: Modality,
    pub offset: usize,
    pub size: usize,
    pub min: f64,
    pub max: f64,
    pub precision: f64,
    /// Bins produced by encoding; the rest of `size` is reserved.
    pub reachable: usize,
    pub period: Option<f64>,
}

impl ModalityLayout {
    /// Value represented by bin `k`.
    pub fn center(&self, k: usize) -> f64 {
        self.min + k as f64 * self.precision
    }

    fn last_center(&self) -> f64 {
        self.center(self.reachable - 1)
    }

    fn contains(&self, id: TokenId) -> bool {
        (self.offset..self.offset + self.size).contains(&(id as usize))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialLayout {
    pub name: String,
    pub id: TokenId,
}

/// Immutable id layout. Also serves as the JSON vocab manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenVocab {
    pub total: usize,
    pub modalities: Vec<ModalityLayout>,
    pub special_offset: usize,
    pub special_count: usize,
    pub specials: Vec<SpecialLayout>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoded {
    Value(Modality, f64),
    Special(Special),
    Reserved,
}

pub fn build_vocab(cfg: &VocabConfig) -> Result<TokenVocab, TokenizeError> {
    if cfg.modalities.len() != Modality::ALL.len()
        || cfg.modalities.iter().zip(Modality::ALL).any(|(m, e)| m.modality != e)
    {
        let modality = cfg
            .modalities
            .iter()
            .zip(Modality::ALL)
            .find(|(m, e)| m.modality != *e)
            .map_or(Modality::Image, |(_, e)| e);
        return Err(TokenizeError::InconsistentRange {
            modality,
            detail: "modalities must be listed once each in sample order".into(),
        });
    }
    if cfg.specials < Special::NAMED.len() {
        return Err(TokenizeError::InconsistentRange {
            modality: Modality::Image,
            detail: format!("at least {} special tokens are required", Special::NAMED.len()),
        });
    }
    let mut offset = 0;
    let mut modalities = Vec::with_capacity(cfg.modalities.len());
    for m in &cfg.modalities {
        let bad = |detail: String| TokenizeError::InconsistentRange {
            modality: m.modality,
            detail,
        };
        if !(m.precision > 0.0 && m.min.is_finite() && m.max.is_finite() && m.min <= m.max) {
            return Err(bad(format!(
                "need finite min <= max and precision > 0, got [{}, {}] / {}",
                m.min, m.max, m.precision
            )));
        }
        // tolerance absorbs representation error in decimal ranges such as 1e-5 steps
        let derived = ((m.max - m.min) / m.precision + 1e-6).floor() as usize + 1;
        let size = m.bins.unwrap_or(derived);
        if size < derived || size > derived + 1 {
            return Err(bad(format!(
                "{size} bins does not fit range [{}, {}] at precision {} ({derived} bins)",
                m.min, m.max, m.precision
            )));
        }
        let reachable = match m.period {
            Some(period) => ((period / m.precision).round() as usize).min(size),
            None => size,
        };
        modalities.push(ModalityLayout {
            modality: m.modality,
            offset,
            size,
            min: m.min,
            max: m.max,
            precision: m.precision,
            reachable,
            period: m.period,
        });
        offset += size;
    }
    let special_offset = offset;
    let specials = (0..cfg.specials)
        .map(|i| SpecialLayout {
            name: Special::NAMED
                .get(i)
                .map(|s| serde_json::to_value(s).unwrap().as_str().unwrap().to_string())
                .unwrap_or_else(|| format!("reserved_{}", i - Special::NAMED.len())),
            id: (special_offset + i) as TokenId,
        })
        .collect();
    Ok(TokenVocab {
        total: special_offset + cfg.specials,
        modalities,
        special_offset,
        special_count: cfg.specials,
        specials,
    })
}

impl Default for TokenVocab {
    fn default() -> Self {
        build_vocab(&VocabConfig::default()).expect("default vocabulary is consistent")
    }
}

impl TokenVocab {
    pub fn layout(&self, modality: Modality) -> &ModalityLayout {
        &self.modalities[modality as usize]
    }

    pub fn special(&self, s: Special) -> TokenId {
        (self.special_offset + s.index()) as TokenId
    }

    pub fn modality_of(&self, id: TokenId) -> Option<Modality> {
        self.modalities.iter().find(|l| l.contains(id)).map(|l| l.modality)
    }

    /// Encodes a value into its bin: `round((value - min) / precision)`.
    pub fn encode_value(&self, modality: Modality, value: f64) -> Result<TokenId, TokenizeError> {
        let l = self.layout(modality);
        let half = 0.5 * l.precision;
        let (lo, hi) = match l.period {
            Some(period) => (l.min - half, l.min + period),
            None => (l.min - half, l.last_center() + half),
        };
        let above = if l.period.is_some() { value >= hi } else { value > hi };
        if !value.is_finite() || value < lo || above {
            return Err(TokenizeError::OutOfRange {
                modality,
                value,
                min: l.min,
                max: if l.period.is_some() { hi } else { l.max },
            });
        }
        let raw = ((value - l.min) / l.precision).round().max(0.0) as usize;
        let bin = if l.period.is_some() {
            raw % l.reachable
        } else {
            raw.min(l.reachable - 1)
        };
        Ok((l.offset + bin) as TokenId)
    }

    /// Bin center for a content id, or the special it names.
    pub fn decode_token(&self, id: TokenId) -> Result<Decoded, TokenizeError> {
        if id as usize >= self.total {
            return Err(TokenizeError::OutOfVocab { id, total: self.total });
        }
        if id as usize >= self.special_offset {
            let idx = id as usize - self.special_offset;
            return Ok(Special::NAMED.get(idx).map_or(Decoded::Reserved, |&s| Decoded::Special(s)));
        }
        let l = self.modalities.iter().find(|l| l.contains(id)).expect("content ids are covered");
        let bin = id as usize - l.offset;
        if bin >= l.reachable {
            return Err(TokenizeError::ReservedBin {
                id,
                modality: l.modality,
            });
        }
        Ok(Decoded::Value(l.modality, l.center(bin)))
    }

    pub fn decode_value(&self, modality: Modality, id: TokenId) -> Result<f64, TokenizeError> {
        match self.decode_token(id)? {
            Decoded::Value(m, v) if m == modality => Ok(v),
            _ => Err(TokenizeError::Unexpected {
                position: 0,
                expected: modality.to_string(),
                found: id,
            }),
        }
    }

    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocab serializes")
    }

    pub fn encode_sample(&self, s: &Sample) -> Result<Vec<TokenId>, TokenizeError> {
        let mut out = Vec::with_capacity(TOKENS_PER_SAMPLE);
        self.encode_sample_into(s, &mut out)?;
        Ok(out)
    }

    pub fn encode_sample_into(&self, s: &Sample, out: &mut Vec<TokenId>) -> Result<(), TokenizeError> {
        if s.image_tokens.len() != IMAGE_TOKENS_PER_SAMPLE {
            return Err(TokenizeError::ImageLength(s.image_tokens.len()));
        }
        let field = |name: &'static str, modality: Modality, value: f64| {
            self.encode_value(modality, value).map_err(|e| TokenizeError::Field {
                field: name,
                value: value.to_string(),
                reason: e.to_string(),
            })
        };
        let image = self.layout(Modality::Image);
        out.push(self.special(Special::ImageStart));
        for &t in &s.image_tokens {
            if t as usize >= image.size {
                return Err(TokenizeError::Field {
                    field: "image_tokens",
                    value: t.to_string(),
                    reason: format!("image ids must be below {}", image.size),
                });
            }
            out.push((image.offset + t as usize) as TokenId);
        }
        out.push(self.special(Special::ImageEnd));
        out.push(self.special(Special::StateStart));
        out.push(field("latitude", Modality::Latitude, s.state.pos.lat)?);
        out.push(field("longitude", Modality::Longitude, s.state.pos.lon)?);
        out.push(field("month", Modality::Month, s.state.month as f64)?);
        out.push(field("year", Modality::Year, s.state.year as f64)?);
        out.push(self.special(Special::StateEnd));
        out.push(self.special(Special::ActionStart));
        out.push(field("distance", Modality::Distance, s.action.distance)?);
        out.push(field("heading", Modality::Heading, s.action.heading)?);
        out.push(field("d_month", Modality::DeltaMonth, s.action.d_month as f64)?);
        out.push(field("d_year", Modality::DeltaYear, s.action.d_year as f64)?);
        out.push(self.special(Special::ActionEnd));
        Ok(())
    }

    /// Inverse of [`TokenVocab::encode_sample`] up to quantization.
    pub fn decode_sample(&self, tokens: &[TokenId]) -> Result<Sample, TokenizeError> {
        if tokens.len() != TOKENS_PER_SAMPLE {
            return Err(TokenizeError::Truncated {
                expected: TOKENS_PER_SAMPLE,
                found: tokens.len(),
            });
        }
        let mut pos = 0usize;
        let mut next = || {
            let t = tokens[pos];
            pos += 1;
            (pos - 1, t)
        };
        let expect_special = |(position, t): (usize, TokenId), s: Special| {
            if t == self.special(s) {
                Ok(())
            } else {
                Err(TokenizeError::Unexpected {
                    position,
                    expected: format!("{s:?}"),
                    found: t,
                })
            }
        };
        let value = |(position, t): (usize, TokenId), m: Modality| {
            self.decode_value(m, t).map_err(|_| TokenizeError::Unexpected {
                position,
                expected: m.to_string(),
                found: t,
            })
        };
        expect_special(next(), Special::ImageStart)?;
        let image = self.layout(Modality::Image);
        let mut image_tokens = Vec::with_capacity(IMAGE_TOKENS_PER_SAMPLE);
        for _ in 0..IMAGE_TOKENS_PER_SAMPLE {
            let (position, t) = next();
            if !image.contains(t) {
                return Err(TokenizeError::Unexpected {
                    position,
                    expected: "image".into(),
                    found: t,
                });
            }
            image_tokens.push((t as usize - image.offset) as u16);
        }
        expect_special(next(), Special::ImageEnd)?;
        expect_special(next(), Special::StateStart)?;
        let lat = value(next(), Modality::Latitude)?;
        let lon = value(next(), Modality::Longitude)?;
        let month = value(next(), Modality::Month)?;
        let year = value(next(), Modality::Year)?;
        expect_special(next(), Special::StateEnd)?;
        expect_special(next(), Special::ActionStart)?;
        let distance = value(next(), Modality::Distance)?;
        let heading = value(next(), Modality::Heading)?;
        let d_month = value(next(), Modality::DeltaMonth)?;
        let d_year = value(next(), Modality::DeltaYear)?;
        expect_special(next(), Special::ActionEnd)?;
        Ok(Sample {
            image_tokens,
            state: State {
                pos: GeoPoint { lat, lon },
                month: month.round() as u8,
                year: year.round() as u16,
            },
            action: Action {
                distance: round_to(distance, 0.1),
                heading: round_to(heading, 0.1),
                d_month: d_month.round() as u8,
                d_year: d_year.round() as i8,
            },
        })
    }

    /// `[seq_start] sample.. [seq_end]`.
    pub fn encode_sentence(&self, sentence: &VisualSentence) -> Result<Vec<TokenId>, TokenizeError> {
        let mut out = Vec::with_capacity(2 + sentence.samples.len() * TOKENS_PER_SAMPLE);
        out.push(self.special(Special::SeqStart));
        for s in &sentence.samples {
            self.encode_sample_into(s, &mut out)?;
        }
        out.push(self.special(Special::SeqEnd));
        Ok(out)
    }

    pub fn decode_sentence(&self, tokens: &[TokenId]) -> Result<Vec<Sample>, TokenizeError> {
        let (first, last) = match tokens {
            [first, .., last] => (*first, *last),
            _ => {
                return Err(TokenizeError::Truncated {
                    expected: 2,
                    found: tokens.len(),
                })
            }
        };
        if first != self.special(Special::SeqStart) {
            return Err(TokenizeError::Unexpected {
                position: 0,
                expected: "SeqStart".into(),
                found: first,
            });
        }
        if last != self.special(Special::SeqEnd) {
            return Err(TokenizeError::Unexpected {
                position: tokens.len() - 1,
                expected: "SeqEnd".into(),
                found: last,
            });
        }
        let body = &tokens[1..tokens.len() - 1];
        if body.len() % TOKENS_PER_SAMPLE != 0 {
            return Err(TokenizeError::Truncated {
                expected: body.len().div_ceil(TOKENS_PER_SAMPLE) * TOKENS_PER_SAMPLE,
                found: body.len(),
            });
        }
        body.chunks(TOKENS_PER_SAMPLE)
            .enumerate()
            .map(|(i, chunk)| {
                self.decode_sample(chunk).map_err(|e| match e {
                    TokenizeError::Unexpected {
                        position,
                        expected,
                        found,
                    } => TokenizeError::Unexpected {
                        position: 1 + i * TOKENS_PER_SAMPLE + position,
                        expected,
                        found,
                    },
                    other => other,
                })
            })
            .collect()
    }
}

pub(crate) fn round_to(v: f64, step: f64) -> f64 {
    let r = (v / step).round() * step;
    // trim binary noise, e.g. 7.500000000000001
    (r * 1e9).round() / 1e9
}

/// Writes one JSON integer array per line.
pub fn write_token_lines<'a, W, I>(lines: I, vocab: &TokenVocab, sink: &mut W) -> Result<usize, JsonlError>
where
    W: Write,
    I: IntoIterator<Item = &'a [TokenId]>,
{
    let mut n = 0;
    for (i, line) in lines.into_iter().enumerate() {
        if let Some(&id) = line.iter().find(|&&id| id as usize >= vocab.total) {
            return Err(JsonlError::Token {
                line: i + 1,
                source: TokenizeError::OutOfVocab { id, total: vocab.total },
            });
        }
        serde_json::to_writer(&mut *sink, line).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
        n += 1;
    }
    Ok(n)
}

pub fn emit_jsonl<W: Write>(sentences: &[VisualSentence], vocab: &TokenVocab, sink: &mut W) -> Result<usize, JsonlError> {
    let mut encoded = Vec::with_capacity(sentences.len());
    for (i, s) in sentences.iter().enumerate() {
        encoded.push(
            vocab
                .encode_sentence(s)
                .map_err(|source| JsonlError::Token { line: i + 1, source })?,
        );
    }
    write_token_lines(encoded.iter().map(Vec::as_slice), vocab, sink)
}

/// Reads token lines written by [`emit_jsonl`]; each must be framed by the
/// sequence start and end specials.
pub fn read_jsonl<R: BufRead>(source: R, vocab: &TokenVocab) -> Result<Vec<Vec<TokenId>>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let ids: Vec<TokenId> = serde_json::from_str(&line).map_err(|e| JsonlError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= vocab.total) {
            return Err(JsonlError::Token {
                line: line_no,
                source: TokenizeError::OutOfVocab { id, total: vocab.total },
            });
        }
        if ids.first() != Some(&vocab.special(Special::SeqStart)) || ids.last() != Some(&vocab.special(Special::SeqEnd))
        {
            return Err(JsonlError::Malformed {
                line: line_no,
                message: "sentence must start with the sequence-start id and end with sequence-end".into(),
            });
        }
        out.push(ids);
    }
    Ok(out)
}

/// Maps an image to exactly 1024 ids in `[0, 8192)`.
pub trait ImageTokenizer: Send + Sync {
    fn tokenize(&self, image: &RgbImage) -> Result<Vec<u16>, TokenizeError>;
}

/// Deterministic placeholder for a learned image tokenizer: the image is split
/// into a 32×32 grid and each cell's mean luminance bucket is hashed together
/// with the cell index.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubTokenizer;

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl ImageTokenizer for StubTokenizer {
    fn tokenize(&self, image: &RgbImage) -> Result<Vec<u16>, TokenizeError> {
        const GRID: u32 = 32;
        let (w, h) = image.dimensions();
        if w == 0 || h == 0 {
            return Err(TokenizeError::EmptyImage);
        }
        let span = |i: u32, n: u32| {
            let lo = i * n / GRID;
            let hi = ((i + 1) * n / GRID).max(lo + 1).min(n);
            (lo.min(n - 1), hi)
        };
        let mut out = Vec::with_capacity(IMAGE_TOKENS_PER_SAMPLE);
        for gy in 0..GRID {
            let (y0, y1) = span(gy, h);
            for gx in 0..GRID {
                let (x0, x1) = span(gx, w);
                let mut sum = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let [r, g, b] = image.get_pixel(x, y).0;
                        sum += 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
                    }
                }
                let mean = sum / ((y1 - y0) * (x1 - x0)) as f64;
                let bucket = (mean.round() as u64).min(255);
                let cell = (gy * GRID + gx) as u64;
                out.push((splitmix64(cell << 8 | bucket) % IMAGE_VOCAB as u64) as u16);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panograph::NodeId;
    use crate::seqgen::{Provenance, SentenceKind};

    fn vocab() -> TokenVocab {
        TokenVocab::default()
    }

    fn sample(lat: f64, lon: f64) -> Sample {
        Sample {
            image_tokens: (0..1024).map(|i| (i * 7 % 8192) as u16).collect(),
            state: State {
                pos: GeoPoint { lat, lon },
                month: 9,
                year: 2014,
            },
            action: Action {
                distance: 7.5,
                heading: 321.0,
                d_month: 3,
                d_year: -1,
            },
        }
    }

    #[test]
    fn default_vocab_reproduces_table() {
        let v = vocab();
        let sizes: Vec<usize> = v.modalities.iter().map(|l| l.size).collect();
        assert_eq!(sizes, [8192, 6723, 10000, 12, 31, 501, 3601, 12, 61]);
        assert_eq!(sizes.iter().sum::<usize>(), 29133);
        assert_eq!(v.special_count, 30);
        assert_eq!(v.total, 29163);
    }

    #[test]
    fn inconsistent_range_names_modality() {
        let mut cfg = VocabConfig::default();
        cfg.modalities[5].bins = Some(400);
        assert!(matches!(
            build_vocab(&cfg),
            Err(TokenizeError::InconsistentRange {
                modality: Modality::Distance,
                ..
            })
        ));
    }

    #[test]
    fn latitude_bins() {
        let v = vocab();
        let off = v.layout(Modality::Latitude).offset as u32;
        assert_eq!(v.encode_value(Modality::Latitude, 37.50555).unwrap() - off, 0);
        assert_eq!(v.encode_value(Modality::Latitude, 37.57277).unwrap() - off, 6722);
        assert_eq!(v.encode_value(Modality::Latitude, 37.53916).unwrap() - off, 3361);
        assert!(v.encode_value(Modality::Latitude, 37.6).is_err());
    }

    #[test]
    fn heading_and_distance_endpoints() {
        let v = vocab();
        let h = v.layout(Modality::Heading).offset as u32;
        let d = v.layout(Modality::Distance).offset as u32;
        assert_eq!(v.encode_value(Modality::Heading, 0.0).unwrap(), h);
        assert_eq!(v.encode_value(Modality::Heading, 359.9).unwrap(), h + 3599);
        assert_eq!(v.encode_value(Modality::Heading, 359.97).unwrap(), h);
        assert_eq!(v.encode_value(Modality::Distance, 50.0).unwrap(), d + 500);
        assert!(v.encode_value(Modality::Distance, 50.1).is_err());
        assert!(matches!(
            v.decode_token(h + 3600),
            Err(TokenizeError::ReservedBin { .. })
        ));
    }

    #[test]
    fn every_id_has_one_owner() {
        let v = vocab();
        for id in 0..v.total as u32 {
            let owners = v.modalities.iter().filter(|l| l.contains(id)).count()
                + usize::from(id as usize >= v.special_offset);
            assert_eq!(owners, 1, "id {id}");
        }
    }

    #[test]
    fn sample_layout_and_round_trip() {
        let v = vocab();
        let s = sample(37.53916, -122.3);
        let t = v.encode_sample(&s).unwrap();
        assert_eq!(t.len(), 1038);
        let content = t.iter().filter(|&&id| (id as usize) < v.special_offset).count();
        assert_eq!(content, CONTENT_TOKENS_PER_SAMPLE);
        let back = v.decode_sample(&t).unwrap();
        assert_eq!(back.image_tokens, s.image_tokens);
        assert!((back.state.pos.lat - s.state.pos.lat).abs() <= 0.5e-5 + 1e-12);
        assert_eq!(back.action, s.action);
    }

    #[test]
    fn truncated_sample_is_structured_error() {
        let v = vocab();
        let t = v.encode_sample(&sample(37.53, -122.3)).unwrap();
        assert_eq!(
            v.decode_sample(&t[..500]),
            Err(TokenizeError::Truncated {
                expected: 1038,
                found: 500
            })
        );
        let mut swapped = t.clone();
        swapped.swap(1027, 1028);
        assert!(matches!(v.decode_sample(&swapped), Err(TokenizeError::Unexpected { .. })));
    }

    #[test]
    fn out_of_range_field_is_named() {
        let v = vocab();
        let mut s = sample(37.53, -122.3);
        s.state.year = 1999;
        match v.encode_sample(&s) {
            Err(TokenizeError::Field { field, .. }) => assert_eq!(field, "year"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn jsonl_empty_and_errors() {
        let v = vocab();
        let mut buf = Vec::new();
        assert_eq!(emit_jsonl(&[], &v, &mut buf).unwrap(), 0);
        assert!(buf.is_empty());
        assert!(read_jsonl(&b""[..], &v).unwrap().is_empty());

        let start = v.special(Special::SeqStart);
        let end = v.special(Special::SeqEnd);
        let bad = format!("[{start},{end}]\n[{start},\n");
        match read_jsonl(bad.as_bytes(), &v) {
            Err(JsonlError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let oov = format!("[{start},99999,{end}]\n");
        assert!(matches!(
            read_jsonl(oov.as_bytes(), &v),
            Err(JsonlError::Token { line: 1, .. })
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let v = vocab();
        let sentence = VisualSentence {
            samples: vec![sample(37.53, -122.3), sample(37.5301, -122.3)],
            provenance: Provenance {
                origin: NodeId(1),
                path: vec![NodeId(1), NodeId(2)],
                kind: SentenceKind::Dfs,
            },
        };
        let mut buf = Vec::new();
        emit_jsonl(std::slice::from_ref(&sentence), &v, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&format!("[{},", v.special(Special::SeqStart))));
        assert!(text.ends_with(&format!(",{}]\n", v.special(Special::SeqEnd))));
        let lines = read_jsonl(buf.as_slice(), &v).unwrap();
        assert_eq!(lines, vec![v.encode_sentence(&sentence).unwrap()]);
        assert_eq!(v.decode_sentence(&lines[0]).unwrap().len(), 2);
    }

    #[test]
    fn stub_tokenizer_is_deterministic_and_shaped() {
        let img = RgbImage::from_fn(100, 50, |x, y| image::Rgb([(x * 2) as u8, (y * 5) as u8, 7]));
        let a = StubTokenizer.tokenize(&img).unwrap();
        let b = StubTokenizer.tokenize(&img).unwrap();
        assert_eq!(a.len(), 1024);
        assert_eq!(a, b);
        assert!(a.iter().all(|&t| (t as usize) < IMAGE_VOCAB));
        let tiny = RgbImage::from_pixel(3, 3, image::Rgb([1, 2, 3]));
        assert_eq!(StubTokenizer.tokenize(&tiny).unwrap().len(), 1024);
        assert_eq!(
            StubTokenizer.tokenize(&RgbImage::new(0, 0)),
            Err(TokenizeError::EmptyImage)
        );
    }
}
