//! Spatio-temporal point features: 7-character geohash cells, half-hour
//! slots, the weekday/weekend class, and the vocabularies that map them to
//! embedding rows.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};

use chrono::{DateTime, Datelike, Timelike, Weekday};

use crate::data::CheckIn;
use crate::error::EncodingError;
use crate::tensor::{axpy, Mat};

const GEOHASH_ALPHABET: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";
pub const GEOHASH_LEN: usize = 7;
pub const SLOTS_PER_DAY: usize = 48;

/// Row 0 of every embedding table is reserved for out-of-vocabulary keys.
pub const UNK_INDEX: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GeoCell([u8; GEOHASH_LEN]);

impl GeoCell {
    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("geohash alphabet is ASCII")
    }

    /// `(lat_min, lat_max, lon_min, lon_max)` of the cell.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let (mut lat, mut lon) = ((-90.0, 90.0), (-180.0, 180.0));
        let mut even = true;
        for &ch in &self.0 {
            let v = GEOHASH_ALPHABET
                .iter()
                .position(|&a| a == ch)
                .expect("valid cell");
            for bit in (0..5).rev() {
                let on = (v >> bit) & 1 == 1;
                let range: &mut (f64, f64) = if even { &mut lon } else { &mut lat };
                let mid = (range.0 + range.1) / 2.0;
                if on {
                    range.0 = mid;
                } else {
                    range.1 = mid;
                }
                even = !even;
            }
        }
        (lat.0, lat.1, lon.0, lon.1)
    }
}

impl fmt::Display for GeoCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Standard geohash (longitude bit first), truncated to 7 characters.
pub fn geohash7(lat: f64, lon: f64) -> Result<GeoCell, EncodingError> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(EncodingError::CoordinateOutOfRange { lat, lon });
    }
    let (mut lat_r, mut lon_r) = ((-90.0f64, 90.0f64), (-180.0f64, 180.0f64));
    let mut code = [0u8; GEOHASH_LEN];
    let mut even = true;
    for ch in code.iter_mut() {
        let mut v = 0usize;
        for _ in 0..5 {
            let (range, x) = if even {
                (&mut lon_r, lon)
            } else {
                (&mut lat_r, lat)
            };
            let mid = (range.0 + range.1) / 2.0;
            v <<= 1;
            if x >= mid {
                v |= 1;
                range.0 = mid;
            } else {
                range.1 = mid;
            }
            even = !even;
        }
        *ch = GEOHASH_ALPHABET[v];
    }
    Ok(GeoCell(code))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DayClass {
    Weekday,
    Weekend,
}

impl DayClass {
    pub fn index(self) -> usize {
        match self {
            DayClass::Weekday => 1,
            DayClass::Weekend => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DayClass::Weekday => "weekday",
            DayClass::Weekend => "weekend",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeFeatures {
    /// Half-hour slot of the day, `0..48`.
    pub slot: usize,
    pub day_class: DayClass,
}

/// Slot and day class of a timestamp read as local wall-clock time.
///
/// `utc_offset_secs` is added before the calendar breakdown; pass 0 when the
/// timestamps are already local.
pub fn time_features(timestamp: i64, utc_offset_secs: i64) -> TimeFeatures {
    let dt = DateTime::from_timestamp(timestamp + utc_offset_secs, 0)
        .expect("timestamp within chrono range");
    let minutes = dt.hour() as usize * 60 + dt.minute() as usize;
    let day_class = match dt.weekday() {
        Weekday::Sat | Weekday::Sun => DayClass::Weekend,
        _ => DayClass::Weekday,
    };
    TimeFeatures {
        slot: minutes / 30,
        day_class,
    }
}

/// Token → row index map. Index 0 is the UNK row; known tokens start at 1.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    index: BTreeMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary over the sorted, deduplicated tokens.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut sorted: Vec<String> = tokens.into_iter().map(Into::into).collect();
        sorted.sort();
        sorted.dedup();
        let index = sorted
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, i + 1))
            .collect();
        Self { index }
    }

    pub fn slots() -> Self {
        Self {
            index: (0..SLOTS_PER_DAY).map(|s| (s.to_string(), s + 1)).collect(),
        }
    }

    pub fn days() -> Self {
        Self {
            index: [DayClass::Weekday, DayClass::Weekend]
                .into_iter()
                .map(|d| (d.as_str().to_string(), d.index()))
                .collect(),
        }
    }

    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    /// Number of known tokens (the table has one more row for UNK).
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn table_rows(&self) -> usize {
        self.index.len() + 1
    }

    /// Known tokens with their indices, in token order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.index.iter().map(|(t, &i)| (t.as_str(), i))
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut rows: Vec<(&String, &usize)> = self.index.iter().collect();
        rows.sort_by_key(|&(_, &i)| i);
        for (token, idx) in rows {
            writeln!(out, "{token}\t{idx}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> io::Result<Self> {
        let mut index = BTreeMap::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (token, idx) = line
                .split_once('\t')
                .and_then(|(t, i)| Some((t.to_string(), i.parse::<usize>().ok()?)))
                .ok_or_else(|| {
                    io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("bad vocab line {}", n + 1),
                    )
                })?;
            index.insert(token, idx);
        }
        Ok(Self { index })
    }
}

/// Embedding-row indices of one check-in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PointIndices {
    pub geo: usize,
    pub slot: usize,
    pub day: usize,
}

/// Maps check-ins to embedding-row indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointEncoder {
    pub geo_vocab: Vocab,
    pub utc_offset_secs: i64,
}

impl PointEncoder {
    /// Geo vocabulary over every cell present in `checkins`.
    pub fn fit(checkins: &[CheckIn], utc_offset_secs: i64) -> Result<Self, EncodingError> {
        let cells = checkins
            .iter()
            .map(|c| geohash7(c.lat, c.lon).map(|g| g.as_str().to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            geo_vocab: Vocab::from_tokens(cells),
            utc_offset_secs,
        })
    }

    pub fn encode(&self, c: &CheckIn) -> Result<PointIndices, EncodingError> {
        let cell = geohash7(c.lat, c.lon)?;
        let tf = time_features(c.timestamp, self.utc_offset_secs);
        Ok(PointIndices {
            geo: self.geo_vocab.get(cell.as_str()),
            slot: tf.slot + 1,
            day: tf.day_class.index(),
        })
    }
}

fn checked_row(table: &Mat, index: usize, dim: usize) -> Result<&[f64], EncodingError> {
    if table.cols() != dim {
        return Err(EncodingError::DimensionMismatch {
            expected: dim,
            found: table.cols(),
        });
    }
    if index >= table.rows() {
        return Err(EncodingError::IndexOutOfRange {
            index,
            rows: table.rows(),
        });
    }
    Ok(table.row(index))
}

/// `g_e + t_h + t_w` for one point.
pub fn embed_point(
    p: PointIndices,
    geo: &Mat,
    slot: &Mat,
    day: &Mat,
) -> Result<Vec<f64>, EncodingError> {
    let dim = geo.cols();
    let mut out = vec![0.0; dim];
    axpy(1.0, checked_row(geo, p.geo, dim)?, &mut out);
    axpy(1.0, checked_row(slot, p.slot, dim)?, &mut out);
    axpy(1.0, checked_row(day, p.day, dim)?, &mut out);
    Ok(out)
}

/// Stacks the point embeddings of a trajectory into a `|T| × d` matrix, in order.
pub fn encode_sequence(
    points: &[PointIndices],
    geo: &Mat,
    slot: &Mat,
    day: &Mat,
) -> Result<Mat, EncodingError> {
    let dim = geo.cols();
    let mut out = Mat::zeros(points.len(), dim);
    for (t, &p) in points.iter().enumerate() {
        out.row_mut(t)
            .copy_from_slice(&embed_point(p, geo, slot, day)?);
    }
    Ok(out)
}
