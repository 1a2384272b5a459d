use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::DateTime;

use super::CheckIn;
use crate::error::DataError;

/// Line formats accepted by [`parse_checkins`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    /// `user_id \t timestamp \t lat \t lon \t poi_id`
    CanonicalTsv,
    /// SNAP Gowalla dump: `user \t 2010-10-19T23:55:27Z \t lat \t lon \t location_id`
    GowallaRaw,
    /// Foursquare NYC/TKY dump: `user \t venue \t cat_id \t cat_name \t lat \t lon \t tz_offset \t "Tue Apr 03 18:00:09 +0000 2012"`
    FoursquareRaw,
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical_tsv" | "canonical" | "tsv" => Ok(Self::CanonicalTsv),
            "gowalla_raw" | "gowalla" => Ok(Self::GowallaRaw),
            "foursquare_raw" | "foursquare" => Ok(Self::FoursquareRaw),
            other => Err(format!("unknown input format {other:?}")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParseOutcome {
    pub checkins: Vec<CheckIn>,
    pub malformed: usize,
    /// 1-based number of the first malformed line.
    pub first_malformed_line: Option<usize>,
}

/// Parses check-in lines, skipping malformed ones.
///
/// Blank lines are ignored. More than 10% malformed lines is an error.
pub fn parse_checkins<R: BufRead>(
    source: R,
    format: InputFormat,
) -> Result<ParseOutcome, DataError> {
    let mut out = ParseOutcome::default();
    let mut total = 0usize;
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let parsed = match format {
            InputFormat::CanonicalTsv => parse_canonical(line),
            InputFormat::GowallaRaw => parse_gowalla(line),
            InputFormat::FoursquareRaw => parse_foursquare(line),
        }
        .filter(|c| c.coordinates_valid() && c.timestamp > 0);
        match parsed {
            Some(c) => out.checkins.push(c),
            None => {
                out.malformed += 1;
                out.first_malformed_line.get_or_insert(idx + 1);
            }
        }
    }
    if out.malformed * 10 > total {
        return Err(DataError::Format {
            first_line: out.first_malformed_line.unwrap_or(0),
            malformed: out.malformed,
            total,
        });
    }
    Ok(out)
}

fn non_empty(s: &str) -> Option<String> {
    let s = s.trim();
    (!s.is_empty()).then(|| s.to_string())
}

fn parse_canonical(line: &str) -> Option<CheckIn> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 5 {
        return None;
    }
    Some(CheckIn {
        user_id: non_empty(f[0])?,
        timestamp: f[1].trim().parse().ok()?,
        lat: f[2].trim().parse().ok()?,
        lon: f[3].trim().parse().ok()?,
        poi_id: non_empty(f[4])?,
    })
}

fn parse_gowalla(line: &str) -> Option<CheckIn> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 5 {
        return None;
    }
    Some(CheckIn {
        user_id: non_empty(f[0])?,
        timestamp: DateTime::parse_from_rfc3339(f[1].trim()).ok()?.timestamp(),
        lat: f[2].trim().parse().ok()?,
        lon: f[3].trim().parse().ok()?,
        poi_id: non_empty(f[4])?,
    })
}

fn parse_foursquare(line: &str) -> Option<CheckIn> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 8 {
        return None;
    }
    let ts = DateTime::parse_from_str(f[7].trim(), "%a %b %d %H:%M:%S %z %Y").ok()?;
    Some(CheckIn {
        user_id: non_empty(f[0])?,
        timestamp: ts.timestamp(),
        lat: f[4].trim().parse().ok()?,
        lon: f[5].trim().parse().ok()?,
        poi_id: non_empty(f[1])?,
    })
}

/// Writes check-ins in the canonical TSV format (coordinates with 6 fraction digits).
pub fn write_canonical<W: Write>(mut out: W, checkins: &[CheckIn]) -> std::io::Result<()> {
    for c in checkins {
        writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{}",
            c.user_id, c.timestamp, c.lat, c.lon, c.poi_id
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, format: InputFormat) -> Result<ParseOutcome, DataError> {
        parse_checkins(text.as_bytes(), format)
    }

    #[test]
    fn canonical_line_maps_fields() {
        let out = parse(
            "u7\t1254330821\t40.7440\t-73.9830\tp12\n",
            InputFormat::CanonicalTsv,
        )
        .unwrap();
        assert_eq!(
            out.checkins,
            vec![CheckIn {
                user_id: "u7".into(),
                timestamp: 1254330821,
                lat: 40.7440,
                lon: -73.9830,
                poi_id: "p12".into(),
            }]
        );
        assert_eq!(out.malformed, 0);
    }

    #[test]
    fn empty_input() {
        let out = parse("", InputFormat::CanonicalTsv).unwrap();
        assert!(out.checkins.is_empty());
        assert_eq!(out.malformed, 0);
    }

    #[test]
    fn out_of_range_latitude_is_malformed() {
        let mut text = String::new();
        for i in 0..10 {
            text.push_str(&format!("u{i}\t100\t1.0\t2.0\tp\n"));
        }
        text.push_str("bad\t100\t95.0\t2.0\tp\n");
        let out = parse(&text, InputFormat::CanonicalTsv).unwrap();
        assert_eq!(out.checkins.len(), 10);
        assert_eq!(out.malformed, 1);
        assert_eq!(out.first_malformed_line, Some(11));
    }

    #[test]
    fn too_many_malformed_lines() {
        let text = "u\t100\t1.0\t2.0\tp\nnope\nu\t100\t1.0\t2.0\tp\n";
        match parse(text, InputFormat::CanonicalTsv) {
            Err(DataError::Format {
                first_line,
                malformed,
                total,
            }) => {
                assert_eq!((first_line, malformed, total), (2, 1, 3));
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn non_positive_timestamp_rejected() {
        let text = "u\t0\t1.0\t2.0\tp\n";
        assert!(parse(text, InputFormat::CanonicalTsv).is_err());
    }

    #[test]
    fn gowalla_raw() {
        let out = parse(
            "0\t2010-10-19T23:55:27Z\t30.2359091167\t-97.7951395833\t22847\n",
            InputFormat::GowallaRaw,
        )
        .unwrap();
        let c = &out.checkins[0];
        assert_eq!(c.user_id, "0");
        assert_eq!(c.timestamp, 1287532527);
        assert_eq!(c.poi_id, "22847");
    }

    #[test]
    fn foursquare_raw() {
        let line = "470\t49bbd6c0f964a520f4531fe3\t4bf58dd8d48988d127951735\tArts & Crafts Store\t40.719810375488535\t-74.00258103213994\t-240\tTue Apr 03 18:00:09 +0000 2012\n";
        let out = parse(line, InputFormat::FoursquareRaw).unwrap();
        let c = &out.checkins[0];
        assert_eq!(c.user_id, "470");
        assert_eq!(c.poi_id, "49bbd6c0f964a520f4531fe3");
        assert_eq!(c.timestamp, 1333476009);
    }

    #[test]
    fn canonical_writer_round_trips() {
        let c = CheckIn {
            user_id: "a".into(),
            timestamp: 5,
            lat: 1.25,
            lon: -3.5,
            poi_id: "x".into(),
        };
        let mut buf = Vec::new();
        write_canonical(&mut buf, std::slice::from_ref(&c)).unwrap();
        let back = parse_checkins(buf.as_slice(), InputFormat::CanonicalTsv).unwrap();
        assert_eq!(back.checkins, vec![c]);
    }
}
