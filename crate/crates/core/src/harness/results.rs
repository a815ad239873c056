//! Result files. Every CSV starts with a versioned `#` comment line naming
//! its schema; the column set of each schema is fixed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::{CurvePoint, LearningCurve};

pub const CURVE_HEADER: &str = "# carol-kit results v1";
pub const SK_HEADER: &str = "# carol-kit sk v1";
pub const SIMILARITY_HEADER: &str = "# carol-kit similarity v1";
pub const REPORT_CURVE_HEADER: &str = "# carol-kit report curve v1";
pub const SUMMARY_HEADER: &str = "# carol-kit summary v1";

fn write_rows<T: Serialize>(header: &str, rows: &[T]) -> Vec<u8> {
    let mut out = format!("{header}\n").into_bytes();
    let mut w = csv::Writer::from_writer(&mut out);
    for r in rows {
        w.serialize(r).expect("in-memory CSV writes cannot fail");
    }
    w.flush().expect("in-memory CSV writes cannot fail");
    drop(w);
    out
}

fn read_rows<T: for<'de> Deserialize<'de>>(
    header: &str,
    bytes: &[u8],
    origin: &str,
) -> Result<Vec<T>> {
    let bad = |reason: String| Error::Format {
        path: origin.into(),
        reason,
    };
    let text = std::str::from_utf8(bytes).map_err(|e| bad(e.to_string()))?;
    let body = text
        .strip_prefix(header)
        .and_then(|rest| rest.strip_prefix('\n'))
        .ok_or_else(|| bad(format!("missing `{header}` header line")))?;
    csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| bad(e.to_string()))
}

pub fn curve_to_csv(curve: &LearningCurve) -> Vec<u8> {
    write_rows(CURVE_HEADER, curve)
}

pub fn curve_from_csv(bytes: &[u8], origin: &str) -> Result<LearningCurve> {
    read_rows::<CurvePoint>(CURVE_HEADER, bytes, origin)
}

/// Direct evaluation of one source on the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkRow {
    pub source: String,
    pub mean_return: f64,
    pub std_return: f64,
}

pub fn sk_to_csv(rows: &[SkRow]) -> Vec<u8> {
    write_rows(SK_HEADER, rows)
}

pub fn sk_from_csv(bytes: &[u8], origin: &str) -> Result<Vec<SkRow>> {
    read_rows(SK_HEADER, bytes, origin)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub source: String,
    /// Summed squared prediction error over the probe.
    pub score: f64,
    pub weight: f64,
}

pub fn similarity_to_csv(rows: &[SimilarityRow]) -> Vec<u8> {
    write_rows(SIMILARITY_HEADER, rows)
}

pub fn similarity_from_csv(bytes: &[u8], origin: &str) -> Result<Vec<SimilarityRow>> {
    read_rows(SIMILARITY_HEADER, bytes, origin)
}

/// Per-evaluation-point aggregate over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub iteration: usize,
    pub episodes_seen: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub seeds: usize,
}

pub fn aggregate_to_csv(rows: &[AggregateRow]) -> Vec<u8> {
    write_rows(REPORT_CURVE_HEADER, rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// Method name, or `sk:<source>` for a source evaluated directly.
    pub entry: String,
    pub median_final: f64,
    pub q1_final: f64,
    pub q3_final: f64,
    pub seeds: usize,
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> Vec<u8> {
    write_rows(SUMMARY_HEADER, rows)
}

pub fn summary_from_csv(bytes: &[u8], origin: &str) -> Result<Vec<SummaryRow>> {
    read_rows(SUMMARY_HEADER, bytes, origin)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve() -> LearningCurve {
        vec![
            CurvePoint {
                iteration: 0,
                episodes_seen: 0,
                mean_return: -3.5,
                std_return: 1.25,
            },
            CurvePoint {
                iteration: 10,
                episodes_seen: 40,
                mean_return: 0.1 + 0.2,
                std_return: 0.0,
            },
        ]
    }

    #[test]
    fn curve_layout_is_fixed() {
        let text = String::from_utf8(curve_to_csv(&curve())).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CURVE_HEADER));
        assert_eq!(
            lines.next(),
            Some("iteration,episodes_seen,mean_return,std_return")
        );
        assert_eq!(lines.next(), Some("0,0,-3.5,1.25"));
    }

    #[test]
    fn curve_roundtrip_is_exact() {
        let c = curve();
        assert_eq!(curve_from_csv(&curve_to_csv(&c), "x").unwrap(), c);
    }

    #[test]
    fn missing_header_is_a_format_error() {
        let err = curve_from_csv(b"iteration,episodes_seen,mean_return,std_return\n", "f.csv")
            .unwrap_err();
        assert_eq!(err.kind(), "format");
    }

    #[test]
    fn sk_and_similarity_roundtrip() {
        let sk = vec![SkRow {
            source: "a".into(),
            mean_return: 1.0,
            std_return: 0.5,
        }];
        assert_eq!(sk_from_csv(&sk_to_csv(&sk), "x").unwrap(), sk);
        let sim = vec![SimilarityRow {
            source: "a".into(),
            score: 3.0,
            weight: 1.0,
        }];
        assert_eq!(
            similarity_from_csv(&similarity_to_csv(&sim), "x").unwrap(),
            sim
        );
    }
}
