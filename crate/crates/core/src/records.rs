//! Text files of scored regions and per-frame timings.
//!
//! A region file holds one `frame_id x y w h score` record per line, fields
//! separated by tabs. Box fields use the shortest exact decimal form, scores
//! 6 decimals. Records are sorted by frame id, then by descending score.
//! Timing files hold `frame_id seconds` lines. Lines starting with `#` are
//! comments in both.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::post_learning::RegionRecord;
use crate::proposal::detection_order;
use crate::detector::Detection;

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.starts_with('#') || id.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidConfig(format!("frame id {id:?} cannot be written to a record file")));
    }
    Ok(())
}

fn write_err(e: std::io::Error) -> Error {
    Error::io("<records>", e)
}

/// Sorts by frame id, then by descending score with a geometric tie-break.
pub fn sort_records(records: &mut [RegionRecord]) {
    records.sort_by(|a, b| {
        a.frame_id.cmp(&b.frame_id).then_with(|| {
            detection_order(
                &Detection {
                    bbox: a.bbox,
                    score: a.score,
                },
                &Detection {
                    bbox: b.bbox,
                    score: b.score,
                },
            )
        })
    });
}

/// Writes `header` lines as comments, then the sorted records.
pub fn write_records(out: &mut dyn Write, header: &[String], records: &[RegionRecord]) -> Result<()> {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    for h in header {
        writeln!(out, "# {h}").map_err(write_err)?;
    }
    for r in &sorted {
        check_id(&r.frame_id)?;
        let [x, y, w, h] = r.bbox.to_array();
        writeln!(out, "{}\t{x}\t{y}\t{w}\t{h}\t{:.6}", r.frame_id, r.score).map_err(write_err)?;
    }
    Ok(())
}

fn parse_f64(field: &str, name: &str, line: usize) -> Result<f64> {
    field.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{name} `{field}` is not a number"),
    })
}

pub fn read_records(input: &mut dyn BufRead) -> Result<Vec<RegionRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<records>", e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 6 tab-separated fields, found {}", fields.len()),
            });
        }
        let x = parse_f64(fields[1], "x", line_no)?;
        let y = parse_f64(fields[2], "y", line_no)?;
        let w = parse_f64(fields[3], "w", line_no)?;
        let h = parse_f64(fields[4], "h", line_no)?;
        let score = parse_f64(fields[5], "score", line_no)?;
        let bbox = BoundingBox::new(x, y, w, h).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("score {score} outside [0, 1]"),
            });
        }
        out.push(RegionRecord {
            frame_id: fields[0].to_string(),
            bbox,
            score,
        });
    }
    Ok(out)
}

/// Per-frame detection time in seconds, in frame order.
pub fn write_timings(out: &mut dyn Write, header: &[String], timings: &[(String, f64)]) -> Result<()> {
    for h in header {
        writeln!(out, "# {h}").map_err(write_err)?;
    }
    for (id, t) in timings {
        check_id(id)?;
        writeln!(out, "{id}\t{t:.9}").map_err(write_err)?;
    }
    Ok(())
}

pub fn read_timings(input: &mut dyn BufRead) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<timings>", e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, t) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: line_no,
            msg: "expected `frame_id<TAB>seconds`".into(),
        })?;
        let t = parse_f64(t, "seconds", line_no)?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("invalid time {t}"),
            });
        }
        out.push((id.to_string(), t));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(id: &str, x: f64, score: f64) -> RegionRecord {
        RegionRecord {
            frame_id: id.into(),
            bbox: BoundingBox::new(x, 2.0, 3.0, 4.0).unwrap(),
            score,
        }
    }

    fn round_trip(records: &[RegionRecord]) -> (String, Vec<RegionRecord>) {
        let mut buf = Vec::new();
        write_records(&mut buf, &["polypkit test".into()], records).unwrap();
        let back = read_records(&mut buf.as_slice()).unwrap();
        (String::from_utf8(buf).unwrap(), back)
    }

    #[test]
    fn empty_round_trip() {
        let mut buf = Vec::new();
        write_records(&mut buf, &[], &[]).unwrap();
        assert!(buf.is_empty());
        assert!(read_records(&mut buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn sorted_by_frame_then_score() {
        let (text, back) = round_trip(&[rec("b", 1.0, 0.5), rec("a", 1.0, 0.2), rec("b", 2.0, 0.9)]);
        let order: Vec<(&str, f64)> = back.iter().map(|r| (r.frame_id.as_str(), r.score)).collect();
        assert_eq!(order, [("a", 0.2), ("b", 0.9), ("b", 0.5)]);
        assert!(text.starts_with("# polypkit test\na\t1\t2\t3\t4\t0.200000\n"));
    }

    #[test]
    fn malformed_lines_name_their_number() {
        let text = "# c\na\t1\t2\t3\t4\t0.5\nb\t1\t2\t3\t4\n";
        match read_records(&mut text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = "a\t1\t2\t-3\t4\t0.5\n";
        assert!(matches!(read_records(&mut text.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let text = "a\t1\t2\t3\t4\tx\n";
        assert!(matches!(read_records(&mut text.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn thousand_random_records_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let records: Vec<RegionRecord> = (0..1000)
            .map(|i| RegionRecord {
                frame_id: format!("{:04}", i % 37),
                bbox: BoundingBox::new(
                    rng.random_range(-50.0..500.0),
                    rng.random_range(-50.0..500.0),
                    rng.random_range(0.01..300.0),
                    rng.random_range(0.01..300.0),
                )
                .unwrap(),
                score: rng.random_range(0.0..=1.0),
            })
            .collect();
        let (_, back) = round_trip(&records);
        let mut expected = records.clone();
        sort_records(&mut expected);
        assert_eq!(back.len(), expected.len());
        for (a, b) in back.iter().zip(&expected) {
            assert_eq!(a.frame_id, b.frame_id);
            assert_eq!(a.bbox, b.bbox);
            assert!((a.score - b.score).abs() <= 5e-7);
        }
    }

    #[test]
    fn rejects_unwritable_ids() {
        let mut buf = Vec::new();
        assert!(write_records(&mut buf, &[], &[rec("a\tb", 1.0, 0.5)]).is_err());
    }

    #[test]
    fn timings_round_trip() {
        let t = vec![("000".to_string(), 0.125), ("001".to_string(), 0.39)];
        let mut buf = Vec::new();
        write_timings(&mut buf, &["h".into()], &t).unwrap();
        assert_eq!(read_timings(&mut buf.as_slice()).unwrap(), t);
        assert!(matches!(read_timings(&mut "a 1\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn boxes_round_trip_exactly(x in -1e6f64..1e6, y in -1e6f64..1e6, w in 1e-6f64..1e6, h in 1e-6f64..1e6, s in 0.0f64..=1.0) {
            let r = RegionRecord { frame_id: "f".into(), bbox: BoundingBox::new(x, y, w, h).unwrap(), score: s };
            let (_, back) = round_trip(std::slice::from_ref(&r));
            prop_assert_eq!(back[0].bbox, r.bbox);
            prop_assert!((back[0].score - s).abs() <= 5e-7);
        }
    }
}
