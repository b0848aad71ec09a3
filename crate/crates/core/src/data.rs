//! JSONL sample files.
//!
//! One sample per line:
//!
//! ```text
//! {"subject_id": "s01", "me_label": 2, "au_labels": [0,1,0,...],
//!  "frames": {"onset": [[x,y],...], "apex": [...], "offset": [...]}}
//! ```
//!
//! Frames carry 68 points unless the first record is a header
//! `{"points": 14}`, in which case every frame carries the 14 graph nodes.
//! An optional `"id"` names the sample; otherwise it is `sample{line index}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{KeyTriplet, LandmarkFrame, Point, Sample, FULL_LANDMARKS, NUM_NODES};

#[derive(Serialize, Deserialize)]
struct FramesRecord {
    onset: Vec<Point>,
    apex: Vec<Point>,
    offset: Vec<Point>,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    subject_id: String,
    me_label: usize,
    au_labels: Vec<u8>,
    frames: FramesRecord,
}

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    points: usize,
}

pub fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    parse_samples(BufReader::new(File::open(path)?))
}

pub fn parse_samples<R: BufRead>(reader: R) -> Result<Vec<Sample>> {
    let mut points = FULL_LANDMARKS;
    let mut samples = Vec::new();
    let mut au_len: Option<usize> = None;
    let mut first_record = true;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;

        if value.get("frames").is_none() && value.get("points").is_some() {
            if !first_record {
                return Err(err("header record must come first".into()));
            }
            let header: HeaderRecord =
                serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
            if header.points != NUM_NODES && header.points != FULL_LANDMARKS {
                return Err(err(format!("unsupported point count {}", header.points)));
            }
            points = header.points;
            first_record = false;
            continue;
        }
        first_record = false;

        let rec: SampleRecord = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
        if rec.au_labels.iter().any(|&v| v > 1) {
            return Err(err("au_labels must be 0/1".into()));
        }
        match au_len {
            Some(k) if k != rec.au_labels.len() => {
                return Err(err(format!(
                    "au_labels has length {}, earlier samples have {k}",
                    rec.au_labels.len()
                )))
            }
            _ => au_len = Some(rec.au_labels.len()),
        }
        let frame = |name: &str, pts: Vec<Point>| -> Result<LandmarkFrame> {
            if pts.len() != points {
                return Err(err(format!(
                    "{name} frame has {} points, expected {points}",
                    pts.len()
                )));
            }
            LandmarkFrame::new(pts).map_err(|e| err(format!("{name} frame: {e}")))
        };
        let frames = KeyTriplet::new(
            frame("onset", rec.frames.onset)?,
            frame("apex", rec.frames.apex)?,
            frame("offset", rec.frames.offset)?,
        )
        .map_err(|e| err(e.to_string()))?;
        samples.push(Sample {
            id: rec.id.unwrap_or_else(|| format!("sample{}", samples.len())),
            subject_id: rec.subject_id,
            me_label: rec.me_label,
            au_labels: rec.au_labels,
            frames,
        });
    }
    Ok(samples)
}

pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_samples_to(&mut w, samples)?;
    w.flush()?;
    Ok(())
}

pub fn write_samples_to<W: Write>(w: &mut W, samples: &[Sample]) -> Result<()> {
    let selected = samples
        .first()
        .map(|s| s.frames.onset.is_selected())
        .unwrap_or(false);
    if samples
        .iter()
        .any(|s| s.frames.onset.is_selected() != selected)
    {
        return Err(Error::InvalidParameter(
            "cannot mix 14-point and 68-point samples in one file".into(),
        ));
    }
    if selected {
        serde_json::to_writer(&mut *w, &HeaderRecord { points: NUM_NODES })?;
        writeln!(w)?;
    }
    for s in samples {
        let rec = SampleRecord {
            id: Some(s.id.clone()),
            subject_id: s.subject_id.clone(),
            me_label: s.me_label,
            au_labels: s.au_labels.clone(),
            frames: FramesRecord {
                onset: s.frames.onset.points().to_vec(),
                apex: s.frames.apex.points().to_vec(),
                offset: s.frames.offset.points().to_vec(),
            },
        };
        serde_json::to_writer(&mut *w, &rec)?;
        writeln!(w)?;
    }
    Ok(())
}
