//! On-disk sequence layout.
//!
//! ```text
//! <seq>/rgb/000000.ppm  <seq>/tir/000000.pgm  <seq>/event/000000.pgm
//! <seq>/groundtruth.txt   one "x1,y1,w,h" per frame
//! <seq>/language.txt      one sentence
//! <seq>/attributes.txt    one tag per line
//! ```

use std::fs;
use std::path::Path;

use super::pnm::{GrayImage, RgbImage};
use super::SyntheticSequence;
use crate::bbox::BBox;
use crate::error::{Error, Result};

fn frame_name(t: usize, ext: &str) -> String {
    format!("{t:06}.{ext}")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_sequence(dir: &Path, seq: &SyntheticSequence) -> Result<()> {
    seq.validate()?;
    for sub in ["rgb", "tir", "event"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for t in 0..seq.len() {
        seq.rgb[t].save(&dir.join("rgb").join(frame_name(t, "ppm")))?;
        seq.thermal[t].save(&dir.join("tir").join(frame_name(t, "pgm")))?;
        seq.event[t].save(&dir.join("event").join(frame_name(t, "pgm")))?;
    }
    let gt: String = seq.gt.iter().map(|b| format!("{b}\n")).collect();
    write_text(&dir.join("groundtruth.txt"), &gt)?;
    write_text(&dir.join("language.txt"), &format!("{}\n", seq.language))?;
    let attrs: String = seq.attributes.iter().map(|a| format!("{a}\n")).collect();
    write_text(&dir.join("attributes.txt"), &attrs)
}

pub fn read_sequence(dir: &Path) -> Result<SyntheticSequence> {
    let gt_path = dir.join("groundtruth.txt");
    let mut gt = Vec::new();
    for (i, line) in read_text(&gt_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let b = line.parse::<BBox>().map_err(|e| Error::Parse {
            file: gt_path.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        gt.push(b);
    }
    let language = read_text(&dir.join("language.txt"))?.trim().to_string();
    let attributes = read_text(&dir.join("attributes.txt"))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let mut rgb = Vec::with_capacity(gt.len());
    let mut thermal = Vec::with_capacity(gt.len());
    let mut event = Vec::with_capacity(gt.len());
    for t in 0..gt.len() {
        rgb.push(RgbImage::load(&dir.join("rgb").join(frame_name(t, "ppm")))?);
        thermal.push(GrayImage::load(&dir.join("tir").join(frame_name(t, "pgm")))?);
        event.push(GrayImage::load(&dir.join("event").join(frame_name(t, "pgm")))?);
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let seq = SyntheticSequence {
        name,
        rgb,
        thermal,
        event,
        gt,
        language,
        attributes,
    };
    seq.validate()?;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, GenConfig, Scenario};

    fn small() -> GenConfig {
        GenConfig {
            width: 48,
            height: 48,
            frames: 4,
            event_threshold: 12,
        }
    }

    #[test]
    fn round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        for (i, s) in Scenario::ALL.into_iter().enumerate() {
            let dir = tmp.path().join(format!("seq{i}"));
            let mut seq = generate(s, &small(), i as u64, &format!("seq{i}")).unwrap();
            write_sequence(&dir, &seq).unwrap();
            let back = read_sequence(&dir).unwrap();
            seq.name = back.name.clone();
            assert_eq!(back, seq);
        }
    }

    #[test]
    fn malformed_groundtruth_names_file_and_line() {
        let tmp = tempfile::tempdir().unwrap();
        let seq = generate(Scenario::Plain, &small(), 1, "s").unwrap();
        write_sequence(tmp.path(), &seq).unwrap();
        fs::write(tmp.path().join("groundtruth.txt"), "1,2,3,4\n1,2,x,4\n").unwrap();
        match read_sequence(tmp.path()) {
            Err(Error::Parse { file, line, .. }) => {
                assert!(file.ends_with("groundtruth.txt"));
                assert_eq!(line, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_language_names_file() {
        let tmp = tempfile::tempdir().unwrap();
        let seq = generate(Scenario::Plain, &small(), 1, "s").unwrap();
        write_sequence(tmp.path(), &seq).unwrap();
        fs::remove_file(tmp.path().join("language.txt")).unwrap();
        let err = read_sequence(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("language.txt"), "{err}");
    }
}
