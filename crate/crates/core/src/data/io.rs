//! Line-delimited JSON dataset files.
//!
//! One record per line. A file may start with a single metadata line of the
//! form `{"meta": {...}}` carrying the configuration that produced it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::types::SceneRecord;

pub fn write_dataset(records: &[SceneRecord], path: impl AsRef<Path>) -> Result<()> {
    write_dataset_with_meta(records, path, None)
}

pub fn write_dataset_with_meta(
    records: &[SceneRecord],
    path: impl AsRef<Path>,
    meta: Option<&Value>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |line: String| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
    if let Some(meta) = meta {
        put(serde_json::to_string(&serde_json::json!({ "meta": meta }))?)?;
    }
    for r in records {
        put(serde_json::to_string(r)?)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes arbitrary rows as JSON lines, with an optional metadata line
/// first. Parent directories are created.
pub fn write_jsonl<T: serde::Serialize>(
    path: impl AsRef<Path>,
    meta: Option<&Value>,
    rows: &[T],
) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |line: String| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
    if let Some(meta) = meta {
        put(serde_json::to_string(&serde_json::json!({ "meta": meta }))?)?;
    }
    for r in rows {
        put(serde_json::to_string(r)?)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<SceneRecord>> {
    Ok(read_dataset_with_meta(path)?.0)
}

pub fn read_dataset_with_meta(path: impl AsRef<Path>) -> Result<(Vec<SceneRecord>, Option<Value>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_lines(BufReader::new(file), path)
}

fn parse_lines(reader: impl BufRead, path: &Path) -> Result<(Vec<SceneRecord>, Option<Value>)> {
    let mut records = Vec::new();
    let mut meta = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedLine {
            line: i + 1,
            message,
        };
        let value: Value = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if i == 0 {
            if let Some(m) = value.as_object().and_then(|o| o.get("meta")) {
                meta = Some(m.clone());
                continue;
            }
        }
        records.push(serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?);
    }
    Ok((records, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic, ScenarioMix};
    use proptest::prelude::*;

    #[test]
    fn write_then_read_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let recs = generate_synthetic(10, 5, &ScenarioMix::default()).unwrap();
        write_dataset(&recs, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), recs);
    }

    #[test]
    fn meta_line_is_returned_separately() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let recs = generate_synthetic(3, 5, &ScenarioMix::default()).unwrap();
        let meta = serde_json::json!({"seed": 5});
        write_dataset_with_meta(&recs, &path, Some(&meta)).unwrap();
        let (back, m) = read_dataset_with_meta(&path).unwrap();
        assert_eq!(back, recs);
        assert_eq!(m, Some(meta));
    }

    #[test]
    fn truncated_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let recs = generate_synthetic(3, 5, &ScenarioMix::default()).unwrap();
        write_dataset(&recs, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let cut = &lines[1][..lines[1].len() / 2];
        lines[1] = cut;
        std::fs::write(&path, lines.join("\n")).unwrap();
        match read_dataset(&path) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(read_dataset(&path).unwrap().is_empty());
    }

    fn arb_point() -> impl Strategy<Value = [f64; 2]> {
        (-1e6f64..1e6, -1e6f64..1e6).prop_map(|(a, b)| [a, b])
    }

    proptest! {
        #[test]
        fn json_round_trip_is_exact(
            obs in proptest::collection::vec(arb_point(), 0..6),
            fut in proptest::collection::vec(arb_point(), 0..6),
            lanes in proptest::collection::vec(proptest::collection::vec(arb_point(), 0..4), 0..3),
            id in "[a-z0-9-]{0,12}",
        ) {
            let modes = fut.iter().enumerate().map(|(i, _)| crate::types::ModeId(i % 5)).collect();
            let r = SceneRecord { scene_id: id, observed: obs, future: fut, future_modes: modes, centerlines: lanes };
            let text = serde_json::to_string(&r).unwrap();
            let back: SceneRecord = parse_lines(text.as_bytes(), Path::new("mem")).unwrap().0.remove(0);
            prop_assert_eq!(back, r);
        }
    }
}
