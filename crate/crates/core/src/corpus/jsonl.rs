use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::CorpusError;

/// Reads one JSON value per line. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| CorpusError::Line {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

fn encode<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("serialization to memory is infallible");
        buf.push(b'\n');
    }
    buf
}

/// Replaces the file with the given records.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<(), CorpusError> {
    let mut file = File::create(path)?;
    file.write_all(&encode(items))?;
    file.sync_all()?;
    Ok(())
}

/// Appends a batch with a single write so readers never see half a batch
/// from a well-behaved appender.
pub fn append_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<(), CorpusError> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(&encode(items))?;
    file.sync_all()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Answer, QaRecord};

    fn recs(n: usize, offset: usize) -> Vec<QaRecord> {
        (0..n)
            .map(|i| {
                QaRecord::gold(
                    format!("r{}", i + offset),
                    "es",
                    "Vive en Madrid.",
                    "¿Dónde vive?",
                    vec![Answer::new("Madrid", 8)],
                )
            })
            .collect()
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        let records = recs(3, 0);
        write_jsonl(&path, &records).unwrap();
        let back: Vec<QaRecord> = read_jsonl(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn malformed_middle_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let records = recs(2, 0);
        let mut text = String::new();
        text.push_str(&serde_json::to_string(&records[0]).unwrap());
        text.push_str("\n{\"id\": \"broken\"\n");
        text.push_str(&serde_json::to_string(&records[1]).unwrap());
        text.push('\n');
        std::fs::write(&path, text).unwrap();
        let err = read_jsonl::<QaRecord>(&path).unwrap_err();
        assert!(matches!(err, CorpusError::Line { line: 2, .. }), "{err}");
    }

    #[test]
    fn append_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("silver.jsonl");
        write_jsonl(&path, &recs(3, 0)).unwrap();
        append_jsonl(&path, &recs(2, 3)).unwrap();
        let back: Vec<QaRecord> = read_jsonl(&path).unwrap();
        let ids: Vec<_> = back.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["r0", "r1", "r2", "r3", "r4"]);
    }

    #[test]
    fn record_field_names_are_fixed() {
        let line = serde_json::to_value(&recs(1, 0)[0]).unwrap();
        let keys: Vec<_> = line.as_object().unwrap().keys().cloned().collect();
        let mut expected = vec!["answers", "context", "gen_meta", "id", "lang", "question", "source"];
        expected.sort();
        let mut keys = keys;
        keys.sort();
        assert_eq!(keys, expected);
    }
}
