use std::fs::{self, OpenOptions};
use std::path::Path;

use super::Result;
use crate::federation::RoundRecord;

pub const METRICS_HEADER: &str =
    "round,test_acc,val_acc,loss,prune_rate,enc_ms,dec_ms,agg_ms,upload_bytes,checkpoint";

/// Writes a fresh metrics file; an empty list yields only the header.
pub fn write_metrics(records: &[RoundRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    if records.is_empty() {
        w.write_record(METRICS_HEADER.split(','))?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends one row, writing the header first when the file is new or empty.
pub fn append_metrics(record: &RoundRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let fresh = fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(fresh)
        .from_writer(file);
    w.serialize(record)?;
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<RoundRecord>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != METRICS_HEADER {
        return Err(super::DataError::Format(format!(
            "unexpected metrics header {:?}",
            header.join(",")
        )));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::CheckpointAction;

    fn record(round: u32) -> RoundRecord {
        RoundRecord {
            round,
            test_acc: 0.9125,
            val_acc: 0.9,
            loss: 0.31234567891234,
            prune_rate: 0.2,
            enc_ms: 12.5,
            dec_ms: 3.0,
            agg_ms: 0.25,
            upload_bytes: 101_890,
            checkpoint: CheckpointAction::Saved,
        }
    }

    #[test]
    fn empty_list_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics(&[], &p).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            format!("{METRICS_HEADER}\n")
        );
        assert!(read_metrics(&p).unwrap().is_empty());
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics(&[record(1)], &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().ends_with(",saved"));
        assert_eq!(read_metrics(&p).unwrap(), vec![record(1)]);
    }

    #[test]
    fn append_writes_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut second = record(2);
        second.checkpoint = CheckpointAction::None;
        append_metrics(&record(1), &p).unwrap();
        append_metrics(&second, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
        assert_eq!(read_metrics(&p).unwrap(), vec![record(1), second]);
    }
}
