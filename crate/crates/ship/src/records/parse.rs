//! JSONL ingestion and emission.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::schema::{PatientRecord, RecordWire};
use super::RecordError;

/// Parse a JSONL corpus, one patient per line. Blank lines are allowed.
/// Malformed lines report their 1-based line number; invariant violations
/// name the patient.
pub fn parse_records(path: &Path) -> Result<Vec<PatientRecord>, RecordError> {
    let file = std::fs::File::open(path)?;
    parse_records_reader(BufReader::new(file))
}

pub fn parse_records_reader(reader: impl BufRead) -> Result<Vec<PatientRecord>, RecordError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: RecordWire =
            serde_json::from_str(&line).map_err(|e| RecordError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        records.push(wire.into_record()?);
    }
    Ok(records)
}

/// Write records as JSONL, one per line, in the given order.
pub fn write_records(records: &[PatientRecord], out: &mut impl Write) -> Result<(), RecordError> {
    for r in records {
        let wire = RecordWire::from_record(r);
        let line = serde_json::to_string(&wire).map_err(|e| RecordError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_records_file(records: &[PatientRecord], path: &Path) -> Result<(), RecordError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_records(records, &mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn empty_file_gives_empty_list() {
        let records = parse_records_reader(Cursor::new("")).unwrap();
        assert!(records.is_empty());
    }

    #[test]
    fn single_patient_two_events_sorted() {
        let line = r#"{"patient_id":"p1","admissions":[{"admit":0,"discharge":48,"type":"emergency","labels":{"mortality":false,"ccs":2,"icd9":[4,5]}}],"events":[{"t":20,"f":"obs:hr","v":90.0},{"t":5,"f":"code:dx","v":"grp1"}]}"#;
        let records = parse_records_reader(Cursor::new(line)).unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert_eq!(r.patient_id, "p1");
        assert_eq!(r.events.len(), 2);
        assert!(r.events[0].t < r.events[1].t);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "\n{not json}\n";
        let err = parse_records_reader(Cursor::new(text)).unwrap_err();
        match err {
            RecordError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn event_after_discharge_fails_validation() {
        let line = r#"{"patient_id":"px","admissions":[{"admit":0,"discharge":48,"type":"e","labels":{}}],"events":[{"t":100,"f":"obs:hr","v":90.0}]}"#;
        let err = parse_records_reader(Cursor::new(line)).unwrap_err();
        match err {
            RecordError::Validation { patient_id, .. } => assert_eq!(patient_id, "px"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn roundtrip_preserves_records() {
        let line = r#"{"patient_id":"p1","admissions":[{"admit":0.0,"discharge":48.0,"type":"emergency","labels":{"mortality":true,"ccs":2,"icd9":[4]}}],"events":[{"t":5.0,"f":"code:dx","v":"grp1"},{"t":6.0,"f":"note:nursing","note":"patient stable"}]}"#;
        let records = parse_records_reader(Cursor::new(line)).unwrap();
        let mut buf = Vec::new();
        write_records(&records, &mut buf).unwrap();
        let again = parse_records_reader(Cursor::new(buf)).unwrap();
        assert_eq!(records, again);
    }
}
