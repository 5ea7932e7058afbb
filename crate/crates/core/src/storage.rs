//! File formats: canonical drill-set documents, the JSON Lines event log and
//! anonymized answer exports.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::itemgen::DrillSet;
use crate::ledger::{AccountKind, Smly};
use crate::session::RewardGrant;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct DocumentOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    drill_set: &'a DrillSet,
}

/// Canonical bytes: fixed key order, two-space indent, trailing LF.
pub fn encode_drill_set(set: &DrillSet) -> Vec<u8> {
    let doc = DocumentOut {
        schema_version: SCHEMA_VERSION,
        drill_set: set,
    };
    let mut bytes = serde_json::to_vec_pretty(&doc).expect("drill sets always serialize");
    bytes.push(b'\n');
    bytes
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = bytes
        .split(|&b| b == b'\n')
        .take(line - 1)
        .map(|l| l.len() + 1)
        .sum();
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

fn decode_error(bytes: &[u8], err: serde_json::Error) -> Error {
    Error::Decode {
        offset: byte_offset(bytes, err.line(), err.column()),
        message: err.to_string(),
    }
}

pub fn decode_drill_set(bytes: &[u8]) -> Result<DrillSet> {
    let mut value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| decode_error(bytes, e))?;
    let object = value.as_object_mut().ok_or_else(|| Error::Decode {
        offset: 0,
        message: "expected a JSON object".into(),
    })?;
    let version = object
        .remove("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Decode {
            offset: 0,
            message: "missing schema_version".into(),
        })?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(Error::UnsupportedSchema(version.min(u64::from(u32::MAX)) as u32));
    }
    let set: DrillSet = serde_json::from_value(value).map_err(|e| Error::Decode {
        offset: 0,
        message: e.to_string(),
    })?;
    set.check()?;
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    AccountCreated {
        account_id: String,
        account_kind: AccountKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        library_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token_hash: Option<String>,
    },
    LibraryRegistered {
        library_id: String,
        tablet_count: u32,
    },
    TabletRegistered {
        tablet_id: String,
        library_id: String,
        payment_address: String,
        price: Smly,
    },
    TabletLent {
        tablet_id: String,
        lent: bool,
    },
    SetUploaded {
        drill_set: DrillSet,
    },
    ExamStarted {
        exam_id: String,
        student_id: String,
        drillset_id: String,
        sequence: Vec<String>,
    },
    Answer {
        student_id: String,
        drillset_id: String,
        item_id: String,
        selected_index: usize,
        correct: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exam_id: Option<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        rewards: Vec<RewardGrant>,
    },
    /// Direct mint to an account, outside the automatic reward rules.
    Reward {
        account_id: String,
        amount: Smly,
        memo: String,
    },
    Transfer {
        from: String,
        to: String,
        amount: Smly,
        memo: String,
    },
    Purchase {
        student_id: String,
        payload: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub timestamp: u64,
    #[serde(flatten)]
    pub event: Event,
}

/// Parsed log contents.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub records: Vec<EventRecord>,
    /// Byte length of the valid prefix.
    pub valid_len: usize,
    pub torn_tail: bool,
}

/// Parses JSON Lines log bytes. An unterminated final line that does not
/// parse is treated as a torn write and dropped; any other bad line, or a
/// sequence number that is not exactly one more than its predecessor, is an
/// error.
pub fn parse_log(bytes: &[u8]) -> Result<ParsedLog> {
    let mut records = Vec::new();
    let mut pos = 0;
    let mut line_no = 0;
    let mut torn_tail = false;
    while pos < bytes.len() {
        line_no += 1;
        let (line, next, terminated) = match bytes[pos..].iter().position(|&b| b == b'\n') {
            Some(i) => (&bytes[pos..pos + i], pos + i + 1, true),
            None => (&bytes[pos..], bytes.len(), false),
        };
        if line.iter().all(u8::is_ascii_whitespace) {
            if !terminated {
                torn_tail = !line.is_empty();
                break;
            }
            pos = next;
            continue;
        }
        let record: EventRecord = match serde_json::from_slice(line) {
            Ok(r) => r,
            Err(_) if !terminated => {
                torn_tail = true;
                break;
            }
            Err(e) => {
                return Err(Error::CorruptLog {
                    line: line_no,
                    message: e.to_string(),
                })
            }
        };
        let expected = records.len() as u64 + 1;
        if record.seq != expected {
            return Err(Error::SequenceGap {
                expected,
                found: record.seq,
            });
        }
        records.push(record);
        pos = next;
    }
    Ok(ParsedLog {
        records,
        valid_len: pos,
        torn_tail,
    })
}

/// Append-only event log, optionally mirrored to a JSON Lines file.
#[derive(Debug, Default)]
pub struct EventLog {
    records: Vec<EventRecord>,
    file: Option<File>,
    path: Option<PathBuf>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<EventRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.seq != i as u64 + 1 {
                return Err(Error::SequenceGap {
                    expected: i as u64 + 1,
                    found: r.seq,
                });
            }
        }
        Ok(Self {
            records,
            ..Self::default()
        })
    }

    /// Opens (or creates) a log file. A torn final line is cut off so later
    /// appends start on a clean line; the returned flag reports whether that
    /// happened.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, bool)> {
        let path = path.as_ref();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let parsed = parse_log(&bytes)?;
        if parsed.valid_len < bytes.len() {
            file.set_len(parsed.valid_len as u64)?;
        } else if !bytes.is_empty() && !bytes.ends_with(b"\n") {
            file.write_all(b"\n")?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok((
            Self {
                records: parsed.records,
                file: Some(file),
                path: Some(path.to_path_buf()),
            },
            parsed.torn_tail,
        ))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.records.len() as u64 + 1
    }

    /// Assigns the next sequence number and persists the record.
    pub fn append(&mut self, timestamp: u64, event: Event) -> Result<&EventRecord> {
        let record = EventRecord {
            seq: self.next_seq(),
            timestamp,
            event,
        };
        if let Some(file) = &mut self.file {
            let mut line = serde_json::to_vec(&record).map_err(|e| Error::Io(e.to_string()))?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.flush()?;
        }
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r).expect("records serialize");
            out.push(b'\n');
        }
        out
    }
}

pub fn fresh_salt() -> [u8; 16] {
    let mut salt = [0u8; 16];
    rand::thread_rng().fill_bytes(&mut salt);
    salt
}

/// Stable opaque token for a student within one export.
pub fn anonymize(salt: &[u8], student_id: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(salt);
    hasher.update([0u8]);
    hasher.update(student_id.as_bytes());
    format!("anon-{}", &hex::encode(hasher.finalize())[..16])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnonymizedAnswer {
    pub student: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library_id: Option<String>,
    pub drillset_id: String,
    pub item_id: String,
    pub correct: bool,
    pub exam: bool,
    pub timestamp: u64,
}

/// Answer records as JSON Lines with student ids replaced by salted tokens.
pub fn anonymized_export(records: &[EventRecord], salt: &[u8]) -> Vec<u8> {
    let mut libraries: BTreeMap<&str, &str> = BTreeMap::new();
    let mut out = Vec::new();
    for record in records {
        match &record.event {
            Event::AccountCreated {
                account_id,
                library_id: Some(library),
                ..
            } => {
                libraries.insert(account_id, library);
            }
            Event::Answer {
                student_id,
                drillset_id,
                item_id,
                correct,
                exam_id,
                ..
            } => {
                let row = AnonymizedAnswer {
                    student: anonymize(salt, student_id),
                    library_id: libraries.get(student_id.as_str()).map(|l| l.to_string()),
                    drillset_id: drillset_id.clone(),
                    item_id: item_id.clone(),
                    correct: *correct,
                    exam: exam_id.is_some(),
                    timestamp: record.timestamp,
                };
                serde_json::to_writer(&mut out, &row).expect("rows serialize");
                out.push(b'\n');
            }
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::itemgen::{generate_drill_set, synthetic_pools, GenConfig, SetMeta};

    fn sample_set(n: usize) -> DrillSet {
        let meta = SetMeta { id: "DS".into(), title: "Sample".into(), header: "Check the most appropriate box.".into() };
        generate_drill_set(meta, &synthetic_pools(15, 24), &GenConfig { n_items: n, seed: 8, ..Default::default() }).unwrap()
    }

    #[test]
    fn drill_set_round_trip() {
        let set = sample_set(300);
        let bytes = encode_drill_set(&set);
        assert_eq!(decode_drill_set(&bytes).unwrap(), set);
        assert_eq!(encode_drill_set(&set), bytes);
        assert!(bytes.ends_with(b"\n"));
        assert!(!bytes.contains(&b'\r'));
    }

    #[test]
    fn truncated_document_reports_offset() {
        let bytes = encode_drill_set(&sample_set(3));
        let cut = &bytes[..bytes.len() / 2];
        match decode_drill_set(cut) {
            Err(Error::Decode { offset, .. }) => assert!(offset <= cut.len() && offset > 0),
            other => panic!("{other:?}"),
        }
        match decode_drill_set(b"{\"a\": }") {
            Err(Error::Decode { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_schema_rejected() {
        let text = String::from_utf8(encode_drill_set(&sample_set(1))).unwrap();
        let bumped = text.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
        assert_eq!(decode_drill_set(bumped.as_bytes()), Err(Error::UnsupportedSchema(2)));
    }

    fn reward(seq: u64) -> EventRecord {
        EventRecord {
            seq,
            timestamp: seq,
            event: Event::Reward { account_id: "S1".into(), amount: 5, memo: String::new() },
        }
    }

    fn lines(records: &[EventRecord]) -> Vec<u8> {
        let mut out = Vec::new();
        for r in records {
            out.extend(serde_json::to_vec(r).unwrap());
            out.push(b'\n');
        }
        out
    }

    #[test]
    fn log_parsing() {
        assert_eq!(parse_log(b"").unwrap().records.len(), 0);
        let good = lines(&[reward(1), reward(2)]);
        assert_eq!(parse_log(&good).unwrap().records.len(), 2);

        let mut torn = good.clone();
        torn.extend_from_slice(b"{\"seq\":3,\"timest");
        let parsed = parse_log(&torn).unwrap();
        assert!(parsed.torn_tail);
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.valid_len, good.len());

        let gap = lines(&[reward(1), reward(3)]);
        assert_eq!(parse_log(&gap).unwrap_err(), Error::SequenceGap { expected: 2, found: 3 });

        let mut corrupt = lines(&[reward(1)]);
        corrupt.extend_from_slice(b"garbage\n");
        corrupt.extend(lines(&[reward(2)]));
        assert!(matches!(parse_log(&corrupt), Err(Error::CorruptLog { line: 2, .. })));
    }

    #[test]
    fn file_log_recovers_from_torn_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        {
            let (mut log, torn) = EventLog::open(&path).unwrap();
            assert!(!torn);
            log.append(1, reward(0).event).unwrap();
            log.append(2, reward(0).event).unwrap();
        }
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(b"{\"seq\":3");
        std::fs::write(&path, &bytes).unwrap();
        {
            let (mut log, torn) = EventLog::open(&path).unwrap();
            assert!(torn);
            assert_eq!(log.len(), 2);
            assert_eq!(log.append(3, reward(0).event).unwrap().seq, 3);
        }
        let (log, torn) = EventLog::open(&path).unwrap();
        assert!(!torn);
        assert_eq!(log.len(), 3);
    }

    #[test]
    fn export_tokens() {
        let answer = |seq, student: &str| EventRecord {
            seq,
            timestamp: seq,
            event: Event::Answer {
                student_id: student.into(),
                drillset_id: "D".into(),
                item_id: "D-0001".into(),
                selected_index: 0,
                correct: true,
                exam_id: None,
                rewards: vec![],
            },
        };
        let records = vec![answer(1, "alice-S1"), answer(2, "bob-S2"), answer(3, "alice-S1")];
        let a = String::from_utf8(anonymized_export(&records, b"salt-a")).unwrap();
        let b = String::from_utf8(anonymized_export(&records, b"salt-b")).unwrap();
        assert!(!a.contains("alice") && !a.contains("bob"));
        let tokens: Vec<AnonymizedAnswer> = a.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(tokens[0].student, tokens[2].student);
        assert_ne!(tokens[0].student, tokens[1].student);
        let other: AnonymizedAnswer = serde_json::from_str(b.lines().next().unwrap()).unwrap();
        assert_ne!(other.student, tokens[0].student);
    }
}
