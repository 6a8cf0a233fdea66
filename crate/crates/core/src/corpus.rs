//! Grounded source corpus: ingestion and cleaning.
//!
//! A row survives cleaning when each of its three text fields is present, has
//! at least [`MIN_WORDS`] whitespace-delimited words, and uses only the allowed
//! character set: ASCII letters, digits, whitespace and `. , ? ! ' " ( ) - : ;`.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum word count for every retained field.
pub const MIN_WORDS: usize = 5;

const ALLOWED_PUNCTUATION: &[char] = &['.', ',', '?', '!', '\'', '"', '(', ')', '-', ':', ';'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub id: u64,
    pub question_title: String,
    pub question_content: String,
    pub best_answer: String,
}

impl SourceRecord {
    pub fn new(id: u64, title: &str, content: &str, answer: &str) -> Self {
        Self {
            id,
            question_title: title.to_string(),
            question_content: content.to_string(),
            best_answer: answer.to_string(),
        }
    }

    fn fields(&self) -> [&str; 3] {
        [
            &self.question_title,
            &self.question_content,
            &self.best_answer,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DropReason {
    Missing,
    Short,
    Chars,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    Drop(DropReason),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub input_count: u64,
    pub dropped_missing: u64,
    pub dropped_short: u64,
    pub dropped_chars: u64,
    pub retained_count: u64,
}

impl CleaningReport {
    pub fn record(&mut self, verdict: Verdict) {
        self.input_count += 1;
        match verdict {
            Verdict::Keep => self.retained_count += 1,
            Verdict::Drop(DropReason::Missing) => self.dropped_missing += 1,
            Verdict::Drop(DropReason::Short) => self.dropped_short += 1,
            Verdict::Drop(DropReason::Chars) => self.dropped_chars += 1,
        }
    }

    pub fn merge(&mut self, other: &CleaningReport) {
        self.input_count += other.input_count;
        self.dropped_missing += other.dropped_missing;
        self.dropped_short += other.dropped_short;
        self.dropped_chars += other.dropped_chars;
        self.retained_count += other.retained_count;
    }

    pub fn is_conserved(&self) -> bool {
        self.input_count
            == self.retained_count + self.dropped_missing + self.dropped_short + self.dropped_chars
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("requested {requested} rows but only {available} cleaned rows remain")]
    InsufficientRows { requested: usize, available: usize },
    #[error("reading corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("reading corpus: {0}")]
    Csv(#[from] csv::Error),
}

/// Number of maximal non-whitespace runs.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn is_allowed_char(c: char) -> bool {
    c.is_ascii_alphanumeric()
        || matches!(c, ' ' | '\t' | '\n' | '\r')
        || ALLOWED_PUNCTUATION.contains(&c)
}

/// Classify one record. Checks run in order: missing, short, characters.
pub fn clean_record(record: &SourceRecord) -> Verdict {
    let fields = record.fields();
    if fields.iter().any(|f| f.trim().is_empty()) {
        return Verdict::Drop(DropReason::Missing);
    }
    if fields.iter().any(|f| word_count(f) < MIN_WORDS) {
        return Verdict::Drop(DropReason::Short);
    }
    if fields.iter().any(|f| !f.chars().all(is_allowed_char)) {
        return Verdict::Drop(DropReason::Chars);
    }
    Verdict::Keep
}

/// A row as read from the source file, before cleaning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawRow {
    Decoded(SourceRecord),
    /// The row could not be turned into a record; carries the reason it will be dropped with.
    Undecodable { id: u64, reason: DropReason },
}

/// Apply [`clean_record`] to every row, keeping survivors in input order.
pub fn clean_rows(rows: impl IntoIterator<Item = RawRow>) -> (Vec<SourceRecord>, CleaningReport) {
    let mut report = CleaningReport::default();
    let mut kept = Vec::new();
    for row in rows {
        match row {
            RawRow::Decoded(record) => {
                let verdict = clean_record(&record);
                report.record(verdict);
                if verdict == Verdict::Keep {
                    kept.push(record);
                }
            }
            RawRow::Undecodable { reason, .. } => report.record(Verdict::Drop(reason)),
        }
    }
    (kept, report)
}

pub fn clean_corpus(records: Vec<SourceRecord>) -> (Vec<SourceRecord>, CleaningReport) {
    clean_rows(records.into_iter().map(RawRow::Decoded))
}

/// First `n` cleaned records in input order.
pub fn select_grounded(records: &[SourceRecord], n: usize) -> Result<Vec<SourceRecord>, CorpusError> {
    if records.len() < n {
        return Err(CorpusError::InsufficientRows {
            requested: n,
            available: records.len(),
        });
    }
    Ok(records[..n].to_vec())
}

/// Column layout of the delimited source file.
///
/// The default matches the public Yahoo Answers CSV: no header, a leading
/// topic-class column, then question title, question content and best answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusLayout {
    pub leading_columns: usize,
    pub has_header: bool,
    pub delimiter: u8,
}

impl Default for CorpusLayout {
    fn default() -> Self {
        Self {
            leading_columns: 1,
            has_header: false,
            delimiter: b',',
        }
    }
}

/// Read a delimited corpus. Row ids are 0-based data-row positions. Rows with
/// too few columns decode as missing; rows that are not valid UTF-8 decode as
/// a character failure.
pub fn read_delimited<R: Read>(reader: R, layout: CorpusLayout) -> Result<Vec<RawRow>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(layout.has_header)
        .delimiter(layout.delimiter)
        .flexible(true)
        .from_reader(reader);
    let mut rows = Vec::new();
    let mut record = csv::ByteRecord::new();
    let mut id = 0u64;
    while rdr.read_byte_record(&mut record)? {
        let row = decode_row(id, &record, layout.leading_columns);
        rows.push(row);
        id += 1;
    }
    Ok(rows)
}

pub fn read_delimited_file(path: &Path, layout: CorpusLayout) -> Result<Vec<RawRow>, CorpusError> {
    let file = std::fs::File::open(path)?;
    read_delimited(std::io::BufReader::new(file), layout)
}

fn decode_row(id: u64, record: &csv::ByteRecord, skip: usize) -> RawRow {
    let mut fields = Vec::with_capacity(3);
    for i in skip..skip + 3 {
        match record.get(i) {
            None => {
                return RawRow::Undecodable {
                    id,
                    reason: DropReason::Missing,
                }
            }
            Some(bytes) => match std::str::from_utf8(bytes) {
                Ok(s) => fields.push(s.to_string()),
                Err(_) => {
                    return RawRow::Undecodable {
                        id,
                        reason: DropReason::Chars,
                    }
                }
            },
        }
    }
    let [title, content, answer]: [String; 3] = fields.try_into().expect("three fields");
    RawRow::Decoded(SourceRecord {
        id,
        question_title: title,
        question_content: content,
        best_answer: answer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok_record(id: u64) -> SourceRecord {
        SourceRecord::new(
            id,
            "how do magnets really work today",
            "i have always wondered what makes magnets stick",
            "magnets work because of aligned electron spins, mostly.",
        )
    }

    #[test]
    fn empty_field_is_missing() {
        let mut r = ok_record(0);
        r.best_answer = String::new();
        assert_eq!(clean_record(&r), Verdict::Drop(DropReason::Missing));
        r.best_answer = "   ".into();
        assert_eq!(clean_record(&r), Verdict::Drop(DropReason::Missing));
    }

    #[test]
    fn four_word_title_is_short() {
        let mut r = ok_record(0);
        r.question_title = "how do magnets".into();
        assert_eq!(clean_record(&r), Verdict::Drop(DropReason::Short));
        r.question_title = "how do magnets work".into();
        assert_eq!(clean_record(&r), Verdict::Drop(DropReason::Short));
        r.question_title = "how do magnets work exactly".into();
        assert_eq!(clean_record(&r), Verdict::Keep);
    }

    #[test]
    fn valid_record_is_kept() {
        assert_eq!(clean_record(&ok_record(0)), Verdict::Keep);
    }

    #[test]
    fn special_characters_drop() {
        for bad in ["<br>", "50%", "a&b", "é", "#tag", "x/y", "line\u{0}"] {
            let mut r = ok_record(0);
            r.best_answer = format!("this answer has a {bad} inside it");
            assert_eq!(clean_record(&r), Verdict::Drop(DropReason::Chars), "{bad}");
        }
    }

    #[test]
    fn missing_takes_precedence_over_short() {
        let r = SourceRecord::new(0, "", "two words", "bad ~ chars here");
        assert_eq!(clean_record(&r), Verdict::Drop(DropReason::Missing));
    }

    #[test]
    fn select_prefix() {
        let records: Vec<_> = (0..5).map(ok_record).collect();
        assert!(select_grounded(&records, 0).unwrap().is_empty());
        let two = select_grounded(&records, 2).unwrap();
        assert_eq!(two.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn select_too_many() {
        let records: Vec<_> = (0..3).map(ok_record).collect();
        let err = select_grounded(&records, 16_000).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::InsufficientRows {
                requested: 16_000,
                available: 3
            }
        ));
    }

    #[test]
    fn reads_yahoo_layout() {
        let data = b"\"4\",\"what is the tallest mountain on earth\",\"i am curious about the tallest mountain\",\"mount everest is the tallest mountain above sea level\"\n\
\"2\",\"short one\"\n\
\"1\",\"bad bytes \xff\xfe here\",\"x\",\"y\"\n";
        let rows = read_delimited(&data[..], CorpusLayout::default()).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(matches!(rows[0], RawRow::Decoded(ref r) if r.id == 0));
        assert_eq!(
            rows[1],
            RawRow::Undecodable {
                id: 1,
                reason: DropReason::Missing
            }
        );
        assert_eq!(
            rows[2],
            RawRow::Undecodable {
                id: 2,
                reason: DropReason::Chars
            }
        );
        let (kept, report) = clean_rows(rows);
        assert_eq!(kept.len(), 1);
        assert_eq!(report.dropped_missing, 1);
        assert_eq!(report.dropped_chars, 1);
        assert!(report.is_conserved());
    }
}
