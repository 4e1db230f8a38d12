//! Line-delimited JSON probability streams.
//!
//! The first line is a [`StreamHeader`]; each following line is one
//! [`StreamRecord`]: `{"t": 1, "label": 3, "probs": [[...], ...]}` with one
//! probability row per model. Floats are written in shortest round-trip
//! form, so a write/read cycle is lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::GeneratorMeta;
use super::DataError;
use crate::conformal::validate_probabilities;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamHeader {
    pub n_models: usize,
    pub n_labels: usize,
    pub length: usize,
    pub model_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorMeta>,
}

impl StreamHeader {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |reason: String| Err(DataError::InvalidHeader(reason));
        if self.n_models == 0 {
            return bad("n_models must be at least 1".into());
        }
        if self.n_labels < 2 {
            return bad(format!(
                "n_labels must be at least 2, got {}",
                self.n_labels
            ));
        }
        if self.length == 0 {
            return bad("length must be at least 1".into());
        }
        if self.model_names.len() != self.n_models {
            return bad(format!(
                "{} model names for {} models",
                self.model_names.len(),
                self.n_models
            ));
        }
        Ok(())
    }
}

/// One labeled step: the true label and every model's probability row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamRecord {
    pub t: usize,
    pub label: usize,
    pub probs: Vec<Vec<f64>>,
}

impl StreamRecord {
    pub fn row(&self, model: usize) -> &[f64] {
        &self.probs[model]
    }

    /// Checks dimensions, label range and normalization of every row.
    pub fn validate(&self, n_models: usize, n_labels: usize) -> Result<(), String> {
        if self.probs.len() != n_models {
            return Err(format!(
                "{} probability rows, expected {n_models}",
                self.probs.len()
            ));
        }
        if self.label >= n_labels {
            return Err(format!(
                "label {} out of range for {n_labels} labels",
                self.label
            ));
        }
        for (m, row) in self.probs.iter().enumerate() {
            if row.len() != n_labels {
                return Err(format!(
                    "model {m} row has {} entries, expected {n_labels}",
                    row.len()
                ));
            }
            validate_probabilities(row).map_err(|e| format!("model {m}: {e}"))?;
        }
        Ok(())
    }
}

/// A fully loaded stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub header: StreamHeader,
    pub records: Vec<StreamRecord>,
}

impl Stream {
    /// Validates the header and every record, including `t` running 1..=T.
    pub fn new(header: StreamHeader, records: Vec<StreamRecord>) -> Result<Self, DataError> {
        header.validate()?;
        if records.len() != header.length {
            return Err(DataError::LengthMismatch {
                expected: header.length,
                found: records.len(),
            });
        }
        for (i, rec) in records.iter().enumerate() {
            check_record(&header, rec, i + 1, i + 2)?;
        }
        Ok(Self { header, records })
    }

    pub fn n_models(&self) -> usize {
        self.header.n_models
    }

    pub fn n_labels(&self) -> usize {
        self.header.n_labels
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let (header, reader) = load_stream(path)?;
        let records = reader.collect::<Result<Vec<_>, _>>()?;
        Ok(Self { header, records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| DataError::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out)
            .map_err(|e| DataError::io(path, e))?;
        out.flush().map_err(|e| DataError::io(path, e))
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        serde_json::to_writer(&mut *out, &self.header)?;
        out.write_all(b"\n")?;
        for rec in &self.records {
            serde_json::to_writer(&mut *out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn check_record(
    header: &StreamHeader,
    rec: &StreamRecord,
    index: usize,
    line: usize,
) -> Result<(), DataError> {
    let invalid = |reason: String| DataError::InvalidRecord {
        record: index,
        line,
        reason,
    };
    if rec.t != index {
        return Err(invalid(format!("t = {} out of sequence", rec.t)));
    }
    rec.validate(header.n_models, header.n_labels)
        .map_err(invalid)
}

/// Opens a stream file and returns its header plus a validating iterator.
pub fn load_stream(
    path: impl AsRef<Path>,
) -> Result<(StreamHeader, StreamReader<BufReader<File>>), DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    StreamReader::new(BufReader::new(file))
}

/// Streaming record iterator over any buffered reader.
///
/// Yields an error and stops at the first invalid record. A final line that
/// lacks its newline and fails to parse is reported as truncation; a clean
/// end before `length` records is reported as missing records.
pub struct StreamReader<R> {
    reader: R,
    header: StreamHeader,
    line: usize,
    records: usize,
    done: bool,
    buf: String,
}

impl<R: BufRead> StreamReader<R> {
    pub fn new(mut reader: R) -> Result<(StreamHeader, Self), DataError> {
        let mut buf = String::new();
        let n = reader.read_line(&mut buf).map_err(|e| DataError::Io {
            path: None,
            source: e,
        })?;
        if n == 0 {
            return Err(DataError::InvalidHeader("empty stream file".into()));
        }
        let header: StreamHeader = serde_json::from_str(buf.trim_end())
            .map_err(|e| DataError::Json { line: 1, source: e })?;
        header.validate()?;
        let me = Self {
            reader,
            header: header.clone(),
            line: 1,
            records: 0,
            done: false,
            buf,
        };
        Ok((header, me))
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    fn next_record(&mut self) -> Option<Result<StreamRecord, DataError>> {
        loop {
            self.buf.clear();
            let n = match self.reader.read_line(&mut self.buf) {
                Ok(n) => n,
                Err(e) => {
                    return Some(Err(DataError::Io {
                        path: None,
                        source: e,
                    }))
                }
            };
            if n == 0 {
                if self.records < self.header.length {
                    return Some(Err(DataError::LengthMismatch {
                        expected: self.header.length,
                        found: self.records,
                    }));
                }
                return None;
            }
            self.line += 1;
            let text = self.buf.trim_end();
            if text.is_empty() {
                continue;
            }
            let index = self.records + 1;
            if index > self.header.length {
                return Some(Err(DataError::InvalidRecord {
                    record: index,
                    line: self.line,
                    reason: format!(
                        "more records than the declared length {}",
                        self.header.length
                    ),
                }));
            }
            let rec: StreamRecord = match serde_json::from_str(text) {
                Ok(r) => r,
                Err(e) if !self.buf.ends_with('\n') && e.is_eof() => {
                    return Some(Err(DataError::Truncated {
                        record: index,
                        line: self.line,
                    }))
                }
                Err(e) => {
                    return Some(Err(DataError::Json {
                        line: self.line,
                        source: e,
                    }))
                }
            };
            if let Err(e) = check_record(&self.header, &rec, index, self.line) {
                return Some(Err(e));
            }
            self.records = index;
            return Some(Ok(rec));
        }
    }
}

impl<R: BufRead> Iterator for StreamReader<R> {
    type Item = Result<StreamRecord, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = self.next_record();
        if !matches!(item, Some(Ok(_))) {
            self.done = true;
        }
        item
    }
}
