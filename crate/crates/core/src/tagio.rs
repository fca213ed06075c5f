//! Tag file formats.
//!
//! Binary: 16-byte little-endian records, `u64` time in ps, `u16` channel,
//! six zero bytes. CSV: header `time_ps,channel`, one record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detection::{TimeTag, TimeTagStream};
use crate::error::{Error, Result};

pub const RECORD_BYTES: usize = 16;
pub const CSV_HEADER: &str = "time_ps,channel";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagFormat {
    Bin,
    Csv,
}

impl TagFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TagFormat::Bin => "bin",
            TagFormat::Csv => "csv",
        }
    }

    pub fn from_path(path: &Path) -> Option<TagFormat> {
        match path.extension()?.to_str()? {
            "bin" => Some(TagFormat::Bin),
            "csv" => Some(TagFormat::Csv),
            _ => None,
        }
    }
}

impl FromStr for TagFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bin" => Ok(TagFormat::Bin),
            "csv" => Ok(TagFormat::Csv),
            other => Err(format!("unknown tag format `{other}` (expected bin or csv)")),
        }
    }
}

pub fn encode_record(tag: &TimeTag) -> [u8; RECORD_BYTES] {
    let mut buf = [0u8; RECORD_BYTES];
    buf[..8].copy_from_slice(&tag.time_ps.to_le_bytes());
    buf[8..10].copy_from_slice(&tag.channel.to_le_bytes());
    buf
}

pub fn write_binary<W: Write>(records: &[TimeTag], mut out: W) -> std::io::Result<()> {
    for r in records {
        out.write_all(&encode_record(r))?;
    }
    out.flush()
}

pub fn write_csv<W: Write>(records: &[TimeTag], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{},{}", r.time_ps, r.channel)?;
    }
    out.flush()
}

pub fn write_tags(path: &Path, records: &[TimeTag], format: TagFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let out = BufWriter::with_capacity(1 << 20, file);
    match format {
        TagFormat::Bin => write_binary(records, out),
        TagFormat::Csv => write_csv(records, out),
    }
    .map_err(|e| Error::io(path, e))
}

/// Decodes binary records; `path` only labels errors.
pub fn decode_binary<R: Read>(mut input: R, path: &Path) -> Result<Vec<TimeTag>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let format_err = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() % RECORD_BYTES != 0 {
        let offset = bytes.len() - bytes.len() % RECORD_BYTES;
        return Err(format_err(
            offset,
            format!("truncated record ({} trailing bytes)", bytes.len() - offset),
        ));
    }
    let mut records = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    let mut last = 0u64;
    for (i, chunk) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let offset = i * RECORD_BYTES;
        let time_ps = u64::from_le_bytes(chunk[..8].try_into().expect("8 bytes"));
        let channel = u16::from_le_bytes(chunk[8..10].try_into().expect("2 bytes"));
        if let Some(k) = chunk[10..].iter().position(|&b| b != 0) {
            return Err(format_err(offset + 10 + k, "reserved bytes must be zero".into()));
        }
        if time_ps < last {
            return Err(format_err(
                offset,
                format!("time {time_ps} ps goes backwards (previous {last} ps)"),
            ));
        }
        last = time_ps;
        records.push(TimeTag { time_ps, channel });
    }
    Ok(records)
}

/// Decodes CSV records; `path` only labels errors.
pub fn decode_csv<R: Read>(input: R, path: &Path) -> Result<Vec<TimeTag>> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    let mut offset = 0u64;
    let format_err = |offset: u64, message: String| Error::Format {
        path: path.to_path_buf(),
        offset,
        message,
    };
    let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    if n == 0 {
        return Err(format_err(0, format!("missing header `{CSV_HEADER}`")));
    }
    if line.trim_end_matches(['\r', '\n']) != CSV_HEADER {
        return Err(format_err(0, format!("expected header `{CSV_HEADER}`")));
    }
    offset += n as u64;
    let mut records = Vec::new();
    let mut last = 0u64;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        let text = line.trim_end_matches(['\r', '\n']);
        if !text.is_empty() {
            let parsed = text
                .split_once(',')
                .and_then(|(t, c)| Some((t.trim().parse::<u64>().ok()?, c.trim().parse::<u16>().ok()?)));
            let Some((time_ps, channel)) = parsed else {
                return Err(format_err(offset, format!("cannot parse record `{text}`")));
            };
            if time_ps < last {
                return Err(format_err(
                    offset,
                    format!("time {time_ps} ps goes backwards (previous {last} ps)"),
                ));
            }
            last = time_ps;
            records.push(TimeTag { time_ps, channel });
        }
        offset += n as u64;
    }
    Ok(records)
}

pub fn read_tags(path: &Path, format: TagFormat) -> Result<Vec<TimeTag>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::with_capacity(1 << 20, file);
    match format {
        TagFormat::Bin => decode_binary(reader, path),
        TagFormat::Csv => decode_csv(reader, path),
    }
}

pub fn read_stream(path: &Path, format: TagFormat, duration_s: f64) -> Result<TimeTagStream> {
    Ok(TimeTagStream::new(read_tags(path, format)?, duration_s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<TimeTag> {
        vec![
            TimeTag { time_ps: 0, channel: 0 },
            TimeTag {
                time_ps: 12_345,
                channel: 1,
            },
            TimeTag {
                time_ps: u64::MAX - 1,
                channel: u16::MAX,
            },
        ]
    }

    #[test]
    fn binary_layout_is_little_endian() {
        let rec = encode_record(&TimeTag {
            time_ps: 0x0102_0304_0506_0708,
            channel: 0x0A0B,
        });
        assert_eq!(rec, [8, 7, 6, 5, 4, 3, 2, 1, 0x0B, 0x0A, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn binary_roundtrip() {
        let mut buf = Vec::new();
        write_binary(&sample(), &mut buf).unwrap();
        assert_eq!(buf.len(), 3 * RECORD_BYTES);
        assert_eq!(decode_binary(&buf[..], Path::new("x")).unwrap(), sample());
    }

    #[test]
    fn csv_roundtrip() {
        let mut buf = Vec::new();
        write_csv(&sample(), &mut buf).unwrap();
        assert!(buf.starts_with(b"time_ps,channel\n0,0\n"));
        assert_eq!(decode_csv(&buf[..], Path::new("x")).unwrap(), sample());
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let mut buf = Vec::new();
        write_binary(&sample(), &mut buf).unwrap();
        buf.truncate(40);
        match decode_binary(&buf[..], Path::new("x")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 32),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reserved_bytes_checked() {
        let mut buf = Vec::new();
        write_binary(&sample(), &mut buf).unwrap();
        buf[16 + 13] = 1;
        match decode_binary(&buf[..], Path::new("x")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 29),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unordered_rejected() {
        let recs = vec![
            TimeTag {
                time_ps: 10,
                channel: 0,
            },
            TimeTag { time_ps: 5, channel: 0 },
        ];
        let mut buf = Vec::new();
        write_binary(&recs, &mut buf).unwrap();
        assert!(matches!(
            decode_binary(&buf[..], Path::new("x")),
            Err(Error::Format { offset: 16, .. })
        ));
    }

    #[test]
    fn bad_csv_line_reports_offset() {
        let text = "time_ps,channel\n10,0\nabc,1\n";
        match decode_csv(text.as_bytes(), Path::new("x")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 21),
            other => panic!("{other:?}"),
        }
        assert!(decode_csv("t,c\n".as_bytes(), Path::new("x")).is_err());
        assert!(decode_csv("".as_bytes(), Path::new("x")).is_err());
        assert!(decode_csv("time_ps,channel\n".as_bytes(), Path::new("x"))
            .unwrap()
            .is_empty());
    }
}
