//! On-disk waveform and label formats.
//!
//! Text: `key: value` header lines (`sample_rate`, `rotation_index`,
//! `translation_index`), a blank line, then one sample per line written with
//! 17 significant digits.
//!
//! Binary: `UCTW`, version byte, `sample_rate` f64, `rotation_index` u32,
//! `translation_index` u32, `sample_count` u64, then the samples as f64. All
//! fields little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{LabeledPeak, RecordId, WaveformRecord};
use crate::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"UCTW";
pub const BINARY_VERSION: u8 = 1;
/// Bytes before the first sample in the binary layout.
pub const BINARY_HEADER_LEN: usize = 4 + 1 + 8 + 4 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Binary,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Text => "txt",
            Format::Binary => "uctw",
        }
    }
}

pub fn write_record(record: &WaveformRecord, path: &Path, format: Format) -> Result<()> {
    if let Some(x) = record.samples().iter().find(|x| !x.is_finite()) {
        return Err(Error::RejectedValue(format!("non-finite sample {x}")));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        Format::Text => write_text(record, &mut w),
        Format::Binary => write_binary(record, &mut w),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_text(record: &WaveformRecord, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "sample_rate: {:?}", record.sample_rate())?;
    writeln!(w, "rotation_index: {}", record.id().rotation)?;
    writeln!(w, "translation_index: {}", record.id().translation)?;
    writeln!(w)?;
    for x in record.samples() {
        writeln!(w, "{x:.16e}")?;
    }
    Ok(())
}

fn write_binary(record: &WaveformRecord, w: &mut impl Write) -> std::io::Result<()> {
    let id = record.id();
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&[BINARY_VERSION])?;
    w.write_all(&record.sample_rate().to_le_bytes())?;
    w.write_all(&(id.rotation as u32).to_le_bytes())?;
    w.write_all(&(id.translation as u32).to_le_bytes())?;
    w.write_all(&(record.len() as u64).to_le_bytes())?;
    for x in record.samples() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_record(path: &Path, format: Format) -> Result<WaveformRecord> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        Format::Text => read_text(reader, path),
        Format::Binary => read_binary(reader, path),
    }
}

fn read_text(reader: impl BufRead, path: &Path) -> Result<WaveformRecord> {
    let mut lines = reader.lines().enumerate();
    let mut sample_rate = None;
    let mut rotation = None;
    let mut translation = None;
    let mut terminated = false;
    for (i, line) in lines.by_ref() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            terminated = true;
            break;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| Error::Format(format!("line {}: expected key: value", i + 1)))?;
        let value = value.trim();
        let bad = || Error::Format(format!("line {}: bad value for {key}", i + 1));
        match key.trim() {
            "sample_rate" => sample_rate = Some(value.parse::<f64>().map_err(|_| bad())?),
            "rotation_index" => rotation = Some(value.parse::<usize>().map_err(|_| bad())?),
            "translation_index" => translation = Some(value.parse::<usize>().map_err(|_| bad())?),
            other => return Err(Error::Format(format!("unknown header key {other:?}"))),
        }
    }
    if !terminated {
        return Err(Error::Format("header not terminated by a blank line".into()));
    }
    let missing = |k: &str| Error::Format(format!("missing header key {k}"));
    let sample_rate = sample_rate.ok_or_else(|| missing("sample_rate"))?;
    let id = RecordId::new(
        rotation.ok_or_else(|| missing("rotation_index"))?,
        translation.ok_or_else(|| missing("translation_index"))?,
    );

    let mut samples = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let x: f64 = line.parse().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("not a number: {line:?}"),
        })?;
        samples.push(x);
    }
    WaveformRecord::new(samples, sample_rate, id)
}

fn read_binary(mut reader: impl Read, path: &Path) -> Result<WaveformRecord> {
    let mut header = [0u8; BINARY_HEADER_LEN];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::Format("truncated binary header".into()))?;
    if &header[0..4] != BINARY_MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    if header[4] != BINARY_VERSION {
        return Err(Error::Format(format!("unsupported version {}", header[4])));
    }
    let sample_rate = f64::from_le_bytes(header[5..13].try_into().unwrap());
    let rotation = u32::from_le_bytes(header[13..17].try_into().unwrap()) as usize;
    let translation = u32::from_le_bytes(header[17..21].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[21..29].try_into().unwrap()) as usize;
    if count == 0 {
        return Err(Error::EmptyRecord);
    }
    let mut payload = vec![0u8; count * 8];
    reader.read_exact(&mut payload).map_err(|_| Error::Parse {
        line: 0,
        message: format!("payload shorter than {count} samples"),
    })?;
    let mut rest = [0u8; 1];
    if reader.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    let samples = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    WaveformRecord::new(samples, sample_rate, RecordId::new(rotation, translation))
}

/// Writes `record_id,peak_index,trough_index,true_amplitude` rows.
pub fn write_labels_csv<'a, I>(path: &Path, labels: I) -> Result<()>
where
    I: IntoIterator<Item = (RecordId, &'a [LabeledPeak])>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let body = || -> std::io::Result<()> {
        writeln!(w, "record_id,peak_index,trough_index,true_amplitude")?;
        for (id, peaks) in labels {
            for p in peaks {
                writeln!(
                    w,
                    "{id},{},{},{:?}",
                    p.peak_index, p.trough_index, p.true_amplitude
                )?;
            }
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

pub fn read_labels_csv(path: &Path) -> Result<BTreeMap<RecordId, Vec<LabeledPeak>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: BTreeMap<RecordId, Vec<LabeledPeak>> = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            line: i + 1,
            message: m.to_string(),
        };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let id: RecordId = cols[0].parse()?;
        out.entry(id).or_default().push(LabeledPeak {
            peak_index: cols[1].parse().map_err(|_| bad("peak_index"))?,
            trough_index: cols[2].parse().map_err(|_| bad("trough_index"))?,
            true_amplitude: cols[3].parse().map_err(|_| bad("true_amplitude"))?,
        });
    }
    Ok(out)
}
