//! Writers for JSON-lines generation records, summary JSON and r_nt CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::campaign::{GenerationRecord, MetricsRecord};
use crate::error::Result;

pub fn write_jsonl(path: &Path, records: &[GenerationRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Long-format CSV `decoder,threshold,r_nt`.
pub fn write_rnt_csv(path: &Path, summary: &MetricsRecord) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "decoder,threshold,r_nt")?;
    for d in &summary.decoders {
        for (l, r) in &d.r_nt {
            writeln!(w, "{},{l},{r}", d.decoder)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<GenerationRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
