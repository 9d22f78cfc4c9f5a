//! Row sinks: CSV with a header row, or one JSON object per line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::Format;

pub enum Sink {
    Csv(Box<csv::Writer<BufWriter<File>>>),
    Jsonl(BufWriter<File>),
}

impl Sink {
    pub fn create(path: &Path, format: Format) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let buf = BufWriter::new(file);
        Ok(match format {
            Format::Csv => Self::Csv(Box::new(csv::Writer::from_writer(buf))),
            Format::Jsonl => Self::Jsonl(buf),
        })
    }

    pub fn write<T: Serialize>(&mut self, row: &T) -> Result<()> {
        match self {
            Self::Csv(w) => w.serialize(row)?,
            Self::Jsonl(w) => {
                serde_json::to_writer(&mut *w, row)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        match self {
            Self::Csv(mut w) => w.flush()?,
            Self::Jsonl(mut w) => w.flush()?,
        }
        Ok(())
    }
}
