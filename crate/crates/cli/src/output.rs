//! CSV reports with `#` comment headers, optionally gzip-compressed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use flate2::{Compression, GzBuilder};

use crate::config::{Config, Format};
use crate::status::Failure;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Formats a float so that reruns print identical bytes.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:e}")
    }
}

pub fn flag(b: bool) -> String {
    b.to_string()
}

/// A report under construction; rows are buffered and written on [`finish`](Report::finish).
pub struct Report {
    path: PathBuf,
    format: Format,
    header: String,
    rows: csv::Writer<Vec<u8>>,
}

impl Report {
    pub fn new(cfg: &Config, stem: &str, experiment: &str, columns: &[&str]) -> Result<Self, Failure> {
        let path = cfg.output.dir.join(format!("{stem}.{}", cfg.output.format.extension()));
        let mut header = format!("# mflab {VERSION}\n# experiment = {experiment}\n# resolved config:\n");
        for line in cfg.to_toml().lines() {
            header.push_str("#   ");
            header.push_str(line);
            header.push('\n');
        }
        let mut rows = csv::WriterBuilder::new().from_writer(Vec::new());
        rows.write_record(columns)?;
        Ok(Report { path, format: cfg.output.format, header, rows })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), Failure>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.rows.write_record(fields)?;
        Ok(())
    }

    pub fn finish(self) -> Result<PathBuf, Failure> {
        let body = self.rows.into_inner().map_err(|e| Failure::config(e.to_string()))?;
        if let Some(dir) = self.path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        write_file(&self.path, self.format, self.header.as_bytes(), &body)?;
        Ok(self.path)
    }
}

fn write_file(path: &Path, format: Format, header: &[u8], body: &[u8]) -> std::io::Result<()> {
    let file = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => {
            let mut w = file;
            w.write_all(header)?;
            w.write_all(body)?;
            w.flush()
        }
        Format::CsvGz => {
            // A zero timestamp and no file name keep the archive reproducible.
            let mut w = GzBuilder::new().mtime(0).write(file, Compression::default());
            w.write_all(header)?;
            w.write_all(body)?;
            w.finish()?.flush()
        }
    }
}
