//! Line-delimited JSON file formats shared by the pipeline stages.
//!
//! Symmetric matrices are written as six numbers, the upper triangle in
//! row-major order `[xx, xy, xz, yy, yz, zz]`. Rotations are nine numbers,
//! row-major. Floats use the shortest representation that round-trips.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::EnvKind;

/// One demonstration sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub task: EnvKind,
    pub episode: usize,
    /// Seconds since the start of the episode.
    pub t: f64,
    pub state: Vec<f64>,
    /// Contact force on the end-effector, world frame (N).
    pub force: [f64; 3],
    /// Wrist camera orientation in the world frame, row-major.
    pub cam_rot: [f64; 9],
    pub cmd_pos: [f64; 3],
    pub act_pos: [f64; 3],
}

/// Inferred environment stiffness for one demonstration record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferredRecord {
    pub index: usize,
    pub k_e: [f64; 6],
    /// Number of non-empty force sectors in the neighborhood.
    pub m_valid: usize,
}

pub fn write_jsonl<T: Serialize>(
    mut w: impl Write,
    items: impl IntoIterator<Item = T>,
) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl_file<T: Serialize>(
    path: &Path,
    items: impl IntoIterator<Item = T>,
) -> Result<()> {
    write_jsonl(BufWriter::new(File::create(path)?), items)
}

/// Non-blank lines of a file with their 1-based line numbers.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn parse_line<T: DeserializeOwned>(path: &Path, line: usize, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    })
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, text)| parse_line(path, n, &text))
        .collect()
}
