//! Line-oriented JSON helpers shared by the corpus, task and span loaders.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Records that parsed, plus the per-line failures that were skipped.
#[derive(Debug)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub errors: Vec<Error>,
}

impl<T> Default for Loaded<T> {
    fn default() -> Self {
        Loaded {
            records: Vec::new(),
            errors: Vec::new(),
        }
    }
}

/// Iterates `(line_number, parsed record)` over a JSONL file. Blank lines are
/// skipped; line numbers are 1-based.
pub fn records<T: DeserializeOwned>(
    path: &Path,
) -> Result<impl Iterator<Item = Result<(usize, T)>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let path = path.to_path_buf();
    let iter =
        BufReader::new(file)
            .lines()
            .enumerate()
            .filter_map(move |(idx, line)| {
                let line_no = idx + 1;
                match line {
                    Err(e) => Some(Err(Error::io(&path, e))),
                    Ok(l) if l.trim().is_empty() => None,
                    Ok(l) => Some(serde_json::from_str::<T>(&l).map(|r| (line_no, r)).map_err(
                        |e| Error::Record {
                            line: line_no,
                            message: e.to_string(),
                        },
                    )),
                }
            });
    Ok(iter)
}

pub fn write<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
