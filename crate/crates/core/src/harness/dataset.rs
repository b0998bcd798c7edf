use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::encoding::QgInstance;
use crate::error::{Error, Result};

/// A validated instance and the 1-based line it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub source_index: usize,
    pub instance: QgInstance,
}

/// Reads a JSONL dataset, validating every line. Blank lines are skipped.
pub fn load_dataset(path: &Path, max_examples: Option<usize>) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if max_examples.is_some_and(|m| out.len() >= m) {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        let at_line = |e: Error| Error::AtLine {
            path: path.to_path_buf(),
            line: i + 1,
            source: Box::new(e),
        };
        let instance: QgInstance = serde_json::from_str(line).map_err(|e| at_line(e.into()))?;
        instance.validate().map_err(at_line)?;
        out.push(Record {
            source_index: i + 1,
            instance,
        });
    }
    if out.is_empty() {
        return Err(Error::usage(format!("{} holds no examples", path.display())));
    }
    Ok(out)
}

pub fn save_dataset<'a>(path: &Path, instances: impl IntoIterator<Item = &'a QgInstance>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
