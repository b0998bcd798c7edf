use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoding::EncodedExample;
use crate::error::{Error, Result};

/// A retained example with its difficulty under the model that selected it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub task_id: usize,
    pub score: f64,
    #[serde(flatten)]
    pub example: EncodedExample,
}

/// Examples kept from one finished task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleSet {
    pub task_id: usize,
    pub examples: Vec<ScoredExample>,
}

/// Per-task retained example sets, at most `capacity` examples each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayMemory {
    capacity: usize,
    sets: Vec<ExampleSet>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::usage("replay size N must be at least 1"));
        }
        Ok(ReplayMemory {
            capacity,
            sets: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn sets(&self) -> &[ExampleSet] {
        &self.sets
    }

    pub fn is_empty(&self) -> bool {
        self.sets.iter().all(|s| s.examples.is_empty())
    }

    /// Total retained examples across tasks.
    pub fn len(&self) -> usize {
        self.sets.iter().map(|s| s.examples.len()).sum()
    }

    pub fn push(&mut self, task_id: usize, examples: Vec<ScoredExample>) -> Result<()> {
        if examples.len() > self.capacity {
            return Err(Error::usage(format!(
                "example set of {} exceeds capacity {}",
                examples.len(),
                self.capacity
            )));
        }
        if self.sets.iter().any(|s| s.task_id == task_id) {
            return Err(Error::usage(format!("task {task_id} already has an example set")));
        }
        self.sets.push(ExampleSet { task_id, examples });
        Ok(())
    }

    /// Every retained example as one flat pool, in task order.
    pub fn examples(&self) -> impl Iterator<Item = &EncodedExample> {
        self.sets.iter().flat_map(|s| s.examples.iter().map(|e| &e.example))
    }

    /// JSONL store, one retained example per line.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for s in &self.sets {
            for e in &s.examples {
                serde_json::to_writer(&mut w, e)?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_jsonl(path: &Path, capacity: usize) -> Result<Self> {
        let mut memory = ReplayMemory::new(capacity)?;
        let reader = BufReader::new(fs::File::open(path)?);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ScoredExample = serde_json::from_str(&line).map_err(|err| Error::AtLine {
                path: path.to_path_buf(),
                line: i + 1,
                source: Box::new(err.into()),
            })?;
            match memory.sets.last_mut() {
                Some(s) if s.task_id == e.task_id => {
                    if s.examples.len() == capacity {
                        return Err(Error::usage(format!("task {} exceeds capacity {capacity}", e.task_id)));
                    }
                    s.examples.push(e)
                }
                _ => memory.push(e.task_id, vec![e])?,
            }
        }
        Ok(memory)
    }
}
