//! Append-only JSON Lines checkpoints for long provider-backed runs.
//!
//! Each line holds one finished record tagged with its position in the input
//! and a hash of the input text, so a resumed run only reuses entries that
//! still describe the same input.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Line<T> {
    index: usize,
    input: String,
    #[serde(flatten)]
    entry: T,
}

pub struct Checkpoint<T> {
    path: PathBuf,
    done: BTreeMap<usize, (String, T)>,
    file: Mutex<File>,
}

impl<T: Serialize + DeserializeOwned + Clone> Checkpoint<T> {
    /// Opens (or creates) the file and loads entries already present. A
    /// truncated last line from an interrupted write is ignored.
    pub fn open(path: &Path) -> Result<Self> {
        let mut done = BTreeMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            for (i, l) in lines.iter().enumerate() {
                match serde_json::from_str::<Line<T>>(l) {
                    Ok(line) => {
                        done.insert(line.index, (line.input, line.entry));
                    }
                    Err(_) if i + 1 == lines.len() => {
                        log::warn!("{}: dropping truncated last line", path.display());
                        let mut kept = lines[..i].join("\n");
                        if !kept.is_empty() {
                            kept.push('\n');
                        }
                        std::fs::write(path, kept).map_err(|e| Error::io(path, e))?;
                    }
                    Err(e) => return Err(Error::json(path.display().to_string(), e)),
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Checkpoint {
            path: path.to_path_buf(),
            done,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Entry recorded for `index` if its input hash still matches.
    pub fn get(&self, index: usize, input: &str) -> Option<T> {
        self.done
            .get(&index)
            .filter(|(h, _)| h == input)
            .map(|(_, e)| e.clone())
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    pub fn append(&self, index: usize, input: &str, entry: &T) -> Result<()> {
        let line = serde_json::to_string(&Line {
            index,
            input: input.to_string(),
            entry,
        })
        .map_err(|e| Error::json("checkpoint entry", e))?;
        let mut f = self.file.lock();
        writeln!(f, "{line}")
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}
