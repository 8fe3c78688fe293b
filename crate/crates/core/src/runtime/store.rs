//! Local workload store the agent pulls units from in bulk.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::UnitDescription;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Decode {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("duplicate unit id {0}")]
    DuplicateUnit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backing {
    InMemory,
    FileBacked,
}

/// Pending units in insertion order. Each unit is handed out exactly once.
#[derive(Debug)]
pub struct WorkloadStore {
    backing: Backing,
    pending: VecDeque<UnitDescription>,
    delivered: usize,
}

impl WorkloadStore {
    pub fn in_memory(units: Vec<UnitDescription>) -> Result<Self, StoreError> {
        check_unique(&units)?;
        Ok(WorkloadStore {
            backing: Backing::InMemory,
            pending: units.into(),
            delivered: 0,
        })
    }

    /// Loads a store from a JSON-lines file, one unit description per line.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let io = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let mut units = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| StoreError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            units.push(serde_json::from_str(&line).map_err(|source| StoreError::Decode {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?);
        }
        check_unique(&units)?;
        Ok(WorkloadStore {
            backing: Backing::FileBacked,
            pending: units.into(),
            delivered: 0,
        })
    }

    pub fn write(path: &Path, units: &[UnitDescription]) -> Result<(), StoreError> {
        let io = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        for u in units {
            let line = serde_json::to_string(u).expect("unit descriptions serialize");
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn backing(&self) -> Backing {
        self.backing
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn delivered(&self) -> usize {
        self.delivered
    }

    /// Removes and returns up to `batch` units, oldest first.
    pub fn pull_units(&mut self, batch: NonZeroUsize) -> Vec<UnitDescription> {
        let n = batch.get().min(self.pending.len());
        self.delivered += n;
        self.pending.drain(..n).collect()
    }

    /// Everything still pending.
    pub fn drain(&mut self) -> Vec<UnitDescription> {
        self.pending.drain(..).collect()
    }
}

fn check_unique(units: &[UnitDescription]) -> Result<(), StoreError> {
    let mut seen = std::collections::HashSet::new();
    for u in units {
        if !seen.insert(u.id.as_str()) {
            return Err(StoreError::DuplicateUnit(u.id.to_string()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::TaskPayload;
    use crate::model::UnitId;

    fn units(n: usize) -> Vec<UnitDescription> {
        (0..n)
            .map(|i| UnitDescription::new(UnitId::indexed(i), 4, TaskPayload::sleep(3.0, 0.0)))
            .collect()
    }

    fn nz(n: usize) -> NonZeroUsize {
        NonZeroUsize::new(n).unwrap()
    }

    #[test]
    fn bulk_pull() {
        let mut s = WorkloadStore::in_memory(units(4096)).unwrap();
        assert_eq!(s.pull_units(nz(4096)).len(), 4096);
        assert!(s.pull_units(nz(4096)).is_empty());
        assert_eq!(s.delivered(), 4096);
    }

    #[test]
    fn batch_one_in_order() {
        let mut s = WorkloadStore::in_memory(units(3)).unwrap();
        let ids: Vec<String> = (0..3)
            .map(|_| s.pull_units(nz(1))[0].id.to_string())
            .collect();
        assert_eq!(ids, ["unit.000000", "unit.000001", "unit.000002"]);
        assert!(s.pull_units(nz(1)).is_empty());
    }

    #[test]
    fn duplicates_rejected() {
        let mut u = units(2);
        u[1].id = u[0].id.clone();
        assert!(matches!(WorkloadStore::in_memory(u), Err(StoreError::DuplicateUnit(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("units.jsonl");
        WorkloadStore::write(&path, &units(5)).unwrap();
        let mut s = WorkloadStore::open(&path).unwrap();
        assert_eq!(s.backing(), Backing::FileBacked);
        assert_eq!(s.pull_units(nz(10)), units(5));
    }
}
