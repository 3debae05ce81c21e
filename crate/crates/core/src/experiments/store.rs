//! Run directory layout:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/cells/cell-00000.json
//! <dir>/export/…
//! ```

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{CellOutcome, CounterSnapshot, ExperimentConfig};
use crate::container::{read_json, write_json};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub created_unix: u64,
    pub updated_unix: u64,
    pub cells_total: usize,
    pub cells_completed: usize,
    /// Cumulative over every invocation on this directory.
    pub counters: CounterSnapshot,
    pub invocations: usize,
}

pub struct RunStore {
    dir: PathBuf,
    manifest: Manifest,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunStore {
    pub fn manifest_path(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    /// Opens `dir` for `cfg`. An existing manifest needs `resume` and a matching config.
    pub fn open(dir: &Path, cfg: &ExperimentConfig, resume: bool) -> Result<Self> {
        let path = Self::manifest_path(dir);
        let hash = cfg.hash();
        let manifest = if path.exists() {
            if !resume {
                return Err(Error::Config(format!(
                    "{} already holds a run; resume it or choose another directory",
                    dir.display()
                )));
            }
            let m: Manifest = read_json(&path)?;
            if m.config_hash != hash {
                return Err(Error::Config(format!(
                    "{} was created with a different configuration",
                    dir.display()
                )));
            }
            m
        } else {
            let t = now();
            let m = Manifest {
                config: cfg.clone(),
                config_hash: hash,
                created_unix: t,
                updated_unix: t,
                cells_total: cfg.cells().len(),
                cells_completed: 0,
                counters: CounterSnapshot::default(),
                invocations: 0,
            };
            write_json(&path, &m)?;
            m
        };
        std::fs::create_dir_all(dir.join("cells"))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn load_manifest(dir: &Path) -> Result<Manifest> {
        read_json(&Self::manifest_path(dir))
    }

    fn cell_path(&self, index: usize) -> PathBuf {
        self.dir.join("cells").join(format!("cell-{index:05}.json"))
    }

    /// Cells already on disk that belong to this grid.
    pub fn completed(&self) -> Result<Vec<CellOutcome>> {
        let cells = self.manifest.config.cells();
        let mut out = Vec::new();
        for (i, values) in cells.iter().enumerate() {
            let path = self.cell_path(i);
            if path.exists() {
                let cell: CellOutcome = read_json(&path)?;
                if &cell.values == values {
                    out.push(cell);
                }
            }
        }
        Ok(out)
    }

    pub fn write_cell(&self, cell: &CellOutcome) -> Result<()> {
        write_json(&self.cell_path(cell.index), cell)
    }

    pub fn finish(&mut self, completed: usize, counters: CounterSnapshot) -> Result<()> {
        let m = &mut self.manifest;
        m.cells_completed = completed;
        m.counters = m.counters + counters;
        m.invocations += 1;
        m.updated_unix = now();
        write_json(&Self::manifest_path(&self.dir), m)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
