//! Exclusive access to a run directory, with quarantine on failure.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

pub const LOCK_FILE: &str = ".lock";
pub const FAILED_DIR: &str = "failed";

pub struct RunDir {
    path: PathBuf,
    before: BTreeSet<OsString>,
}

fn entries(path: &Path) -> Result<BTreeSet<OsString>> {
    Ok(fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.file_name()))
        .collect())
}

impl RunDir {
    /// Creates the directory if needed and takes its lock.
    pub fn open(path: &Path) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        let lock = path.join(LOCK_FILE);
        if let Err(e) = fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                bail!("{} is locked by another run (remove {} if stale)", path.display(), lock.display());
            }
            return Err(e).with_context(|| format!("creating {}", lock.display()));
        }
        let mut before = entries(path)?;
        before.remove(&OsString::from(LOCK_FILE));
        Ok(RunDir { path: path.to_path_buf(), before })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn finish(self) -> Result<()> {
        fs::remove_file(self.path.join(LOCK_FILE)).context("releasing the run lock")
    }

    /// Moves everything this run created into `failed/attempt-<k>/` and
    /// releases the lock.
    pub fn quarantine(self) -> Result<PathBuf> {
        let mut created = entries(&self.path)?;
        created.retain(|e| !self.before.contains(e) && e != LOCK_FILE && e != FAILED_DIR);
        let failed = self.path.join(FAILED_DIR);
        let mut k = 1;
        let target = loop {
            let t = failed.join(format!("attempt-{k}"));
            if !t.exists() {
                break t;
            }
            k += 1;
        };
        fs::create_dir_all(&target).with_context(|| format!("creating {}", target.display()))?;
        for name in created {
            fs::rename(self.path.join(&name), target.join(&name))
                .with_context(|| format!("quarantining {}", Path::new(&name).display()))?;
        }
        self.finish()?;
        Ok(target)
    }
}
