//! File layout of an output directory and the lock that keeps two commands
//! from writing it at once.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use accomp_core::flow::ConditioningMode;
use anyhow::{bail, Context};

pub const LOCK_FILE: &str = ".accomp.lock";

#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }

    pub fn vocal_dir(&self) -> PathBuf {
        self.root.join("clips").join("vocal")
    }

    pub fn accompaniment_dir(&self) -> PathBuf {
        self.root.join("clips").join("accompaniment")
    }

    pub fn vqvae_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("vqvae.ckpt")
    }

    pub fn fm_checkpoint(&self, mode: ConditioningMode) -> PathBuf {
        self.root.join("checkpoints").join(format!("fm-{mode}.ckpt"))
    }

    pub fn vqvae_log(&self) -> PathBuf {
        self.root.join("logs").join("vqvae.jsonl")
    }

    pub fn fm_log(&self, mode: ConditioningMode) -> PathBuf {
        self.root.join("logs").join(format!("fm-{mode}.jsonl"))
    }

    pub fn generated_dir(&self) -> PathBuf {
        self.root.join("generated")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    /// Creates the root and takes the lock.
    pub fn lock(&self) -> anyhow::Result<OutputLock> {
        fs::create_dir_all(&self.root).with_context(|| format!("creating {}", self.root.display()))?;
        let path = self.root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id()).ok();
                Ok(OutputLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => bail!(
                "{} is locked by another command; remove {} if no command is running",
                self.root.display(),
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

/// Removes the lock file on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn create_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// Appends JSON lines to a loss log.
pub struct LossLog {
    file: File,
}

impl LossLog {
    /// Opens a fresh log, or for a resumed run keeps only the lines up to and
    /// including `resume_step` so steps are never duplicated.
    pub fn open(path: &Path, resume_step: Option<u64>) -> anyhow::Result<Self> {
        create_parent(path)?;
        let kept = match resume_step {
            Some(step) if path.exists() => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                text.lines()
                    .filter(|l| {
                        serde_json::from_str::<serde_json::Value>(l)
                            .ok()
                            .and_then(|v| v.get("step").and_then(|s| s.as_u64()))
                            .is_some_and(|s| s <= step)
                    })
                    .map(|l| format!("{l}\n"))
                    .collect()
            }
            _ => String::new(),
        };
        fs::write(path, kept).with_context(|| format!("writing {}", path.display()))?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(LossLog { file })
    }

    pub fn append<T: serde::Serialize>(&mut self, record: &T) -> anyhow::Result<()> {
        let line = serde_json::to_string(record)?;
        writeln!(self.file, "{line}")?;
        Ok(())
    }
}

/// `.wav` files directly inside `dir`, sorted by name.
pub fn wav_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path().join("run"));
        let held = layout.lock().unwrap();
        assert!(layout.lock().is_err());
        drop(held);
        assert!(layout.lock().is_ok());
    }

    #[test]
    fn resumed_log_drops_lines_past_the_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        fs::write(&path, "{\"step\":10}\n{\"step\":20}\n{\"step\":30}\n").unwrap();
        let mut log = LossLog::open(&path, Some(20)).unwrap();
        log.append(&serde_json::json!({"step": 21})).unwrap();
        drop(log);
        assert_eq!(fs::read_to_string(&path).unwrap(), "{\"step\":10}\n{\"step\":20}\n{\"step\":21}\n");
        LossLog::open(&path, None).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
    }
}
