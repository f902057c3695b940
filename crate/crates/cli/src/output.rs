//! Output files: atomic replacement and the embedded run manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use satqkd::pipeline::{write_atomic, RunManifest};
use serde::Serialize;
use tempfile::NamedTempFile;

/// Buffered writer to a temporary file that replaces `path` on commit.
pub struct AtomicFile {
    path: PathBuf,
    writer: BufWriter<NamedTempFile>,
}

impl AtomicFile {
    pub fn create(path: &Path) -> Result<Self> {
        let dir = path
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let tmp =
            NamedTempFile::new_in(dir).with_context(|| format!("creating temporary file in {}", dir.display()))?;
        Ok(AtomicFile {
            path: path.to_path_buf(),
            writer: BufWriter::new(tmp),
        })
    }

    pub fn commit(self) -> Result<()> {
        let tmp = self.writer.into_inner().map_err(|e| e.into_error())?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
        }
        tmp.as_file().sync_all()?;
        tmp.persist(&self.path)
            .with_context(|| format!("writing {}", self.path.display()))?;
        Ok(())
    }
}

impl Write for AtomicFile {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.writer.write(buf)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.writer.flush()
    }
}

/// Manifest as a single CSV comment line; the loaders skip `#` lines.
pub fn manifest_comment(manifest: &RunManifest) -> Result<String> {
    Ok(format!("# manifest: {}\n", serde_json::to_string(manifest)?))
}

/// CSV written by `body` after the manifest comment line.
pub fn write_csv(
    path: &Path,
    manifest: &RunManifest,
    body: impl FnOnce(&mut AtomicFile) -> satqkd::Result<()>,
) -> Result<()> {
    let mut f = AtomicFile::create(path)?;
    f.write_all(manifest_comment(manifest)?.as_bytes())?;
    body(&mut f)?;
    f.commit()
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    manifest: &'a RunManifest,
    #[serde(flatten)]
    payload: &'a T,
}

/// Pretty JSON with the manifest as the first field.
pub fn write_json<T: Serialize>(path: &Path, manifest: &RunManifest, payload: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&Wrapped { manifest, payload })?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Context marking a failure as bad input (exit code 1).
#[derive(Debug)]
pub struct Input(pub String);

impl std::fmt::Display for Input {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| Input(format!("opening {}", path.display())))
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| Input(format!("reading {}", path.display())))
}
