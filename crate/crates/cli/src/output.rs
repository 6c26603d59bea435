//! Staged output directories and CSV emission.

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::TempDir;

use crate::CliError;

fn io_err(path: &Path, e: impl Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Files are written into a hidden sibling of the target directory and
/// moved into place only by [`Staging::commit`]. Dropping an uncommitted
/// staging area deletes it, so failures leave nothing behind.
pub struct Staging {
    dir: TempDir,
    target: PathBuf,
}

impl Staging {
    pub fn new(target: &Path) -> Result<Self, CliError> {
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| io_err(&parent, e))?;
        let dir = tempfile::Builder::new()
            .prefix(".milc-staging-")
            .tempdir_in(&parent)
            .map_err(|e| io_err(&parent, e))?;
        Ok(Self {
            dir,
            target: target.to_path_buf(),
        })
    }

    /// Path of `rel` inside the staging area, with parent directories created.
    pub fn path(&self, rel: impl AsRef<Path>) -> Result<PathBuf, CliError> {
        let p = self.dir.path().join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        Ok(p)
    }

    pub fn write(&self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(rel)?;
        fs::write(&p, bytes).map_err(|e| io_err(&p, e))
    }

    pub fn write_json<T: serde::Serialize>(
        &self,
        rel: impl AsRef<Path>,
        value: &T,
    ) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("serialisable");
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    /// Moves every staged top-level entry into the target directory,
    /// replacing entries of the same name.
    pub fn commit(self) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.target).map_err(|e| io_err(&self.target, e))?;
        let entries = fs::read_dir(self.dir.path()).map_err(|e| io_err(self.dir.path(), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| io_err(self.dir.path(), e))?;
            let dest = self.target.join(entry.file_name());
            if dest.is_dir() {
                fs::remove_dir_all(&dest).map_err(|e| io_err(&dest, e))?;
            }
            fs::rename(entry.path(), &dest).map_err(|e| io_err(&dest, e))?;
        }
        Ok(self.target)
    }
}

/// Minimal CSV writer: fixed header, fields must not contain separators.
pub struct Csv {
    buf: Vec<u8>,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = Vec::new();
        writeln!(buf, "{}", header.join(",")).expect("in-memory write");
        Self {
            buf,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        assert_eq!(fields.len(), self.columns, "CSV row width");
        writeln!(self.buf, "{}", fields.join(",")).expect("in-memory write");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

/// Shortest round-trip decimal form; empty for missing values.
pub fn fmt_opt<T: Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncommitted_staging_leaves_nothing() {
        let root = tempfile::tempdir().unwrap();
        let target = root.path().join("out");
        {
            let s = Staging::new(&target).unwrap();
            s.write("a.txt", b"x").unwrap();
        }
        assert!(!target.exists());
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 0);
    }

    #[test]
    fn commit_moves_files() {
        let root = tempfile::tempdir().unwrap();
        let target = root.path().join("out");
        let s = Staging::new(&target).unwrap();
        s.write("sub/a.txt", b"x").unwrap();
        s.write("b.txt", b"y").unwrap();
        s.commit().unwrap();
        assert_eq!(fs::read(target.join("sub/a.txt")).unwrap(), b"x");
        assert_eq!(fs::read(target.join("b.txt")).unwrap(), b"y");
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 1);
    }

    #[test]
    fn csv_rows() {
        let mut c = Csv::new(&["a", "b"]);
        c.row(&["1".into(), fmt_opt(None::<f64>)]);
        c.row(&["2".into(), fmt_opt(Some(0.5))]);
        assert_eq!(
            String::from_utf8(c.into_bytes()).unwrap(),
            "a,b\n1,\n2,0.5\n"
        );
    }
}
