use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::Failure;

/// An artifact directory. Every file is checked before anything is
/// written, so a refused run leaves the directory untouched.
pub struct Outputs {
    dir: PathBuf,
}

impl Outputs {
    pub fn prepare(dir: &Path, names: &[String], force: bool) -> Result<Self, Failure> {
        if !force {
            let taken: Vec<&str> = names.iter().filter(|n| dir.join(n).exists()).map(String::as_str).collect();
            if !taken.is_empty() {
                return Err(Failure::input(format!(
                    "{} already contains {}; pass --force to overwrite",
                    dir.display(),
                    taken.join(", ")
                )));
            }
        }
        fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
        Ok(Outputs { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::from(celab::Error::from(e)))?;
        text.push('\n');
        fs::write(self.path(name), text)?;
        Ok(())
    }

    /// Writes `# key: value` header lines, then whatever `body` emits.
    pub fn csv<F>(&self, name: &str, header: &[(&str, String)], body: F) -> Result<(), Failure>
    where
        F: FnOnce(&mut BufWriter<File>) -> celab::Result<()>,
    {
        let mut out = BufWriter::new(File::create(self.path(name))?);
        for (k, v) in header {
            writeln!(out, "# {k}: {v}")?;
        }
        body(&mut out)?;
        out.flush()?;
        Ok(())
    }
}
