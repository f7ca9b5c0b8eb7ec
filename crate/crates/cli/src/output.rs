//! Output directories. Each file is written under a `.partial` name and
//! renamed once complete, so an interrupted run leaves only clearly marked
//! partial files behind.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
    started: Instant,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new(), started: Instant::now() })
    }

    /// Writes `name` through `fill`, renaming into place on success.
    pub fn write<F>(&mut self, name: &str, fill: F) -> Result<()>
    where
        F: FnOnce(&mut dyn Write) -> Result<()>,
    {
        let target = self.root.join(name);
        let partial = self.root.join(format!("{name}.partial"));
        let file = File::create(&partial).with_context(|| format!("creating {}", partial.display()))?;
        let mut out = BufWriter::new(file);
        fill(&mut out)?;
        out.flush()?;
        drop(out);
        fs::rename(&partial, &target).with_context(|| format!("finalizing {}", target.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    /// Writes `manifest.json` last: the resolved configuration, the files
    /// produced and the wall time. Only the manifest carries timing.
    pub fn finish<C: Serialize>(mut self, command: &str, config: &C) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Manifest<'a, C> {
            tool: &'static str,
            version: &'static str,
            command: &'a str,
            config: &'a C,
            files: &'a [String],
            wall_seconds: f64,
        }
        let files = self.written.clone();
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            files: &files,
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        self.write_json("manifest.json", &manifest)?;
        Ok(self.root)
    }
}
