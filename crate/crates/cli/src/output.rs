use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tlayer_core::{Error, Result};

use crate::config::RunConfig;

pub const SCHEMA: u32 = 1;

/// Exit status of a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Config,
    Unconverged,
    Invariant,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Config => 1,
            Status::Unconverged => 2,
            Status::Invariant => 3,
        }
    }

    pub fn from_error(e: &Error) -> Self {
        match e {
            Error::Unconverged { .. } => Status::Unconverged,
            Error::Invariant(_) => Status::Invariant,
            _ => Status::Config,
        }
    }

    /// The more severe of two statuses.
    pub fn worst(self, other: Status) -> Status {
        if other.code() > self.code() {
            other
        } else {
            self
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, I: Serialize, R: Serialize> {
    schema: u32,
    command: &'a str,
    version: &'a str,
    seed: u64,
    inputs: &'a I,
    result: &'a R,
}

pub struct OutputDir {
    pub dir: PathBuf,
    command: &'static str,
    seed: u64,
}

impl OutputDir {
    pub fn create(cfg: &RunConfig, command: &'static str) -> Result<Self> {
        let dir = cfg
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("tlayer-out").join(command));
        std::fs::create_dir_all(&dir).map_err(|e| {
            Error::Config(format!(
                "cannot create output directory {}: {e}",
                dir.display()
            ))
        })?;
        let probe = dir.join(".tlayer-write-probe");
        File::create(&probe)
            .and_then(|_| std::fs::remove_file(&probe))
            .map_err(|e| {
                Error::Config(format!(
                    "output directory {} is not writable: {e}",
                    dir.display()
                ))
            })?;
        Ok(Self {
            dir,
            command,
            seed: cfg.seed(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `<name>` as pretty JSON with the versioned envelope.
    pub fn json<I: Serialize, R: Serialize>(
        &self,
        name: &str,
        inputs: &I,
        result: &R,
    ) -> Result<PathBuf> {
        let env = Envelope {
            schema: SCHEMA,
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            inputs,
            result,
        };
        let path = self.path(name);
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, &env)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(path)
    }

    /// Opens `<name>` for a CSV writer.
    pub fn csv(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    pub fn display(&self) -> String {
        display(&self.dir)
    }
}

pub fn display(p: &Path) -> String {
    p.display().to_string()
}
