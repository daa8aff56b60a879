//! Output records: verdicts, the run summary and the manifest.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use taumfg::ModelSpec;

pub const SCHEMA: &str = "taumfg/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub status: Status,
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
    pub reason: Option<String>,
}

impl Verdict {
    pub fn check(name: &str, pass: bool, value: f64, tolerance: f64) -> Self {
        Verdict {
            name: name.into(),
            status: if pass { Status::Pass } else { Status::Fail },
            value: Some(value),
            tolerance: Some(tolerance),
            reason: None,
        }
    }

    /// `value <= tolerance`.
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self::check(name, value <= tolerance, value, tolerance)
    }

    /// `value >= tolerance`.
    pub fn at_least(name: &str, value: f64, tolerance: f64) -> Self {
        Self::check(name, value >= tolerance, value, tolerance)
    }

    pub fn skip(name: &str, reason: impl Into<String>) -> Self {
        Verdict { name: name.into(), status: Status::Skip, value: None, tolerance: None, reason: Some(reason.into()) }
    }

    pub fn with_reason(mut self, reason: impl Into<String>) -> Self {
        self.reason = Some(reason.into());
        self
    }
}

pub fn any_failed(v: &[Verdict]) -> bool {
    v.iter().any(|v| v.status == Status::Fail)
}

/// Tracks the files written to an output directory.
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
    started: f64,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl Output {
    pub fn create(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output { dir: dir.to_path_buf(), files: Vec::new(), started: now() })
    }

    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
    ) -> std::io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(self.dir.join(name))?);
        f(&mut w)?;
        use std::io::Write;
        w.flush()?;
        self.files.push(name.into());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            use std::io::Write;
            writeln!(w)
        })
    }

    /// Write `manifest.json` listing every file written so far.
    pub fn finish(mut self, command: &str, config: &Path, model: &ModelSpec, verdicts: &[Verdict]) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            schema: &'a str,
            command: &'a str,
            tool_version: &'a str,
            config: String,
            model: &'a ModelSpec,
            started_unix: f64,
            finished_unix: f64,
            outputs: Vec<String>,
            verdicts: &'a [Verdict],
        }
        let mut outputs = self.files.clone();
        outputs.push("manifest.json".into());
        let m = Manifest {
            schema: SCHEMA,
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            config: config.display().to_string(),
            model,
            started_unix: self.started,
            finished_unix: now(),
            outputs,
            verdicts,
        };
        self.write_json("manifest.json", &m)
    }
}
