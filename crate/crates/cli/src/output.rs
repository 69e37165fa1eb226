//! Deterministic artifact writers: CSV data files, the pass/fail summary,
//! and the segregated (non-reproducible) metadata file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// One acceptance-style check inside an experiment run.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Serialize)]
pub struct Summary<'a> {
    pub experiment: &'a str,
    pub seed: u64,
    pub status: &'a str,
    pub checks: &'a [Check],
    pub versions: Versions,
}

#[derive(Serialize)]
pub struct Versions {
    pub jumplab: &'static str,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            jumplab: env!("CARGO_PKG_VERSION"),
        }
    }
}

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_text(&self, name: &str, content: &str) -> anyhow::Result<()> {
        fs::write(self.path(name), content)?;
        Ok(())
    }

    /// CSV from a header and row formatter; floats use the shortest
    /// round-trip encoding, so identical runs produce identical bytes.
    pub fn write_csv<T>(
        &self,
        name: &str,
        header: &str,
        rows: &[T],
        mut fmt: impl FnMut(&T) -> String,
    ) -> anyhow::Result<()> {
        let mut out = String::with_capacity(rows.len() * 32 + header.len() + 1);
        out.push_str(header);
        out.push('\n');
        for r in rows {
            out.push_str(&fmt(r));
            out.push('\n');
        }
        self.write_text(name, &out)
    }

    pub fn write_summary(
        &self,
        experiment: &str,
        seed: u64,
        checks: &[Check],
    ) -> anyhow::Result<bool> {
        let pass = checks.iter().all(|c| c.pass);
        let summary = Summary {
            experiment,
            seed,
            status: if pass { "pass" } else { "fail" },
            checks,
            versions: Versions::default(),
        };
        self.write_text(
            "summary.json",
            &format!("{}\n", serde_json::to_string_pretty(&summary)?),
        )?;
        Ok(pass)
    }

    pub fn write_error_summary(
        &self,
        experiment: &str,
        seed: u64,
        message: &str,
    ) -> anyhow::Result<()> {
        #[derive(Serialize)]
        struct ErrorSummary<'a> {
            experiment: &'a str,
            seed: u64,
            status: &'a str,
            error: &'a str,
            versions: Versions,
        }
        let summary = ErrorSummary {
            experiment,
            seed,
            status: "config-error",
            error: message,
            versions: Versions::default(),
        };
        self.write_text(
            "summary.json",
            &format!("{}\n", serde_json::to_string_pretty(&summary)?),
        )?;
        Ok(())
    }

    /// Wall-clock metadata lives apart from the reproducible artifacts.
    pub fn write_metadata(&self, wall_seconds: f64) -> anyhow::Result<()> {
        #[derive(Serialize)]
        struct Metadata {
            wall_time_seconds: f64,
            unix_timestamp: u64,
        }
        let meta = Metadata {
            wall_time_seconds: wall_seconds,
            unix_timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        self.write_text(
            "metadata.json",
            &format!("{}\n", serde_json::to_string_pretty(&meta)?),
        )?;
        Ok(())
    }
}
