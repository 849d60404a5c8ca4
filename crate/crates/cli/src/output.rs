//! Atomic artifact writing: files land under the output directory via a
//! temporary name plus rename, each carrying the config hash and a
//! timestamp header line (the timestamp line is the one excluded from
//! golden comparisons).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

pub struct OutputDir {
    dir: PathBuf,
    config_hash: String,
}

impl OutputDir {
    pub fn new(dir: impl Into<PathBuf>, config_hash: String) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(OutputDir { dir, config_hash })
    }


    fn write_atomic(&self, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, &target)?;
        Ok(target)
    }

    /// CSV with a hash header, a timestamp header and a column-name row.
    pub fn write_csv(
        &self,
        name: &str,
        columns: &[&str],
        rows: &[Vec<f64>],
    ) -> std::io::Result<PathBuf> {
        let mut s = String::new();
        s.push_str(&format!("# config_hash={}\n", self.config_hash));
        s.push_str(&format!("# generated_unix={}\n", unix_now()));
        s.push_str(&columns.join(","));
        s.push('\n');
        for row in rows {
            let line: Vec<String> = row
                .iter()
                .map(|v| {
                    if v.is_nan() {
                        String::new()
                    } else {
                        format!("{v:.12e}")
                    }
                })
                .collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        self.write_atomic(name, s.as_bytes())
    }

    /// JSON artifact wrapping the payload with the config hash and timestamp.
    pub fn write_json<T: Serialize>(&self, name: &str, payload: &T) -> std::io::Result<PathBuf> {
        let body = serde_json::json!({
            "config_hash": self.config_hash,
            "generated_unix": unix_now(),
            "payload": payload,
        });
        let mut bytes = serde_json::to_vec_pretty(&body).expect("payload serializes");
        bytes.push(b'\n');
        self.write_atomic(name, &bytes)
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// One-line verdict record; the process exit code mirrors `passed`.
#[derive(Serialize)]
pub struct Verdict {
    pub verdict: &'static str,
    pub details: serde_json::Value,
}

impl Verdict {
    pub fn pass(details: serde_json::Value) -> Self {
        Verdict {
            verdict: "pass",
            details,
        }
    }

    pub fn fail(details: serde_json::Value) -> Self {
        Verdict {
            verdict: "fail",
            details,
        }
    }

    pub fn inconclusive(details: serde_json::Value) -> Self {
        Verdict {
            verdict: "inconclusive",
            details,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == "pass"
    }

    pub fn println(&self, label: &str, path: &Path) {
        println!("{label}: {} ({})", self.verdict, path.display());
    }
}
