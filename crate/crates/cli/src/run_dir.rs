use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Name of the argument snapshot written into every run directory.
pub const RUN_SNAPSHOT: &str = "run.toml";

/// Creates the output directory of a command: `out` if given, otherwise
/// `<root>/<command>-<UTC timestamp>` with a numeric suffix on collision.
pub fn create(root: &Path, command: &str, out: Option<&Path>) -> Result<PathBuf> {
    let dir = match out {
        Some(dir) => dir.to_path_buf(),
        None => {
            let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
            let base = root.join(format!("{command}-{stamp}"));
            let mut dir = base.clone();
            let mut n = 1;
            while dir.exists() {
                dir = PathBuf::from(format!("{}-{n}", base.display()));
                n += 1;
            }
            dir
        }
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

#[derive(Serialize)]
struct Snapshot<'a, A> {
    command: &'a str,
    version: &'a str,
    args: &'a A,
}

/// Records the command and its resolved arguments beside the outputs.
pub fn write_snapshot<A: Serialize>(dir: &Path, command: &str, args: &A) -> Result<()> {
    let snap = Snapshot {
        command,
        version: env!("CARGO_PKG_VERSION"),
        args,
    };
    let text = toml::to_string(&snap).context("serializing run snapshot")?;
    let path = dir.join(RUN_SNAPSHOT);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}
