//! Output files. Every file is written to a temporary sibling and renamed into
//! place, so a crash never leaves a partial file behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

/// Environment variable naming the directory that relative output paths are
/// resolved against.
pub const OUTPUT_ROOT_ENV: &str = "KSLAB_OUTPUT_ROOT";

/// Resolves the output directory: an explicit flag wins over the
/// configuration value, and relative paths hang off `$KSLAB_OUTPUT_ROOT`
/// when it is set.
pub fn resolve_output_dir(flag: Option<&Path>, configured: &Path) -> PathBuf {
    let dir = flag.unwrap_or(configured);
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Hex SHA-256 of `bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Run description written next to the data files.
pub struct Manifest {
    pub experiment: String,
    pub canonical_config: String,
    pub grid: String,
    pub dt_policy: String,
    pub status: String,
    pub files: Vec<String>,
}

impl Manifest {
    /// Renders the manifest. Only the `# created_unix` line varies between
    /// identical runs.
    pub fn render(&self) -> String {
        let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut s = format!("# created_unix = {created}\n");
        s.push_str(&format!("experiment = {}\n", self.experiment));
        s.push_str(&format!("config_sha256 = {}\n", content_hash(self.canonical_config.as_bytes())));
        s.push_str(&format!("grid = {}\n", self.grid));
        s.push_str(&format!("dt_policy = {}\n", self.dt_policy));
        s.push_str(&format!("status = {}\n", self.status));
        s.push_str(&format!("files = {}\n", self.files.join(", ")));
        s.push_str(&format!("kslab_version = {}\n", env!("CARGO_PKG_VERSION")));
        s.push_str("[inputs]\n");
        s.push_str(&self.canonical_config);
        s
    }
}
