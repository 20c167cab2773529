//! Output files: atomic writes, schema tags and the resolved config.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Writes `bytes` to `dir/name` through a temporary file and a rename, so
/// readers never see a partial file.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, &path)?;
    Ok(path)
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> io::Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    write_atomic(dir, name, text.as_bytes())
}

/// `#` comment lines with the schema tag and the config, followed by `body`.
pub fn with_header<C: Serialize>(schema: &str, config: &C, body: &[u8]) -> Vec<u8> {
    let mut out = format!("# schema: {schema}\n# config: {}\n", serde_json::to_string(config).unwrap_or_default()).into_bytes();
    out.extend_from_slice(body);
    out
}
