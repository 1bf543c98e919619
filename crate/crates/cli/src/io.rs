//! Output files. JSON documents embed their provenance; every CSV gets a
//! `<name>.meta.json` sidecar with the same record.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use signoise_core::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(command: &str, config_digest: &str, seed: u64) -> Self {
        Self {
            tool: format!("signoise {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            config_digest: config_digest.to_string(),
            seed,
        }
    }
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Serialize)]
struct Sidecar<'a, T: Serialize> {
    provenance: &'a Provenance,
    file: String,
    sha256: String,
    #[serde(flatten)]
    extra: &'a T,
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, body: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&Document { provenance: prov, body })
        .map_err(|e| Error::Invalid(format!("cannot serialise {}: {e}", path.display())))?;
    text.push('\n');
    write(path, text.as_bytes())
}

/// Writes `bytes` to `path` and the sidecar `path.meta.json`.
pub fn write_csv<T: Serialize>(path: &Path, bytes: &[u8], prov: &Provenance, extra: &T) -> Result<PathBuf> {
    write(path, bytes)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let side = path.with_file_name(format!("{name}.meta.json"));
    let mut text = serde_json::to_string_pretty(&Sidecar {
        provenance: prov,
        file: name,
        sha256: sha256_hex(bytes),
        extra,
    })
    .map_err(|e| Error::Invalid(format!("cannot serialise metadata: {e}")))?;
    text.push('\n');
    write(&side, text.as_bytes())?;
    Ok(side)
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_error(path, e))
}

/// Sample CSVs in `dir`, sorted by file name; sidecars and summaries are
/// skipped.
pub fn sample_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_error(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .filter(|p| p.file_name().is_some_and(|n| n != "summary.csv"))
        .collect();
    out.sort();
    Ok(out)
}
