//! Atomic file output and checkpoint bundles (binary tensors + JSON manifest).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ampforge_numerics::checkpoint::{manifest, read_checkpoint, write_checkpoint, Manifest};
use ampforge_numerics::ParamStore;

use crate::{Error, Result};

/// Writes through a temporary sibling file and renames it into place, so a
/// crash never leaves a half-written artifact under the final name.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            fs::rename(&tmp, path)?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub fn write_atomic_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, |w| Ok(w.write_all(bytes)?))
}

pub fn write_json_pretty<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// `model.ckpt` → `model.ckpt.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn save_bundle(path: &Path, store: &ParamStore, meta: serde_json::Value) -> Result<()> {
    write_atomic(path, |w| Ok(write_checkpoint(w, store)?))?;
    write_json_pretty(&manifest_path(path), &manifest(store, meta))
}

pub fn load_bundle(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let mpath = manifest_path(path);
    let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(&mpath)?))?;
    let store = read_checkpoint(BufReader::new(File::open(path)?))?;
    let listed: Vec<(&str, &[usize])> = manifest
        .tensors
        .iter()
        .map(|t| (t.name.as_str(), t.shape.as_slice()))
        .collect();
    let actual: Vec<(&str, &[usize])> = store.iter().map(|(n, p)| (n, p.value.shape())).collect();
    if listed != actual {
        return Err(Error::Config(format!(
            "checkpoint {} does not match its manifest",
            path.display()
        )));
    }
    Ok((store, manifest.meta))
}
