//! Parameter checkpoints: a JSON manifest of `(name, shape, offset)` plus a
//! blob of little-endian `f32` values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::array::DenseArray;
use super::store::ParameterStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub blob: String,
    pub entries: Vec<ManifestEntry>,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes named arrays as `<path>` (manifest) and `<path>` with a `.bin`
/// extension (blob).
pub fn write_arrays<'a>(
    path: &Path,
    arrays: impl IntoIterator<Item = (&'a str, &'a DenseArray)>,
) -> Result<()> {
    let blob_file = blob_path(path);
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, value) in arrays {
        entries.push(ManifestEntry {
            name: name.to_string(),
            shape: value.shape().to_vec(),
            offset: blob.len() as u64,
        });
        for v in value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        blob: blob_file
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        entries,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&blob_file, &blob).map_err(|e| Error::io(&blob_file, e))?;
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads every array named in a manifest, in manifest order.
pub fn read_arrays(path: &Path) -> Result<Vec<(String, DenseArray)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("bad manifest {}: {e}", path.display())))?;
    let blob_file = path.with_file_name(&manifest.blob);
    let blob = fs::read(&blob_file).map_err(|e| Error::io(&blob_file, e))?;
    let mut out = Vec::with_capacity(manifest.entries.len());
    for e in manifest.entries {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 4 * n;
        if end > blob.len() {
            return Err(Error::Checkpoint(format!(
                "entry `{}` runs past the end of {}",
                e.name,
                blob_file.display()
            )));
        }
        let data = blob[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let arr = DenseArray::new(e.shape, data)
            .map_err(|err| Error::Checkpoint(format!("entry `{}`: {err}", e.name)))?;
        out.push((e.name, arr));
    }
    Ok(out)
}

pub fn save_store(store: &ParameterStore, path: &Path) -> Result<()> {
    write_arrays(
        path,
        store.entries().iter().map(|e| (e.name.as_str(), &e.value)),
    )
}

/// Loads values into an already-built store. Names and shapes must match
/// exactly; gradients are left untouched.
pub fn load_store(store: &mut ParameterStore, path: &Path) -> Result<()> {
    let arrays = read_arrays(path)?;
    if arrays.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} entries, model expects {}",
            arrays.len(),
            store.len()
        )));
    }
    for (name, value) in arrays {
        let id = store
            .id(&name)
            .map_err(|_| Error::Checkpoint(format!("unexpected entry `{name}`")))?;
        if store.value(id).shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "entry `{name}` has shape {:?}, model expects {:?}",
                value.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = value;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RandomStream;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut s = ParameterStore::new();
        let mut r = RandomStream::new("init", 3);
        s.insert_linear_weight("a", 3, 4, &mut r).unwrap();
        s.insert_embedding("b", 5, 2, &mut r).unwrap();
        save_store(&s, &path).unwrap();

        let mut t = ParameterStore::new();
        t.insert_zeros("a", &[3, 4]).unwrap();
        t.insert_zeros("b", &[5, 2]).unwrap();
        load_store(&mut t, &path).unwrap();
        assert_eq!(s.fingerprint(), t.fingerprint());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut s = ParameterStore::new();
        s.insert_zeros("a", &[3, 4]).unwrap();
        save_store(&s, &path).unwrap();
        let mut t = ParameterStore::new();
        t.insert_zeros("a", &[4, 3]).unwrap();
        assert!(matches!(load_store(&mut t, &path), Err(Error::Checkpoint(_))));
    }
}
