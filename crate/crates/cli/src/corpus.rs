//! Directory listing and clean/protected pairing. Pairs are matched by
//! file stem only — never by content — so `protect` may change the
//! extension (it always writes PNG) without breaking alignment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use waveguard::{Error, Result};

const IMAGE_EXTS: [&str; 3] = ["png", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Image files in `dir`, sorted by file name. Empty is an error.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Input(format!(
            "no images (png/jpg/jpeg) in {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn stem_map(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    for path in list_images(dir)? {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Input(format!("unusable file name: {}", path.display())))?
            .to_string();
        if let Some(prev) = map.insert(stem.clone(), path.clone()) {
            return Err(Error::Input(format!(
                "ambiguous pair stem \"{stem}\": {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(map)
}

/// Aligns two corpora by file stem, sorted. Any stem present on one side
/// only is a usage error listing the missing pairs.
pub fn pair_by_stem(
    clean_dir: &Path,
    protected_dir: &Path,
) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let clean = stem_map(clean_dir)?;
    let mut protected = stem_map(protected_dir)?;
    let mut pairs = Vec::with_capacity(clean.len());
    let mut missing_protected = Vec::new();
    for (stem, cpath) in clean {
        match protected.remove(&stem) {
            Some(ppath) => pairs.push((stem, cpath, ppath)),
            None => missing_protected.push(stem),
        }
    }
    let missing_clean: Vec<String> = protected.into_keys().collect();
    if !missing_protected.is_empty() || !missing_clean.is_empty() {
        let mut msg = String::from("corpora are misaligned:");
        if !missing_protected.is_empty() {
            msg.push_str(&format!(
                " missing from {}: [{}]",
                protected_dir.display(),
                missing_protected.join(", ")
            ));
        }
        if !missing_clean.is_empty() {
            msg.push_str(&format!(
                " missing from {}: [{}]",
                clean_dir.display(),
                missing_clean.join(", ")
            ));
        }
        return Err(Error::Input(msg));
    }
    Ok(pairs)
}
