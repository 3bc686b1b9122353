//! Atomic file emission and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::CliConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

/// Output directory that records a checksum for every file it writes.
pub struct RunOutput {
    dir: PathBuf,
    entries: Vec<(String, String)>,
}

impl RunOutput {
    pub fn create(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.entries.push((name.to_string(), sha256_hex(bytes)));
        Ok(path)
    }

    /// Writes `config.txt` and `manifest.txt`, the latter headed by the
    /// configuration hash and master seed.
    pub fn finish(mut self, cfg: &CliConfig) -> std::io::Result<PathBuf> {
        let config_text = cfg.to_text();
        self.write("config.txt", config_text.as_bytes())?;
        let mut manifest = format!(
            "# config-sha256 {}\n# seed {}\n",
            sha256_hex(config_text.as_bytes()),
            cfg.seed
        );
        self.entries.sort();
        for (name, digest) in &self.entries {
            manifest.push_str(&format!("{digest} {name}\n"));
        }
        let path = self.dir.join("manifest.txt");
        write_atomic(&path, manifest.as_bytes())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn manifest_lists_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = RunOutput::create(dir.path()).unwrap();
        out.write("b.txt", b"bee").unwrap();
        out.write("a.txt", b"").unwrap();
        let cfg = CliConfig::default();
        let manifest = std::fs::read_to_string(out.finish(&cfg).unwrap()).unwrap();
        let lines: Vec<_> = manifest.lines().collect();
        assert!(lines[0].starts_with("# config-sha256 "));
        assert_eq!(lines[1], "# seed 0");
        assert_eq!(
            lines[2],
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855 a.txt"
        );
        assert!(lines[3].ends_with(" b.txt"));
        assert!(lines[4].ends_with(" config.txt"));
    }
}
