//! Run manifests: plain-text key=value records sufficient to reproduce a run
//! bit-exactly (command, resolved config and its hash, seeds, input digests,
//! library version).

use std::fmt::Display;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::KeyValueConfig;
use crate::error::{AdlError, Result};

/// Hex SHA-256 of a byte buffer.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of a file's contents.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let bytes = std::fs::read(path.as_ref())?;
    Ok(sha256_hex(&bytes))
}

/// A reproducibility record for one command invocation.
#[derive(Debug, Clone)]
pub struct Manifest {
    entries: KeyValueConfig,
}

impl Manifest {
    pub fn new(command: &str, resolved_config: &KeyValueConfig) -> Self {
        let mut entries = KeyValueConfig::new();
        entries.set("command", command);
        entries.set("version", env!("CARGO_PKG_VERSION"));
        entries.set(
            "config_sha256",
            sha256_hex(resolved_config.canonical().as_bytes()),
        );
        for (k, v) in resolved_config.iter() {
            entries.set(format!("config.{k}"), v);
        }
        Manifest { entries }
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.set(key, value);
    }

    /// Record the digest of an input file under `input.<label>`.
    pub fn record_input(&mut self, label: &str, path: impl AsRef<Path>) -> Result<()> {
        self.entries.set(
            format!("input.{label}"),
            format!("{}:{}", path.as_ref().display(), file_digest(&path)?),
        );
        Ok(())
    }

    /// Record the digest of a produced artifact under `artifact.<label>`.
    pub fn record_artifact(&mut self, label: &str, path: impl AsRef<Path>) -> Result<()> {
        self.entries.set(
            format!("artifact.{label}"),
            format!("{}:{}", path.as_ref().display(), file_digest(&path)?),
        );
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.entries.canonical())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Manifest> {
        let entries = KeyValueConfig::from_file(path.as_ref())?;
        if entries.get("command").is_none() {
            return Err(AdlError::Config(format!(
                "{} is not a manifest (no command entry)",
                path.as_ref().display()
            )));
        }
        Ok(Manifest { entries })
    }

    /// The config layer stored in this manifest, with the `config.` prefix
    /// stripped — feeding it back reproduces the run.
    pub fn stored_config(&self) -> KeyValueConfig {
        let mut cfg = KeyValueConfig::new();
        for (k, v) in self.entries.iter() {
            if let Some(name) = k.strip_prefix("config.") {
                cfg.set(name, v);
            }
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn digest_is_stable() {
        // SHA-256 of the empty string, a published constant.
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempdir().unwrap();
        let input = dir.path().join("data.bin");
        std::fs::write(&input, b"payload").unwrap();

        let cfg = KeyValueConfig::from_pairs(&["seed=7", "steps=10"]).unwrap();
        let mut m = Manifest::new("sample", &cfg);
        m.set("noise_seed", 7);
        m.record_input("dataset", &input).unwrap();

        let path = dir.path().join("manifest.txt");
        m.write(&path).unwrap();

        let back = Manifest::read(&path).unwrap();
        assert_eq!(back.get("command"), Some("sample"));
        assert_eq!(back.get("noise_seed"), Some("7"));
        assert_eq!(back.get("config.seed"), Some("7"));
        let stored = back.stored_config();
        assert_eq!(stored.get("steps"), Some("10"));

        // same config -> same hash; different config -> different hash
        let m2 = Manifest::new("sample", &cfg);
        assert_eq!(m.get("config_sha256"), m2.get("config_sha256"));
        let cfg2 = KeyValueConfig::from_pairs(&["seed=8", "steps=10"]).unwrap();
        let m3 = Manifest::new("sample", &cfg2);
        assert_ne!(m.get("config_sha256"), m3.get("config_sha256"));
    }

    #[test]
    fn non_manifest_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("stray.txt");
        std::fs::write(&path, "foo=bar\n").unwrap();
        assert!(Manifest::read(&path).is_err());
    }
}
