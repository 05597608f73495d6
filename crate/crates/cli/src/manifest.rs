//! Line-oriented `key=value` run manifests.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.txt";
pub const MANIFEST_FORMAT: &str = "rbspde-lab-manifest/1";

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug)]
pub struct Manifest {
    dir: PathBuf,
    entries: Vec<(String, String)>,
    checks: Vec<Check>,
    artifacts: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(dir: &Path, command: &str) -> Self {
        let mut m = Self { dir: dir.to_path_buf(), entries: Vec::new(), checks: Vec::new(), artifacts: Vec::new() };
        m.set("format", MANIFEST_FORMAT);
        m.set("command", command);
        m
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Record `key=value`; a repeated key keeps its first position and takes the new value.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let v = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = v,
            None => self.entries.push((key.to_string(), v)),
        }
    }

    pub fn check(&mut self, name: &str, value: f64, bound: f64, passed: bool) -> bool {
        self.checks.push(Check { name: name.to_string(), passed, value, bound });
        passed
    }

    /// `value <= bound`.
    pub fn check_le(&mut self, name: &str, value: f64, bound: f64) -> bool {
        self.check(name, value, bound, value <= bound)
    }

    pub fn checks(&self) -> &[Check] {
        &self.checks
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Path for a new artifact in the output directory, recorded in the manifest.
    pub fn artifact(&mut self, name: &str) -> PathBuf {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
        self.dir.join(name)
    }

    pub fn artifacts(&self) -> &[String] {
        &self.artifacts
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(&format!("{k}={v}\n"));
        }
        for c in &self.checks {
            s.push_str(&format!(
                "check.{}={} value={:e} bound={:e}\n",
                c.name,
                if c.passed { "pass" } else { "fail" },
                c.value,
                c.bound
            ));
        }
        for a in &self.artifacts {
            s.push_str(&format!("artifact={a}\n"));
        }
        s.push_str(&format!("artifact={MANIFEST_NAME}\n"));
        s
    }

    pub fn write(&self) -> std::io::Result<PathBuf> {
        fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(MANIFEST_NAME);
        fs::write(&path, self.render())?;
        Ok(path)
    }
}
