#![allow(dead_code)]

use std::path::{Path, PathBuf};

use metaaf::cli::main_with;
use serde_json::Value;

/// A scratch directory that doubles as the data root of every config
/// written into it.
pub struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Absolute path as a TOML string body.
    pub fn quoted(&self, rel: &str) -> String {
        format!("\"{}\"", self.path(rel).display().to_string().replace('\\', "/"))
    }

    pub fn config(&self, name: &str, body: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, format!("data_root = {}\n{body}", self.quoted(""))).unwrap();
        p
    }

    pub fn run(&self, command: &str, config: &Path, out: Option<&str>) -> i32 {
        let mut args = vec!["metaaf".to_string(), "--deterministic".into(), command.into(), "--config".into()];
        args.push(config.display().to_string());
        if let Some(o) = out {
            args.push("--out".into());
            args.push(self.path(o).display().to_string());
        }
        main_with(args.into_iter().map(Into::into))
    }

    /// Runs a command that must succeed.
    pub fn ok(&self, command: &str, config_name: &str, body: &str, out: Option<&str>) {
        let cfg = self.config(config_name, body);
        let code = self.run(command, &cfg, out);
        assert_eq!(code, 0, "{command} with {config_name} exited {code}");
    }

    pub fn jsonl(&self, rel: &str) -> Vec<Value> {
        std::fs::read_to_string(self.path(rel))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    /// The record of one canceller in an eval report.
    pub fn report_entry(&self, rel: &str, canceller: &str) -> Value {
        self.jsonl(rel)
            .into_iter()
            .find(|r| r["canceller"] == canceller)
            .unwrap_or_else(|| panic!("{canceller} missing from {rel}"))
    }
}

pub fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}
