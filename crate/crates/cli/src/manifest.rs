use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: RunConfig,
    pub version: String,
    pub grid: Value,
    pub outputs: Vec<String>,
    pub wall_seconds: f64,
    /// sha256 over command, args, config and version.
    pub hash: String,
}

/// The output directory does not enter the hash.
pub fn run_hash(command: &str, args: &[String], config: &RunConfig) -> String {
    let mut kept = vec![];
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            kept.push(a);
        }
    }
    let key = json!({ "command": command, "args": kept, "config": config, "version": VERSION });
    hex::encode(Sha256::digest(key.to_string().as_bytes()))
}

/// Output directory plus everything written into it so far.
pub struct Bundle {
    dir: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

impl Bundle {
    pub fn open(dir: &Path, command: &str, args: &[String], config: &RunConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        let hash = run_hash(command, args, config);
        Ok(Bundle {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.into(),
                args: args.to_vec(),
                config: config.clone(),
                version: VERSION.into(),
                grid: json!({ "half_width": config.grid.half_width, "n_points": config.grid.n_points }),
                outputs: vec![],
                wall_seconds: 0.0,
                hash,
            },
            clock: Instant::now(),
        })
    }

    pub fn hash(&self) -> &str {
        &self.manifest.hash
    }

    fn put(&mut self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, body)?;
        self.manifest.outputs.push(name.into());
        Ok(path)
    }

    /// Objects get a `manifest_hash` key; anything else is wrapped.
    pub fn json(&mut self, name: &str, value: &Value) -> Result<PathBuf, CliError> {
        let mut v = match value {
            Value::Object(_) => value.clone(),
            other => json!({ "data": other }),
        };
        v["manifest_hash"] = json!(self.manifest.hash);
        let body = serde_json::to_string_pretty(&v)?;
        self.put(name, &(body + "\n"))
    }

    pub fn csv(&mut self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let text = format!("# manifest_hash {}\n{body}", self.manifest.hash);
        self.put(name, &text)
    }

    pub fn plot(&mut self, name: &str, script: &str) -> Result<PathBuf, CliError> {
        let text = format!("# manifest_hash {}\nset datafile separator ','\nset key autotitle columnheader\n{script}", self.manifest.hash);
        self.put(name, &text)
    }

    pub fn finish(mut self) -> Result<RunManifest, CliError> {
        self.manifest.wall_seconds = self.clock.elapsed().as_secs_f64();
        let body = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(self.dir.join("manifest.json"), body + "\n")?;
        check_artifacts(&self.dir, &self.manifest)?;
        Ok(self.manifest)
    }
}

/// Every listed output exists and contains the manifest hash.
pub fn check_artifacts(dir: &Path, m: &RunManifest) -> Result<(), CliError> {
    for name in &m.outputs {
        let text = std::fs::read_to_string(dir.join(name))?;
        if !text.contains(&m.hash) {
            return Err(CliError::Artifact(format!("{name} does not carry the manifest hash")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_on_config_and_args_only() {
        let c = RunConfig::default();
        let a = run_hash("fgr", &["--N".into(), "2".into()], &c);
        assert_eq!(a, run_hash("fgr", &["--N".into(), "2".into()], &c));
        assert_eq!(a.len(), 64);
        let mut d = c.clone();
        d.lambda = 2.5;
        assert_ne!(a, run_hash("fgr", &["--N".into(), "2".into()], &d));
        assert_ne!(a, run_hash("fgr", &["--N".into(), "3".into()], &c));
        let moved: Vec<String> = ["--N", "2", "--out", "/tmp/x"].iter().map(|s| s.to_string()).collect();
        assert_eq!(a, run_hash("fgr", &moved, &c));
        assert_eq!(a, run_hash("fgr", &["--N".into(), "2".into(), "--out=/tmp/y".into()], &c));
    }

    #[test]
    fn bundle_stamps_every_artifact() {
        let dir = std::env::temp_dir().join(format!("fgrlab-bundle-{}", std::process::id()));
        let mut b = Bundle::open(&dir, "test", &[], &RunConfig::default()).unwrap();
        b.json("a.json", &json!({ "x": 1.0 })).unwrap();
        b.json("b.json", &json!([1, 2])).unwrap();
        b.csv("c.csv", "x,y\n1,2\n").unwrap();
        b.plot("d.gp", "plot 'c.csv' using 1:2\n").unwrap();
        let m = b.finish().unwrap();
        assert_eq!(m.outputs.len(), 4);
        std::fs::write(dir.join("c.csv"), "x,y\n").unwrap();
        assert!(matches!(check_artifacts(&dir, &m), Err(CliError::Artifact(_))));
    }

    proptest::proptest! {
        #[test]
        fn output_directory_never_changes_the_hash(dir in "[a-z/]{1,20}", lambda in 0.5f64..5.0) {
            let c = RunConfig { lambda, ..RunConfig::default() };
            let base = run_hash("soliton", &["soliton".into()], &c);
            proptest::prop_assert_eq!(&base, &run_hash("soliton", &["soliton".into(), "--out".into(), dir.clone()], &c));
            proptest::prop_assert_eq!(&base, &run_hash("soliton", &["soliton".into(), format!("--out={dir}")], &c));
        }
    }
}
