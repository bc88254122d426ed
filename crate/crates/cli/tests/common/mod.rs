#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use structoid_core::fixtures::{figure2_blobs, figure2_document};

pub const STRUCTOID: &str = env!("CARGO_BIN_EXE_structoid");
pub const MECH: &str = env!("CARGO_BIN_EXE_structoid-mech");

pub fn fixture_script() -> String {
    concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/mech.py").to_string()
}

/// A `structoid` service child process, killed on drop.
pub struct Service {
    child: Child,
    pub url: String,
}

impl Drop for Service {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Starts `structoid <args>` and waits for its "listening on" line.
pub fn spawn(args: &[&str]) -> Service {
    let mut child = Command::new(STRUCTOID)
        .args(args)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .expect("start service");
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().rsplit(' ').next().unwrap_or_default().to_string();
    assert!(url.starts_with("http://"), "unexpected banner `{line}`");
    Service { child, url }
}

pub fn structoid(args: &[&str]) -> Output {
    Command::new(STRUCTOID).args(args).output().expect("run structoid")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

/// Writes the sample document and its three content files into `dir`,
/// named like the last segment of each href.
pub fn write_sample(dir: &Path) -> PathBuf {
    let doc = dir.join("sampleDO.xml");
    std::fs::write(&doc, figure2_document()).unwrap();
    for (dsid, bytes) in figure2_blobs() {
        let name = match dsid.as_str() {
            "DS-2" => "DS-2.txt",
            "DS-3" => "DS-3.gif",
            _ => "DS-4.gif",
        };
        std::fs::write(dir.join(name), bytes).unwrap();
    }
    doc
}
