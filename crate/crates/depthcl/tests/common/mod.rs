#![allow(dead_code)]

use std::path::{Path, PathBuf};

use depthcl::config::{ResolvedConfig, SequenceConfig};

/// Three 16x16 indoor datasets of 12 samples and a two-stage network small
/// enough for a full sequence to train in well under a second.
pub fn tiny_toml(seed: u64, kind: &str, extra: &str) -> String {
    let mut s = format!("seed = {seed}\ncount = 12\neval_fraction = 0.25\n");
    for p in ["rgbd-dense", "room-scan", "feature-track"] {
        s.push_str(&format!("[[datasets]]\npreset = \"{p}\"\nheight = 16\nwidth = 16\n"));
    }
    s.push_str("[model]\nwidths = [4, 6]\nhead_width = 3\n");
    s.push_str(&format!("[strategy]\nkind = \"{kind}\"\ncapacity = 4\nfisher_samples = 4\ncmp_candidates = 6\n"));
    s.push_str("[train]\nbatch_size = 4\n");
    s.push_str(extra);
    s
}

pub fn tiny(seed: u64, kind: &str) -> ResolvedConfig {
    SequenceConfig::from_toml(&tiny_toml(seed, kind, "")).unwrap().resolve().unwrap()
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
