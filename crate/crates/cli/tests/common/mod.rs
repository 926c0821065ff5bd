#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LABELS: [&str; 4] = ["top", "bottom", "shoe", "bag"];

pub fn grec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grec")).args(args).env_remove("GREC_SERVER").output().expect("run grec")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Seeded synthetic catalog: JSONL manifest plus CSV embeddings.
pub fn write_catalog(dir: &Path, n: usize, dim: usize, seed: u64) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = String::new();
    let mut csv = format!("id,dim={dim}\n");
    let mut counts = [0usize; 4];
    for i in 0..n {
        let label = i % LABELS.len();
        counts[label] += 1;
        let id = format!("sku-{i:03}");
        manifest.push_str(&format!(
            "{{\"id\":\"{id}\",\"image\":\"images/{id}.png\",\"labels\":[\"{}\"],\"split\":\"train\"}}\n",
            LABELS[label]
        ));
        // Items sharing a label cluster around a common direction.
        let values: Vec<String> = (0..dim)
            .map(|d| {
                let centre = if d % LABELS.len() == label { 1.0f32 } else { 0.0 };
                (centre + rng.gen_range(-0.4f32..0.4)).to_string()
            })
            .collect();
        csv.push_str(&format!("{id},{}\n", values.join(",")));
    }
    let freqs: Vec<String> =
        LABELS.iter().zip(counts).map(|(l, c)| format!("\"{l}\":{}", c as f64 / n as f64)).collect();
    manifest.push_str(&format!("{{\"__frequencies__\":{{{}}}}}\n", freqs.join(",")));
    let (m, e) = (dir.join("catalog.jsonl"), dir.join("embeddings.csv"));
    std::fs::write(&m, manifest).unwrap();
    std::fs::write(&e, csv).unwrap();
    (m, e)
}
