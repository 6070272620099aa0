//! Writes synthetic table pools, datasets and a sweep spec to a directory.
//!
//! ```text
//! cargo run -p span-ensemble --example write_demo -- demo
//! ```

use std::path::{Path, PathBuf};

use serde_json::json;
use span_ensemble::eval::write_dataset;
use span_ensemble::synthetic::{knowledge_suite, RobustnessSuite, SCENARIOS};
use span_ensemble::TableLm;

fn write_pool(dir: &Path, name: &str, models: &[TableLm]) -> std::io::Result<PathBuf> {
    let tables = dir.join("tables");
    std::fs::create_dir_all(&tables)?;
    let mut entries = Vec::new();
    for m in models {
        let file = m.to_file();
        let model_name = file.name.clone().unwrap_or_default();
        let rel = format!("tables/{model_name}.json");
        std::fs::write(dir.join(&rel), serde_json::to_string_pretty(&file)?)?;
        entries.push(json!({"type": "table", "path": rel}));
    }
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&entries)?)?;
    Ok(path)
}

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo".into()));
    std::fs::create_dir_all(&dir)?;

    let suite = RobustnessSuite::new(200, 5);
    for name in SCENARIOS {
        let path = write_pool(&dir, name, &suite.scenario(name).expect("known scenario"))?;
        println!("wrote {}", path.display());
    }
    write_dataset(&dir.join("robustness.jsonl"), &suite.examples)?;

    let (examples, models) = knowledge_suite(50);
    write_pool(&dir, "knowers", &models)?;
    write_dataset(&dir.join("knowledge.jsonl"), &examples)?;

    let spec = json!({
        "span_lengths": [1, 4],
        "lambdas": [0, 10, 20, 40],
        "filter": [true, false],
        "pool_scenarios": SCENARIOS.iter().map(|s| json!({"name": s, "pool": format!("{s}.json")})).collect::<Vec<_>>(),
        "dataset": "robustness.jsonl",
        "metric": "em",
        "max_words": 4
    });
    std::fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&spec)?)?;
    println!("wrote datasets and sweep spec to {}", dir.display());
    Ok(())
}
