use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::HarnessConfig;

#[derive(Serialize)]
struct Envelope<'a, T> {
    schema_version: u32,
    kind: &'a str,
    tool_version: &'a str,
    config: &'a HarnessConfig,
    body: &'a T,
}

/// Writes `body` wrapped with the resolved config to
/// `<out_dir>/<kind>-<digest>.json`, where the digest covers the whole file.
/// Identical inputs therefore land on the same path.
pub fn write(config: &HarnessConfig, kind: &str, body: &impl Serialize) -> Result<PathBuf> {
    let envelope = Envelope {
        schema_version: config.schema_version,
        kind,
        tool_version: env!("CARGO_PKG_VERSION"),
        config,
        body,
    };
    let mut text = serde_json::to_string_pretty(&envelope).context("serializing artifact")?;
    text.push('\n');
    let digest = hex::encode(Sha256::digest(text.as_bytes()));
    let path = config.out_dir.join(format!("{kind}-{}.json", &digest[..16]));
    write_file(&path, &text)?;
    Ok(path)
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// The body of an artifact written by [`write`], or the whole document if
/// it is not wrapped.
pub fn unwrap_body(doc: serde_json::Value) -> serde_json::Value {
    match doc {
        serde_json::Value::Object(mut map) if map.contains_key("kind") && map.contains_key("body") => {
            map.remove("body").expect("checked")
        }
        other => other,
    }
}
