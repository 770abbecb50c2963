//! Config resolution shared by the subcommands: defaults, then the
//! `--config` file merged on top, then `--set` overrides, then the
//! dedicated flags. The result is echoed to the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use dynpmnn::config::{parse_override, set_dotted};
use dynpmnn::json::to_pretty;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::failure::{Classify, Failure};

pub const ECHO_FILE: &str = "effective_config.json";

/// Recursively overlay `top` onto `base`. A tagged object whose `kind`
/// differs replaces the base object instead of mixing fields.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            let kinds_differ =
                matches!((b.get("kind"), t.get("kind")), (Some(x), Some(y)) if x != y);
            if kinds_differ {
                *b = t;
                return;
            }
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, t) => *slot = t,
    }
}

pub fn merge_file(doc: &mut Value, file: Option<&Path>) -> Result<(), Failure> {
    if let Some(path) = file {
        let text =
            fs::read_to_string(path).config(&format!("reading config {}", path.display()))?;
        let top: Value =
            serde_json::from_str(&text).config(&format!("parsing config {}", path.display()))?;
        merge(doc, top);
    }
    Ok(())
}

pub fn apply_sets(
    doc: &mut Value,
    sets: &[String],
    extra: &[(String, Value)],
) -> Result<(), Failure> {
    for raw in sets {
        let (key, value) = parse_override(raw).config("--set")?;
        set_dotted(doc, &key, value).config("--set")?;
    }
    for (key, value) in extra {
        set_dotted(doc, key, value.clone()).config(key)?;
    }
    Ok(())
}

pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<&Path>,
    sets: &[String],
    extra: &[(String, Value)],
) -> Result<T, Failure> {
    let mut doc = serde_json::to_value(defaults).internal("serializing defaults")?;
    merge_file(&mut doc, file)?;
    apply_sets(&mut doc, sets, extra)?;
    serde_json::from_value(doc).config("invalid configuration")
}

pub fn prepare_out(dir: &Path) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).internal(&format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = to_pretty(value).internal("serializing output")?;
    fs::write(path, text).internal(&format!("writing {}", path.display()))
}

pub fn echo<T: Serialize>(out: &Path, config: &T) -> Result<(), Failure> {
    write_json(&out.join(ECHO_FILE), config)
}
