use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

pub const SEED_ENV: &str = "SPINLOOP_SEED";

/// Flag values to overlay, keyed by dotted config path.
#[derive(Default)]
pub struct Flags(Map<String, Value>);

impl Flags {
    pub fn set<T: Serialize>(&mut self, path: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            insert(&mut self.0, path, serde_json::to_value(v).expect("flag values serialize"));
        }
        self
    }

    /// Sets `path` only when the list is non-empty.
    pub fn list<T: Serialize>(&mut self, path: &str, values: &[T]) -> &mut Self {
        if !values.is_empty() {
            self.set(path, Some(values));
        }
        self
    }
}

fn insert(map: &mut Map<String, Value>, path: &str, value: Value) {
    match path.split_once('.') {
        Some((head, rest)) => {
            let child = map.entry(head).or_insert_with(|| Value::Object(Map::new()));
            if !child.is_object() {
                *child = Value::Object(Map::new());
            }
            insert(child.as_object_mut().unwrap(), rest, value);
        }
        None => {
            map.insert(path.to_string(), value);
        }
    }
}

fn overlay(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => Ok(Some(s.trim().parse().with_context(|| format!("{SEED_ENV}='{s}' is not a u64"))?)),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("{SEED_ENV}: {e}"),
    }
}

/// Reads a config file. A provenance record written by this tool is
/// accepted too, and its embedded config is used.
pub fn load_config_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    match v {
        Value::Object(mut m) if m.contains_key("command") && m.contains_key("config") => Ok(m.remove("config").unwrap()),
        Value::Object(_) => Ok(v),
        _ => bail!("config {} must be a JSON object", path.display()),
    }
}

/// Defaults, then `SPINLOOP_SEED` at `seed_path`, then the config file, then flags.
pub fn resolve<C: Serialize + DeserializeOwned + Default>(
    file: Option<&Path>,
    seed_path: &str,
    flags: Flags,
) -> Result<C> {
    let mut merged = serde_json::to_value(C::default())?;
    if let Some(seed) = env_seed()? {
        let mut env = Map::new();
        insert(&mut env, seed_path, seed.into());
        overlay(&mut merged, Value::Object(env));
    }
    if let Some(path) = file {
        overlay(&mut merged, load_config_file(path)?);
    }
    overlay(&mut merged, Value::Object(flags.0));
    serde_json::from_value(merged).context("invalid configuration")
}

pub fn envelope<C: Serialize>(command: &str, config: &C, result: Value) -> Result<Value> {
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    Ok(json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(config)?,
        "result": result,
        "metadata": { "created_unix": created },
    }))
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".run.json");
    PathBuf::from(name)
}

/// Writes the provenance record next to a non-JSON output.
pub fn write_sidecar<C: Serialize>(out: &Path, command: &str, config: &C, result: Value) -> Result<()> {
    write_json(Some(&sidecar_path(out)), &envelope(command, config, result)?)
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// A file, or stdout when `path` is `None`.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

pub fn write_json(path: Option<&Path>, value: &Value) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn open(path: &Path) -> Result<std::io::BufReader<File>> {
    Ok(std::io::BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}
