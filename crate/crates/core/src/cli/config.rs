use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::Failure;

/// Options shared by every subcommand.
#[derive(clap::Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct CommonArgs {
    /// TOML file with a top-level table and one table per subcommand.
    #[arg(long, global = true, env = "LGLAB_CONFIG")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "LGLAB_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "LGLAB_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "LGLAB_THREADS")]
    pub threads: Option<usize>,
    /// Element type for new models: f32 or f64.
    #[arg(long, global = true, env = "LGLAB_PRECISION")]
    pub precision: Option<String>,
    /// Single-threaded numerics and no wallclock in metrics.
    #[arg(long, global = true, env = "LGLAB_DETERMINISTIC")]
    #[serde(default)]
    pub deterministic: bool,
}

/// Common options after layering and defaults.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub config_file: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub precision: String,
    pub deterministic: bool,
    pub threads: usize,
}

fn read_file(path: Option<&Path>) -> Result<Map<String, Value>, Failure> {
    let Some(path) = path else { return Ok(Map::new()) };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
    match serde_json::to_value(table) {
        Ok(Value::Object(m)) => Ok(m),
        _ => Err(Failure::Usage(format!("config {} is not a table", path.display()))),
    }
}

/// Overlays the non-null fields of `flags` (flags and environment, as
/// parsed) on the file values.
fn overlay<T: Serialize + for<'de> Deserialize<'de>>(file: Option<&Value>, flags: &T) -> Result<T, Failure> {
    let mut merged = match file {
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(Failure::Usage("config section is not a table".into())),
        None => Map::new(),
    };
    if let Value::Object(m) = serde_json::to_value(flags).map_err(|e| Failure::Usage(e.to_string()))? {
        for (k, v) in m {
            if !v.is_null() && v != Value::Bool(false) {
                merged.insert(k, v);
            } else {
                merged.entry(k).or_insert(v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Failure::Usage(format!("config: {e}")))
}

/// Resolves the common options and the subcommand's own options against
/// the config file: file < environment < flags.
pub fn resolve<T: Serialize + for<'de> Deserialize<'de>>(
    subcommand: &str,
    common: &CommonArgs,
    args: &T,
) -> Result<(RunConfig, T), Failure> {
    let file = read_file(common.config.as_deref())?;
    let mut top = file.clone();
    top.retain(|_, v| !v.is_object());
    let c: CommonArgs = overlay(Some(&Value::Object(top)), common)?;
    let args = overlay(file.get(subcommand), args)?;
    let precision = c.precision.unwrap_or_else(|| "f64".into());
    if precision != "f32" && precision != "f64" {
        return Err(Failure::Usage(format!("precision `{precision}` is not f32 or f64")));
    }
    let threads = if c.deterministic { 1 } else { c.threads.unwrap_or(0) };
    let run = RunConfig {
        subcommand: subcommand.to_string(),
        config_file: common.config.clone(),
        seed: c.seed.unwrap_or(0),
        out: c.out.unwrap_or_else(|| PathBuf::from(".")),
        precision,
        deterministic: c.deterministic,
        threads,
    };
    Ok((run, args))
}

#[derive(Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Writes `<out>/<subcommand>.manifest.json` with the resolved
/// configuration and a hash of every artifact.
pub fn write_manifest(run: &RunConfig, resolved: &impl Serialize, artifacts: &[PathBuf]) -> anyhow::Result<PathBuf> {
    let arts = artifacts
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(&run.out).unwrap_or(p);
            Ok(Artifact { path: rel.display().to_string(), sha256: sha256_file(p)? })
        })
        .collect::<std::io::Result<Vec<_>>>()?;
    let manifest = serde_json::json!({
        "tool": "lglab",
        "version": env!("CARGO_PKG_VERSION"),
        "run": run,
        "config": resolved,
        "artifacts": arts,
    });
    let path = run.out.join(format!("{}.manifest.json", run.subcommand));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

pub fn parse_range(s: &str) -> Result<(u32, u32), Failure> {
    let bad = || Failure::Usage(format!("range `{s}` is not LO-HI"));
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn parse_usize_range(s: &str) -> Result<(usize, usize), Failure> {
    let (a, b) = parse_range(s)?;
    Ok((a as usize, b as usize))
}

pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().map_err(|_| Failure::Usage(format!("bad list entry `{t}` in `{s}`"))))
        .collect()
}
