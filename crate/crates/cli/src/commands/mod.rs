pub mod augment;
pub mod contextmap;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod mine;
pub mod simdet;
pub mod stats;
pub mod synth;
pub mod tile;

use std::path::{Path, PathBuf};

use rarespot_core::io::{ensure_dir, write_json};
use rarespot_core::ClassRegistry;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{sidecar_for, RunConfig, RESOLVED_CONFIG};
use crate::error::CliResult;

/// Applies `f` to every item on the worker pool; results keep input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(usize, &T) -> CliResult<R> + Sync + Send) -> CliResult<Vec<R>> {
    items.par_iter().enumerate().map(|(k, t)| f(k, t)).collect()
}

pub fn classes(list: Option<&str>) -> CliResult<ClassRegistry> {
    Ok(match list {
        Some(s) => ClassRegistry::parse_list(s)?,
        None => ClassRegistry::default(),
    })
}

pub fn make_dir(dir: &Path) -> CliResult<()> {
    Ok(ensure_dir(dir)?)
}

/// Writes `value` as JSON to `out` and the resolved config beside it.
pub fn write_report<T: Serialize>(out: &Path, value: &T, config: &RunConfig) -> CliResult<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        make_dir(dir)?;
    }
    write_json(out, value)?;
    config.write(&sidecar_for(out))
}

pub fn write_dir_config(dir: &Path, config: &RunConfig) -> CliResult<()> {
    config.write(&dir.join(RESOLVED_CONFIG))
}

/// Path as text with forward slashes, for reports.
pub fn show(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

pub fn file_name(p: &Path) -> PathBuf {
    PathBuf::from(p.file_name().unwrap_or_default())
}
