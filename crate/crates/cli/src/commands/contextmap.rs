use std::path::PathBuf;

use rarespot_core::context::build_context_map;
use rarespot_core::io::{load_rgb, read_manifest, stem, write_manifest};

use super::{make_dir, par_map, write_dir_config};
use crate::config::{need, ContextmapSection, RunConfig};
use crate::error::{invalid, CliResult};

pub fn run(cfg: ContextmapSection, seed: u64) -> CliResult<()> {
    let out = need(&cfg.out, "out")?;
    let thresholds = cfg.hsv.thresholds();
    let resolved = RunConfig {
        master_seed: Some(seed),
        contextmap: cfg.clone(),
        ..Default::default()
    };
    match (&cfg.input, &cfg.manifest) {
        (Some(img), None) => {
            let map = build_context_map(&load_rgb(img)?, &thresholds);
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                make_dir(dir)?;
            }
            map.save(&out)?;
            resolved.write(&out.with_extension("config.toml"))
        }
        (None, Some(m)) => {
            let images = read_manifest(m)?;
            make_dir(&out)?;
            let written: Vec<PathBuf> = par_map(&images, |_, img| {
                let map = build_context_map(&load_rgb(img)?, &thresholds);
                let path = out.join(format!("{}.png", stem(img)));
                map.save(&path)?;
                Ok(path)
            })?;
            write_manifest(out.join("manifest.txt"), &written)?;
            write_dir_config(&out, &resolved)
        }
        _ => invalid("give exactly one of --in or --manifest"),
    }
}
