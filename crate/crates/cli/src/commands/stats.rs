use std::fmt::Write as _;

use rarespot_core::tiling::{dataset_stats, DatasetStats};

use super::{classes, show, write_report};
use crate::config::{RunConfig, StatsSection};
use crate::error::CliResult;

fn table(s: &DatasetStats) -> String {
    let mut t = String::new();
    let width = s.classes.iter().filter_map(|c| c.name.as_ref().map(String::len)).max().unwrap_or(5).max(5);
    writeln!(t, "{:<width$}  {:>8}  {:>9}  {:>21}  {:>21}", "class", "boxes", "per tile", "width min/mean/max", "height min/mean/max").unwrap();
    for c in &s.classes {
        let name = c.name.clone().unwrap_or_else(|| format!("#{}", c.class_id));
        writeln!(
            t,
            "{name:<width$}  {:>8}  {:>9.4}  {:>6.1}/{:>6.1}/{:>6.1}  {:>6.1}/{:>6.1}/{:>6.1}",
            c.count, c.per_tile_mean, c.width.min, c.width.mean, c.width.max, c.height.min, c.height.mean, c.height.max
        )
        .unwrap();
    }
    writeln!(t, "tiles: {}", s.tiles).unwrap();
    t
}

pub fn run(cfg: StatsSection, seed: u64) -> CliResult<()> {
    let registry = classes(cfg.classes.as_deref())?;
    let stats = dataset_stats(cfg.manifest()?, &registry)?;
    for m in &stats.missing {
        log::warn!("missing: {}", show(m));
    }
    print!("{}", table(&stats));
    if let Some(out) = cfg.out.clone() {
        write_report(
            &out,
            &stats,
            &RunConfig {
                master_seed: Some(seed),
                stats: cfg,
                ..Default::default()
            },
        )?;
    }
    Ok(())
}
