use rarespot_core::eval::{evaluate_manifests, EvalOptions};

use super::{classes, show, write_report};
use crate::config::{need, EvalSection, RunConfig};
use crate::error::CliResult;

pub fn run(cfg: EvalSection, seed: u64) -> CliResult<()> {
    let registry = classes(cfg.classes.as_deref())?;
    let d = EvalOptions::default();
    let opts = EvalOptions {
        iou_threshold: cfg.iou.unwrap_or(d.iou_threshold),
        conf_threshold: cfg.conf.unwrap_or(d.conf_threshold),
        ap_method: cfg.ap_method.unwrap_or(d.ap_method),
    };
    let report = evaluate_manifests(&need(&cfg.dets, "dets")?, &need(&cfg.gts, "gts")?, &registry, &opts)?;
    for u in &report.unmatched {
        log::warn!("{}: no counterpart with the same stem", show(u));
    }
    print!("{}", report.to_table());
    if let Some(out) = cfg.out.clone() {
        write_report(
            &out,
            &report,
            &RunConfig {
                master_seed: Some(seed),
                eval: cfg,
                ..Default::default()
            },
        )?;
    }
    Ok(())
}
