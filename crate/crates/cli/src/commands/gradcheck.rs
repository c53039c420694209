use rarespot_core::gradcheck::{gradcheck, GradcheckConfig, GradcheckOp};

use super::write_report;
use crate::config::{Dims, GradcheckSection, RunConfig};
use crate::error::{CliError, CliResult};

pub fn run(cfg: GradcheckSection, seed: u64) -> CliResult<()> {
    let Dims(c, h, w) = cfg.dims.unwrap_or(Dims(3, 4, 4));
    let mut check = GradcheckConfig::new(cfg.op.unwrap_or(GradcheckOp::Combined), (c, h, w), seed);
    if let Some(s) = cfg.step {
        check.step = s;
    }
    if let Some(t) = cfg.tolerance {
        check.tolerance = t;
    }
    check.loss = cfg.weights.options()?;
    let report = gradcheck(&check)?;
    println!(
        "{} {}x{}x{} seed {}: max rel error {:.3e} over {} coordinates (tolerance {:.0e}) {}",
        report.op,
        c,
        h,
        w,
        seed,
        report.max_rel_error,
        report.coordinates,
        report.tolerance,
        if report.passed { "PASS" } else { "FAIL" }
    );
    if let Some(out) = cfg.out.clone() {
        write_report(
            &out,
            &report,
            &RunConfig {
                master_seed: Some(seed),
                gradcheck: cfg,
                ..Default::default()
            },
        )?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "gradient check failed: relative error {:.3e} exceeds {:.0e}",
            report.max_rel_error, report.tolerance
        )))
    }
}
