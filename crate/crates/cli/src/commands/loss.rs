use rarespot_core::loss::consistency_loss;
use rarespot_core::tensor::{read_tensor, write_tensor};
use rarespot_core::{Level, PyramidSet};
use serde::Serialize;

use super::{make_dir, write_report};
use crate::config::{need, LossSection, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct LossOutput {
    l_mse: f64,
    l_kl: f64,
    l_cos: f64,
    l_total: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
}

pub fn run(cfg: LossSection, seed: u64) -> CliResult<()> {
    let opts = cfg.weights.options()?;
    let pyr = PyramidSet::new(
        read_tensor(need(&cfg.p3, "p3")?)?,
        read_tensor(need(&cfg.p4, "p4")?)?,
        read_tensor(need(&cfg.p5, "p5")?)?,
    )?;
    let report = consistency_loss(&pyr, &opts)?;
    let out = LossOutput {
        l_mse: report.l_mse,
        l_kl: report.l_kl,
        l_cos: report.l_cos,
        l_total: report.l_total,
        alpha: report.weights.alpha,
        beta: report.weights.beta,
        gamma: report.weights.gamma,
    };
    if let Some(dir) = &cfg.grad_dir {
        make_dir(dir)?;
        for level in [Level::P3, Level::P4, Level::P5] {
            write_tensor(report.grads.total.level(level), dir.join(format!("grad_{}.rspt", level.name())))?;
        }
    }
    match cfg.out.clone() {
        Some(path) => write_report(
            &path,
            &out,
            &RunConfig {
                master_seed: Some(seed),
                loss: cfg,
                ..Default::default()
            },
        ),
        None => {
            let text = serde_json::to_string_pretty(&out).map_err(|e| CliError::Runtime(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}
