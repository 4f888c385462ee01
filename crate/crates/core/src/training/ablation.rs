use std::path::Path;

use serde::Serialize;

use super::config::{AblationFlags, TrainConfig};
use super::run::train;
use crate::data::Dataset;
use crate::error::Result;
use crate::eval::{evaluate_split, ConvEmbedder, VerificationReport};

/// One configuration of the cumulative ablation ladder.
#[derive(Clone, Debug)]
pub struct AblationRung {
    pub name: &'static str,
    pub config: TrainConfig,
}

/// Rung names, each adding one component to its predecessor.
pub const LADDER: [&str; 8] = [
    "baseline",
    "+multiscale_l1",
    "+identity",
    "+self_attention",
    "+local_critic",
    "+equalization",
    "+cls",
    "+contrastive",
];

/// The eight cumulative configurations, starting from single-scale L1 with a global critic.
pub fn ablation_ladder(base: &TrainConfig) -> Vec<AblationRung> {
    let mut flags = AblationFlags {
        pixel: true,
        multiscale_pixel: false,
        identity_loss: false,
        self_attention: false,
        local_critic: false,
        equalization: false,
        cls_loss: false,
        contrastive_loss: false,
    };
    let enable: [fn(&mut AblationFlags); 7] = [
        |f| f.multiscale_pixel = true,
        |f| f.identity_loss = true,
        |f| f.self_attention = true,
        |f| f.local_critic = true,
        |f| f.equalization = true,
        |f| f.cls_loss = true,
        |f| f.contrastive_loss = true,
    ];
    let mut rungs = Vec::with_capacity(LADDER.len());
    for (i, name) in LADDER.iter().enumerate() {
        if i > 0 {
            enable[i - 1](&mut flags);
        }
        let mut config = base.clone();
        config.ablation = flags.clone();
        rungs.push(AblationRung { name, config });
    }
    rungs
}

/// Outcome of one rung; failures are recorded and the ladder continues.
#[derive(Clone, Debug, Serialize)]
pub struct RungResult {
    pub name: String,
    pub report: std::result::Result<VerificationReport, String>,
}

/// Trains and evaluates every rung under `out_dir/<index>_<name>`.
pub fn run_ablation(
    base: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    out_dir: &Path,
    on_rung: &mut dyn FnMut(&RungResult),
) -> Result<Vec<RungResult>> {
    let embedder = ConvEmbedder::standard(base.model.image_size)?;
    let mut results = Vec::new();
    for (i, rung) in ablation_ladder(base).into_iter().enumerate() {
        let dir = out_dir.join(format!("{i}_{}", rung.name.trim_start_matches('+')));
        let report = train(&rung.config, train_set, &dir)
            .and_then(|out| evaluate_split(test_set, Some(&out.state.generator), &embedder))
            .map_err(|e| e.to_string());
        let r = RungResult {
            name: rung.name.to_string(),
            report,
        };
        on_rung(&r);
        results.push(r);
    }
    Ok(results)
}

/// Summary table with one row per rung.
pub fn write_ablation_csv<W: std::io::Write>(w: W, results: &[RungResult]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rung", "auc", "eer", "tar_at_far_1", "tar_at_far_5", "error"])?;
    for r in results {
        match &r.report {
            Ok(m) => out.write_record([
                r.name.clone(),
                format!("{:.4}", m.auc),
                format!("{:.4}", m.eer),
                format!("{:.4}", m.tar_at_far_1),
                format!("{:.4}", m.tar_at_far_5),
                String::new(),
            ])?,
            Err(e) => out.write_record([r.name.as_str(), "", "", "", "", e.as_str()])?,
        }
    }
    out.flush()?;
    Ok(())
}
