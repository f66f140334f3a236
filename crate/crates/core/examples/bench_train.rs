use std::time::Instant;

use acpp_core::centers::precompute_centers;
use acpp_core::pipeline::{init_finetune, init_pretrain, run_finetune, run_pretrain, Dataset, RunOptions, TrainConfig};
use acpp_core::schedule::ScheduleConfig;

fn env<T: std::str::FromStr>(k: &str, d: T) -> T {
    std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}

fn main() {
    let mut cfg = TrainConfig::default();
    cfg.seed = env("SEED", 0);
    cfg.model.base_width = env("W0", 8);
    cfg.model.latent_dim = env("D", 128);
    cfg.optimizer.learning_rate = env("LR", 1e-2);
    cfg.pretrain_iters = env("P", 0);
    cfg.finetune_iters = env("F", 100);
    cfg.eval.every = env("EVERY", 25);
    cfg.weights.aaco = env("WAACO", 1.0);
    cfg.weights.sup = env("WSUP", 1.0);
    cfg.weights.anco = env("WANCO", 1.0);
    cfg.weights.unsup = env("WUNSUP", 1.0);
    cfg.batch.positives_per_anchor = env("PPA", 3);
    cfg.batch.pixels_per_class = env("PPC", 16);
    cfg.lambda_a = env("LAMBDA", 0.2);
    cfg.tau_sa.tau_minus = env("TSA_MIN", 0.1);
    if env("FIXED", 0) == 1 {
        cfg.tau_an = ScheduleConfig::fixed(cfg.tau_an.tau_plus);
        cfg.tau_sa = ScheduleConfig::fixed(cfg.tau_sa.tau_plus);
    }
    if let Ok(v) = std::env::var("INT") {
        cfg.data.scene.intensity_means = v.split(',').map(|x| x.parse().unwrap()).collect();
    }
    if let Ok(v) = std::env::var("SHAPES") {
        cfg.data.scene.shapes = serde_json::from_str(&v).unwrap();
    }
    let data = Dataset::generate(&cfg.data).unwrap();
    let mut ck = init_pretrain(&cfg).unwrap();
    let t0 = Instant::now();
    if cfg.pretrain_iters > 0 {
        let rows = run_pretrain(&mut ck, &data, RunOptions::default()).unwrap();
        let r = rows.last().unwrap();
        println!("pretrain {:?}: ig {:.4} il {:.4} sup {:.4}", t0.elapsed(), r.inst_global, r.inst_local, r.sup);
    }
    let centers = precompute_centers(4, cfg.model.latent_dim, &cfg.uniformity).unwrap();
    let mut ft = init_finetune(&cfg, &ck, centers).unwrap();
    let t0 = Instant::now();
    let rows = run_finetune(&mut ft, &data, RunOptions::default()).unwrap();
    for r in &rows {
        if let Some(m) = &r.metrics {
            println!(
                "{:4} sup {:.3} anco {:.3} unsup {:.3} aaco {:.3} | dsc {:.3?} A {:.4?} D {:.4?} E {:.3?}",
                r.iteration, r.sup, r.anco, r.unsup, r.aaco, m.dsc, m.alignment_a, m.divergence_d, m.nn_error
            );
        }
    }
    println!("finetune {:?}", t0.elapsed());
}
