use acpp_core::centers::precompute_centers;
use acpp_core::data::{generate_sample, SceneConfig, ShapeKind};
use acpp_core::pipeline::{
    init_finetune, init_pretrain, run_finetune, run_pretrain, Checkpoint, Dataset, LogRow, RunLog, RunOptions, Stage,
    TrainConfig,
};
use acpp_core::schedule::TemperatureSchedule;
use acpp_core::Error;

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.seed = 3;
    cfg.model.base_width = 4;
    cfg.model.latent_dim = 16;
    cfg.data.train_count = 40;
    cfg.data.validation_count = 4;
    cfg.data.labeled_ratio = 0.25;
    cfg.pretrain_iters = 4;
    cfg.finetune_iters = 6;
    cfg.eval.every = 3;
    cfg.eval.feature_images = 4;
    cfg.eval.alignment_pairs = 1;
    cfg.log_every = 1;
    cfg
}

fn pretrained(cfg: &TrainConfig, data: &Dataset) -> Checkpoint {
    let mut ck = init_pretrain(cfg).unwrap();
    run_pretrain(&mut ck, data, RunOptions::default()).unwrap();
    ck
}

fn finetuned(cfg: &TrainConfig, data: &Dataset, pre: &Checkpoint) -> (Checkpoint, Vec<LogRow>) {
    let centers = precompute_centers(cfg.model.num_classes, cfg.model.latent_dim, &cfg.uniformity).unwrap();
    let mut ck = init_finetune(cfg, pre, centers).unwrap();
    let rows = run_finetune(&mut ck, data, RunOptions::default()).unwrap();
    (ck, rows)
}

#[test]
fn runs_are_deterministic() {
    let cfg = small_config();
    let data = Dataset::generate(&cfg.data).unwrap();
    let a = pretrained(&cfg, &data);
    let b = pretrained(&cfg, &data);
    assert_eq!(a.encode().unwrap(), b.encode().unwrap());
    let (fa, ra) = finetuned(&cfg, &data, &a);
    let (fb, rb) = finetuned(&cfg, &data, &b);
    assert_eq!(ra, rb);
    assert_eq!(fa.encode().unwrap(), fb.encode().unwrap());
}

#[test]
fn resume_from_file_matches_straight_run() {
    let cfg = small_config();
    let data = Dataset::generate(&cfg.data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let pre = pretrained(&cfg, &data);
    let (straight, straight_rows) = finetuned(&cfg, &data, &pre);

    let centers = precompute_centers(cfg.model.num_classes, cfg.model.latent_dim, &cfg.uniformity).unwrap();
    let mut ck = init_finetune(&cfg, &pre, centers).unwrap();
    let mut rows = run_finetune(&mut ck, &data, RunOptions { stop_at: Some(2), log: None }).unwrap();
    let path = dir.path().join("mid.acpp");
    ck.save(&path).unwrap();
    let mut resumed = Checkpoint::load(&path).unwrap();
    rows.extend(run_finetune(&mut resumed, &data, RunOptions::default()).unwrap());
    assert_eq!(resumed.encode().unwrap(), straight.encode().unwrap());
    assert_eq!(rows, straight_rows);
}

#[test]
fn logged_components_add_up_and_follow_schedules() {
    let cfg = small_config();
    let data = Dataset::generate(&cfg.data).unwrap();
    let pre = init_pretrain(&cfg).unwrap();
    let mut p = pre.clone();
    let rows = run_pretrain(&mut p, &data, RunOptions::default()).unwrap();
    let tau_s = TemperatureSchedule::new(cfg.tau_s, cfg.pretrain_iters).unwrap();
    assert_eq!(rows.len(), cfg.pretrain_iters as usize);
    for r in &rows {
        assert_eq!(r.stage, Stage::Pretrain);
        assert!((r.total - r.component_sum()).abs() <= 1e-12 * r.total.abs().max(1.0));
        assert_eq!(r.tau_s, tau_s.temperature_at(r.iteration).unwrap());
        assert_eq!((r.anco, r.unsup, r.aaco), (0.0, 0.0, 0.0));
    }

    let (ft, rows) = finetuned(&cfg, &data, &p);
    let tau_an = TemperatureSchedule::new(cfg.tau_an, cfg.finetune_iters).unwrap();
    let tau_sa = TemperatureSchedule::new(cfg.tau_sa, cfg.finetune_iters).unwrap();
    for r in &rows {
        assert!((r.total - r.component_sum()).abs() <= 1e-12 * r.total.abs().max(1.0));
        assert_eq!(r.tau_an, tau_an.temperature_at(r.iteration).unwrap());
        assert_eq!(r.tau_sa, tau_sa.temperature_at(r.iteration).unwrap());
        assert_eq!((r.inst_global, r.inst_local), (0.0, 0.0));
        assert_eq!(r.aaco_active, r.aaco != 0.0);
        if r.aaco_active {
            assert!(r.allocation_hash.is_some());
        }
    }
    let last = rows.last().unwrap();
    assert_eq!(last.allocation_hash, ft.assignment.as_ref().map(|a| a.fingerprint()));
    assert!(last.metrics.is_some());
    assert!(rows.iter().filter(|r| r.metrics.is_some()).all(|r| (r.iteration + 1) % 3 == 0 || r.iteration + 1 == 6));
}

#[test]
fn ablation_weight_switches_off_adaptive_contrast() {
    let mut cfg = small_config();
    cfg.weights.aaco = 0.0;
    let data = Dataset::generate(&cfg.data).unwrap();
    let pre = pretrained(&cfg, &data);
    let (ft, rows) = finetuned(&cfg, &data, &pre);
    assert!(rows.iter().all(|r| r.aaco == 0.0 && !r.aaco_active));
    assert!(ft.means.as_ref().unwrap().initialized_flags().iter().any(|&b| b));
}

#[test]
fn supervised_loss_decreases_on_toy_set() {
    let mut cfg = TrainConfig::default();
    cfg.model.base_width = 8;
    cfg.pretrain_iters = 120;
    cfg.weights.inst_global = 0.0;
    cfg.weights.inst_local = 0.0;
    cfg.eval.every = 0;
    cfg.log_every = 1;
    let data = Dataset::generate(&cfg.data).unwrap();
    let mut ck = init_pretrain(&cfg).unwrap();
    let rows = run_pretrain(&mut ck, &data, RunOptions::default()).unwrap();
    let mean = |r: &[LogRow]| r.iter().map(|x| x.sup).sum::<f64>() / r.len() as f64;
    let (first, last) = (mean(&rows[..10]), mean(&rows[rows.len() - 10..]));
    assert!(last < first, "L_sup {first} -> {last}");
}

#[test]
fn stage_mismatch_is_rejected() {
    let cfg = small_config();
    let data = Dataset::generate(&cfg.data).unwrap();
    let mut ck = init_pretrain(&cfg).unwrap();
    assert!(matches!(run_finetune(&mut ck, &data, RunOptions::default()), Err(Error::Config(_))));
}

#[test]
fn dataset_and_log_files_round_trip() {
    let cfg = small_config();
    let data = Dataset::generate(&cfg.data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.acpp");
    data.save(&path).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), data);
    let freq = data.manifest().class_frequencies;
    assert!((freq.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let log_path = dir.path().join("log.csv");
    let mut ck = init_pretrain(&cfg).unwrap();
    let mut log = RunLog::create(&log_path, 4).unwrap();
    run_pretrain(&mut ck, &data, RunOptions { stop_at: Some(2), log: Some(&mut log) }).unwrap();
    drop(log);
    let mut log = RunLog::append(&log_path, 4).unwrap();
    run_pretrain(&mut ck, &data, RunOptions { stop_at: None, log: Some(&mut log) }).unwrap();
    drop(log);

    let mut reader = csv::Reader::from_path(&log_path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, RunLog::header(4));
    let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), cfg.pretrain_iters as usize);
    let iterations: Vec<u64> = records.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(iterations, vec![0, 1, 2, 3]);
    assert!(records.iter().all(|r| r.len() == header.len() && &r[1] == "pretrain"));
}

#[test]
fn ribbon_scenes_still_generate() {
    let scene = SceneConfig {
        shapes: vec![ShapeKind::Disk, ShapeKind::Annulus, ShapeKind::Ribbon],
        ..SceneConfig::default()
    };
    for id in 0..20 {
        let s = generate_sample(&scene, id).unwrap();
        assert!(s.class_counts(4).iter().all(|&c| c > 0));
    }
}
