use rand::seq::index;

use crate::centers::{allocate_centers, Assignment, ClassCenters, EmpiricalMeans};
use crate::data::{augment, augment_with, make_view_batch, AugmentedSample, Dihedral, SegmentationSample};
use crate::error::{Error, Result};
use crate::evaluation::{
    alignment_metric, class_means, divergence_metric, nn_classifier_error, segmentation_metrics, MetricsReport,
};
use crate::losses::{
    aaco_loss, anco_loss, dice_ce_loss, instance_discrimination_loss, pseudo_label_ce_loss, pseudo_labels,
    relational_distribution, relational_query_grad, AacoBatch, LossValue, PositiveSampling,
};
use crate::model::{HeadGrads, HeadSelection, ImageForward, ParamStore, SegmentationNetwork, Sgd, StudentTeacher};
use crate::numerics::{softmax_into, RngStream, Tensor};
use crate::schedule::TemperatureSchedule;

use super::checkpoint::{iteration_rng, Checkpoint};
use super::config::{Stage, TrainConfig};
use super::dataset::Dataset;
use super::runlog::{LogRow, RunLog};

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Stop after this many completed iterations (defaults to the stage length).
    pub stop_at: Option<u64>,
    pub log: Option<&'a mut RunLog>,
}

pub fn init_pretrain(config: &TrainConfig) -> Result<Checkpoint> {
    config.validate()?;
    let net = SegmentationNetwork::new(config.model, config.seed)?;
    let optimizer = Sgd::new(config.optimizer, &net.params);
    Ok(Checkpoint {
        stage: Stage::Pretrain,
        iteration: 0,
        config: config.clone(),
        pair: StudentTeacher::new(net, config.ema_decay)?,
        optimizer,
        centers: None,
        means: None,
        assignment: None,
    })
}

/// Starts fine-tuning from pretrained networks with fresh optimizer state.
pub fn init_finetune(config: &TrainConfig, pretrained: &Checkpoint, centers: ClassCenters) -> Result<Checkpoint> {
    config.validate()?;
    let m = &config.model;
    if centers.k() != m.num_classes || centers.dim() != m.latent_dim {
        return Err(Error::ShapeMismatch(format!(
            "centers are {}×{}, model needs {}×{}",
            centers.k(),
            centers.dim(),
            m.num_classes,
            m.latent_dim
        )));
    }
    if pretrained.config.model != *m {
        return Err(Error::ShapeMismatch("pretrained checkpoint has a different architecture".into()));
    }
    let pair =
        StudentTeacher::from_parts(pretrained.pair.student.clone(), pretrained.pair.teacher.clone(), config.ema_decay)?;
    Ok(Checkpoint {
        stage: Stage::Finetune,
        iteration: 0,
        config: config.clone(),
        optimizer: Sgd::new(config.optimizer, &pair.student.params),
        pair,
        centers: Some(centers),
        means: Some(EmpiricalMeans::new(m.num_classes, m.latent_dim, config.eta)?),
        assignment: None,
    })
}

struct Schedules {
    s: TemperatureSchedule,
    an: TemperatureSchedule,
    sa: TemperatureSchedule,
}

impl Schedules {
    fn new(cfg: &TrainConfig, total: u64) -> Result<Self> {
        Ok(Self {
            s: TemperatureSchedule::new(cfg.tau_s, total)?,
            an: TemperatureSchedule::new(cfg.tau_an, total)?,
            sa: TemperatureSchedule::new(cfg.tau_sa, total)?,
        })
    }
}

/// Per-pixel class probabilities, same `[K, H·W]` layout as the logits.
fn pixel_softmax(logits: &[f64], k: usize, hw: usize) -> Vec<f64> {
    let mut probs = vec![0.0; logits.len()];
    let (mut col, mut out) = (vec![0.0; k], vec![0.0; k]);
    for p in 0..hw {
        (0..k).for_each(|c| col[c] = logits[c * hw + p]);
        softmax_into(&col, &mut out);
        (0..k).for_each(|c| probs[c * hw + p] = out[c]);
    }
    probs
}

/// Argmax class per pixel; ties go to the smaller class id.
pub fn predict_labels(logits: &[f64], k: usize, hw: usize) -> Vec<usize> {
    (0..hw)
        .map(|p| {
            let mut best = 0;
            for c in 1..k {
                if logits[c * hw + p] > logits[best * hw + p] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Up to `cap` eligible pixels per class, in ascending pixel order.
fn subsample_by_class(labels: &[usize], eligible: &[bool], k: usize, cap: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut picked = Vec::new();
    for c in 0..k {
        let members: Vec<usize> = (0..labels.len()).filter(|&p| labels[p] == c && eligible[p]).collect();
        if members.len() > cap {
            picked.extend(index::sample(rng, members.len(), cap).into_iter().map(|i| members[i]));
        } else {
            picked.extend(members);
        }
    }
    picked.sort_unstable();
    picked
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

struct LabeledPass {
    views: Vec<AugmentedSample>,
    forwards: Vec<ImageForward>,
    loss: LossValue,
}

fn labeled_pass(
    net: &SegmentationNetwork,
    pool: &[SegmentationSample],
    cfg: &TrainConfig,
    heads: HeadSelection,
    rng: &mut RngStream,
) -> Result<LabeledPass> {
    let b = cfg.batch.labeled.min(pool.len());
    if b == 0 {
        return Err(Error::Data("no labeled samples".into()));
    }
    let n = cfg.data.scene.image_size;
    let k = cfg.model.num_classes;
    let picks = index::sample(rng, pool.len(), b).into_vec();
    let views: Vec<AugmentedSample> = picks.iter().map(|&i| augment(&pool[i], cfg.batch.augment_sigma, rng)).collect();
    let forwards =
        views.iter().map(|v| net.forward_image(&v.sample.image, n, n, heads)).collect::<Result<Vec<_>>>()?;
    let logits = Tensor::new(vec![b, k, n, n], forwards.iter().flat_map(|f| f.logits.iter().copied()).collect())?;
    let labels: Vec<usize> = views.iter().flat_map(|v| v.sample.labels.iter().copied()).collect();
    let loss = dice_ce_loss(&logits, &labels)?;
    Ok(LabeledPass { views, forwards, loss })
}

fn finish_step(ck: &mut Checkpoint, grads: &ParamStore, row: &LogRow) -> Result<()> {
    if !row.total.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: row.iteration });
    }
    ck.optimizer.step(&mut ck.pair.student.params, grads)?;
    ck.pair.ema_update()
}

fn pretrain_step(ck: &mut Checkpoint, data: &Dataset, sched: &Schedules, t: u64) -> Result<LogRow> {
    let cfg = ck.config.clone();
    let mut rng = iteration_rng(cfg.seed, Stage::Pretrain, t);
    let (n, d, g) = (cfg.data.scene.image_size, cfg.model.latent_dim, cfg.model.local_grid);
    let g2 = g * g;
    let w = cfg.weights;
    let tau_s = sched.s.temperature_at(t)?;
    let tau_t = sched.s.teacher_temperature_at(t, cfg.teacher_follows_schedule)?;
    let pool = &data.unlabeled;
    if pool.len() < cfg.batch.unlabeled {
        return Err(Error::PoolTooSmall { pool: pool.len(), requested: cfg.batch.unlabeled });
    }
    let picks = index::sample(&mut rng, pool.len(), cfg.batch.unlabeled).into_vec();
    let views = make_view_batch(pool, &picks, cfg.batch.mined_views, cfg.batch.augment_sigma, &mut rng)?;
    let (student, teacher) = (&ck.pair.student, &ck.pair.teacher);

    let (mut mined_g, mut mined_l) = (Vec::new(), Vec::new());
    for v in &views.x3 {
        let f = teacher.forward_image(&v.sample.image, n, n, HeadSelection::EMBEDDINGS)?;
        mined_g.extend(f.heads.v_global.expect("global head"));
        mined_l.extend(f.heads.v_local.expect("local head"));
    }

    let mut grads = student.params.zeros_like();
    let inv_b = 1.0 / views.x1.len() as f64;
    let inv_cells = inv_b / g2 as f64;
    let (mut inst_g, mut inst_l) = (0.0, 0.0);
    for (a, b) in views.x1.iter().zip(&views.x2) {
        let tf = teacher.forward_image(&b.sample.image, n, n, HeadSelection::EMBEDDINGS)?;
        let sf = student.forward_image(&a.sample.image, n, n, HeadSelection::EMBEDDINGS)?;
        let wg = sf.heads.w_global.as_deref().expect("global head");
        let vg = tf.heads.v_global.as_deref().expect("global head");
        let us = relational_distribution(wg, &mined_g, tau_s)?;
        let ut = relational_distribution(vg, &mined_g, tau_t)?;
        let lv = instance_discrimination_loss(&us, &ut)?;
        inst_g += lv.value * inv_b;
        let dwg = relational_query_grad(wg, &mined_g, tau_s, lv.grad("student_logits").expect("grad").data())?;

        // Local cells are matched through both views' transforms.
        let wl = sf.heads.w_local.as_deref().expect("local head");
        let vl = tf.heads.v_local.as_deref().expect("local head");
        let mut dwl = vec![0.0; g2 * d];
        for j in 0..g2 {
            let j2 = b.transform.map_index(a.transform.inverse().map_index(j, g), g);
            let q = &wl[j * d..(j + 1) * d];
            let us = relational_distribution(q, &mined_l, tau_s)?;
            let ut = relational_distribution(&vl[j2 * d..(j2 + 1) * d], &mined_l, tau_t)?;
            let lv = instance_discrimination_loss(&us, &ut)?;
            inst_l += lv.value * inv_cells;
            let dq = relational_query_grad(q, &mined_l, tau_s, lv.grad("student_logits").expect("grad").data())?;
            dwl[j * d..(j + 1) * d].iter_mut().zip(&dq).for_each(|(o, x)| *o = x * w.inst_local * inv_cells);
        }
        let up = HeadGrads {
            w_global: Some(scaled(&dwg, w.inst_global * inv_b)),
            w_local: Some(dwl),
            ..HeadGrads::default()
        };
        student.backward(&sf, &up, &mut grads)?;
    }

    let lp = labeled_pass(student, &data.labeled, &cfg, HeadSelection::LOGITS, &mut rng)?;
    let dl = lp.loss.grad("logits").expect("grad").data();
    let per = cfg.model.num_classes * n * n;
    for (i, f) in lp.forwards.iter().enumerate() {
        let up = HeadGrads { logits: Some(scaled(&dl[i * per..(i + 1) * per], w.sup)), ..HeadGrads::default() };
        student.backward(f, &up, &mut grads)?;
    }

    let row = LogRow {
        iteration: t,
        stage: Stage::Pretrain,
        total: w.inst_global * inst_g + w.inst_local * inst_l + w.sup * lp.loss.value,
        inst_global: w.inst_global * inst_g,
        inst_local: w.inst_local * inst_l,
        sup: w.sup * lp.loss.value,
        anco: 0.0,
        unsup: 0.0,
        aaco: 0.0,
        tau_s,
        tau_an: sched.an.temperature_at(t)?,
        tau_sa: sched.sa.temperature_at(t)?,
        allocation_hash: None,
        aaco_active: false,
        metrics: None,
    };
    finish_step(ck, &grads, &row)?;
    Ok(row)
}

fn finetune_step(ck: &mut Checkpoint, data: &Dataset, sched: &Schedules, t: u64) -> Result<LogRow> {
    let cfg = ck.config.clone();
    let mut rng = iteration_rng(cfg.seed, Stage::Finetune, t);
    let (n, d, k) = (cfg.data.scene.image_size, cfg.model.latent_dim, cfg.model.num_classes);
    let hw = n * n;
    let w = cfg.weights;
    let b = cfg.batch;
    let tau_an = sched.an.temperature_at(t)?;
    let tau_sa = sched.sa.temperature_at(t)?;
    let centers = ck.centers.clone().ok_or_else(|| Error::Config("fine-tuning needs class centers".into()))?;
    let student = &ck.pair.student;
    let mut grads = student.params.zeros_like();

    // Labeled: supervised loss, moving-average means, allocation and adaptive contrast.
    let lp = labeled_pass(student, &data.labeled, &cfg, HeadSelection::DENSE, &mut rng)?;
    let reps: Vec<&[f64]> = lp.forwards.iter().map(|f| f.heads.dense_reps.as_deref().expect("dense head")).collect();
    let means = ck.means.as_mut().ok_or_else(|| Error::Config("fine-tuning needs empirical means".into()))?;
    let all_feats: Vec<f64> = reps.iter().flat_map(|r| r.iter().copied()).collect();
    let all_labels: Vec<usize> = lp.views.iter().flat_map(|v| v.sample.labels.iter().copied()).collect();
    means.update(&all_feats, &all_labels)?;
    let assignment = if means.all_initialized() { Some(allocate_centers(&centers, means)?) } else { None };

    let mut dense_grads: Vec<Vec<f64>> = vec![vec![0.0; hw * d]; lp.views.len()];
    let mut aaco = 0.0;
    let mut aaco_active = false;
    if let (Some(pi), true) = (&assignment, w.aaco > 0.0) {
        let mut picks = Vec::new();
        for (i, v) in lp.views.iter().enumerate() {
            let all = vec![true; hw];
            for p in subsample_by_class(&v.sample.labels, &all, k, b.pixels_per_class, &mut rng) {
                picks.push((i, p));
            }
        }
        if picks.len() >= 2 {
            let ids = picks
                .iter()
                .map(|&(i, p)| {
                    let v = &lp.views[i];
                    v.sample.id * hw as u64 + v.transform.inverse().map_index(p, n) as u64
                })
                .collect();
            let feats = picks.iter().flat_map(|&(i, p)| reps[i][p * d..(p + 1) * d].iter().copied()).collect();
            let labels: Vec<usize> = picks.iter().map(|&(i, p)| lp.views[i].sample.labels[p]).collect();
            let nus = labels.iter().flat_map(|&y| centers.row(pi.center_of(y)).iter().copied()).collect();
            let batch = AacoBatch::new(d, ids, feats, labels, nus, cfg.lambda_a, tau_sa, b.positives_per_anchor)?;
            let lv = aaco_loss(&batch, PositiveSampling { seed: cfg.seed, iteration: t })?;
            aaco = lv.value;
            aaco_active = true;
            let gf = lv.grad("features").expect("grad").data();
            for (r, &(i, p)) in picks.iter().enumerate() {
                dense_grads[i][p * d..(p + 1) * d]
                    .iter_mut()
                    .zip(&gf[r * d..(r + 1) * d])
                    .for_each(|(o, x)| *o += w.aaco * x);
            }
        }
    }
    let dl = lp.loss.grad("logits").expect("grad").data();
    let per = k * hw;
    for (i, f) in lp.forwards.iter().enumerate() {
        let up = HeadGrads {
            logits: Some(scaled(&dl[i * per..(i + 1) * per], w.sup)),
            dense_reps: Some(std::mem::take(&mut dense_grads[i])),
            ..HeadGrads::default()
        };
        student.backward(f, &up, &mut grads)?;
    }

    // Unlabeled: teacher pseudo-labels drive the cross-entropy and the anatomical contrast.
    let pool = &data.unlabeled;
    let bu = b.unlabeled.min(pool.len());
    let picks = index::sample(&mut rng, pool.len(), bu).into_vec();
    let teacher = &ck.pair.teacher;
    let mut s_fwd = Vec::with_capacity(bu);
    let mut t_fwd = Vec::with_capacity(bu);
    for &i in &picks {
        let tr = Dihedral::random(&mut rng);
        let xs = augment_with(&pool[i], tr, b.augment_sigma, &mut rng);
        let xt = augment_with(&pool[i], tr, b.augment_sigma, &mut rng);
        t_fwd.push(teacher.forward_image(&xt.sample.image, n, n, HeadSelection::DENSE)?);
        s_fwd.push(student.forward_image(&xs.sample.image, n, n, HeadSelection::DENSE)?);
    }
    let s_logits = Tensor::new(vec![bu, k, n, n], s_fwd.iter().flat_map(|f| f.logits.iter().copied()).collect())?;
    let t_probs = Tensor::new(
        vec![bu, k, n, n],
        t_fwd.iter().flat_map(|f| pixel_softmax(&f.logits, k, hw)).collect(),
    )?;
    let unsup_lv = pseudo_label_ce_loss(&s_logits, &t_probs, cfg.confidence_threshold)?;
    let (plabels, conf) = pseudo_labels(&t_probs)?;

    let mut dense_grads: Vec<Vec<f64>> = vec![vec![0.0; hw * d]; bu];
    let mut entries = Vec::new();
    for i in 0..bu {
        let lab = &plabels[i * hw..(i + 1) * hw];
        let ok: Vec<bool> = conf[i * hw..(i + 1) * hw].iter().map(|&c| c >= cfg.confidence_threshold).collect();
        for p in subsample_by_class(lab, &ok, k, b.pixels_per_class, &mut rng) {
            entries.push((i, p, lab[p]));
        }
    }
    let mut anco = 0.0;
    if !entries.is_empty() && w.anco > 0.0 {
        let rep = |f: &ImageForward, p: usize| -> Vec<f64> {
            f.heads.dense_reps.as_deref().expect("dense head")[p * d..(p + 1) * d].to_vec()
        };
        let keys: Vec<f64> = entries.iter().flat_map(|&(i, p, _)| rep(&t_fwd[i], p)).collect();
        let labels: Vec<usize> = entries.iter().map(|e| e.2).collect();
        let mut sets = crate::losses::select_query_key_sets(&keys, &labels, d, b.queries_per_class, &mut rng)?;
        for class in &mut sets.classes {
            class.queries = class.query_indices.iter().flat_map(|&e| rep(&s_fwd[entries[e].0], entries[e].1)).collect();
        }
        let total_q = sets.total_queries();
        let lv = anco_loss(&sets, tau_an)?;
        anco = lv.value / total_q as f64;
        if let Some(gq) = lv.grad("queries") {
            let scale = w.anco / total_q as f64;
            let order = sets.classes.iter().flat_map(|c| c.query_indices.iter().copied());
            for (r, e) in order.enumerate() {
                let (i, p, _) = entries[e];
                dense_grads[i][p * d..(p + 1) * d]
                    .iter_mut()
                    .zip(&gq.data()[r * d..(r + 1) * d])
                    .for_each(|(o, x)| *o += scale * x);
            }
        }
    }
    let du = unsup_lv.grad("logits").expect("grad").data();
    for (i, f) in s_fwd.iter().enumerate() {
        let up = HeadGrads {
            logits: Some(scaled(&du[i * per..(i + 1) * per], w.unsup)),
            dense_reps: Some(std::mem::take(&mut dense_grads[i])),
            ..HeadGrads::default()
        };
        student.backward(f, &up, &mut grads)?;
    }

    let row = LogRow {
        iteration: t,
        stage: Stage::Finetune,
        total: w.anco * anco + w.unsup * unsup_lv.value + w.sup * lp.loss.value + w.aaco * aaco,
        inst_global: 0.0,
        inst_local: 0.0,
        sup: w.sup * lp.loss.value,
        anco: w.anco * anco,
        unsup: w.unsup * unsup_lv.value,
        aaco: w.aaco * aaco,
        tau_s: sched.s.temperature_at(t)?,
        tau_an,
        tau_sa,
        allocation_hash: assignment.as_ref().map(Assignment::fingerprint),
        aaco_active,
        metrics: None,
    };
    ck.assignment = assignment;
    finish_step(ck, &grads, &row)?;
    Ok(row)
}

fn run_stage(ck: &mut Checkpoint, data: &Dataset, stage: Stage, mut opts: RunOptions) -> Result<Vec<LogRow>> {
    if ck.stage != stage {
        return Err(Error::Config(format!("checkpoint is at stage {:?}, not {stage:?}", ck.stage)));
    }
    let total = match stage {
        Stage::Pretrain => ck.config.pretrain_iters,
        Stage::Finetune => ck.config.finetune_iters,
    };
    let stop = opts.stop_at.unwrap_or(total).min(total);
    let sched = Schedules::new(&ck.config, total)?;
    let mut rows = Vec::new();
    while ck.iteration < stop {
        let t = ck.iteration;
        let mut row = match stage {
            Stage::Pretrain => pretrain_step(ck, data, &sched, t)?,
            Stage::Finetune => finetune_step(ck, data, &sched, t)?,
        };
        ck.iteration += 1;
        let done = ck.iteration;
        let every = ck.config.eval.every;
        let eval_due = done == total || (every > 0 && done % every == 0);
        if eval_due {
            row.metrics = Some(evaluate_checkpoint(ck, &data.validation)?);
        }
        if t % ck.config.log_every == 0 || eval_due || done == stop {
            log::debug!("{stage:?} iteration {t}: total {:.5}", row.total);
            if let Some(log) = opts.log.as_deref_mut() {
                log.write(&row)?;
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn run_pretrain(ck: &mut Checkpoint, data: &Dataset, opts: RunOptions) -> Result<Vec<LogRow>> {
    run_stage(ck, data, Stage::Pretrain, opts)
}

pub fn run_finetune(ck: &mut Checkpoint, data: &Dataset, opts: RunOptions) -> Result<Vec<LogRow>> {
    run_stage(ck, data, Stage::Finetune, opts)
}

/// Validation features: up to `feature_subsample` pixels per class from the
/// first `feature_images` samples, `[n, d]` plus labels.
pub fn validation_features(
    net: &SegmentationNetwork,
    samples: &[SegmentationSample],
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let (n, d, k) = (cfg.data.scene.image_size, cfg.model.latent_dim, cfg.model.num_classes);
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for s in samples.iter().take(cfg.eval.feature_images) {
        let f = net.forward_image(&s.image, n, n, HeadSelection::DENSE)?;
        let reps = f.heads.dense_reps.expect("dense head");
        let all = vec![true; n * n];
        for p in subsample_by_class(&s.labels, &all, k, cfg.eval.feature_subsample, rng) {
            feats.extend_from_slice(&reps[p * d..(p + 1) * d]);
            labels.push(s.labels[p]);
        }
    }
    Ok((feats, labels))
}

/// Segmentation metrics over `samples`, plus A, D and (with centers) E(g_f).
/// Without an assignment, E(g_f) allocates centers to the validation class means.
pub fn evaluate_network(
    net: &SegmentationNetwork,
    samples: &[SegmentationSample],
    cfg: &TrainConfig,
    centers: Option<&ClassCenters>,
    assignment: Option<&Assignment>,
    iteration: u64,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    let (n, k) = (cfg.data.scene.image_size, cfg.model.num_classes);
    let mut preds = Vec::with_capacity(samples.len());
    for s in samples {
        let f = net.forward_image(&s.image, n, n, HeadSelection::LOGITS)?;
        preds.push(predict_labels(&f.logits, k, n * n));
    }
    let gts: Vec<Vec<usize>> = samples.iter().map(|s| s.labels.clone()).collect();
    let mut report = MetricsReport::from_segmentation(iteration, segmentation_metrics(&preds, &gts, n, k)?);

    let mut rng = RngStream::derive(cfg.seed, &[3, iteration]);
    let (feats, labels) = validation_features(net, samples, cfg, &mut rng)?;
    if k >= 2 {
        if let Ok(means) = class_means(&feats, &labels, k) {
            report.divergence_d = Some(divergence_metric(&means, k)?);
            if let Some(cs) = centers {
                let pi = match assignment {
                    Some(pi) => pi.clone(),
                    None => {
                        let em = EmpiricalMeans::from_parts(k, cs.dim(), 1.0, means, vec![true; k])?;
                        allocate_centers(cs, &em)?
                    }
                };
                let e = nn_classifier_error(&feats, &labels, cs, &pi)?;
                report.nn_error = Some(e.equal_weight);
                report.nn_error_pixel = Some(e.pixel_weighted);
            }
        }
    }
    let subset = &samples[..cfg.eval.feature_images.min(samples.len())];
    match alignment_metric(
        net,
        subset,
        k,
        cfg.eval.alignment_pairs,
        cfg.eval.alignment_subsample,
        cfg.batch.augment_sigma,
        &mut rng,
    ) {
        Ok(a) => report.alignment_a = Some(a),
        Err(Error::MissingClass { .. }) => {}
        Err(e) => return Err(e),
    }
    Ok(report)
}

/// Student metrics with the checkpoint's centers and current allocation.
pub fn evaluate_checkpoint(ck: &Checkpoint, samples: &[SegmentationSample]) -> Result<MetricsReport> {
    evaluate_network(
        &ck.pair.student,
        samples,
        &ck.config,
        ck.centers.as_ref(),
        ck.assignment.as_ref(),
        ck.iteration,
    )
}
