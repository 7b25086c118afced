//! Self-test suite: one runnable check per acceptance criterion, usable both
//! from the `selftest` CLI subcommand and from the acceptance test target.
//!
//! Each criterion prints a single PASS/FAIL line. The oracles here are
//! deliberately independent of the implementation paths they check: rotated
//! IOU is compared against Monte-Carlo point membership, analytic gradients
//! against central finite differences of independently re-evaluated local
//! loss terms, and the planner against exhaustive enumeration of stacking
//! forests.

use std::io::Write;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::anchor_codec::{
    decode_gd, decode_od, default_scale_specs, encode_targets, sigmoid, softmax,
    tensor_from_assignment, GridSpecs, HeadTensor, TargetAssignment, GD_CLS, GD_PR, GD_TH, GD_X,
    OD_CLS, OD_PR, OD_X,
};
use crate::dataio::{parse_cornell_rect_file, synth_scene};
use crate::error::Error;
use crate::eval::{average_precision, grasp_match, mapg, EvalConfig, ScoredPrediction};
use crate::geometry::{rotated_iou, wrap_half_turn, OrientedRect};
use crate::loss::{focal_loss, multitask_loss, softplus, LossConfig};
use crate::planner::{simulate, OracleDetector, SceneState, SimObject};
use crate::postprocess::{run_pipeline, PostConfig};
use crate::toytrain::{standard_suite, train_direct, verify_recovery};

/// Outcome of one criterion.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub index: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    fn line(&self) -> String {
        format!(
            "[{:>2}/10] {} {} ({:.2}s): {}",
            self.index,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            self.detail
        )
    }
}

fn finish(
    index: usize,
    name: &'static str,
    start: Instant,
    passed: bool,
    detail: String,
) -> CriterionResult {
    CriterionResult {
        index,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Monte-Carlo intersection-over-union from uniform point membership.
fn monte_carlo_iou(a: &OrientedRect, b: &OrientedRect, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let ba = a.aabb();
    let bb = b.aabb();
    let x1 = ba.x1.min(bb.x1);
    let y1 = ba.y1.min(bb.y1);
    let x2 = ba.x2.max(bb.x2);
    let y2 = ba.y2.max(bb.y2);
    let area = (x2 - x1) * (y2 - y1);
    let mut hits = 0usize;
    for _ in 0..samples {
        let p = [rng.random_range(x1..x2), rng.random_range(y1..y2)];
        if a.contains(p) && b.contains(p) {
            hits += 1;
        }
    }
    let inter = area * hits as f64 / samples as f64;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Criterion 1: rotated IOU vs a 10^6-sample membership oracle on 200 random
/// pairs, plus the exact perpendicular-congruent value 1/3.
pub fn criterion_geometry_oracle() -> CriterionResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut max_err: f64 = 0.0;
    for i in 0..200 {
        let a = OrientedRect::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(0.5..8.0),
            rng.random_range(0.5..8.0),
            rng.random_range(0.0..std::f64::consts::PI),
        )
        .unwrap();
        // keep half of the pairs close so intersections are common
        let spread = if i % 2 == 0 { 1.5 } else { 6.0 };
        let b = OrientedRect::new(
            a.x + rng.random_range(-spread..spread),
            a.y + rng.random_range(-spread..spread),
            rng.random_range(0.5..8.0),
            rng.random_range(0.5..8.0),
            rng.random_range(0.0..std::f64::consts::PI),
        )
        .unwrap();
        let exact = rotated_iou(&a, &b);
        let mc = monte_carlo_iou(&a, &b, 1_000_000, &mut rng);
        max_err = max_err.max((exact - mc).abs());
    }
    let a = OrientedRect::new(0.0, 0.0, 4.0, 2.0, 0.0).unwrap();
    let b = OrientedRect::new(0.0, 0.0, 4.0, 2.0, std::f64::consts::FRAC_PI_2).unwrap();
    let exact_third = (rotated_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12;
    let elapsed_ok = start.elapsed().as_secs_f64() < 30.0;
    let passed = max_err <= 0.01 && exact_third && elapsed_ok;
    finish(
        1,
        "geometry-oracle",
        start,
        passed,
        format!("max |exact - monte-carlo| = {max_err:.5} over 200 pairs; 1/3 case exact: {exact_third}"),
    )
}

/// Criterion 2: encode -> saturate -> decode recovers every ground-truth box
/// within 1e-6 px and every orientation within 1e-9 rad on 1000 scenes.
pub fn criterion_codec_bijection() -> CriterionResult {
    let start = Instant::now();
    let mut max_px: f64 = 0.0;
    let mut max_rad: f64 = 0.0;
    let mut failures = 0usize;
    for seed in 0..1000u64 {
        let (input, classes) = if seed % 5 == 4 { (608, 31) } else { (320, 8) };
        let n = 1 + (seed as usize) % 5;
        let specs = default_scale_specs(input, classes).unwrap();
        let (scene, _) = synth_scene(seed, n, classes, input).unwrap();
        let assignment = encode_targets(&scene, &specs).unwrap();
        if assignment.dropped != 0 {
            failures += 1;
            continue;
        }
        let h = tensor_from_assignment(&assignment, &specs, 20.0);
        let dets = decode_od(&h, 0.9);
        let grasps = decode_gd(&h, 0.9);
        let n_grasps: usize = scene.objects.iter().map(|o| o.grasps.len()).sum();
        if dets.len() != scene.objects.len() || grasps.len() != n_grasps {
            failures += 1;
            continue;
        }
        for obj in &scene.objects {
            // classes are unique per synthetic scene
            let Some(det) = dets.iter().find(|d| d.class_id == obj.class_id) else {
                failures += 1;
                continue;
            };
            for (got, want) in [
                (det.bbox.x1, obj.bbox.x1),
                (det.bbox.y1, obj.bbox.y1),
                (det.bbox.x2, obj.bbox.x2),
                (det.bbox.y2, obj.bbox.y2),
            ] {
                max_px = max_px.max((got - want).abs());
            }
            for gt in &obj.grasps {
                let best = grasps
                    .iter()
                    .filter(|g| g.class_id == obj.class_id)
                    .min_by(|x, y| {
                        let dx = (x.rect.x - gt.x).abs() + (x.rect.y - gt.y).abs();
                        let dy = (y.rect.x - gt.x).abs() + (y.rect.y - gt.y).abs();
                        dx.partial_cmp(&dy).unwrap()
                    });
                let Some(g) = best else {
                    failures += 1;
                    continue;
                };
                for (got, want) in [
                    (g.rect.x, gt.x),
                    (g.rect.y, gt.y),
                    (g.rect.w, gt.w),
                    (g.rect.h, gt.h),
                ] {
                    max_px = max_px.max((got - want).abs());
                }
                max_rad = max_rad.max(wrap_half_turn(g.rect.theta - gt.theta).abs());
            }
        }
    }
    let elapsed_ok = start.elapsed().as_secs_f64() < 10.0;
    let passed = failures == 0 && max_px <= 1e-6 && max_rad <= 1e-9 && elapsed_ok;
    finish(
        2,
        "codec-bijection",
        start,
        passed,
        format!("1000 scenes: max position error {max_px:.2e} px, max angle error {max_rad:.2e} rad, {failures} structural failures"),
    )
}

/// Where a flat value index lands inside the tensor layout.
enum Channel {
    OdCoordXY { t_hat: f64 },
    OdCoordWH { t_hat: f64, prior_over_stride: f64 },
    OdPr { positive: bool },
    OdClass { slot_base: usize, class_id: usize },
    OdReason { hit: bool },
    GdCoordXY { t_hat: f64 },
    GdCoordWH { t_hat: f64, prior_over_stride: f64 },
    GdTheta { t_hat: f64 },
    GdPr { positive: bool },
    GdClass { slot_base: usize, class_id: usize },
    Unused,
}

fn locate_channel(
    specs: &GridSpecs,
    assignment: &TargetAssignment,
    scale: usize,
    index: usize,
) -> Channel {
    let spec = &specs.scales[scale];
    let cell_width = specs.cell_width(scale);
    let cell = index / cell_width;
    let (cy, cx) = (cell / spec.grid_w, cell % spec.grid_w);
    let within = index % cell_width;
    let od_span = spec.od_anchors.len() * specs.od_block();
    let stride = spec.stride as f64;
    if within < od_span {
        let anchor = within / specs.od_block();
        let ch = within % specs.od_block();
        let target = assignment
            .od
            .iter()
            .find(|t| (t.scale, t.cy, t.cx, t.anchor) == (scale, cy, cx, anchor));
        let slot_base = specs.od_base(scale, cy, cx, anchor);
        match (ch, target) {
            (c, Some(t)) if c == OD_X || c == OD_X + 1 => Channel::OdCoordXY {
                t_hat: if c == OD_X { t.t_x } else { t.t_y },
            },
            (c, Some(t)) if c == OD_X + 2 || c == OD_X + 3 => Channel::OdCoordWH {
                t_hat: if c == OD_X + 2 { t.t_w } else { t.t_h },
                prior_over_stride: if c == OD_X + 2 {
                    spec.od_anchors[anchor].0 / stride
                } else {
                    spec.od_anchors[anchor].1 / stride
                },
            },
            (c, t) if c == OD_PR => Channel::OdPr {
                positive: t.is_some(),
            },
            (c, Some(t)) if c >= OD_CLS && c < OD_CLS + specs.num_classes => Channel::OdClass {
                slot_base,
                class_id: t.class_id,
            },
            (c, Some(t)) if c >= specs.od_fc() && c < specs.od_fc() + specs.num_classes + 1 => {
                Channel::OdReason {
                    hit: t.fc[c - specs.od_fc()],
                }
            }
            (c, Some(t)) if c >= specs.od_cc() && c < specs.od_cc() + specs.num_classes + 1 => {
                Channel::OdReason {
                    hit: t.cc[c - specs.od_cc()],
                }
            }
            _ => Channel::Unused,
        }
    } else {
        let rel = within - od_span;
        let block = rel / specs.gd_block();
        let ch = rel % specs.gd_block();
        let anchor = block / spec.gd_angles.len().max(1);
        let angle = block % spec.gd_angles.len().max(1);
        let target = assignment
            .gd
            .iter()
            .find(|t| (t.scale, t.cy, t.cx, t.anchor, t.angle) == (scale, cy, cx, anchor, angle));
        let slot_base = specs.gd_base(scale, cy, cx, anchor, angle);
        match (ch, target) {
            (c, Some(t)) if c == GD_X || c == GD_X + 1 => Channel::GdCoordXY {
                t_hat: if c == GD_X { t.t_x } else { t.t_y },
            },
            (c, Some(t)) if c == GD_X + 2 || c == GD_X + 3 => Channel::GdCoordWH {
                t_hat: if c == GD_X + 2 { t.t_w } else { t.t_h },
                prior_over_stride: if c == GD_X + 2 {
                    spec.gd_anchors[anchor].0 / stride
                } else {
                    spec.gd_anchors[anchor].1 / stride
                },
            },
            (c, Some(t)) if c == GD_TH => Channel::GdTheta { t_hat: t.t_theta },
            (c, t) if c == GD_PR => Channel::GdPr {
                positive: t.is_some(),
            },
            (c, Some(t)) if c >= GD_CLS && c < GD_CLS + specs.num_classes => Channel::GdClass {
                slot_base,
                class_id: t.class_id,
            },
            _ => Channel::Unused,
        }
    }
}

/// The local loss contribution that depends on the value at `index`,
/// re-derived from the formulas rather than the fused loss loop. Terms that
/// do not involve the value are omitted, which keeps the central difference
/// numerically exact even for tiny gradients.
fn local_term(
    h: &HeadTensor,
    cfg: &LossConfig,
    channel: &Channel,
    scale: usize,
    index: usize,
    n_classes: usize,
) -> f64 {
    let values = h.scale_values(scale);
    let v = values[index];
    match channel {
        Channel::OdCoordXY { t_hat } | Channel::GdCoordXY { t_hat } => {
            let d = sigmoid(v) - sigmoid(*t_hat);
            cfg.w_coord * d * d
        }
        Channel::OdCoordWH {
            t_hat,
            prior_over_stride,
        }
        | Channel::GdCoordWH {
            t_hat,
            prior_over_stride,
        } => {
            let d = prior_over_stride * (v.exp() - t_hat.exp());
            cfg.w_coord * d * d
        }
        Channel::OdPr { positive } | Channel::GdPr { positive } => {
            if *positive {
                cfg.w_objectness_pos * softplus(-v)
            } else {
                cfg.w_objectness_neg * cfg.lambda_n * softplus(v)
            }
        }
        Channel::OdClass { slot_base, class_id } => {
            let logits = &values[slot_base + OD_CLS..slot_base + OD_CLS + n_classes];
            cfg.w_class * focal_loss(softmax(logits)[*class_id], cfg.gamma)
        }
        Channel::GdClass { slot_base, class_id } => {
            let logits = &values[slot_base + GD_CLS..slot_base + GD_CLS + n_classes];
            cfg.w_class * focal_loss(softmax(logits)[*class_id], cfg.gamma)
        }
        Channel::OdReason { hit } => {
            let s = sigmoid(v).clamp(1e-12, 1.0 - 1e-12);
            let p = if *hit { s } else { 1.0 - s };
            cfg.w_reasoning * focal_loss(p, cfg.gamma)
        }
        Channel::GdTheta { t_hat } => {
            let d = wrap_half_turn(v - t_hat);
            cfg.w_angle * d * d
        }
        Channel::Unused => 0.0,
    }
}

/// Independent re-accumulation of the weighted total from public primitives.
fn reference_total(h: &HeadTensor, a: &TargetAssignment, cfg: &LossConfig) -> f64 {
    let specs = h.specs();
    let mut total = 0.0;
    // negative objectness: all slots minus the positive ones
    for (s, spec) in specs.scales.iter().enumerate() {
        let values = h.scale_values(s);
        for cy in 0..spec.grid_h {
            for cx in 0..spec.grid_w {
                for anchor in 0..spec.od_anchors.len() {
                    total += cfg.w_objectness_neg
                        * cfg.lambda_n
                        * softplus(values[specs.od_base(s, cy, cx, anchor) + OD_PR]);
                }
                for anchor in 0..spec.gd_anchors.len() {
                    for k in 0..spec.gd_angles.len() {
                        total += cfg.w_objectness_neg
                            * cfg.lambda_n
                            * softplus(values[specs.gd_base(s, cy, cx, anchor, k) + GD_PR]);
                    }
                }
            }
        }
    }
    for t in &a.od {
        let spec = &specs.scales[t.scale];
        let base = specs.od_base(t.scale, t.cy, t.cx, t.anchor);
        let values = h.scale_values(t.scale);
        let stride = spec.stride as f64;
        total -= cfg.w_objectness_neg * cfg.lambda_n * softplus(values[base + OD_PR]);
        total += cfg.w_objectness_pos * softplus(-values[base + OD_PR]);
        for (off, t_hat) in [(OD_X, t.t_x), (OD_X + 1, t.t_y)] {
            let d = sigmoid(values[base + off]) - sigmoid(t_hat);
            total += cfg.w_coord * d * d;
        }
        let (pw, ph) = spec.od_anchors[t.anchor];
        for (off, t_hat, p) in [(OD_X + 2, t.t_w, pw), (OD_X + 3, t.t_h, ph)] {
            let d = p / stride * (values[base + off].exp() - t_hat.exp());
            total += cfg.w_coord * d * d;
        }
        let p = softmax(&values[base + OD_CLS..base + OD_CLS + specs.num_classes]);
        total += cfg.w_class * focal_loss(p[t.class_id], cfg.gamma);
        for (start, hot) in [(specs.od_fc(), &t.fc), (specs.od_cc(), &t.cc)] {
            for c in 0..=specs.num_classes {
                let s_val = sigmoid(values[base + start + c]).clamp(1e-12, 1.0 - 1e-12);
                let pr = if hot[c] { s_val } else { 1.0 - s_val };
                total += cfg.w_reasoning * focal_loss(pr, cfg.gamma);
            }
        }
    }
    for t in &a.gd {
        let spec = &specs.scales[t.scale];
        let base = specs.gd_base(t.scale, t.cy, t.cx, t.anchor, t.angle);
        let values = h.scale_values(t.scale);
        let stride = spec.stride as f64;
        total -= cfg.w_objectness_neg * cfg.lambda_n * softplus(values[base + GD_PR]);
        total += cfg.w_objectness_pos * softplus(-values[base + GD_PR]);
        for (off, t_hat) in [(GD_X, t.t_x), (GD_X + 1, t.t_y)] {
            let d = sigmoid(values[base + off]) - sigmoid(t_hat);
            total += cfg.w_coord * d * d;
        }
        let (pw, ph) = spec.gd_anchors[t.anchor];
        for (off, t_hat, p) in [(GD_X + 2, t.t_w, pw), (GD_X + 3, t.t_h, ph)] {
            let d = p / stride * (values[base + off].exp() - t_hat.exp());
            total += cfg.w_coord * d * d;
        }
        let d = wrap_half_turn(values[base + GD_TH] - t.t_theta);
        total += cfg.w_angle * d * d;
        let p = softmax(&values[base + GD_CLS..base + GD_CLS + specs.num_classes]);
        total += cfg.w_class * focal_loss(p[t.class_id], cfg.gamma);
    }
    total
}

/// Run the finite-difference gradient check on `pairs` random
/// (tensor, assignment, config) triples. Returns (max relative error,
/// components checked) or an error message.
pub fn fd_gradient_check(pairs: usize) -> std::result::Result<(f64, usize), String> {
    const EPS: f64 = 1e-5;
    let mut max_rel: f64 = 0.0;
    let mut checked = 0usize;
    for k in 0..pairs as u64 {
        let classes = 3 + (k as usize) % 6;
        let n = 1 + (k as usize) % 3;
        let specs = default_scale_specs(32, classes).map_err(|e| e.to_string())?;
        let (scene, _) = synth_scene(3000 + k, n, classes, 32).map_err(|e| e.to_string())?;
        let assignment = encode_targets(&scene, &specs).map_err(|e| e.to_string())?;

        let mut rng = ChaCha8Rng::seed_from_u64(4000 + k);
        let normal = Normal::new(0.0, 0.2).unwrap();
        let mut h = HeadTensor::zeros(&specs);
        for s in 0..specs.scales.len() {
            for v in h.scale_values_mut(s) {
                *v = normal.sample(&mut rng);
            }
        }
        let cfg = LossConfig {
            lambda_n: [0.5, 1.0, 5.0, 100.0][(k % 4) as usize],
            gamma: [0.0, 1.0, 2.0][(k % 3) as usize],
            w_coord: rng.random_range(0.5..2.0),
            w_objectness_pos: rng.random_range(0.5..2.0),
            w_objectness_neg: rng.random_range(0.5..2.0),
            w_class: rng.random_range(0.5..2.0),
            w_reasoning: rng.random_range(0.5..2.0),
            w_angle: rng.random_range(0.5..2.0),
        };

        let lb = multitask_loss(&h, &assignment, &cfg).map_err(|e| e.to_string())?;
        let reference = reference_total(&h, &assignment, &cfg);
        let scale_tol = 1e-9 * (1.0 + lb.total.abs());
        if (lb.total - reference).abs() > scale_tol {
            return Err(format!(
                "pair {k}: fused total {} vs reference {}",
                lb.total, reference
            ));
        }

        for s in 0..specs.scales.len() {
            for i in 0..specs.scale_len(s) {
                let g = lb.grad.scale_values(s)[i];
                if g.abs() <= 1e-6 {
                    continue;
                }
                let channel = locate_channel(&specs, &assignment, s, i);
                let original = h.scale_values(s)[i];
                h.scale_values_mut(s)[i] = original + EPS;
                let plus = local_term(&h, &cfg, &channel, s, i, classes);
                h.scale_values_mut(s)[i] = original - EPS;
                let minus = local_term(&h, &cfg, &channel, s, i, classes);
                h.scale_values_mut(s)[i] = original;
                let fd = (plus - minus) / (2.0 * EPS);
                let rel = (g - fd).abs() / g.abs().max(fd.abs());
                if rel > max_rel {
                    max_rel = rel;
                }
                checked += 1;
                if rel > 1e-4 {
                    return Err(format!(
                        "pair {k}, scale {s}, index {i}: grad {g} vs fd {fd} (rel {rel:.2e})"
                    ));
                }
            }
        }
    }
    Ok((max_rel, checked))
}

/// Criterion 3: analytic gradient vs central finite differences (step 1e-5),
/// relative error at most 1e-4 on every component with |grad| > 1e-6.
pub fn criterion_gradient_check() -> CriterionResult {
    let start = Instant::now();
    let result = fd_gradient_check(50);
    let elapsed_ok = start.elapsed().as_secs_f64() < 60.0;
    match result {
        Ok((max_rel, checked)) => finish(
            3,
            "gradient-check",
            start,
            elapsed_ok,
            format!("50 pairs, {checked} components with |grad| > 1e-6, max relative error {max_rel:.2e}"),
        ),
        Err(msg) => finish(3, "gradient-check", start, false, msg),
    }
}

/// Criterion 4: perfect-prediction minimum, exact lambda scaling and the
/// gamma = 0 cross-entropy reduction.
pub fn criterion_loss_anchors() -> CriterionResult {
    let start = Instant::now();
    let specs = default_scale_specs(320, 8).unwrap();
    let (scene, _) = synth_scene(11, 2, 8, 320).unwrap();
    let assignment = encode_targets(&scene, &specs).unwrap();
    let saturated = tensor_from_assignment(&assignment, &specs, 40.0);
    let perfect = multitask_loss(&saturated, &assignment, &LossConfig::default()).unwrap();

    let mild = tensor_from_assignment(&assignment, &specs, 1.5);
    let base = multitask_loss(&mild, &assignment, &LossConfig::default()).unwrap();
    let doubled = multitask_loss(
        &mild,
        &assignment,
        &LossConfig {
            lambda_n: 200.0,
            ..LossConfig::default()
        },
    )
    .unwrap();
    let lambda_exact = doubled.objectness_neg == 2.0 * base.objectness_neg
        && doubled.coord_mse == base.coord_mse
        && doubled.objectness_pos == base.objectness_pos
        && doubled.class_focal == base.class_focal
        && doubled.reasoning_bifocal == base.reasoning_bifocal
        && doubled.angle_mse == base.angle_mse;

    let ce_cfg = LossConfig {
        gamma: 0.0,
        ..LossConfig::default()
    };
    let lb = multitask_loss(&mild, &assignment, &ce_cfg).unwrap();
    let mut ce = 0.0;
    for t in &assignment.od {
        let base_idx = specs.od_base(t.scale, t.cy, t.cx, t.anchor);
        let vals = mild.scale_values(t.scale);
        let p = softmax(&vals[base_idx + OD_CLS..base_idx + OD_CLS + specs.num_classes]);
        ce += -p[t.class_id].ln();
    }
    for t in &assignment.gd {
        let base_idx = specs.gd_base(t.scale, t.cy, t.cx, t.anchor, t.angle);
        let vals = mild.scale_values(t.scale);
        let p = softmax(&vals[base_idx + GD_CLS..base_idx + GD_CLS + specs.num_classes]);
        ce += -p[t.class_id].ln();
    }
    let gamma_zero_ok = (lb.class_focal - ce).abs() <= 1e-12;

    let passed = perfect.total < 1e-6 && lambda_exact && gamma_zero_ok;
    finish(
        4,
        "loss-anchors",
        start,
        passed,
        format!(
            "perfect-prediction total {:.2e}; lambda doubling exact: {lambda_exact}; gamma=0 == cross-entropy: {gamma_zero_ok}",
            perfect.total
        ),
    )
}

/// Criterion 5: 200 stacked scenes encoded with saturated confidences are
/// recovered exactly by the full pipeline, and mAPg over the outputs is 1.
pub fn criterion_closed_loop() -> CriterionResult {
    let start = Instant::now();
    let post = PostConfig::default();
    let eval_cfg = EvalConfig::default();
    let mut all_preds = Vec::new();
    let mut all_gts = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    for seed in 0..200u64 {
        let n = 2 + (seed as usize) % 4;
        let specs = default_scale_specs(608, 31).unwrap();
        let (scene, _) = synth_scene(5000 + seed, n, 31, 608).unwrap();
        let assignment = encode_targets(&scene, &specs).unwrap();
        if assignment.dropped != 0 {
            failures.push(format!("seed {seed}: {} dropped", assignment.dropped));
            continue;
        }
        let h = tensor_from_assignment(&assignment, &specs, 40.0);
        let graph = run_pipeline(&h, &post);
        if graph.nodes.len() != scene.objects.len() {
            failures.push(format!(
                "seed {seed}: {} nodes for {} objects",
                graph.nodes.len(),
                scene.objects.len()
            ));
            continue;
        }
        for obj in &scene.objects {
            let Some(node) = graph
                .nodes
                .iter()
                .find(|nd| nd.detection.class_id == obj.class_id)
            else {
                failures.push(format!("seed {seed}: class {} missing", obj.class_id));
                continue;
            };
            let box_ok = (node.detection.bbox.x1 - obj.bbox.x1).abs() < 1e-6
                && (node.detection.bbox.y1 - obj.bbox.y1).abs() < 1e-6
                && (node.detection.bbox.x2 - obj.bbox.x2).abs() < 1e-6
                && (node.detection.bbox.y2 - obj.bbox.y2).abs() < 1e-6;
            if !box_ok {
                failures.push(format!("seed {seed}: box drift on class {}", obj.class_id));
            }
            match &node.best_grasp {
                None => failures.push(format!("seed {seed}: no grasp for class {}", obj.class_id)),
                Some(g) => {
                    let owned = obj.grasps.iter().any(|gt| {
                        (g.rect.x - gt.x).abs() < 1e-6
                            && (g.rect.y - gt.y).abs() < 1e-6
                            && (g.rect.w - gt.w).abs() < 1e-6
                            && (g.rect.h - gt.h).abs() < 1e-6
                            && wrap_half_turn(g.rect.theta - gt.theta).abs() < 1e-9
                    });
                    if !owned {
                        failures.push(format!(
                            "seed {seed}: grasp not owned by class {}",
                            obj.class_id
                        ));
                    }
                }
            }
        }
        // support edges must match exactly (classes are unique per scene)
        let mut want: Vec<(usize, usize)> = Vec::new();
        for obj in &scene.objects {
            for p in &obj.on_top_of {
                want.push((obj.class_id, scene.object(*p).unwrap().class_id));
            }
        }
        let mut got: Vec<(usize, usize)> = graph
            .edges
            .iter()
            .map(|&(c, p)| {
                (
                    graph.nodes[c].detection.class_id,
                    graph.nodes[p].detection.class_id,
                )
            })
            .collect();
        want.sort_unstable();
        got.sort_unstable();
        if want != got {
            failures.push(format!("seed {seed}: support edges differ"));
        }
        all_preds.push(graph.nodes);
        all_gts.push(scene);
    }
    let report = mapg(&all_preds, &all_gts, &eval_cfg).unwrap();
    let mapg_exact = report.mapg == Some(1.0);
    let passed = failures.is_empty() && mapg_exact;
    let detail = if failures.is_empty() {
        format!("200 scenes recovered exactly; mAPg = {:?} (exactly 1: {mapg_exact})", report.mapg)
    } else {
        format!("{} failures, first: {}", failures.len(), failures[0])
    };
    finish(5, "closed-loop-pipeline", start, passed, detail)
}

/// Criterion 6: the hand-computed AP fixture and the rectangle-metric truth
/// table.
pub fn criterion_metric_fixtures() -> CriterionResult {
    let start = Instant::now();
    let curve = [
        ScoredPrediction {
            confidence: 0.9,
            matched: true,
        },
        ScoredPrediction {
            confidence: 0.8,
            matched: false,
        },
        ScoredPrediction {
            confidence: 0.7,
            matched: true,
        },
    ];
    let ap = average_precision(&curve, 2).unwrap();
    let ap_ok = (ap - 5.0 / 6.0).abs() <= 1e-9;

    let cfg = EvalConfig::default();
    let gt = OrientedRect::new(50.0, 50.0, 40.0, 20.0, 0.4).unwrap();
    let rotated =
        OrientedRect::new(50.0, 50.0, 40.0, 20.0, 0.4 + std::f64::consts::FRAC_PI_4).unwrap();
    let half_turn = OrientedRect::new(50.0, 50.0, 40.0, 20.0, 0.4 + std::f64::consts::PI).unwrap();
    let table_ok = grasp_match(&gt, &[gt], &cfg)
        && !grasp_match(&rotated, &[gt], &cfg)
        && grasp_match(&half_turn, &[gt], &cfg);

    finish(
        6,
        "metric-fixtures",
        start,
        ap_ok && table_ok,
        format!("AP fixture |{ap} - 5/6| <= 1e-9: {ap_ok}; grasp-match truth table: {table_ok}"),
    )
}

/// Criterion 7: the 8-scene standard suite reaches <= 10% of the initial loss
/// on at least 7 scenes and recovers at least 90% of objects through the
/// pipeline and rectangle metric; loss windows are near-monotone.
pub fn criterion_toy_training() -> CriterionResult {
    let start = Instant::now();
    let suite = match standard_suite() {
        Ok(s) => s,
        Err(e) => return finish(7, "toy-training", start, false, e.to_string()),
    };
    let post = PostConfig::default();
    let eval_cfg = EvalConfig::default();
    let mut reduced = 0usize;
    let mut objects_total = 0usize;
    let mut objects_ok = 0usize;
    let mut max_window_violations = 0usize;
    for s in &suite {
        let trace = match train_direct(&s.assignment, &s.specs, &s.train) {
            Ok(t) => t,
            Err(e) => return finish(7, "toy-training", start, false, e.to_string()),
        };
        let initial = trace.totals.first().unwrap().total;
        let final_total = trace.totals.last().unwrap().total;
        if final_total <= 0.1 * initial {
            reduced += 1;
        }
        // trailing-window monotonicity of the mean over 50 steps
        let window = 50usize;
        let means: Vec<f64> = (0..=trace.totals.len() - window)
            .map(|k| {
                trace.totals[k..k + window]
                    .iter()
                    .map(|t| t.total)
                    .sum::<f64>()
                    / window as f64
            })
            .collect();
        let violations = means
            .windows(2)
            .filter(|w| w[1] > w[0] * (1.0 + 1e-9))
            .count();
        max_window_violations = max_window_violations.max(violations);

        let report = verify_recovery(&trace.tensor, &s.scene, &post, &eval_cfg);
        objects_total += report.objects.len();
        objects_ok += report.n_full;
    }
    let recovery = objects_ok as f64 / objects_total as f64;
    let elapsed_ok = start.elapsed().as_secs_f64() < 300.0;
    let passed = reduced >= 7 && recovery >= 0.9 && max_window_violations <= 2 && elapsed_ok;
    finish(
        7,
        "toy-training",
        start,
        passed,
        format!(
            "loss <= 10% initial on {reduced}/8 scenes; recovery {objects_ok}/{objects_total} = {recovery:.3}; max window violations {max_window_violations}"
        ),
    )
}

/// Enumerate every parent assignment (forest) over `n` labelled nodes.
fn forests(n: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = Vec::new();
    let mut current: Vec<Option<usize>> = vec![None; n];
    fn is_acyclic(parents: &[Option<usize>]) -> bool {
        for start in 0..parents.len() {
            let mut seen = 0usize;
            let mut cur = start;
            while let Some(p) = parents[cur] {
                cur = p;
                seen += 1;
                if seen > parents.len() {
                    return false;
                }
            }
        }
        true
    }
    fn rec(i: usize, n: usize, current: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
        if i == n {
            if is_acyclic(current) {
                out.push(current.clone());
            }
            return;
        }
        for choice in std::iter::once(None).chain((0..n).filter(|&p| p != i).map(Some)) {
            current[i] = choice;
            rec(i + 1, n, current, out);
        }
        current[i] = None;
    }
    rec(0, n, &mut current, &mut out);
    out
}

/// Build a concrete geometry for a stacking forest: roots side by side, each
/// child shrunk and centred over its parent strip so that stacked-on objects
/// are heavily covered (and usually invisible).
fn scene_for_forest(parents: &[Option<usize>]) -> SceneState {
    let n = parents.len();
    let roots: Vec<usize> = (0..n).filter(|&i| parents[i].is_none()).collect();
    let mut rects: Vec<Option<crate::geometry::AxisRect>> = vec![None; n];
    for (r, &root) in roots.iter().enumerate() {
        let x0 = 10.0 + 120.0 * r as f64;
        rects[root] = Some(crate::geometry::AxisRect {
            x1: x0,
            y1: 10.0,
            x2: x0 + 100.0,
            y2: 110.0,
        });
    }
    // children in index order; a parent always has a smaller... not guaranteed,
    // so iterate until every rect is placed.
    while rects.iter().any(Option::is_none) {
        for i in 0..n {
            if rects[i].is_some() {
                continue;
            }
            let p = parents[i].unwrap();
            let Some(parent_rect) = rects[p] else { continue };
            let siblings: Vec<usize> = (0..n).filter(|&j| parents[j] == Some(p)).collect();
            let k = siblings.len() as f64;
            let slot = siblings.iter().position(|&j| j == i).unwrap() as f64;
            let strip_w = parent_rect.width() / k;
            let x1 = parent_rect.x1 + strip_w * slot;
            let pad_x = strip_w * 0.025;
            let pad_y = parent_rect.height() * 0.025;
            rects[i] = Some(crate::geometry::AxisRect {
                x1: x1 + pad_x,
                y1: parent_rect.y1 + pad_y,
                x2: x1 + strip_w - pad_x,
                y2: parent_rect.y2 - pad_y,
            });
        }
    }
    SceneState {
        objects: (0..n)
            .map(|i| SimObject {
                id: i as u32,
                class_id: i,
                rect: rects[i].unwrap(),
                supports: parents[i].map(|p| vec![p as u32]).unwrap_or_default(),
                present: true,
            })
            .collect(),
        visibility_threshold: 0.8,
    }
}

/// Criterion 8: over every stacking forest with up to 5 objects and every
/// target choice, the simulated policy with an oracle detector succeeds in at
/// most n steps.
pub fn criterion_planner_soundness() -> CriterionResult {
    let start = Instant::now();
    let mut episodes = 0usize;
    let mut failures: Vec<String> = Vec::new();
    let mut hidden_targets = 0usize;
    for n in 1..=5usize {
        let detector = OracleDetector { num_classes: n };
        for parents in forests(n) {
            let scene = scene_for_forest(&parents);
            for target in 0..n {
                episodes += 1;
                if scene.coverage(target as u32) >= scene.visibility_threshold {
                    hidden_targets += 1;
                }
                match simulate(&scene, target, &detector, n) {
                    Ok(ep) if ep.success && ep.steps <= n => {}
                    Ok(ep) => failures.push(format!(
                        "n={n} parents={parents:?} target={target}: success={} steps={}",
                        ep.success, ep.steps
                    )),
                    Err(e) => failures.push(format!(
                        "n={n} parents={parents:?} target={target}: {e}"
                    )),
                }
            }
        }
    }
    let elapsed_ok = start.elapsed().as_secs_f64() < 60.0;
    let passed = failures.is_empty() && elapsed_ok;
    let detail = if failures.is_empty() {
        format!("{episodes} episodes over all forests with n <= 5 ({hidden_targets} with initially occluded targets), all <= n steps")
    } else {
        format!("{} failures, first: {}", failures.len(), failures[0])
    };
    finish(8, "planner-soundness", start, passed, detail)
}

/// Criterion 9: seeded CLI commands are byte-identical across runs.
pub fn criterion_cli_determinism() -> CriterionResult {
    let start = Instant::now();
    let run = |argv: &[&str], stdin: &[u8]| -> (i32, Vec<u8>) {
        let args: Vec<String> = argv.iter().map(|s| s.to_string()).collect();
        let mut input = stdin;
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = crate::cli::dispatch(&args, &mut input, &mut out, &mut err);
        (code, out)
    };

    let gen_args = [
        "gen-synth", "--seed", "7", "--objects", "3", "--classes", "8", "--size", "320",
    ];
    let mut all_ok = true;
    let mut details = Vec::new();
    let (code, scene_doc) = run(&gen_args, b"");
    let (code2, scene_doc2) = run(&gen_args, b"");
    let gen_ok = code == 0 && code2 == 0 && scene_doc == scene_doc2 && !scene_doc.is_empty();
    all_ok &= gen_ok;
    details.push(format!("gen-synth identical: {gen_ok}"));

    let sim_args = ["simulate", "--target", "0", "--seed", "3", "--max-steps", "10"];
    let (c1, sim1) = run(&sim_args, &scene_doc);
    let (c2, sim2) = run(&sim_args, &scene_doc);
    let sim_ok = c1 == 0 && c2 == 0 && sim1 == sim2 && !sim1.is_empty();
    all_ok &= sim_ok;
    details.push(format!("simulate identical: {sim_ok}"));

    let train_args = ["train-toy", "--seed", "3", "--steps", "40", "--classes", "8"];
    let (t1, trace1) = run(&train_args, &scene_doc);
    let (t2, trace2) = run(&train_args, &scene_doc);
    let train_ok = t1 == 0 && t2 == 0 && trace1 == trace2 && !trace1.is_empty();
    all_ok &= train_ok;
    details.push(format!("train-toy identical: {train_ok}"));

    finish(9, "cli-determinism", start, all_ok, details.join("; "))
}

/// Criterion 10: Cornell parser fixtures produce the documented skip counts
/// and error kinds.
pub fn criterion_cornell_parser() -> CriterionResult {
    let start = Instant::now();
    let clean = "2 1\n-2 1\n-2 -1\n2 -1\n";
    let with_nan = "NaN 1\n-2 1\n-2 -1\n2 -1\n2 1\n-2 1\n-2 -1\n2 -1\n";
    let truncated = "2 1\n-2 1\n-2 -1\n2 -1\n5 5\n6 6\n";
    let malformed = "2 1\nabc 1\n-2 -1\n2 -1\n";

    let ok_clean = matches!(parse_cornell_rect_file(clean), Ok(p) if p.rects.len() == 1 && p.skipped == 0);
    let ok_nan = matches!(parse_cornell_rect_file(with_nan), Ok(p) if p.rects.len() == 1 && p.skipped == 1);
    let ok_trunc = matches!(
        parse_cornell_rect_file(truncated),
        Err(Error::TruncatedFile { line: 5, extra: 2 })
    );
    let ok_malformed = matches!(
        parse_cornell_rect_file(malformed),
        Err(Error::MalformedLine { line: 2, .. })
    );
    let passed = ok_clean && ok_nan && ok_trunc && ok_malformed;
    finish(
        10,
        "cornell-parser",
        start,
        passed,
        format!("clean: {ok_clean}; NaN skip: {ok_nan}; truncated: {ok_trunc}; malformed: {ok_malformed}"),
    )
}

/// Run every criterion, print one line each, and return overall success.
pub fn run_all(out: &mut dyn Write) -> bool {
    let results = [
        criterion_geometry_oracle(),
        criterion_codec_bijection(),
        criterion_gradient_check(),
        criterion_loss_anchors(),
        criterion_closed_loop(),
        criterion_metric_fixtures(),
        criterion_toy_training(),
        criterion_planner_soundness(),
        criterion_cli_determinism(),
        criterion_cornell_parser(),
    ];
    let mut all = true;
    for r in &results {
        let _ = writeln!(out, "{}", r.line());
        all &= r.passed;
    }
    let _ = writeln!(
        out,
        "selftest: {}/{} criteria passed",
        results.iter().filter(|r| r.passed).count(),
        results.len()
    );
    all
}
