//! Multi-task loss over a head tensor given a target assignment, with
//! analytic gradients for every raw t-value.
//!
//! Terms follow the decoded-space formulation: coordinate MSE in
//! grid-normalized units (one grid cell = 1x1), `-log pr` on positive slots,
//! focal class loss, `lambda_n`-weighted `-log(1 - pr)` over the negative
//! complement, binary focal loss on the two reasoning heads, and MSE on the
//! wrapped orientation residual for grasp positives. Gradients are exact
//! chain-rule derivatives through sigmoid, exp and softmax; they are checked
//! against central finite differences in the self-test suite.

use std::collections::HashMap;

use crate::anchor_codec::{
    sigmoid, softmax, GridSpecs, HeadTensor, TargetAssignment, GD_CLS, GD_PR, GD_TH, GD_X,
    OD_CLS, OD_PR, OD_X,
};
use crate::error::{Error, Result};
use crate::geometry::wrap_half_turn;

const PROB_CLAMP: f64 = 1e-12;

/// `ln(1 + exp(x))` without overflow; `-ln sigmoid(t) = softplus(-t)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Loss weights and hyper-parameters.
#[derive(Debug, Clone)]
pub struct LossConfig {
    /// Weight of the negative-objectness sum.
    pub lambda_n: f64,
    /// Focal exponent shared by the class and reasoning terms.
    pub gamma: f64,
    pub w_coord: f64,
    pub w_objectness_pos: f64,
    pub w_objectness_neg: f64,
    pub w_class: f64,
    pub w_reasoning: f64,
    pub w_angle: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_n: 100.0,
            gamma: 2.0,
            w_coord: 1.0,
            w_objectness_pos: 1.0,
            w_objectness_neg: 1.0,
            w_class: 1.0,
            w_reasoning: 1.0,
            w_angle: 1.0,
        }
    }
}

/// Scalar loss terms. `objectness_neg` already carries the `lambda_n` factor;
/// `total` is the term-weighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTotals {
    pub coord_mse: f64,
    pub objectness_pos: f64,
    pub objectness_neg: f64,
    pub class_focal: f64,
    pub reasoning_bifocal: f64,
    pub angle_mse: f64,
    pub total: f64,
}

/// Loss terms plus the gradient of `total` with respect to every raw value.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub coord_mse: f64,
    pub objectness_pos: f64,
    pub objectness_neg: f64,
    pub class_focal: f64,
    pub reasoning_bifocal: f64,
    pub angle_mse: f64,
    pub total: f64,
    pub grad: HeadTensor,
}

impl LossBreakdown {
    pub fn totals(&self) -> LossTotals {
        LossTotals {
            coord_mse: self.coord_mse,
            objectness_pos: self.objectness_pos,
            objectness_neg: self.objectness_neg,
            class_focal: self.class_focal,
            reasoning_bifocal: self.reasoning_bifocal,
            angle_mse: self.angle_mse,
            total: self.total,
        }
    }
}

/// Focal loss `-(1 - p_t)^gamma * ln(p_t)`; `p_t` is clamped to at least 1e-12.
/// `gamma = 0` reduces to plain cross-entropy.
pub fn focal_loss(p_t: f64, gamma: f64) -> f64 {
    let p = p_t.clamp(PROB_CLAMP, 1.0);
    (1.0 - p).powf(gamma) * -p.ln()
}

/// Sum of focal-modulated binary cross-entropies over a multi-hot target:
/// target slots contribute `-(1-s)^g ln s`, the rest `-s^g ln(1-s)`.
pub fn binary_focal_loss(scores: &[f64], targets: &[bool], gamma: f64) -> Result<f64> {
    if scores.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            got: scores.len(),
        });
    }
    let mut acc = 0.0;
    for (&s, &hit) in scores.iter().zip(targets) {
        let s = s.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        acc += if hit {
            focal_loss(s, gamma)
        } else {
            focal_loss(1.0 - s, gamma)
        };
    }
    Ok(acc)
}

/// d/ds of the target-slot binary focal term `(1-s)^g (-ln s)`.
fn bifocal_target_dds(s: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return -1.0 / s;
    }
    if 1.0 - s <= 0.0 {
        return 0.0;
    }
    gamma * (1.0 - s).powf(gamma - 1.0) * s.ln() - (1.0 - s).powf(gamma) / s
}

/// d/ds of the non-target binary focal term `s^g (-ln(1-s))`.
fn bifocal_other_dds(s: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return 1.0 / (1.0 - s);
    }
    if s <= 0.0 {
        return 0.0;
    }
    -gamma * s.powf(gamma - 1.0) * (1.0 - s).ln() + s.powf(gamma) / (1.0 - s)
}

fn validate_assignment(a: &TargetAssignment, specs: &GridSpecs) -> Result<()> {
    let n1 = specs.num_classes + 1;
    for t in &a.od {
        let s = specs
            .scales
            .get(t.scale)
            .ok_or_else(|| Error::ShapeMismatch(format!("od target: bad scale {}", t.scale)))?;
        if t.cy >= s.grid_h
            || t.cx >= s.grid_w
            || t.anchor >= s.od_anchors.len()
            || t.class_id >= specs.num_classes
            || t.fc.len() != n1
            || t.cc.len() != n1
        {
            return Err(Error::ShapeMismatch(format!(
                "od target out of range for object {}",
                t.object_id
            )));
        }
    }
    for t in &a.gd {
        let s = specs
            .scales
            .get(t.scale)
            .ok_or_else(|| Error::ShapeMismatch(format!("gd target: bad scale {}", t.scale)))?;
        if t.cy >= s.grid_h
            || t.cx >= s.grid_w
            || t.anchor >= s.gd_anchors.len()
            || t.angle >= s.gd_angles.len()
            || t.class_id >= specs.num_classes
        {
            return Err(Error::ShapeMismatch(format!(
                "gd target out of range for object {}",
                t.object_id
            )));
        }
    }
    Ok(())
}

/// Evaluate every loss term and the gradient of the weighted total.
pub fn multitask_loss(
    h: &HeadTensor,
    a: &TargetAssignment,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let specs = h.specs().clone();
    validate_assignment(a, &specs)?;

    let mut od_pos: HashMap<(usize, usize, usize, usize), usize> = HashMap::new();
    for (i, t) in a.od.iter().enumerate() {
        if od_pos.insert((t.scale, t.cy, t.cx, t.anchor), i).is_some() {
            return Err(Error::ShapeMismatch("duplicate positive OD slot".into()));
        }
    }
    let mut gd_pos: HashMap<(usize, usize, usize, usize, usize), usize> = HashMap::new();
    for (i, t) in a.gd.iter().enumerate() {
        if gd_pos
            .insert((t.scale, t.cy, t.cx, t.anchor, t.angle), i)
            .is_some()
        {
            return Err(Error::ShapeMismatch("duplicate positive GD slot".into()));
        }
    }

    let mut grad = HeadTensor::zeros(&specs);
    let mut coord = 0.0;
    let mut obj_pos = 0.0;
    let mut obj_neg = 0.0;
    let mut class_focal = 0.0;
    let mut reasoning = 0.0;
    let mut angle = 0.0;
    let gamma = cfg.gamma;
    let n_classes = specs.num_classes;
    let n1 = n_classes + 1;

    for (s, spec) in specs.scales.iter().enumerate() {
        let stride = spec.stride as f64;
        let values = h.scale_values(s).to_vec();
        let g = grad.scale_values_mut(s);
        for cy in 0..spec.grid_h {
            for cx in 0..spec.grid_w {
                for a_idx in 0..spec.od_anchors.len() {
                    let base = specs.od_base(s, cy, cx, a_idx);
                    let t_pr = values[base + OD_PR];
                    match od_pos.get(&(s, cy, cx, a_idx)) {
                        None => {
                            obj_neg += cfg.lambda_n * softplus(t_pr);
                            g[base + OD_PR] +=
                                cfg.w_objectness_neg * cfg.lambda_n * sigmoid(t_pr);
                        }
                        Some(&pi) => {
                            let target = &a.od[pi];
                            let (pw, ph) = spec.od_anchors[a_idx];
                            // x, y in cell units
                            for (off, tt) in [(OD_X, target.t_x), (OD_X + 1, target.t_y)] {
                                let sv = sigmoid(values[base + off]);
                                let st = sigmoid(tt);
                                let d = sv - st;
                                coord += d * d;
                                g[base + off] += cfg.w_coord * 2.0 * d * sv * (1.0 - sv);
                            }
                            // w, h in cell units via the exp-anchor law
                            for (off, tt, p) in [
                                (OD_X + 2, target.t_w, pw),
                                (OD_X + 3, target.t_h, ph),
                            ] {
                                let f = p / stride;
                                let ev = values[base + off].exp();
                                let et = tt.exp();
                                let d = f * (ev - et);
                                coord += d * d;
                                g[base + off] += cfg.w_coord * 2.0 * d * f * ev;
                            }
                            obj_pos += softplus(-t_pr);
                            g[base + OD_PR] += cfg.w_objectness_pos * (sigmoid(t_pr) - 1.0);

                            let logits = &values[base + OD_CLS..base + OD_CLS + n_classes];
                            class_focal += add_class_focal_grad(
                                logits,
                                target.class_id,
                                gamma,
                                cfg.w_class,
                                &mut g[base + OD_CLS..base + OD_CLS + n_classes],
                            );

                            let fc0 = base + specs.od_fc();
                            let cc0 = base + specs.od_cc();
                            for (off0, hot) in [(fc0, &target.fc), (cc0, &target.cc)] {
                                for c in 0..n1 {
                                    let t_val = values[off0 + c];
                                    let sv = sigmoid(t_val).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                                    let (term, dds) = if hot[c] {
                                        (focal_loss(sv, gamma), bifocal_target_dds(sv, gamma))
                                    } else {
                                        (
                                            focal_loss(1.0 - sv, gamma),
                                            bifocal_other_dds(sv, gamma),
                                        )
                                    };
                                    reasoning += term;
                                    g[off0 + c] += cfg.w_reasoning * dds * sv * (1.0 - sv);
                                }
                            }
                        }
                    }
                }
                for a_idx in 0..spec.gd_anchors.len() {
                    for k in 0..spec.gd_angles.len() {
                        let base = specs.gd_base(s, cy, cx, a_idx, k);
                        let t_pr = values[base + GD_PR];
                        match gd_pos.get(&(s, cy, cx, a_idx, k)) {
                            None => {
                                obj_neg += cfg.lambda_n * softplus(t_pr);
                                g[base + GD_PR] +=
                                    cfg.w_objectness_neg * cfg.lambda_n * sigmoid(t_pr);
                            }
                            Some(&pi) => {
                                let target = &a.gd[pi];
                                let (pw, ph) = spec.gd_anchors[a_idx];
                                for (off, tt) in [(GD_X, target.t_x), (GD_X + 1, target.t_y)] {
                                    let sv = sigmoid(values[base + off]);
                                    let st = sigmoid(tt);
                                    let d = sv - st;
                                    coord += d * d;
                                    g[base + off] += cfg.w_coord * 2.0 * d * sv * (1.0 - sv);
                                }
                                for (off, tt, p) in [
                                    (GD_X + 2, target.t_w, pw),
                                    (GD_X + 3, target.t_h, ph),
                                ] {
                                    let f = p / stride;
                                    let ev = values[base + off].exp();
                                    let et = tt.exp();
                                    let d = f * (ev - et);
                                    coord += d * d;
                                    g[base + off] += cfg.w_coord * 2.0 * d * f * ev;
                                }
                                let d_theta =
                                    wrap_half_turn(values[base + GD_TH] - target.t_theta);
                                angle += d_theta * d_theta;
                                g[base + GD_TH] += cfg.w_angle * 2.0 * d_theta;

                                obj_pos += softplus(-t_pr);
                                g[base + GD_PR] +=
                                    cfg.w_objectness_pos * (sigmoid(t_pr) - 1.0);

                                let logits = &values[base + GD_CLS..base + GD_CLS + n_classes];
                                class_focal += add_class_focal_grad(
                                    logits,
                                    target.class_id,
                                    gamma,
                                    cfg.w_class,
                                    &mut g[base + GD_CLS..base + GD_CLS + n_classes],
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    let total = cfg.w_coord * coord
        + cfg.w_objectness_pos * obj_pos
        + cfg.w_objectness_neg * obj_neg
        + cfg.w_class * class_focal
        + cfg.w_reasoning * reasoning
        + cfg.w_angle * angle;

    Ok(LossBreakdown {
        coord_mse: coord,
        objectness_pos: obj_pos,
        objectness_neg: obj_neg,
        class_focal,
        reasoning_bifocal: reasoning,
        angle_mse: angle,
        total,
        grad,
    })
}

/// Focal loss of one softmax class block; accumulates d(term)/d(logit_k)
/// scaled by `weight` into `grad` and returns the unweighted term.
fn add_class_focal_grad(
    logits: &[f64],
    class_id: usize,
    gamma: f64,
    weight: f64,
    grad: &mut [f64],
) -> f64 {
    let p = softmax(logits);
    let pc = p[class_id];
    let term = focal_loss(pc, gamma);
    if gamma == 0.0 {
        for (k, g) in grad.iter_mut().enumerate() {
            let delta = if k == class_id { 1.0 } else { 0.0 };
            *g += weight * (p[k] - delta);
        }
        return term;
    }
    let pcl = pc.clamp(PROB_CLAMP, 1.0);
    let dl_dp = if 1.0 - pcl <= 0.0 {
        0.0
    } else {
        gamma * (1.0 - pcl).powf(gamma - 1.0) * pcl.ln() - (1.0 - pcl).powf(gamma) / pcl
    };
    for (k, g) in grad.iter_mut().enumerate() {
        let delta = if k == class_id { 1.0 } else { 0.0 };
        *g += weight * dl_dp * pc * (delta - p[k]);
    }
    term
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchor_codec::{
        default_scale_specs, encode_targets, tensor_from_assignment, HeadTensor,
    };
    use crate::dataio::synth_scene;
    use approx::assert_abs_diff_eq;

    #[test]
    fn focal_scalar_cases() {
        assert_eq!(focal_loss(1.0, 2.0), 0.0);
        assert_abs_diff_eq!(focal_loss(0.3, 0.0), -(0.3f64.ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(
            focal_loss(0.5, 2.0),
            0.25 * std::f64::consts::LN_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn binary_focal_cases() {
        // perfect predictions after clamping
        let v = binary_focal_loss(&[1.0, 0.0, 1.0], &[true, false, true], 2.0).unwrap();
        assert!(v < 1e-10);
        let single = binary_focal_loss(&[0.5], &[true], 2.0).unwrap();
        assert_abs_diff_eq!(single, 0.25 * std::f64::consts::LN_2, epsilon = 1e-15);
        let all_neg = binary_focal_loss(&[0.5; 32], &[false; 32], 2.0).unwrap();
        assert_abs_diff_eq!(all_neg, 8.0 * std::f64::consts::LN_2, epsilon = 1e-12);
        assert!(binary_focal_loss(&[0.5; 3], &[true; 4], 2.0).is_err());
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let specs = default_scale_specs(320, 8).unwrap();
        let (scene, _) = synth_scene(3, 2, 8, 320).unwrap();
        let a = encode_targets(&scene, &specs).unwrap();
        assert_eq!(a.dropped, 0);
        let h = tensor_from_assignment(&a, &specs, 40.0);
        let lb = multitask_loss(&h, &a, &LossConfig::default()).unwrap();
        assert!(lb.total < 1e-6, "total = {}", lb.total);
    }

    #[test]
    fn empty_scene_closed_form() {
        let specs = default_scale_specs(320, 8).unwrap();
        let h = HeadTensor::zeros(&specs);
        let a = TargetAssignment::default();
        let lb = multitask_loss(&h, &a, &LossConfig::default()).unwrap();
        let n_slots = (specs.total_od_slots() + specs.total_gd_slots()) as f64;
        let expected = 100.0 * n_slots * std::f64::consts::LN_2;
        assert_abs_diff_eq!(lb.total, expected, epsilon = expected * 1e-12);
        assert_eq!(lb.coord_mse, 0.0);
        assert_eq!(lb.objectness_pos, 0.0);
    }

    #[test]
    fn lambda_doubling_scales_only_negative_term() {
        let specs = default_scale_specs(320, 8).unwrap();
        let (scene, _) = synth_scene(5, 3, 8, 320).unwrap();
        let a = encode_targets(&scene, &specs).unwrap();
        let h = tensor_from_assignment(&a, &specs, 1.5);
        let base = multitask_loss(&h, &a, &LossConfig::default()).unwrap();
        let doubled_cfg = LossConfig {
            lambda_n: 200.0,
            ..LossConfig::default()
        };
        let doubled = multitask_loss(&h, &a, &doubled_cfg).unwrap();
        assert_abs_diff_eq!(
            doubled.objectness_neg,
            2.0 * base.objectness_neg,
            epsilon = base.objectness_neg * 1e-12
        );
        assert_eq!(doubled.coord_mse, base.coord_mse);
        assert_eq!(doubled.objectness_pos, base.objectness_pos);
        assert_eq!(doubled.class_focal, base.class_focal);
        assert_eq!(doubled.reasoning_bifocal, base.reasoning_bifocal);
        assert_eq!(doubled.angle_mse, base.angle_mse);
    }

    #[test]
    fn gamma_zero_matches_cross_entropy() {
        let specs = default_scale_specs(64, 5).unwrap();
        let (scene, _) = synth_scene(9, 2, 5, 64).unwrap();
        let a = encode_targets(&scene, &specs).unwrap();
        let h = tensor_from_assignment(&a, &specs, 0.8);
        let cfg = LossConfig {
            gamma: 0.0,
            ..LossConfig::default()
        };
        let lb = multitask_loss(&h, &a, &cfg).unwrap();
        // independent cross-entropy accumulation over the same positives
        let mut ce = 0.0;
        for t in &a.od {
            let base = specs.od_base(t.scale, t.cy, t.cx, t.anchor);
            let vals = h.scale_values(t.scale);
            let p = softmax(&vals[base + OD_CLS..base + OD_CLS + specs.num_classes]);
            ce += -p[t.class_id].ln();
        }
        for t in &a.gd {
            let base = specs.gd_base(t.scale, t.cy, t.cx, t.anchor, t.angle);
            let vals = h.scale_values(t.scale);
            let p = softmax(&vals[base + GD_CLS..base + GD_CLS + specs.num_classes]);
            ce += -p[t.class_id].ln();
        }
        assert_abs_diff_eq!(lb.class_focal, ce, epsilon = 1e-12);
    }
}
