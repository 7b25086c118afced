//! Multi-scale anchor grids and the encode/decode transforms between raw
//! head values and detections/grasps.
//!
//! Predictions live on three grids (scales x1/x2/x4 with strides 32/16/8).
//! Each object-detection anchor regresses via the sigmoid/exp laws
//! `x = (cx + sigmoid(tx)) * stride`, `w = pw * exp(tw)`; grasp anchors add an
//! additive orientation offset `theta = p_theta + t_theta` on top of four
//! discrete angle anchors. Encoding inverts those laws for ground truth and
//! picks responsible cells/anchors so that encode followed by decode is a
//! bijection on non-conflicting scenes.

use std::collections::HashSet;

use crate::dataio::SceneAnnotation;
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, wrap_half_turn, AxisRect, OrientedRect};

/// Numerically stable logistic function.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Inverse logistic; the argument is clamped into `[1e-6, 1 - 1e-6]` so cell
/// border fractions stay finite.
pub fn logit_clamped(f: f64) -> f64 {
    let f = f.clamp(1e-6, 1.0 - 1e-6);
    (f / (1.0 - f)).ln()
}

/// Softmax over a logit slice (stable against large magnitudes).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&t| (t - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Anchor grid description for one prediction scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSpec {
    /// Up-sampling factor relative to the coarsest scale: 1, 2 or 4.
    pub scale_id: u8,
    /// Pixels per grid cell; `stride * grid_w == input width`.
    pub stride: u32,
    pub grid_w: usize,
    pub grid_h: usize,
    /// Object-detection anchors as `(p_w, p_h)` in pixels.
    pub od_anchors: Vec<(f64, f64)>,
    /// Grasp-detection anchors; empty on the x4 scale.
    pub gd_anchors: Vec<(f64, f64)>,
    /// Orientation anchors in `[0, pi)`.
    pub gd_angles: Vec<f64>,
}

/// Full grid description: input geometry, class count and the per-scale specs.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpecs {
    pub input_w: u32,
    pub input_h: u32,
    pub num_classes: usize,
    pub scales: Vec<ScaleSpec>,
}

// Channel offsets inside one OD anchor block.
pub(crate) const OD_X: usize = 0;
pub(crate) const OD_Y: usize = 1;
pub(crate) const OD_W: usize = 2;
pub(crate) const OD_H: usize = 3;
pub(crate) const OD_PR: usize = 4;
pub(crate) const OD_CLS: usize = 5;

// Channel offsets inside one GD anchor-angle block.
pub(crate) const GD_X: usize = 0;
pub(crate) const GD_Y: usize = 1;
pub(crate) const GD_W: usize = 2;
pub(crate) const GD_H: usize = 3;
pub(crate) const GD_TH: usize = 4;
pub(crate) const GD_PR: usize = 5;
pub(crate) const GD_CLS: usize = 6;

impl GridSpecs {
    /// Channel count of one OD anchor block: 4 box offsets, objectness,
    /// C class logits and two (C+1)-way reasoning heads.
    pub fn od_block(&self) -> usize {
        4 + 1 + self.num_classes + 2 * (self.num_classes + 1)
    }

    /// Channel count of one GD anchor-angle block: 4 box offsets, orientation,
    /// graspability and C class logits.
    pub fn gd_block(&self) -> usize {
        4 + 1 + 1 + self.num_classes
    }

    pub(crate) fn od_fc(&self) -> usize {
        OD_CLS + self.num_classes
    }

    pub(crate) fn od_cc(&self) -> usize {
        OD_CLS + self.num_classes + (self.num_classes + 1)
    }

    /// Values per grid cell at `scale`.
    pub fn cell_width(&self, scale: usize) -> usize {
        let s = &self.scales[scale];
        s.od_anchors.len() * self.od_block()
            + s.gd_anchors.len() * s.gd_angles.len() * self.gd_block()
    }

    /// Total value count of one scale's grid.
    pub fn scale_len(&self, scale: usize) -> usize {
        let s = &self.scales[scale];
        s.grid_w * s.grid_h * self.cell_width(scale)
    }

    pub(crate) fn od_base(&self, scale: usize, cy: usize, cx: usize, anchor: usize) -> usize {
        let s = &self.scales[scale];
        (cy * s.grid_w + cx) * self.cell_width(scale) + anchor * self.od_block()
    }

    pub(crate) fn gd_base(
        &self,
        scale: usize,
        cy: usize,
        cx: usize,
        anchor: usize,
        angle: usize,
    ) -> usize {
        let s = &self.scales[scale];
        (cy * s.grid_w + cx) * self.cell_width(scale)
            + s.od_anchors.len() * self.od_block()
            + (anchor * s.gd_angles.len() + angle) * self.gd_block()
    }

    /// Count of OD anchor slots over every scale and cell.
    pub fn total_od_slots(&self) -> usize {
        (0..self.scales.len()).map(|s| self.total_od_slots_at(s)).sum()
    }

    /// Count of OD anchor slots on one scale.
    pub fn total_od_slots_at(&self, scale: usize) -> usize {
        let s = &self.scales[scale];
        s.grid_w * s.grid_h * s.od_anchors.len()
    }

    /// Count of GD anchor-angle slots over every scale and cell.
    pub fn total_gd_slots(&self) -> usize {
        self.scales
            .iter()
            .map(|s| s.grid_w * s.grid_h * s.gd_anchors.len() * s.gd_angles.len())
            .sum()
    }
}

/// The three standard scale specs for a square input.
///
/// OD anchors are `(540,540),(480,480),(420,420)` / `(360,360),(300,300),
/// (240,240)` / `(180,180),(120,120),(60,60)` across strides 32/16/8; GD uses
/// one `(300,300)` anchor at x1 and one `(100,100)` anchor at x2, each with the
/// four angle anchors `{0, pi/4, pi/2, 3pi/4}`. That yields 9 OD anchors and
/// 8 GD anchor-angle combinations overall.
pub fn default_scale_specs(input_size: u32, num_classes: usize) -> Result<GridSpecs> {
    if input_size == 0 || input_size % 32 != 0 {
        return Err(Error::BadInputSize(input_size));
    }
    let angles: Vec<f64> = (0..4).map(|k| k as f64 * std::f64::consts::FRAC_PI_4).collect();
    let scale = |scale_id: u8, stride: u32, od: &[f64], gd: &[f64]| ScaleSpec {
        scale_id,
        stride,
        grid_w: (input_size / stride) as usize,
        grid_h: (input_size / stride) as usize,
        od_anchors: od.iter().map(|&a| (a, a)).collect(),
        gd_anchors: gd.iter().map(|&a| (a, a)).collect(),
        gd_angles: if gd.is_empty() { vec![] } else { angles.clone() },
    };
    Ok(GridSpecs {
        input_w: input_size,
        input_h: input_size,
        num_classes,
        scales: vec![
            scale(1, 32, &[540.0, 480.0, 420.0], &[300.0]),
            scale(2, 16, &[360.0, 300.0, 240.0], &[100.0]),
            scale(4, 8, &[180.0, 120.0, 60.0], &[]),
        ],
    })
}

/// Raw multi-scale head values (every t-value), laid out scale-major,
/// then row-major cells, then anchor-major channel blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTensor {
    specs: GridSpecs,
    data: Vec<Vec<f64>>,
}

impl HeadTensor {
    pub fn zeros(specs: &GridSpecs) -> Self {
        let data = (0..specs.scales.len())
            .map(|s| vec![0.0; specs.scale_len(s)])
            .collect();
        Self {
            specs: specs.clone(),
            data,
        }
    }

    /// Assemble a tensor from per-scale value buffers, validating lengths.
    pub fn from_values(specs: &GridSpecs, data: Vec<Vec<f64>>) -> Result<Self> {
        if data.len() != specs.scales.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} scales, got {}",
                specs.scales.len(),
                data.len()
            )));
        }
        for (s, values) in data.iter().enumerate() {
            let want = specs.scale_len(s);
            if values.len() != want {
                return Err(Error::ShapeMismatch(format!(
                    "scale {}: expected {} values, got {}",
                    s,
                    want,
                    values.len()
                )));
            }
            if !values.iter().all(|v| v.is_finite()) {
                return Err(Error::ShapeMismatch(format!(
                    "scale {s}: non-finite value in payload"
                )));
            }
        }
        Ok(Self {
            specs: specs.clone(),
            data,
        })
    }

    pub fn specs(&self) -> &GridSpecs {
        &self.specs
    }

    pub fn scale_values(&self, scale: usize) -> &[f64] {
        &self.data[scale]
    }

    pub fn scale_values_mut(&mut self, scale: usize) -> &mut [f64] {
        &mut self.data[scale]
    }

    /// Total number of stored values.
    pub fn len(&self) -> usize {
        self.data.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Decoded object detection.
#[derive(Debug, Clone)]
pub struct Detection {
    pub class_id: usize,
    /// Softmax class probabilities (sums to 1).
    pub class_scores: Vec<f64>,
    /// Objectness probability.
    pub pr: f64,
    pub bbox: AxisRect,
    /// Independent sigmoid probabilities over C+1 father-class slots
    /// (last slot = no-class).
    pub fc_scores: Vec<f64>,
    /// Independent sigmoid probabilities over C+1 child-class slots.
    pub cc_scores: Vec<f64>,
}

/// Decoded grasp candidate.
#[derive(Debug, Clone)]
pub struct GraspCandidate {
    pub rect: OrientedRect,
    /// Graspability probability.
    pub pr: f64,
    pub class_id: usize,
    pub class_scores: Vec<f64>,
}

/// One positive OD slot with its regression targets.
#[derive(Debug, Clone)]
pub struct OdTarget {
    pub scale: usize,
    pub cy: usize,
    pub cx: usize,
    pub anchor: usize,
    pub t_x: f64,
    pub t_y: f64,
    pub t_w: f64,
    pub t_h: f64,
    pub class_id: usize,
    /// Father-class multi-hot over C+1 slots (classes under this object).
    pub fc: Vec<bool>,
    /// Child-class multi-hot over C+1 slots (classes resting on this object).
    pub cc: Vec<bool>,
    pub object_id: u32,
}

/// One positive GD slot with its regression targets.
#[derive(Debug, Clone)]
pub struct GdTarget {
    pub scale: usize,
    pub cy: usize,
    pub cx: usize,
    pub anchor: usize,
    pub angle: usize,
    pub t_x: f64,
    pub t_y: f64,
    pub t_w: f64,
    pub t_h: f64,
    pub t_theta: f64,
    pub class_id: usize,
    pub object_id: u32,
    pub grasp_index: usize,
}

/// Positive cell/anchor assignments for a scene; every slot not listed here
/// belongs to the negative complement.
#[derive(Debug, Clone, Default)]
pub struct TargetAssignment {
    pub od: Vec<OdTarget>,
    pub gd: Vec<GdTarget>,
    /// Ground-truth entries dropped because every candidate slot was taken.
    pub dropped: usize,
}

fn centered_iou(w1: f64, h1: f64, w2: f64, h2: f64) -> f64 {
    let inter = w1.min(w2) * h1.min(h2);
    inter / (w1 * h1 + w2 * h2 - inter)
}

fn cell_of(coord: f64, stride: u32, cells: usize) -> usize {
    ((coord / stride as f64).floor() as isize).clamp(0, cells as isize - 1) as usize
}

/// Assign every ground-truth object and grasp to a responsible slot and
/// compute the regression targets that decode back to it.
///
/// Objects claim the cell containing their center at the scale of their
/// max-IOU anchor (IOU against the anchor box centered at origin); grasps
/// claim the GD scale with the larger anchor IOU plus the nearest angle
/// anchor. When a slot is already taken the entry falls back to its
/// next-best candidate; entries with no free candidate are dropped and
/// counted.
pub fn encode_targets(scene: &SceneAnnotation, specs: &GridSpecs) -> Result<TargetAssignment> {
    let (w_img, h_img) = (specs.input_w as f64, specs.input_h as f64);
    for obj in &scene.objects {
        let b = &obj.bbox;
        if b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > w_img || b.y2 > h_img {
            return Err(Error::OutOfBounds { id: obj.id });
        }
        for g in &obj.grasps {
            let inside = g.vertices().iter().all(|p| {
                p[0] >= 0.0 && p[0] <= w_img && p[1] >= 0.0 && p[1] <= h_img
            });
            if !inside {
                return Err(Error::OutOfBounds { id: obj.id });
            }
        }
    }

    let mut out = TargetAssignment::default();
    let mut od_taken: HashSet<(usize, usize, usize, usize)> = HashSet::new();

    for obj in &scene.objects {
        let bw = obj.bbox.width();
        let bh = obj.bbox.height();
        // All (scale, anchor) pairs ranked by anchor-shape IOU.
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
        for (s, spec) in specs.scales.iter().enumerate() {
            for (a, &(pw, ph)) in spec.od_anchors.iter().enumerate() {
                candidates.push((s, a, centered_iou(bw, bh, pw, ph)));
            }
        }
        candidates.sort_by(|x, y| {
            y.2.partial_cmp(&x.2)
                .unwrap()
                .then(x.0.cmp(&y.0))
                .then(x.1.cmp(&y.1))
        });

        let [cx_px, cy_px] = obj.bbox.center();
        let mut placed = false;
        for &(s, a, _) in &candidates {
            let spec = &specs.scales[s];
            let cx = cell_of(cx_px, spec.stride, spec.grid_w);
            let cy = cell_of(cy_px, spec.stride, spec.grid_h);
            if od_taken.insert((s, cy, cx, a)) {
                let stride = spec.stride as f64;
                let (pw, ph) = spec.od_anchors[a];
                let n1 = specs.num_classes + 1;
                let mut fc = vec![false; n1];
                let mut cc = vec![false; n1];
                for parent in &obj.on_top_of {
                    let class = scene.object(*parent).expect("validated support").class_id;
                    fc[class] = true;
                }
                if obj.on_top_of.is_empty() {
                    fc[specs.num_classes] = true;
                }
                let mut any_child = false;
                for other in &scene.objects {
                    if other.on_top_of.contains(&obj.id) {
                        cc[other.class_id] = true;
                        any_child = true;
                    }
                }
                if !any_child {
                    cc[specs.num_classes] = true;
                }
                out.od.push(OdTarget {
                    scale: s,
                    cy,
                    cx,
                    anchor: a,
                    t_x: logit_clamped(cx_px / stride - cx as f64),
                    t_y: logit_clamped(cy_px / stride - cy as f64),
                    t_w: (bw / pw).ln(),
                    t_h: (bh / ph).ln(),
                    class_id: obj.class_id,
                    fc,
                    cc,
                    object_id: obj.id,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            out.dropped += 1;
        }
    }

    let mut gd_taken: HashSet<(usize, usize, usize, usize, usize)> = HashSet::new();
    for obj in &scene.objects {
        for (gi, grasp) in obj.grasps.iter().enumerate() {
            // Rank (scale, anchor, angle) by anchor IOU, then angle distance;
            // on an exact half-spacing tie prefer the positive residual.
            let mut candidates: Vec<(usize, usize, usize, f64, f64, f64)> = Vec::new();
            for (s, spec) in specs.scales.iter().enumerate() {
                for (a, &(pw, ph)) in spec.gd_anchors.iter().enumerate() {
                    let iou = centered_iou(grasp.w, grasp.h, pw, ph);
                    for (k, &p_theta) in spec.gd_angles.iter().enumerate() {
                        let residual = wrap_half_turn(grasp.theta - p_theta);
                        candidates.push((s, a, k, iou, residual.abs(), residual));
                    }
                }
            }
            candidates.sort_by(|x, y| {
                y.3.partial_cmp(&x.3)
                    .unwrap()
                    .then(x.4.partial_cmp(&y.4).unwrap())
                    .then((x.5 < 0.0).cmp(&(y.5 < 0.0)))
                    .then(x.0.cmp(&y.0))
                    .then(x.2.cmp(&y.2))
            });

            let mut placed = false;
            for &(s, a, k, _, _, residual) in &candidates {
                let spec = &specs.scales[s];
                let cx = cell_of(grasp.x, spec.stride, spec.grid_w);
                let cy = cell_of(grasp.y, spec.stride, spec.grid_h);
                if gd_taken.insert((s, cy, cx, a, k)) {
                    let stride = spec.stride as f64;
                    let (pw, ph) = spec.gd_anchors[a];
                    out.gd.push(GdTarget {
                        scale: s,
                        cy,
                        cx,
                        anchor: a,
                        angle: k,
                        t_x: logit_clamped(grasp.x / stride - cx as f64),
                        t_y: logit_clamped(grasp.y / stride - cy as f64),
                        t_w: (grasp.w / pw).ln(),
                        t_h: (grasp.h / ph).ln(),
                        t_theta: residual,
                        class_id: obj.class_id,
                        object_id: obj.id,
                        grasp_index: gi,
                    });
                    placed = true;
                    break;
                }
            }
            if !placed {
                out.dropped += 1;
            }
        }
    }

    Ok(out)
}

/// Write an assignment into an otherwise-empty tensor with saturated
/// objectness: positives get `+logit`, negatives `-logit`, the target class
/// logit `+logit` and reasoning slots `+/-logit` by their multi-hot.
///
/// Decoding the result with any confidence threshold between
/// `sigmoid(-logit)` and `sigmoid(logit)` reproduces exactly the encoded
/// ground truth.
pub fn tensor_from_assignment(
    assignment: &TargetAssignment,
    specs: &GridSpecs,
    logit: f64,
) -> HeadTensor {
    let mut h = HeadTensor::zeros(specs);
    // All objectness slots start negative.
    for (s, spec) in specs.scales.iter().enumerate() {
        for cy in 0..spec.grid_h {
            for cx in 0..spec.grid_w {
                for a in 0..spec.od_anchors.len() {
                    let base = specs.od_base(s, cy, cx, a);
                    h.data[s][base + OD_PR] = -logit;
                }
                for a in 0..spec.gd_anchors.len() {
                    for k in 0..spec.gd_angles.len() {
                        let base = specs.gd_base(s, cy, cx, a, k);
                        h.data[s][base + GD_PR] = -logit;
                    }
                }
            }
        }
    }
    let n_classes = specs.num_classes;
    for t in &assignment.od {
        let base = specs.od_base(t.scale, t.cy, t.cx, t.anchor);
        let row = &mut h.data[t.scale];
        row[base + OD_X] = t.t_x;
        row[base + OD_Y] = t.t_y;
        row[base + OD_W] = t.t_w;
        row[base + OD_H] = t.t_h;
        row[base + OD_PR] = logit;
        row[base + OD_CLS + t.class_id] = logit;
        let fc0 = base + specs.od_fc();
        let cc0 = base + specs.od_cc();
        for c in 0..=n_classes {
            row[fc0 + c] = if t.fc[c] { logit } else { -logit };
            row[cc0 + c] = if t.cc[c] { logit } else { -logit };
        }
    }
    for t in &assignment.gd {
        let base = specs.gd_base(t.scale, t.cy, t.cx, t.anchor, t.angle);
        let row = &mut h.data[t.scale];
        row[base + GD_X] = t.t_x;
        row[base + GD_Y] = t.t_y;
        row[base + GD_W] = t.t_w;
        row[base + GD_H] = t.t_h;
        row[base + GD_TH] = t.t_theta;
        row[base + GD_PR] = logit;
        row[base + GD_CLS + t.class_id] = logit;
    }
    h
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// Decode object detections above `conf_threshold` from raw head values.
pub fn decode_od(h: &HeadTensor, conf_threshold: f64) -> Vec<Detection> {
    let specs = h.specs();
    let (w_img, h_img) = (specs.input_w as f64, specs.input_h as f64);
    let mut out = Vec::new();
    for (s, spec) in specs.scales.iter().enumerate() {
        let stride = spec.stride as f64;
        let values = &h.data[s];
        for cy in 0..spec.grid_h {
            for cx in 0..spec.grid_w {
                for (a, &(pw, ph)) in spec.od_anchors.iter().enumerate() {
                    let base = specs.od_base(s, cy, cx, a);
                    let pr = sigmoid(values[base + OD_PR]);
                    if pr < conf_threshold {
                        continue;
                    }
                    let x = (cx as f64 + sigmoid(values[base + OD_X])) * stride;
                    let y = (cy as f64 + sigmoid(values[base + OD_Y])) * stride;
                    let w = pw * values[base + OD_W].exp();
                    let hh = ph * values[base + OD_H].exp();
                    let bbox = AxisRect {
                        x1: (x - w * 0.5).max(0.0),
                        y1: (y - hh * 0.5).max(0.0),
                        x2: (x + w * 0.5).min(w_img),
                        y2: (y + hh * 0.5).min(h_img),
                    };
                    let cls = &values[base + OD_CLS..base + OD_CLS + specs.num_classes];
                    let class_scores = softmax(cls);
                    let fc0 = base + specs.od_fc();
                    let cc0 = base + specs.od_cc();
                    let n1 = specs.num_classes + 1;
                    out.push(Detection {
                        class_id: argmax(&class_scores),
                        class_scores,
                        pr,
                        bbox,
                        fc_scores: values[fc0..fc0 + n1].iter().map(|&t| sigmoid(t)).collect(),
                        cc_scores: values[cc0..cc0 + n1].iter().map(|&t| sigmoid(t)).collect(),
                    });
                }
            }
        }
    }
    out
}

/// Decode grasp candidates above `conf_threshold` from raw head values.
pub fn decode_gd(h: &HeadTensor, conf_threshold: f64) -> Vec<GraspCandidate> {
    let specs = h.specs();
    let mut out = Vec::new();
    for (s, spec) in specs.scales.iter().enumerate() {
        let stride = spec.stride as f64;
        let values = &h.data[s];
        for cy in 0..spec.grid_h {
            for cx in 0..spec.grid_w {
                for (a, &(pw, ph)) in spec.gd_anchors.iter().enumerate() {
                    for (k, &p_theta) in spec.gd_angles.iter().enumerate() {
                        let base = specs.gd_base(s, cy, cx, a, k);
                        let pr = sigmoid(values[base + GD_PR]);
                        if pr < conf_threshold {
                            continue;
                        }
                        let x = (cx as f64 + sigmoid(values[base + GD_X])) * stride;
                        let y = (cy as f64 + sigmoid(values[base + GD_Y])) * stride;
                        let w = pw * values[base + GD_W].exp();
                        let hh = ph * values[base + GD_H].exp();
                        let theta = normalize_angle(p_theta + values[base + GD_TH]);
                        let cls = &values[base + GD_CLS..base + GD_CLS + specs.num_classes];
                        let class_scores = softmax(cls);
                        out.push(GraspCandidate {
                            rect: OrientedRect {
                                x,
                                y,
                                w,
                                h: hh,
                                theta,
                            },
                            pr,
                            class_id: argmax(&class_scores),
                            class_scores,
                        });
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{AnnotatedObject, SceneAnnotation};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, PI};

    #[test]
    fn default_specs_match_paper_anchors() {
        let specs = default_scale_specs(608, 31).unwrap();
        assert_eq!(specs.scales.len(), 3);
        assert_eq!(
            specs.scales.iter().map(|s| s.grid_w).collect::<Vec<_>>(),
            vec![19, 38, 76]
        );
        assert_eq!(specs.scales[0].od_anchors[0], (540.0, 540.0));
        assert_eq!(specs.scales[1].od_anchors[2], (240.0, 240.0));
        assert_eq!(specs.scales[2].od_anchors, vec![(180.0, 180.0), (120.0, 120.0), (60.0, 60.0)]);
        assert_eq!(specs.scales[0].gd_anchors, vec![(300.0, 300.0)]);
        assert_eq!(specs.scales[1].gd_anchors, vec![(100.0, 100.0)]);
        assert!(specs.scales[2].gd_anchors.is_empty());
        let n_od: usize = specs.scales.iter().map(|s| s.od_anchors.len()).sum();
        let n_gd: usize = specs
            .scales
            .iter()
            .map(|s| s.gd_anchors.len() * s.gd_angles.len())
            .sum();
        assert_eq!(n_od, 9);
        assert_eq!(n_gd, 8);
    }

    #[test]
    fn input_320_grids() {
        let specs = default_scale_specs(320, 31).unwrap();
        assert_eq!(
            specs.scales.iter().map(|s| s.grid_w).collect::<Vec<_>>(),
            vec![10, 20, 40]
        );
    }

    #[test]
    fn bad_input_size() {
        assert!(matches!(
            default_scale_specs(300, 31),
            Err(Error::BadInputSize(300))
        ));
    }

    #[test]
    fn channel_count_arithmetic() {
        let specs = default_scale_specs(608, 31).unwrap();
        assert_eq!(specs.od_block(), 100);
        assert_eq!(specs.gd_block(), 37);
    }

    #[test]
    fn decode_zero_tensor_centers_and_anchor_sizes() {
        let specs = default_scale_specs(608, 4).unwrap();
        let h = HeadTensor::zeros(&specs);
        let dets = decode_od(&h, 0.5);
        // sigma(0)=0.5 so every slot meets the threshold
        assert_eq!(dets.len(), specs.total_od_slots());

        // cell (5,7) at stride 32, anchor (480,480): center (5.5, 7.5) cells
        // = (176, 240); the 480-wide box clamps to the 608 image
        let spec0 = &specs.scales[0];
        let idx = (7 * spec0.grid_w + 5) * spec0.od_anchors.len() + 1;
        let d = &dets[idx];
        assert_abs_diff_eq!(d.bbox.x1, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d.bbox.y1, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d.bbox.x2, 176.0 + 240.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d.bbox.y2, 240.0 + 240.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d.pr, 0.5, epsilon = 1e-12);

        // same cell on the x4 scale, anchor (60,60): nothing clamps, so the
        // box center is exactly (5.5, 7.5) cells
        let offset: usize = (0..2).map(|s| specs.total_od_slots_at(s)).sum();
        let spec2 = &specs.scales[2];
        let idx = offset + (7 * spec2.grid_w + 5) * spec2.od_anchors.len() + 2;
        let d = &dets[idx];
        let c = d.bbox.center();
        assert_abs_diff_eq!(c[0], 5.5 * 8.0, epsilon = 1e-9);
        assert_abs_diff_eq!(c[1], 7.5 * 8.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d.bbox.width(), 60.0, epsilon = 1e-9);

        assert!(decode_od(&h, 0.6).is_empty());
    }

    #[test]
    fn exp_law_doubles_width() {
        let specs = default_scale_specs(608, 4).unwrap();
        let mut h = HeadTensor::zeros(&specs);
        let base = specs.od_base(0, 7, 5, 1);
        h.scale_values_mut(0)[base + OD_W] = 2.0f64.ln();
        let dets = decode_od(&h, 0.5);
        let spec = &specs.scales[0];
        let idx = (7 * spec.grid_w + 5) * spec.od_anchors.len() + 1;
        // 960-wide box clamped to [0, 608]; center at x=176
        assert_abs_diff_eq!(dets[idx].bbox.x1, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(dets[idx].bbox.x2, 608.0, epsilon = 1e-9);
    }

    #[test]
    fn gd_angle_anchor_addition_and_wrap() {
        let specs = default_scale_specs(608, 4).unwrap();
        let mut h = HeadTensor::zeros(&specs);
        // anchor angle index 3 = 3*pi/4
        let base = specs.gd_base(0, 2, 2, 0, 3);
        h.scale_values_mut(0)[base + GD_TH] = FRAC_PI_8;
        let grasps = decode_gd(&h, 0.5);
        let spec = &specs.scales[0];
        let idx = ((2 * spec.grid_w + 2) * spec.gd_angles.len()) + 3;
        assert_abs_diff_eq!(grasps[idx].rect.theta, 7.0 * PI / 8.0, epsilon = 1e-12);

        // pi/2 offset on 3*pi/4 wraps to pi/4
        h.scale_values_mut(0)[base + GD_TH] = std::f64::consts::FRAC_PI_2;
        let grasps = decode_gd(&h, 0.5);
        assert_abs_diff_eq!(grasps[idx].rect.theta, FRAC_PI_4, epsilon = 1e-12);

        // zero offsets decode to the anchor itself
        let z = HeadTensor::zeros(&specs);
        let grasps = decode_gd(&z, 0.5);
        assert_abs_diff_eq!(grasps[idx].rect.theta, 3.0 * FRAC_PI_4, epsilon = 1e-12);
        assert_abs_diff_eq!(grasps[idx].rect.w, 300.0, epsilon = 1e-12);
        assert_abs_diff_eq!(grasps[idx].pr, 0.5, epsilon = 1e-12);
    }

    fn single_object_scene() -> SceneAnnotation {
        // centers off stride multiples so no logit clamping kicks in
        SceneAnnotation {
            width: 608,
            height: 608,
            objects: vec![AnnotatedObject {
                id: 0,
                class_id: 2,
                bbox: AxisRect::new(100.0, 121.0, 340.0, 361.0).unwrap(),
                on_top_of: vec![],
                grasps: vec![OrientedRect::new(220.0, 241.0, 90.0, 40.0, 0.30).unwrap()],
            }],
        }
    }

    #[test]
    fn encode_assigns_nearest_angle_anchor() {
        let specs = default_scale_specs(608, 4).unwrap();
        let a = encode_targets(&single_object_scene(), &specs).unwrap();
        assert_eq!(a.gd.len(), 1);
        // theta = 0.30 rad is closest to the 0-anchor; residual stays 0.30
        assert_eq!(a.gd[0].angle, 0);
        assert_abs_diff_eq!(a.gd[0].t_theta, 0.30, epsilon = 1e-12);
        assert!(a.gd[0].t_theta > -FRAC_PI_8 && a.gd[0].t_theta <= FRAC_PI_8);
        // 90x40 grasp has larger IOU with the (100,100) anchor at x2
        assert_eq!(a.gd[0].scale, 1);
    }

    #[test]
    fn encode_perfect_anchor_gives_zero_log_offset() {
        let specs = default_scale_specs(608, 4).unwrap();
        let scene = SceneAnnotation {
            width: 608,
            height: 608,
            objects: vec![AnnotatedObject {
                id: 0,
                class_id: 0,
                bbox: AxisRect::new(64.0, 64.0, 544.0, 544.0).unwrap(),
                on_top_of: vec![],
                grasps: vec![],
            }],
        };
        let a = encode_targets(&scene, &specs).unwrap();
        assert_eq!(a.od.len(), 1);
        // 480x480 box picks the (480,480) anchor
        assert_eq!((a.od[0].scale, a.od[0].anchor), (0, 1));
        assert_abs_diff_eq!(a.od[0].t_w, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.od[0].t_h, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn encode_unsupported_object_gets_no_class_fc() {
        let specs = default_scale_specs(608, 4).unwrap();
        let a = encode_targets(&single_object_scene(), &specs).unwrap();
        let fc = &a.od[0].fc;
        assert!(fc[4], "no-class slot set");
        assert_eq!(fc.iter().filter(|&&b| b).count(), 1);
    }

    #[test]
    fn encode_rejects_out_of_bounds() {
        let specs = default_scale_specs(608, 4).unwrap();
        let mut scene = single_object_scene();
        scene.objects[0].bbox = AxisRect::new(500.0, 500.0, 700.0, 650.0).unwrap();
        assert!(matches!(
            encode_targets(&scene, &specs),
            Err(Error::OutOfBounds { id: 0 })
        ));
    }

    #[test]
    fn saturated_round_trip_single_scene() {
        let specs = default_scale_specs(608, 4).unwrap();
        let scene = single_object_scene();
        let a = encode_targets(&scene, &specs).unwrap();
        let h = tensor_from_assignment(&a, &specs, 20.0);
        let dets = decode_od(&h, 0.9);
        assert_eq!(dets.len(), 1);
        let b = &dets[0].bbox;
        let gt = &scene.objects[0].bbox;
        for (got, want) in [(b.x1, gt.x1), (b.y1, gt.y1), (b.x2, gt.x2), (b.y2, gt.y2)] {
            assert_abs_diff_eq!(got, want, epsilon = 1e-6);
        }
        assert_eq!(dets[0].class_id, 2);
        let grasps = decode_gd(&h, 0.9);
        assert_eq!(grasps.len(), 1);
        let g = &grasps[0].rect;
        let want = &scene.objects[0].grasps[0];
        assert_abs_diff_eq!(g.x, want.x, epsilon = 1e-6);
        assert_abs_diff_eq!(g.y, want.y, epsilon = 1e-6);
        assert_abs_diff_eq!(g.w, want.w, epsilon = 1e-6);
        assert_abs_diff_eq!(g.h, want.h, epsilon = 1e-6);
        assert!(wrap_half_turn(g.theta - want.theta).abs() < 1e-9);
    }

    #[test]
    fn from_values_rejects_wrong_shape() {
        let specs = default_scale_specs(608, 4).unwrap();
        let bad = vec![vec![0.0; 10], vec![], vec![]];
        assert!(matches!(
            HeadTensor::from_values(&specs, bad),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
