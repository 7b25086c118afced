//! Evaluation metrics: the rectangle metric for grasps, Cornell-style
//! image accuracy, PASCAL-style average precision, mAP and mAPg, plus seeded
//! cross-validation splits.
//!
//! A predicted grasp matches a ground-truth rectangle when the orientation
//! difference (mod pi, folded into `[0, pi/2]`) stays below the angle
//! threshold and the rotated IOU exceeds the overlap threshold. mAPg demands,
//! on top of the usual box IOU for object detection, that the paired grasp
//! passes the rectangle metric against the matched object's grasps.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::SceneAnnotation;
use crate::error::{Error, Result};
use crate::geometry::{axis_iou, rotated_iou, wrap_half_turn, OrientedRect};
use crate::postprocess::PairedObject;

/// Metric thresholds.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Maximum orientation difference in radians (default 30 degrees).
    pub angle_threshold: f64,
    /// Minimum rotated IOU for a grasp match (default 0.25).
    pub grasp_iou: f64,
    /// Minimum box IOU for an object-detection match (default 0.5).
    pub od_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            angle_threshold: std::f64::consts::FRAC_PI_6,
            grasp_iou: 0.25,
            od_iou: 0.5,
        }
    }
}

/// Rectangle metric: true iff some ground-truth rectangle is close enough in
/// angle (mod pi) and overlaps enough under rotated IOU.
pub fn grasp_match(pred: &OrientedRect, gts: &[OrientedRect], cfg: &EvalConfig) -> bool {
    gts.iter().any(|gt| {
        let d = wrap_half_turn(pred.theta - gt.theta).abs();
        d < cfg.angle_threshold && rotated_iou(pred, gt) > cfg.grasp_iou
    })
}

/// A confidence-scored prediction with its precomputed match flag.
#[derive(Debug, Clone, Copy)]
pub struct ScoredPrediction {
    pub confidence: f64,
    pub matched: bool,
}

/// All-point (continuous) average precision: precision summed at each true
/// positive times the recall step `1/n_gt`. Returns `None` when the class has
/// no ground truth (AP undefined).
pub fn average_precision(preds: &[ScoredPrediction], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .partial_cmp(&preds[a].confidence)
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut tp = 0usize;
    let mut acc = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if preds[i].matched {
            tp += 1;
            acc += tp as f64 / (rank + 1) as f64;
        }
    }
    Some(acc / n_gt as f64)
}

/// Per-class accounting inside an [`EvalReport`].
#[derive(Debug, Clone)]
pub struct ClassAp {
    pub class_id: usize,
    pub n_gt: usize,
    pub tp: usize,
    pub fp: usize,
    /// AP under the joint box+grasp criterion (None when no ground truth).
    pub ap: Option<f64>,
    /// AP under the box-only criterion.
    pub ap_plain: Option<f64>,
}

/// Metric results; which fields are populated depends on the producing
/// operation.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub n_images: usize,
    pub n_success: usize,
    pub accuracy: Option<f64>,
    pub per_class: Vec<ClassAp>,
    pub map: Option<f64>,
    pub mapg: Option<f64>,
    pub notes: Vec<String>,
    /// AP integration method identifier.
    pub ap_method: &'static str,
}

/// Cornell accuracy: the fraction of images whose top-k ranked predictions
/// contain a rectangle-metric match. Images with no prediction count as
/// failures.
pub fn cornell_accuracy(
    preds: &[Vec<OrientedRect>],
    gts: &[Vec<OrientedRect>],
    top_k: usize,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::DimensionMismatch {
            expected: gts.len(),
            got: preds.len(),
        });
    }
    let mut n_success = 0;
    for (pred, gt) in preds.iter().zip(gts) {
        if pred
            .iter()
            .take(top_k.max(1))
            .any(|p| grasp_match(p, gt, cfg))
        {
            n_success += 1;
        }
    }
    let n_images = gts.len();
    Ok(EvalReport {
        n_images,
        n_success,
        accuracy: Some(if n_images == 0 {
            0.0
        } else {
            n_success as f64 / n_images as f64
        }),
        ap_method: "continuous",
        ..EvalReport::default()
    })
}

/// mAP with grasp: a detection is a true positive iff its box IOU with a
/// same-class unmatched ground-truth object exceeds the threshold and its
/// paired grasp passes the rectangle metric against that object's grasps.
/// The box-only mAP over the identical matching is reported alongside.
pub fn mapg(
    preds: &[Vec<PairedObject>],
    gts: &[SceneAnnotation],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::DimensionMismatch {
            expected: gts.len(),
            got: preds.len(),
        });
    }

    let mut classes: BTreeMap<usize, usize> = BTreeMap::new(); // class -> n_gt
    for scene in gts {
        for obj in &scene.objects {
            *classes.entry(obj.class_id).or_insert(0) += 1;
        }
    }
    let mut notes = Vec::new();
    let mut predicted_only: Vec<usize> = Vec::new();
    for img in preds {
        for node in img {
            let c = node.detection.class_id;
            if !classes.contains_key(&c) && !predicted_only.contains(&c) {
                predicted_only.push(c);
            }
        }
    }
    for c in &predicted_only {
        notes.push(format!(
            "class {c}: predictions but no ground truth; AP undefined, excluded from means"
        ));
    }

    let mut per_class = Vec::new();
    for (&class_id, &n_gt) in &classes {
        // (image, node) detections of this class, highest confidence first
        let mut dets: Vec<(usize, usize, f64)> = Vec::new();
        for (img, nodes) in preds.iter().enumerate() {
            for (i, node) in nodes.iter().enumerate() {
                if node.detection.class_id == class_id {
                    dets.push((img, i, node.detection.pr));
                }
            }
        }
        dets.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap()
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });

        let mut matched: Vec<Vec<bool>> = gts.iter().map(|s| vec![false; s.objects.len()]).collect();
        let mut flags_grasp = Vec::with_capacity(dets.len());
        let mut flags_plain = Vec::with_capacity(dets.len());
        let mut tp = 0;
        for &(img, node_idx, conf) in &dets {
            let node = &preds[img][node_idx];
            let scene = &gts[img];
            let mut best: Option<(usize, f64)> = None;
            for (oi, obj) in scene.objects.iter().enumerate() {
                if obj.class_id != class_id || matched[img][oi] {
                    continue;
                }
                let overlap = axis_iou(&node.detection.bbox, &obj.bbox);
                if overlap <= cfg.od_iou {
                    continue;
                }
                if best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((oi, overlap));
                }
            }
            let (plain, grasp_ok) = match best {
                None => (false, false),
                Some((oi, _)) => {
                    matched[img][oi] = true;
                    let grasp_ok = node.best_grasp.as_ref().is_some_and(|g| {
                        grasp_match(&g.rect, &scene.objects[oi].grasps, cfg)
                    });
                    (true, grasp_ok)
                }
            };
            if grasp_ok {
                tp += 1;
            }
            flags_grasp.push(ScoredPrediction {
                confidence: conf,
                matched: grasp_ok,
            });
            flags_plain.push(ScoredPrediction {
                confidence: conf,
                matched: plain,
            });
        }

        per_class.push(ClassAp {
            class_id,
            n_gt,
            tp,
            fp: dets.len() - tp,
            ap: average_precision(&flags_grasp, n_gt),
            ap_plain: average_precision(&flags_plain, n_gt),
        });
    }

    let mean = |take: fn(&ClassAp) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = per_class.iter().filter_map(take).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    Ok(EvalReport {
        n_images: gts.len(),
        n_success: 0,
        accuracy: None,
        map: mean(|c| c.ap_plain),
        mapg: mean(|c| c.ap),
        per_class,
        notes,
        ap_method: "continuous",
    })
}

/// Fold assignment strategy for cross validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Shuffle samples independently.
    ImageWise,
    /// Keep all samples sharing a group key in one fold.
    ObjectWise,
}

/// Split sample indices into `k` seeded folds. `groups` supplies the
/// object-identity key per sample and must be as long as `ids` for
/// [`SplitMode::ObjectWise`]; it is ignored image-wise.
pub fn cv_splits(
    ids: &[String],
    groups: &[String],
    mode: SplitMode,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    match mode {
        SplitMode::ImageWise => {
            if ids.len() < k {
                return Err(Error::TooFewGroups {
                    groups: ids.len(),
                    k,
                });
            }
            let mut order: Vec<usize> = (0..ids.len()).collect();
            order.shuffle(&mut rng);
            for (i, idx) in order.into_iter().enumerate() {
                folds[i % k].push(idx);
            }
        }
        SplitMode::ObjectWise => {
            if groups.len() != ids.len() {
                return Err(Error::DimensionMismatch {
                    expected: ids.len(),
                    got: groups.len(),
                });
            }
            let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, g) in groups.iter().enumerate() {
                by_group.entry(g.as_str()).or_default().push(i);
            }
            if by_group.len() < k {
                return Err(Error::TooFewGroups {
                    groups: by_group.len(),
                    k,
                });
            }
            let mut keys: Vec<&str> = by_group.keys().copied().collect();
            keys.shuffle(&mut rng);
            for key in keys {
                let members = &by_group[key];
                let smallest = (0..k).min_by_key(|&f| (folds[f].len(), f)).unwrap();
                folds[smallest].extend_from_slice(members);
            }
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchor_codec::{Detection, GraspCandidate};
    use crate::dataio::AnnotatedObject;
    use crate::geometry::AxisRect;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_4, PI};

    #[test]
    fn grasp_match_truth_table() {
        let cfg = EvalConfig::default();
        let gt = OrientedRect::new(50.0, 50.0, 40.0, 20.0, 0.4).unwrap();
        assert!(grasp_match(&gt, &[gt], &cfg), "identity matches");

        let rotated = OrientedRect::new(50.0, 50.0, 40.0, 20.0, 0.4 + FRAC_PI_4).unwrap();
        assert!(
            !grasp_match(&rotated, &[gt], &cfg),
            "45 degrees fails the 30 degree gate"
        );

        let half_turn = OrientedRect::new(50.0, 50.0, 40.0, 20.0, 0.4 + PI).unwrap();
        assert!(grasp_match(&half_turn, &[gt], &cfg), "theta + pi matches");
    }

    #[test]
    fn average_precision_fixtures() {
        let one = [ScoredPrediction {
            confidence: 0.9,
            matched: true,
        }];
        assert_abs_diff_eq!(average_precision(&one, 1).unwrap(), 1.0, epsilon = 0.0);

        // 2 GT; (0.9 match, 0.8 miss, 0.7 match) -> 1*0.5 + (2/3)*0.5 = 5/6
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
        assert_abs_diff_eq!(
            average_precision(&curve, 2).unwrap(),
            5.0 / 6.0,
            epsilon = 1e-9
        );

        assert_eq!(average_precision(&[], 2), Some(0.0));
        assert_eq!(average_precision(&curve, 0), None);
    }

    #[test]
    fn average_precision_argsort_invariant() {
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
        let rescaled: Vec<ScoredPrediction> = curve
            .iter()
            .map(|p| ScoredPrediction {
                confidence: p.confidence.powi(3) * 10.0,
                matched: p.matched,
            })
            .collect();
        assert_eq!(average_precision(&curve, 2), average_precision(&rescaled, 2));
    }

    #[test]
    fn cornell_accuracy_counting() {
        let cfg = EvalConfig::default();
        let gt = OrientedRect::new(10.0, 10.0, 8.0, 4.0, 0.3).unwrap();
        let gts = vec![vec![gt]; 3];
        let preds = vec![vec![gt], vec![gt], vec![]];
        let report = cornell_accuracy(&preds, &gts, 1, &cfg).unwrap();
        assert_eq!(report.n_success, 2);
        assert_abs_diff_eq!(report.accuracy.unwrap(), 2.0 / 3.0, epsilon = 1e-12);

        let perfect = cornell_accuracy(&gts, &gts, 1, &cfg).unwrap();
        assert_abs_diff_eq!(perfect.accuracy.unwrap(), 1.0, epsilon = 0.0);

        let empty: Vec<Vec<OrientedRect>> = vec![vec![]; 3];
        let zero = cornell_accuracy(&empty, &gts, 1, &cfg).unwrap();
        assert_abs_diff_eq!(zero.accuracy.unwrap(), 0.0, epsilon = 0.0);
    }

    fn paired(class_id: usize, pr: f64, bbox: AxisRect, grasp: Option<OrientedRect>) -> PairedObject {
        let mut class_scores = vec![0.0; 4];
        class_scores[class_id] = 1.0;
        PairedObject {
            detection: Detection {
                class_id,
                class_scores: class_scores.clone(),
                pr,
                bbox,
                fc_scores: vec![0.0; 5],
                cc_scores: vec![0.0; 5],
            },
            best_grasp: grasp.map(|rect| GraspCandidate {
                rect,
                pr: 1.0,
                class_id,
                class_scores,
            }),
            id: 0,
        }
    }

    fn scene_with(objects: Vec<AnnotatedObject>) -> SceneAnnotation {
        SceneAnnotation {
            width: 608,
            height: 608,
            objects,
        }
    }

    #[test]
    fn mapg_oracle_is_exactly_one() {
        let grasp = OrientedRect::new(60.0, 60.0, 30.0, 14.0, 0.3).unwrap();
        let obj = AnnotatedObject {
            id: 0,
            class_id: 1,
            bbox: AxisRect::new(20.0, 20.0, 100.0, 100.0).unwrap(),
            on_top_of: vec![],
            grasps: vec![grasp],
        };
        let gt = scene_with(vec![obj.clone()]);
        let preds = vec![vec![paired(1, 1.0, obj.bbox, Some(grasp))]];
        let report = mapg(&preds, &[gt], &EvalConfig::default()).unwrap();
        assert_eq!(report.mapg, Some(1.0));
        assert_eq!(report.map, Some(1.0));
    }

    #[test]
    fn mapg_grasp_gate_zeroes_rotated_grasps() {
        let grasp = OrientedRect::new(60.0, 60.0, 30.0, 14.0, 0.3).unwrap();
        let rotated = OrientedRect::new(60.0, 60.0, 30.0, 14.0, 0.3 + FRAC_PI_4).unwrap();
        let obj = AnnotatedObject {
            id: 0,
            class_id: 1,
            bbox: AxisRect::new(20.0, 20.0, 100.0, 100.0).unwrap(),
            on_top_of: vec![],
            grasps: vec![grasp],
        };
        let gt = scene_with(vec![obj.clone()]);
        let preds = vec![vec![paired(1, 1.0, obj.bbox, Some(rotated))]];
        let report = mapg(&preds, &[gt], &EvalConfig::default()).unwrap();
        assert_eq!(report.mapg, Some(0.0));
        assert_eq!(report.map, Some(1.0), "box-only mAP unaffected");
    }

    #[test]
    fn mapg_five_sixths_fixture() {
        let grasp = OrientedRect::new(60.0, 60.0, 30.0, 14.0, 0.3).unwrap();
        let b1 = AxisRect::new(20.0, 20.0, 100.0, 100.0).unwrap();
        let b2 = AxisRect::new(300.0, 300.0, 400.0, 400.0).unwrap();
        let g2 = OrientedRect::new(350.0, 350.0, 30.0, 14.0, 1.2).unwrap();
        let gt = scene_with(vec![
            AnnotatedObject {
                id: 0,
                class_id: 1,
                bbox: b1,
                on_top_of: vec![],
                grasps: vec![grasp],
            },
            AnnotatedObject {
                id: 1,
                class_id: 1,
                bbox: b2,
                on_top_of: vec![],
                grasps: vec![g2],
            },
        ]);
        let far = AxisRect::new(500.0, 500.0, 560.0, 560.0).unwrap();
        let preds = vec![vec![
            paired(1, 0.9, b1, Some(grasp)),
            paired(1, 0.8, far, Some(grasp)),
            paired(1, 0.7, b2, Some(g2)),
        ]];
        let report = mapg(&preds, &[gt], &EvalConfig::default()).unwrap();
        assert_abs_diff_eq!(report.mapg.unwrap(), 5.0 / 6.0, epsilon = 1e-9);
    }

    #[test]
    fn cv_split_partitions() {
        let ids: Vec<String> = (0..10).map(|i| format!("img{i}")).collect();
        let folds = cv_splits(&ids, &[], SplitMode::ImageWise, 5, 7).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        assert_eq!(folds.iter().map(Vec::len).collect::<Vec<_>>(), vec![2; 5]);
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        // seeded determinism
        let again = cv_splits(&ids, &[], SplitMode::ImageWise, 5, 7).unwrap();
        assert_eq!(folds, again);
    }

    #[test]
    fn cv_split_object_wise_keeps_groups_together() {
        let ids: Vec<String> = (0..12).map(|i| format!("img{i}")).collect();
        let groups: Vec<String> = (0..12).map(|i| format!("obj{}", i / 2)).collect();
        let folds = cv_splits(&ids, &groups, SplitMode::ObjectWise, 5, 3).unwrap();
        for fold in &folds {
            for &i in fold {
                let partner = if i % 2 == 0 { i + 1 } else { i - 1 };
                assert!(fold.contains(&partner), "group of {i} split across folds");
            }
        }
        let err = cv_splits(&ids[..6], &groups[..6], SplitMode::ObjectWise, 5, 3);
        assert!(matches!(err, Err(Error::TooFewGroups { groups: 3, k: 5 })));
    }
}
