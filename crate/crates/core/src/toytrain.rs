//! Desk-scale optimization that exercises the loss/codec/metric chain end to
//! end: the raw head tensor itself is the parameter vector, optimized with
//! classic SGD momentum against encoded targets, then verified through the
//! post-processing pipeline and the rectangle metric.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::anchor_codec::{encode_targets, GridSpecs, HeadTensor, TargetAssignment};
use crate::dataio::{synth_scene, SceneAnnotation};
use crate::error::{Error, Result};
use crate::eval::{grasp_match, EvalConfig};
use crate::geometry::axis_iou;
use crate::loss::{multitask_loss, LossConfig, LossTotals};
use crate::postprocess::{run_pipeline, PostConfig};

/// Optimizer settings for direct tensor optimization.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Standard deviation of the Gaussian value initialization.
    pub init_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.1,
            momentum: 0.9,
            seed: 0,
            init_sigma: 0.01,
        }
    }
}

/// Per-step loss terms, the final tensor and the wall time of a run.
#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub totals: Vec<LossTotals>,
    pub tensor: HeadTensor,
    pub wall: Duration,
}

/// Optimize a fresh Gaussian-initialized tensor against the assignment with
/// `v <- momentum * v - lr * grad; t <- t + v`. Deterministic for a fixed
/// seed; returns the full per-step trace.
pub fn train_direct(
    assignment: &TargetAssignment,
    specs: &GridSpecs,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.init_sigma).map_err(|e| Error::BadParams(e.to_string()))?;

    let mut tensor = HeadTensor::zeros(specs);
    for s in 0..specs.scales.len() {
        for v in tensor.scale_values_mut(s) {
            *v = normal.sample(&mut rng);
        }
    }
    let mut velocity: Vec<Vec<f64>> = (0..specs.scales.len())
        .map(|s| vec![0.0; specs.scale_len(s)])
        .collect();

    let loss_cfg = LossConfig::default();
    let mut totals = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let lb = multitask_loss(&tensor, assignment, &loss_cfg)?;
        if !lb.total.is_finite() {
            return Err(Error::DivergenceDetected { step });
        }
        totals.push(lb.totals());
        for s in 0..specs.scales.len() {
            let g = lb.grad.scale_values(s);
            let v = &mut velocity[s];
            let t = tensor.scale_values_mut(s);
            for i in 0..t.len() {
                v[i] = cfg.momentum * v[i] - cfg.lr * g[i];
                t[i] += v[i];
            }
        }
    }

    Ok(TrainTrace {
        totals,
        tensor,
        wall: start.elapsed(),
    })
}

/// Recovery outcome for one ground-truth object.
#[derive(Debug, Clone)]
pub struct ObjectRecovery {
    pub object_id: u32,
    pub od_iou: f64,
    pub od_ok: bool,
    pub grasp_ok: bool,
}

/// Post-pipeline scoring of a trained tensor against its generating scene.
#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub objects: Vec<ObjectRecovery>,
    /// Objects passing both the box and the grasp criterion.
    pub n_full: usize,
    /// `n_full / n_objects`; vacuously 1 for an empty scene.
    pub fraction: f64,
}

/// Run the post-processing pipeline on a tensor and score every ground-truth
/// object: box IOU against the best same-class detection and the rectangle
/// metric against that detection's paired grasp.
pub fn verify_recovery(
    tensor: &HeadTensor,
    scene: &SceneAnnotation,
    post_cfg: &PostConfig,
    eval_cfg: &EvalConfig,
) -> RecoveryReport {
    let graph = run_pipeline(tensor, post_cfg);
    let mut objects = Vec::with_capacity(scene.objects.len());
    let mut n_full = 0;
    for obj in &scene.objects {
        let mut best: Option<(usize, f64)> = None;
        for (i, node) in graph.nodes.iter().enumerate() {
            if node.detection.class_id != obj.class_id {
                continue;
            }
            let overlap = axis_iou(&node.detection.bbox, &obj.bbox);
            if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((i, overlap));
            }
        }
        let (od_iou, grasp_ok) = match best {
            None => (0.0, false),
            Some((i, overlap)) => {
                let grasp_ok = graph.nodes[i]
                    .best_grasp
                    .as_ref()
                    .is_some_and(|g| grasp_match(&g.rect, &obj.grasps, eval_cfg));
                (overlap, grasp_ok)
            }
        };
        let od_ok = od_iou > eval_cfg.od_iou;
        if od_ok && grasp_ok {
            n_full += 1;
        }
        objects.push(ObjectRecovery {
            object_id: obj.id,
            od_iou,
            od_ok,
            grasp_ok,
        });
    }
    let fraction = if objects.is_empty() {
        1.0
    } else {
        n_full as f64 / objects.len() as f64
    };
    RecoveryReport {
        objects,
        n_full,
        fraction,
    }
}

/// One scene of the standard suite with everything needed to train on it.
#[derive(Debug, Clone)]
pub struct SuiteScene {
    pub scene: SceneAnnotation,
    pub specs: GridSpecs,
    pub assignment: TargetAssignment,
    pub train: TrainConfig,
}

/// The 8-scene standard suite: seeds 0-7 with 1-3 objects each on a 320px
/// grid with 8 classes. Direct tensor optimization needs a smaller step size
/// than the default to keep the exp-law box terms stable, so the suite pins
/// lr = 1e-3.
pub fn standard_suite() -> Result<Vec<SuiteScene>> {
    let mut out = Vec::with_capacity(8);
    for seed in 0u64..8 {
        let n_objects = 1 + (seed as usize) % 3;
        let specs = crate::anchor_codec::default_scale_specs(320, 8)?;
        let (scene, _) = synth_scene(seed, n_objects, 8, 320)?;
        let assignment = encode_targets(&scene, &specs)?;
        out.push(SuiteScene {
            scene,
            specs,
            assignment,
            train: TrainConfig {
                steps: 500,
                lr: 1e-3,
                momentum: 0.9,
                seed,
                init_sigma: 0.01,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchor_codec::{default_scale_specs, OD_X};

    fn small_setup() -> (SceneAnnotation, GridSpecs, TargetAssignment) {
        let specs = default_scale_specs(320, 8).unwrap();
        let (scene, _) = synth_scene(1, 1, 8, 320).unwrap();
        let assignment = encode_targets(&scene, &specs).unwrap();
        (scene, specs, assignment)
    }

    #[test]
    fn zero_learning_rate_is_a_noop() {
        let (_, specs, assignment) = small_setup();
        let cfg = TrainConfig {
            steps: 5,
            lr: 0.0,
            ..TrainConfig::default()
        };
        let trace = train_direct(&assignment, &specs, &cfg).unwrap();
        assert_eq!(trace.totals.len(), 5);
        for t in &trace.totals {
            assert_eq!(t.total, trace.totals[0].total);
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let (_, specs, assignment) = small_setup();
        let cfg = TrainConfig {
            steps: 20,
            lr: 1e-3,
            ..TrainConfig::default()
        };
        let a = train_direct(&assignment, &specs, &cfg).unwrap();
        let b = train_direct(&assignment, &specs, &cfg).unwrap();
        for (x, y) in a.totals.iter().zip(&b.totals) {
            assert_eq!(x.total, y.total);
        }
        for s in 0..specs.scales.len() {
            assert_eq!(a.tensor.scale_values(s), b.tensor.scale_values(s));
        }
    }

    #[test]
    fn positive_coordinates_receive_gradient_at_step_zero() {
        let (_, specs, assignment) = small_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, 0.01).unwrap();
        let mut tensor = HeadTensor::zeros(&specs);
        for s in 0..specs.scales.len() {
            for v in tensor.scale_values_mut(s) {
                *v = normal.sample(&mut rng);
            }
        }
        let lb = multitask_loss(&tensor, &assignment, &LossConfig::default()).unwrap();
        for t in &assignment.od {
            let base = specs.od_base(t.scale, t.cy, t.cx, t.anchor);
            for off in 0..4 {
                assert!(
                    lb.grad.scale_values(t.scale)[base + OD_X + off].abs() > 0.0,
                    "coordinate channel {off} has zero gradient"
                );
            }
        }
    }

    #[test]
    fn default_config_reduces_single_object_loss() {
        let (_, specs, assignment) = small_setup();
        let trace = train_direct(&assignment, &specs, &TrainConfig::default()).unwrap();
        let initial = trace.totals.first().unwrap().total;
        let last = trace.totals.last().unwrap().total;
        assert!(
            last <= 0.1 * initial,
            "loss did not drop: {initial} -> {last}"
        );
    }

    #[test]
    fn suite_scene_trains_and_recovers() {
        let suite = standard_suite().unwrap();
        let s = &suite[0]; // single object, fastest
        let trace = train_direct(&s.assignment, &s.specs, &s.train).unwrap();
        let initial = trace.totals.first().unwrap().total;
        let last = trace.totals.last().unwrap().total;
        assert!(last <= 0.1 * initial);
        let report = verify_recovery(
            &trace.tensor,
            &s.scene,
            &PostConfig::default(),
            &EvalConfig::default(),
        );
        assert_eq!(report.fraction, 1.0, "report: {:?}", report.objects);
    }
}
