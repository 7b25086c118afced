//! Reasoning post-processing: class-aware NMS, object/grasp pairing by class
//! and overlap, and relation-graph construction from the child-class head.
//!
//! Only the child-class (CC) scores drive relation edges; father-class scores
//! are carried through on detections for inspection but never used here.

use crate::anchor_codec::{decode_gd, decode_od, Detection, GraspCandidate, HeadTensor};
use crate::geometry::{axis_iou, rotated_iou};

/// Thresholds for the post-processing stages. All values are design knobs;
/// the defaults assume grasp boxes much smaller than object boxes (hence the
/// low pairing IOU).
#[derive(Debug, Clone)]
pub struct PostConfig {
    pub od_nms_iou: f64,
    pub gd_nms_iou: f64,
    pub od_conf: f64,
    pub gd_conf: f64,
    /// Minimum IOU between a grasp's bounding box and an object box to pair.
    pub pair_iou: f64,
    /// Minimum box IOU between two objects to accept a relation edge.
    pub rel_iou: f64,
    /// Minimum child-class score to propose a relation edge.
    pub cc_score: f64,
}

impl Default for PostConfig {
    fn default() -> Self {
        Self {
            od_nms_iou: 0.45,
            gd_nms_iou: 0.30,
            od_conf: 0.5,
            gd_conf: 0.5,
            pair_iou: 0.05,
            rel_iou: 0.10,
            cc_score: 0.5,
        }
    }
}

/// A detection with its best paired grasp, if any.
#[derive(Debug, Clone)]
pub struct PairedObject {
    pub detection: Detection,
    pub best_grasp: Option<GraspCandidate>,
    /// Instance index; edges refer to these ids.
    pub id: usize,
}

/// Directed support graph over paired objects. An edge `(child, parent)`
/// means the child rests on the parent. `ord[i]` is the stacking depth from
/// the top: 0 means nothing rests on node `i` (grasp-ready).
#[derive(Debug, Clone, Default)]
pub struct RelationGraph {
    pub nodes: Vec<PairedObject>,
    pub edges: Vec<(usize, usize)>,
    pub ord: Vec<u32>,
}

fn nms_keep(
    n: usize,
    pr: impl Fn(usize) -> f64,
    class: impl Fn(usize) -> usize,
    iou: impl Fn(usize, usize) -> f64,
    threshold: f64,
    class_aware: bool,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pr(b).partial_cmp(&pr(a)).unwrap().then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = kept
            .iter()
            .any(|&k| (!class_aware || class(k) == class(i)) && iou(k, i) > threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}

/// Greedy non-maximum suppression over detections; kept items are returned in
/// their original order.
pub fn nms_detections(dets: &[Detection], iou_threshold: f64, class_aware: bool) -> Vec<Detection> {
    nms_keep(
        dets.len(),
        |i| dets[i].pr,
        |i| dets[i].class_id,
        |a, b| axis_iou(&dets[a].bbox, &dets[b].bbox),
        iou_threshold,
        class_aware,
    )
    .into_iter()
    .map(|i| dets[i].clone())
    .collect()
}

/// Greedy non-maximum suppression over grasp candidates using rotated IOU.
pub fn nms_grasps(
    grasps: &[GraspCandidate],
    iou_threshold: f64,
    class_aware: bool,
) -> Vec<GraspCandidate> {
    nms_keep(
        grasps.len(),
        |i| grasps[i].pr,
        |i| grasps[i].class_id,
        |a, b| rotated_iou(&grasps[a].rect, &grasps[b].rect),
        iou_threshold,
        class_aware,
    )
    .into_iter()
    .map(|i| grasps[i].clone())
    .collect()
}

/// Pair each detection with its best same-class grasp.
///
/// Candidates must share the detection's class and overlap it (IOU between
/// the grasp's bounding box and the detection box at least `pair_iou`). The
/// best candidate has maximal graspability, ties broken by higher IOU then
/// lower index. Detections claim grasps greedily in descending confidence,
/// so a grasp serves at most one detection.
pub fn pair(dets: &[Detection], grasps: &[GraspCandidate], cfg: &PostConfig) -> Vec<PairedObject> {
    let mut det_order: Vec<usize> = (0..dets.len()).collect();
    det_order.sort_by(|&a, &b| dets[b].pr.partial_cmp(&dets[a].pr).unwrap().then(a.cmp(&b)));

    let mut assigned = vec![false; grasps.len()];
    let mut chosen: Vec<Option<usize>> = vec![None; dets.len()];
    for &d in &det_order {
        let det = &dets[d];
        let mut best: Option<(usize, f64, f64)> = None; // (index, pr, iou)
        for (g, grasp) in grasps.iter().enumerate() {
            if assigned[g] || grasp.class_id != det.class_id {
                continue;
            }
            let overlap = axis_iou(&grasp.rect.aabb(), &det.bbox);
            if overlap < cfg.pair_iou {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, bpr, biou)) => {
                    grasp.pr > bpr || (grasp.pr == bpr && overlap > biou)
                }
            };
            if better {
                best = Some((g, grasp.pr, overlap));
            }
        }
        if let Some((g, _, _)) = best {
            assigned[g] = true;
            chosen[d] = Some(g);
        }
    }

    dets.iter()
        .enumerate()
        .map(|(d, det)| PairedObject {
            detection: det.clone(),
            best_grasp: chosen[d].map(|g| grasps[g].clone()),
            id: d,
        })
        .collect()
}

/// Return the edges of one directed cycle, if any.
fn find_cycle(n: usize, edges: &[(usize, usize, f64)]) -> Option<Vec<usize>> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n]; // (edge index, to)
    for (e, &(child, parent, _)) in edges.iter().enumerate() {
        adj[child].push((e, parent));
    }
    let mut state = vec![0u8; n]; // 0 new, 1 active, 2 done
    for start in 0..n {
        if state[start] != 0 {
            continue;
        }
        // (node, next adjacency index, incoming edge)
        let mut stack: Vec<(usize, usize, Option<usize>)> = vec![(start, 0, None)];
        state[start] = 1;
        while let Some(&mut (node, ref mut next, _)) = stack.last_mut() {
            if *next < adj[node].len() {
                let (e, to) = adj[node][*next];
                *next += 1;
                match state[to] {
                    0 => {
                        state[to] = 1;
                        stack.push((to, 0, Some(e)));
                    }
                    1 => {
                        // Collect the edges along the stack from `to` to here.
                        let mut cycle = vec![e];
                        for frame in stack.iter().rev() {
                            if frame.0 == to {
                                break;
                            }
                            if let Some(edge) = frame.2 {
                                cycle.push(edge);
                            }
                        }
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                state[node] = 2;
                stack.pop();
            }
        }
    }
    None
}

/// Build the object relation graph from child-class predictions.
///
/// For each object `o` and class `c` scoring at least `cc_score` (no-class
/// excluded), the same-class object overlapping `o` the most (box IOU at
/// least `rel_iou`) is taken to rest on `o`. Contradictory predictions are
/// resolved by deleting the weakest-scored edge of each cycle until the graph
/// is acyclic.
pub fn build_relation_graph(objs: Vec<PairedObject>, cfg: &PostConfig) -> RelationGraph {
    let n = objs.len();
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for (o, obj) in objs.iter().enumerate() {
        let cc = &obj.detection.cc_scores;
        let n_classes = cc.len().saturating_sub(1);
        for c in 0..n_classes {
            if cc[c] < cfg.cc_score {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for (x, other) in objs.iter().enumerate() {
                if x == o || other.detection.class_id != c {
                    continue;
                }
                let overlap = axis_iou(&other.detection.bbox, &obj.detection.bbox);
                if overlap < cfg.rel_iou {
                    continue;
                }
                if best.map_or(true, |(_, biou)| overlap > biou) {
                    best = Some((x, overlap));
                }
            }
            if let Some((x, _)) = best {
                edges.push((x, o, cc[c]));
            }
        }
    }

    while let Some(cycle) = find_cycle(n, &edges) {
        let weakest = cycle
            .into_iter()
            .min_by(|&a, &b| {
                edges[a]
                    .2
                    .partial_cmp(&edges[b].2)
                    .unwrap()
                    .then(edges[a].0.cmp(&edges[b].0))
                    .then(edges[a].1.cmp(&edges[b].1))
            })
            .expect("cycle has edges");
        edges.remove(weakest);
    }

    let plain: Vec<(usize, usize)> = edges.iter().map(|&(c, p, _)| (c, p)).collect();
    let ord = compute_ord(n, &plain);
    RelationGraph {
        nodes: objs,
        edges: plain,
        ord,
    }
}

/// Stacking depth from the top: 0 with nothing on top, otherwise one more
/// than the deepest object resting on the node. Assumes an acyclic edge set.
pub fn compute_ord(n: usize, edges: &[(usize, usize)]) -> Vec<u32> {
    let mut ord = vec![0u32; n];
    // Fixpoint over the (acyclic) support relation; at most n sweeps.
    for _ in 0..n {
        let mut changed = false;
        for &(child, parent) in edges {
            let want = ord[child] + 1;
            if ord[parent] < want {
                ord[parent] = want;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    ord
}

/// The full post-processing pipeline: decode both heads, suppress, pair and
/// build the relation graph. Deterministic for fixed inputs.
pub fn run_pipeline(h: &HeadTensor, cfg: &PostConfig) -> RelationGraph {
    let dets = nms_detections(&decode_od(h, cfg.od_conf), cfg.od_nms_iou, true);
    let grasps = nms_grasps(&decode_gd(h, cfg.gd_conf), cfg.gd_nms_iou, true);
    let paired = pair(&dets, &grasps, cfg);
    build_relation_graph(paired, cfg)
}
