//! Grasp-sequence planning over a relation graph and a small scene simulator
//! covering the cluttered / stacking / invisible-target protocols.
//!
//! The simulator models occlusion purely in 2D: an object is visible iff the
//! fraction of its box covered by the union of boxes stacked (transitively)
//! above it stays below the visibility threshold. No physics: removing an
//! object simply deletes it and anything that rested on it becomes
//! free-standing.

use crate::dataio::SceneAnnotation;
use crate::error::{Error, Result};
use crate::geometry::{axis_iou, AxisRect};
use crate::postprocess::{compute_ord, PairedObject, RelationGraph};

/// One simulated object.
#[derive(Debug, Clone)]
pub struct SimObject {
    pub id: u32,
    pub class_id: usize,
    pub rect: AxisRect,
    /// Ids of the objects directly under this one.
    pub supports: Vec<u32>,
    pub present: bool,
}

/// Mutable scene the simulator steps through.
#[derive(Debug, Clone)]
pub struct SceneState {
    pub objects: Vec<SimObject>,
    /// An object is visible iff covered fraction < this threshold.
    pub visibility_threshold: f64,
}

impl SceneState {
    pub fn from_annotation(scene: &SceneAnnotation) -> Self {
        Self {
            objects: scene
                .objects
                .iter()
                .map(|o| SimObject {
                    id: o.id,
                    class_id: o.class_id,
                    rect: o.bbox,
                    supports: o.on_top_of.clone(),
                    present: true,
                })
                .collect(),
            visibility_threshold: 0.8,
        }
    }

    pub fn object(&self, id: u32) -> Option<&SimObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn present_ids(&self) -> Vec<u32> {
        self.objects
            .iter()
            .filter(|o| o.present)
            .map(|o| o.id)
            .collect()
    }

    /// Supports restricted to objects that are still present.
    fn present_supports(&self, obj: &SimObject) -> Vec<u32> {
        obj.supports
            .iter()
            .copied()
            .filter(|id| self.object(*id).is_some_and(|o| o.present))
            .collect()
    }

    /// Ids of present objects resting on `id`, directly or transitively.
    pub fn above_ids(&self, id: u32) -> Vec<u32> {
        let mut out = Vec::new();
        let mut frontier = vec![id];
        while let Some(cur) = frontier.pop() {
            for obj in &self.objects {
                if obj.present
                    && self.present_supports(obj).contains(&cur)
                    && !out.contains(&obj.id)
                    && obj.id != id
                {
                    out.push(obj.id);
                    frontier.push(obj.id);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Fraction of the object's box covered by the union of boxes above it.
    pub fn coverage(&self, id: u32) -> f64 {
        let Some(obj) = self.object(id) else { return 0.0 };
        let above: Vec<AxisRect> = self
            .above_ids(id)
            .iter()
            .map(|&a| self.object(a).unwrap().rect)
            .collect();
        covered_area(&obj.rect, &above) / obj.rect.area()
    }

    /// Present objects whose covered fraction is below the threshold,
    /// ascending by id.
    pub fn visible_ids(&self) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .objects
            .iter()
            .filter(|o| o.present && self.coverage(o.id) < self.visibility_threshold)
            .map(|o| o.id)
            .collect();
        out.sort_unstable();
        out
    }

    pub fn remove(&mut self, id: u32) -> bool {
        for obj in &mut self.objects {
            if obj.id == id && obj.present {
                obj.present = false;
                return true;
            }
        }
        false
    }

    /// Ensure ids are unique, supports resolve and the relation is acyclic.
    pub fn validate(&self) -> Result<()> {
        let annotation = SceneAnnotation {
            width: 0,
            height: 0,
            objects: self
                .objects
                .iter()
                .map(|o| crate::dataio::AnnotatedObject {
                    id: o.id,
                    class_id: o.class_id,
                    bbox: o.rect,
                    on_top_of: o.supports.clone(),
                    grasps: vec![],
                })
                .collect(),
        };
        annotation.validate().map_err(|_| Error::BadScene)
    }
}

/// Area of `target` covered by the union of `boxes` (exact sweep over the
/// rectangle grid induced by the clipped box edges).
pub fn covered_area(target: &AxisRect, boxes: &[AxisRect]) -> f64 {
    let clipped: Vec<AxisRect> = boxes
        .iter()
        .filter_map(|b| {
            let x1 = b.x1.max(target.x1);
            let y1 = b.y1.max(target.y1);
            let x2 = b.x2.min(target.x2);
            let y2 = b.y2.min(target.y2);
            (x1 < x2 && y1 < y2).then_some(AxisRect { x1, y1, x2, y2 })
        })
        .collect();
    if clipped.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f64> = clipped.iter().flat_map(|b| [b.x1, b.x2]).collect();
    let mut ys: Vec<f64> = clipped.iter().flat_map(|b| [b.y1, b.y2]).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ys.dedup();
    let mut area = 0.0;
    for i in 0..xs.len() - 1 {
        for j in 0..ys.len() - 1 {
            let cx = (xs[i] + xs[i + 1]) * 0.5;
            let cy = (ys[j] + ys[j + 1]) * 0.5;
            if clipped
                .iter()
                .any(|b| cx > b.x1 && cx < b.x2 && cy > b.y1 && cy < b.y2)
            {
                area += (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j]);
            }
        }
    }
    area
}

/// Terminal status of a plan or episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanStatus {
    TargetGrasped,
    TargetNotFound,
    Exhausted,
}

impl PlanStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlanStatus::TargetGrasped => "TargetGrasped",
            PlanStatus::TargetNotFound => "TargetNotFound",
            PlanStatus::Exhausted => "Exhausted",
        }
    }
}

/// Ordered node ids to grasp; every prefix is executable (each node has
/// nothing on top at its turn).
#[derive(Debug, Clone)]
pub struct GraspPlan {
    pub order: Vec<usize>,
    pub status: PlanStatus,
}

/// Topological grasp order: nodes resting on others come before what they
/// rest on; ties go to the higher-confidence detection, then the lower id.
pub fn grasp_order(g: &RelationGraph) -> Result<Vec<usize>> {
    let n = g.nodes.len();
    let mut on_top = vec![0usize; n]; // count of children not yet emitted
    for &(_, parent) in &g.edges {
        on_top[parent] += 1;
    }
    let mut emitted = vec![false; n];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if emitted[i] || on_top[i] > 0 {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) if g.nodes[i].detection.pr > g.nodes[b].detection.pr => Some(i),
                other => other,
            };
        }
        let Some(i) = best else {
            return Err(Error::CyclicGraph);
        };
        emitted[i] = true;
        out.push(i);
        for &(child, parent) in &g.edges {
            if child == i {
                on_top[parent] -= 1;
            }
        }
    }
    Ok(out)
}

/// Plan the grasp sequence that frees and then grasps the target class:
/// everything stacked (transitively) above the chosen target instance in
/// topological order, then the target itself.
pub fn plan_target(g: &RelationGraph, target_class: usize) -> GraspPlan {
    let mut target: Option<usize> = None;
    for (i, node) in g.nodes.iter().enumerate() {
        if node.detection.class_id != target_class {
            continue;
        }
        target = match target {
            None => Some(i),
            Some(t) if g.nodes[i].detection.pr > g.nodes[t].detection.pr => Some(i),
            other => other,
        };
    }
    let Some(target) = target else {
        return GraspPlan {
            order: vec![],
            status: PlanStatus::TargetNotFound,
        };
    };

    // Transitive closure of "rests on target".
    let mut above = vec![false; g.nodes.len()];
    let mut frontier = vec![target];
    while let Some(cur) = frontier.pop() {
        for &(child, parent) in &g.edges {
            if parent == cur && !above[child] && child != target {
                above[child] = true;
                frontier.push(child);
            }
        }
    }

    let order = grasp_order(g)
        .unwrap_or_default()
        .into_iter()
        .filter(|&i| above[i] || i == target)
        .collect();
    GraspPlan {
        order,
        status: PlanStatus::TargetGrasped,
    }
}

/// Detector abstraction: maps the visible part of a scene to a relation
/// graph. Implementations may be oracles (reading the true state) or wrap a
/// real model's outputs.
pub trait Detector {
    fn detect(&self, scene: &SceneState, visible: &[u32]) -> RelationGraph;
}

/// Perfect detector: emits the true boxes, classes and support relations of
/// the visible objects with unit confidence.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    pub num_classes: usize,
}

impl Detector for OracleDetector {
    fn detect(&self, scene: &SceneState, visible: &[u32]) -> RelationGraph {
        let n1 = self.num_classes + 1;
        let mut nodes = Vec::new();
        for (idx, &id) in visible.iter().enumerate() {
            let obj = scene.object(id).expect("visible id exists");
            let mut class_scores = vec![0.0; self.num_classes];
            class_scores[obj.class_id] = 1.0;
            let mut fc = vec![0.0; n1];
            let mut any_support = false;
            for sup in &obj.supports {
                if visible.contains(sup) {
                    fc[scene.object(*sup).unwrap().class_id] = 1.0;
                    any_support = true;
                }
            }
            if !any_support {
                fc[self.num_classes] = 1.0;
            }
            let mut cc = vec![0.0; n1];
            let mut any_child = false;
            for other_id in visible {
                let other = scene.object(*other_id).unwrap();
                if other.supports.contains(&id) {
                    cc[other.class_id] = 1.0;
                    any_child = true;
                }
            }
            if !any_child {
                cc[self.num_classes] = 1.0;
            }
            nodes.push(PairedObject {
                detection: crate::anchor_codec::Detection {
                    class_id: obj.class_id,
                    class_scores,
                    pr: 1.0,
                    bbox: obj.rect,
                    fc_scores: fc,
                    cc_scores: cc,
                },
                best_grasp: None,
                id: idx,
            });
        }
        let mut edges = Vec::new();
        for (ci, &cid) in visible.iter().enumerate() {
            let child = scene.object(cid).unwrap();
            for sup in &child.supports {
                if let Some(pi) = visible.iter().position(|v| v == sup) {
                    edges.push((ci, pi));
                }
            }
        }
        let ord = compute_ord(nodes.len(), &edges);
        RelationGraph { nodes, edges, ord }
    }
}

/// Episode record of one simulated run.
#[derive(Debug, Clone)]
pub struct Episode {
    pub success: bool,
    pub steps: usize,
    pub removed: Vec<u32>,
    pub status: PlanStatus,
}

fn match_node_to_object(scene: &SceneState, node: &PairedObject) -> Option<u32> {
    let mut best: Option<(u32, f64)> = None;
    for obj in scene.objects.iter().filter(|o| o.present) {
        if obj.class_id != node.detection.class_id {
            continue;
        }
        let overlap = axis_iou(&obj.rect, &node.detection.bbox);
        if best.is_none_or(|(_, b)| overlap > b) {
            best = Some((obj.id, overlap));
        }
    }
    if best.is_none() {
        // detector proposed a class absent from the scene; fall back to overlap
        for obj in scene.objects.iter().filter(|o| o.present) {
            let overlap = axis_iou(&obj.rect, &node.detection.bbox);
            if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((obj.id, overlap));
            }
        }
    }
    best.map(|(id, _)| id)
}

/// Run the target-driven grasping policy, re-detecting between movements.
///
/// When the target is detected the plan is executed one grasp per step; when
/// it is not, the grasp-ready object overlapping the hidden region the most
/// is put away (ties: higher confidence, then lower id). Success means the
/// target itself was removed within `max_steps`.
pub fn simulate(
    scene: &SceneState,
    target_class: usize,
    detector: &dyn Detector,
    max_steps: usize,
) -> Result<Episode> {
    scene.validate()?;
    let mut scene = scene.clone();
    let mut removed: Vec<u32> = Vec::new();
    let mut steps = 0usize;

    loop {
        if scene.present_ids().is_empty() {
            return Ok(Episode {
                success: false,
                steps,
                removed,
                status: PlanStatus::TargetNotFound,
            });
        }
        if steps >= max_steps {
            return Ok(Episode {
                success: false,
                steps,
                removed,
                status: PlanStatus::Exhausted,
            });
        }
        let visible = scene.visible_ids();
        let graph = detector.detect(&scene, &visible);
        let plan = plan_target(&graph, target_class);
        let grasp_node = match plan.status {
            PlanStatus::TargetGrasped => plan.order[0],
            _ => {
                let hidden: Vec<AxisRect> = scene
                    .objects
                    .iter()
                    .filter(|o| o.present && !visible.contains(&o.id))
                    .map(|o| o.rect)
                    .collect();
                if hidden.is_empty() {
                    // everything is visible and the target is not among it
                    return Ok(Episode {
                        success: false,
                        steps,
                        removed,
                        status: PlanStatus::TargetNotFound,
                    });
                }
                let mut best: Option<(usize, f64)> = None;
                for (i, node) in graph.nodes.iter().enumerate() {
                    if graph.ord[i] != 0 {
                        continue;
                    }
                    let overlap = covered_area(&node.detection.bbox, &hidden);
                    let better = match best {
                        None => true,
                        Some((b, barea)) => {
                            overlap > barea
                                || (overlap == barea
                                    && graph.nodes[i].detection.pr > graph.nodes[b].detection.pr)
                        }
                    };
                    if better {
                        best = Some((i, overlap));
                    }
                }
                match best {
                    Some((i, _)) => i,
                    None => return Err(Error::BadScene),
                }
            }
        };

        let was_target = plan.status == PlanStatus::TargetGrasped && plan.order.len() == 1;
        let obj_id =
            match_node_to_object(&scene, &graph.nodes[grasp_node]).ok_or(Error::BadScene)?;
        scene.remove(obj_id);
        removed.push(obj_id);
        steps += 1;
        if was_target {
            return Ok(Episode {
                success: true,
                steps,
                removed,
                status: PlanStatus::TargetGrasped,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchor_codec::Detection;

    fn node(id: usize, class_id: usize, pr: f64, rect: AxisRect) -> PairedObject {
        let mut class_scores = vec![0.0; 8];
        class_scores[class_id] = 1.0;
        PairedObject {
            detection: Detection {
                class_id,
                class_scores,
                pr,
                bbox: rect,
                fc_scores: vec![0.0; 9],
                cc_scores: vec![0.0; 9],
            },
            best_grasp: None,
            id,
        }
    }

    fn chain_graph() -> RelationGraph {
        // node 0 on node 1 on node 2
        let r = AxisRect::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let nodes = vec![node(0, 0, 0.9, r), node(1, 1, 0.9, r), node(2, 2, 0.9, r)];
        let edges = vec![(0, 1), (1, 2)];
        let ord = compute_ord(3, &edges);
        RelationGraph { nodes, edges, ord }
    }

    #[test]
    fn grasp_order_chain() {
        assert_eq!(grasp_order(&chain_graph()).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn grasp_order_tie_by_confidence() {
        let r = AxisRect::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let nodes = vec![node(0, 0, 0.5, r), node(1, 1, 0.8, r)];
        let g = RelationGraph {
            nodes,
            edges: vec![],
            ord: vec![0, 0],
        };
        assert_eq!(grasp_order(&g).unwrap(), vec![1, 0]);
        let empty = RelationGraph::default();
        assert!(grasp_order(&empty).unwrap().is_empty());
    }

    #[test]
    fn plan_target_cases() {
        let g = chain_graph();
        let plan = plan_target(&g, 2);
        assert_eq!(plan.order, vec![0, 1, 2]);
        assert_eq!(plan.status, PlanStatus::TargetGrasped);

        let plan = plan_target(&g, 0);
        assert_eq!(plan.order, vec![0], "free target is grasped directly");

        let plan = plan_target(&g, 7);
        assert_eq!(plan.status, PlanStatus::TargetNotFound);
        assert!(plan.order.is_empty());
    }

    fn stacked_scene() -> SceneState {
        // 2 on 1 on 0; upper boxes cover most of the lower ones
        SceneState {
            objects: vec![
                SimObject {
                    id: 0,
                    class_id: 0,
                    rect: AxisRect::new(0.0, 0.0, 100.0, 100.0).unwrap(),
                    supports: vec![],
                    present: true,
                },
                SimObject {
                    id: 1,
                    class_id: 1,
                    rect: AxisRect::new(2.0, 2.0, 95.0, 95.0).unwrap(),
                    supports: vec![0],
                    present: true,
                },
                SimObject {
                    id: 2,
                    class_id: 2,
                    rect: AxisRect::new(4.0, 4.0, 90.0, 90.0).unwrap(),
                    supports: vec![1],
                    present: true,
                },
            ],
            visibility_threshold: 0.8,
        }
    }

    #[test]
    fn visibility_hides_covered_objects() {
        let scene = stacked_scene();
        assert_eq!(scene.visible_ids(), vec![2]);
        assert!(scene.coverage(0) > 0.8);
        assert!(scene.coverage(2) < 1e-12);
    }

    #[test]
    fn simulate_visible_target_one_step() {
        let mut scene = stacked_scene();
        scene.objects[1].present = false;
        scene.objects[2].present = false;
        let detector = OracleDetector { num_classes: 8 };
        let ep = simulate(&scene, 0, &detector, 5).unwrap();
        assert!(ep.success);
        assert_eq!(ep.steps, 1);
        assert_eq!(ep.removed, vec![0]);
    }

    #[test]
    fn simulate_stack_bottom_target() {
        let scene = stacked_scene();
        let detector = OracleDetector { num_classes: 8 };
        let ep = simulate(&scene, 0, &detector, 3).unwrap();
        assert!(ep.success);
        assert_eq!(ep.steps, 3);
        assert_eq!(ep.removed, vec![2, 1, 0]);
    }

    #[test]
    fn simulate_fully_hidden_target() {
        // target 0 hidden under 1 and 2 side by side
        let scene = SceneState {
            objects: vec![
                SimObject {
                    id: 0,
                    class_id: 0,
                    rect: AxisRect::new(0.0, 0.0, 100.0, 100.0).unwrap(),
                    supports: vec![],
                    present: true,
                },
                SimObject {
                    id: 1,
                    class_id: 1,
                    rect: AxisRect::new(0.0, 0.0, 55.0, 100.0).unwrap(),
                    supports: vec![0],
                    present: true,
                },
                SimObject {
                    id: 2,
                    class_id: 2,
                    rect: AxisRect::new(50.0, 0.0, 100.0, 100.0).unwrap(),
                    supports: vec![0],
                    present: true,
                },
            ],
            visibility_threshold: 0.8,
        };
        assert_eq!(scene.visible_ids(), vec![1, 2]);
        let detector = OracleDetector { num_classes: 8 };
        let ep = simulate(&scene, 0, &detector, 3).unwrap();
        assert!(ep.success);
        assert_eq!(ep.steps, 3);
        assert_eq!(*ep.removed.last().unwrap(), 0);
    }

    #[test]
    fn simulate_absent_target() {
        let scene = stacked_scene();
        let detector = OracleDetector { num_classes: 8 };
        let ep = simulate(&scene, 7, &detector, 10).unwrap();
        assert!(!ep.success);
        assert_eq!(ep.status, PlanStatus::TargetNotFound);
    }

    #[test]
    fn cyclic_scene_rejected() {
        let mut scene = stacked_scene();
        scene.objects[0].supports = vec![2];
        assert!(matches!(
            simulate(&scene, 0, &OracleDetector { num_classes: 8 }, 5),
            Err(Error::BadScene)
        ));
    }
}
