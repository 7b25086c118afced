//! Command-line entry point. Every command reads documents from standard
//! input by default (file flags optional) and writes its result document to
//! standard output; all randomized commands take an explicit seed and are
//! byte-reproducible. Error paths print a single machine-parsable
//! `error(<Kind>): ...` line before any detail.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::PathBuf;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::anchor_codec::{encode_targets, default_scale_specs, Detection, GraspCandidate};
use crate::dataio::{load_bundle, load_scene, parse_cornell_rect_file, save_scene, synth_scene};
use crate::error::Error;
use crate::eval::{cornell_accuracy, mapg, EvalConfig, EvalReport};
use crate::geometry::{AxisRect, OrientedRect};
use crate::planner::{plan_target, simulate, OracleDetector, SceneState};
use crate::postprocess::{compute_ord, run_pipeline, PairedObject, PostConfig, RelationGraph};
use crate::toytrain::{train_direct, verify_recovery, TrainConfig};

#[derive(Parser)]
#[command(name = "mtgd", about = "Multi-task grasp detection pipeline", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode a tensor bundle into a scene-understanding document.
    Decode {
        /// Tensor bundle file; standard input when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Objectness confidence threshold (both heads).
        #[arg(long, default_value_t = 0.5)]
        conf: f64,
        /// Separate graspability threshold; defaults to --conf.
        #[arg(long)]
        gd_conf: Option<f64>,
    },
    /// Score grasp predictions against Cornell rectangle files.
    EvalCornell {
        /// Ground-truth rectangle files (one image each; id = file stem).
        #[arg(long, num_args = 1.., required = true)]
        gt: Vec<PathBuf>,
        /// Predictions document.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        iou: f64,
        #[arg(long, default_value_t = 30.0)]
        angle_deg: f64,
        /// Score the best k ranked grasps per image.
        #[arg(long, default_value_t = 1)]
        top_k: usize,
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Score scene predictions (mAP / mAPg) against scene documents.
    EvalScenes {
        /// Ground-truth scene documents (id = file stem).
        #[arg(long, num_args = 1.., required = true)]
        gt: Vec<PathBuf>,
        /// Predictions document.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        iou: f64,
        #[arg(long, default_value_t = 30.0)]
        angle_deg: f64,
        #[arg(long, default_value_t = 0.5)]
        od_iou: f64,
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Plan the grasp sequence for a target class from a scene-understanding
    /// document.
    Plan {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Target class id.
        #[arg(long)]
        target: usize,
    },
    /// Simulate target-driven grasping on a scene document with an oracle
    /// detector.
    Simulate {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        target: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        max_steps: usize,
    },
    /// Generate a synthetic scene document.
    GenSynth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        objects: usize,
        #[arg(long, default_value_t = 31)]
        classes: usize,
        #[arg(long, default_value_t = 608)]
        size: u32,
    },
    /// Optimize a head tensor against a scene document and report recovery.
    TrainToy {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        /// Step size for direct tensor optimization.
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Class count of the head (at least the largest class id + 1).
        #[arg(long, default_value_t = 31)]
        classes: usize,
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Run the full self-test suite.
    Selftest,
}

fn fmt6(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.6}")
}

/// Canonical scene-understanding document for a relation graph.
pub fn write_graph_doc(g: &RelationGraph) -> String {
    let mut s = String::new();
    s.push_str("{\n  \"objects\": [");
    for (i, node) in g.nodes.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let d = &node.detection;
        s.push_str("\n    {\n");
        let _ = writeln!(
            s,
            "      \"box\": [{}, {}, {}, {}],",
            fmt6(d.bbox.x1),
            fmt6(d.bbox.y1),
            fmt6(d.bbox.x2),
            fmt6(d.bbox.y2)
        );
        let _ = writeln!(s, "      \"class\": {},", d.class_id);
        match &node.best_grasp {
            None => s.push_str("      \"grasp\": null,\n"),
            Some(gr) => {
                let _ = writeln!(
                    s,
                    "      \"grasp\": {{\"h\": {}, \"pr\": {}, \"theta\": {}, \"w\": {}, \"x\": {}, \"y\": {}}},",
                    fmt6(gr.rect.h),
                    fmt6(gr.pr),
                    fmt6(gr.rect.theta),
                    fmt6(gr.rect.w),
                    fmt6(gr.rect.x),
                    fmt6(gr.rect.y)
                );
            }
        }
        let _ = writeln!(s, "      \"id\": {},", node.id);
        let _ = writeln!(s, "      \"ord\": {},", g.ord[i]);
        let _ = writeln!(s, "      \"pr\": {},", fmt6(d.pr));
        let parents: Vec<String> = g
            .edges
            .iter()
            .filter(|&&(child, _)| child == i)
            .map(|&(_, parent)| g.nodes[parent].id.to_string())
            .collect();
        let _ = writeln!(s, "      \"rests_on\": [{}]", parents.join(", "));
        s.push_str("    }");
    }
    if !g.nodes.is_empty() {
        s.push_str("\n  ");
    }
    s.push_str("]\n}\n");
    s
}

fn num(v: &Value, ctx: &str) -> Result<f64, Error> {
    v.as_f64()
        .ok_or_else(|| Error::BadDocument(format!("{ctx}: expected a number")))
}

fn parse_graph_object(entry: &Value, ctx: &str) -> Result<(PairedObject, Vec<u64>), Error> {
    let bad = |msg: String| Error::BadDocument(msg);
    let class_id = entry
        .get("class")
        .and_then(Value::as_u64)
        .ok_or_else(|| bad(format!("{ctx}: missing class")))? as usize;
    let id = entry
        .get("id")
        .and_then(Value::as_u64)
        .ok_or_else(|| bad(format!("{ctx}: missing id")))? as usize;
    let pr = num(
        entry.get("pr").ok_or_else(|| bad(format!("{ctx}: missing pr")))?,
        ctx,
    )?;
    let bx = entry
        .get("box")
        .and_then(Value::as_array)
        .filter(|a| a.len() == 4)
        .ok_or_else(|| bad(format!("{ctx}: missing box")))?;
    let bbox = AxisRect::new(
        num(&bx[0], ctx)?,
        num(&bx[1], ctx)?,
        num(&bx[2], ctx)?,
        num(&bx[3], ctx)?,
    )?;
    let mut class_scores = vec![0.0; class_id + 1];
    class_scores[class_id] = 1.0;
    let best_grasp = match entry.get("grasp") {
        None | Some(Value::Null) => None,
        Some(g) => {
            let gctx = format!("{ctx}.grasp");
            let field = |k: &str| -> Result<f64, Error> {
                num(
                    g.get(k)
                        .ok_or_else(|| Error::BadDocument(format!("{gctx}: missing {k}")))?,
                    &gctx,
                )
            };
            Some(GraspCandidate {
                rect: OrientedRect::new(
                    field("x")?,
                    field("y")?,
                    field("w")?,
                    field("h")?,
                    field("theta")?,
                )?,
                pr: field("pr")?,
                class_id,
                class_scores: class_scores.clone(),
            })
        }
    };
    let rests_on: Vec<u64> = entry
        .get("rests_on")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_u64).collect())
        .unwrap_or_default();
    Ok((
        PairedObject {
            detection: Detection {
                class_id,
                class_scores,
                pr,
                bbox,
                fc_scores: vec![],
                cc_scores: vec![],
            },
            best_grasp,
            id,
        },
        rests_on,
    ))
}

/// Parse a scene-understanding document back into a relation graph.
pub fn parse_graph_doc(text: &str) -> Result<RelationGraph, Error> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| Error::BadDocument(format!("json: {e}")))?;
    let objects = root
        .get("objects")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::BadDocument("document: missing objects".into()))?;
    let mut nodes = Vec::new();
    let mut parents_of = Vec::new();
    for (i, entry) in objects.iter().enumerate() {
        let (node, rests_on) = parse_graph_object(entry, &format!("objects[{i}]"))?;
        nodes.push(node);
        parents_of.push(rests_on);
    }
    let mut edges = Vec::new();
    for (child_idx, parents) in parents_of.iter().enumerate() {
        for pid in parents {
            let parent_idx = nodes
                .iter()
                .position(|n| n.id as u64 == *pid)
                .ok_or_else(|| Error::DanglingSupport {
                    id: nodes[child_idx].id as u32,
                    missing: *pid as u32,
                })?;
            edges.push((child_idx, parent_idx));
        }
    }
    let ord = compute_ord(nodes.len(), &edges);
    Ok(RelationGraph { nodes, edges, ord })
}

fn report_json(report: &EvalReport) -> Value {
    json!({
        "accuracy": report.accuracy,
        "ap_method": report.ap_method,
        "map": report.map,
        "mapg": report.mapg,
        "n_images": report.n_images,
        "n_success": report.n_success,
        "notes": report.notes,
        "per_class": report.per_class.iter().map(|c| json!({
            "ap": c.ap,
            "ap_plain": c.ap_plain,
            "class": c.class_id,
            "fp": c.fp,
            "n_gt": c.n_gt,
            "tp": c.tp,
        })).collect::<Vec<_>>(),
    })
}

fn report_text(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "images {}", report.n_images);
    if let Some(acc) = report.accuracy {
        let _ = writeln!(s, "matched {}", report.n_success);
        let _ = writeln!(s, "accuracy {}", fmt6(acc));
    }
    if !report.per_class.is_empty() {
        let _ = writeln!(s, "class n_gt tp fp ap ap_plain");
        for c in &report.per_class {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {}",
                c.class_id,
                c.n_gt,
                c.tp,
                c.fp,
                c.ap.map_or("-".to_string(), fmt6),
                c.ap_plain.map_or("-".to_string(), fmt6),
            );
        }
    }
    if let Some(m) = report.map {
        let _ = writeln!(s, "mAP {}", fmt6(m));
    }
    if let Some(m) = report.mapg {
        let _ = writeln!(s, "mAPg {}", fmt6(m));
    }
    for note in &report.notes {
        let _ = writeln!(s, "note: {note}");
    }
    s
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::DivergenceDetected { .. } => 1,
        _ => 2,
    }
}

struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code_for(&e),
            message: format!("error({}): {e}", e.kind()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 2,
            message: format!("error(Io): {e}"),
        }
    }
}

fn read_input(path: &Option<PathBuf>, stdin: &mut dyn Read) -> Result<Vec<u8>, Failure> {
    match path {
        Some(p) => Ok(std::fs::read(p)?),
        None => {
            let mut buf = Vec::new();
            stdin.read_to_end(&mut buf)?;
            Ok(buf)
        }
    }
}

fn read_text(path: &Option<PathBuf>, stdin: &mut dyn Read) -> Result<String, Failure> {
    let bytes = read_input(path, stdin)?;
    String::from_utf8(bytes).map_err(|_| Failure {
        code: 2,
        message: "error(BadDocument): input is not UTF-8".into(),
    })
}

fn file_stem(path: &std::path::Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

fn eval_cfg(iou: f64, angle_deg: f64, od_iou: f64) -> EvalConfig {
    EvalConfig {
        angle_threshold: angle_deg.to_radians(),
        grasp_iou: iou,
        od_iou,
    }
}

fn run_command(
    cmd: Command,
    stdin: &mut dyn Read,
    stdout: &mut dyn Write,
) -> Result<i32, Failure> {
    match cmd {
        Command::Decode { input, conf, gd_conf } => {
            let bytes = read_input(&input, stdin)?;
            let tensor = load_bundle(&bytes)?;
            let cfg = PostConfig {
                od_conf: conf,
                gd_conf: gd_conf.unwrap_or(conf),
                ..PostConfig::default()
            };
            let graph = run_pipeline(&tensor, &cfg);
            stdout.write_all(write_graph_doc(&graph).as_bytes())?;
            Ok(0)
        }
        Command::EvalCornell {
            gt,
            pred,
            iou,
            angle_deg,
            top_k,
            format,
        } => {
            let pred_doc: Value = serde_json::from_str(&std::fs::read_to_string(&pred)?)
                .map_err(|e| Failure::from(Error::BadDocument(format!("predictions: {e}"))))?;
            let images = pred_doc
                .get("images")
                .and_then(Value::as_array)
                .ok_or_else(|| Failure::from(Error::BadDocument("predictions: missing images".into())))?;
            let mut preds: Vec<Vec<OrientedRect>> = Vec::new();
            let mut gts: Vec<Vec<OrientedRect>> = Vec::new();
            for path in &gt {
                let stem = file_stem(path);
                let parsed = parse_cornell_rect_file(&std::fs::read_to_string(path)?)?;
                gts.push(parsed.rects);
                let image = images
                    .iter()
                    .find(|img| img.get("id").and_then(Value::as_str) == Some(stem.as_str()));
                let mut ranked: Vec<(f64, OrientedRect)> = Vec::new();
                if let Some(img) = image {
                    for (j, g) in img
                        .get("grasps")
                        .and_then(Value::as_array)
                        .map(|a| a.as_slice())
                        .unwrap_or(&[])
                        .iter()
                        .enumerate()
                    {
                        let gctx = format!("{stem}.grasps[{j}]");
                        let field = |k: &str| -> Result<f64, Error> {
                            num(
                                g.get(k).ok_or_else(|| {
                                    Error::BadDocument(format!("{gctx}: missing {k}"))
                                })?,
                                &gctx,
                            )
                        };
                        let rect = OrientedRect::new(
                            field("x")?,
                            field("y")?,
                            field("w")?,
                            field("h")?,
                            field("theta")?,
                        )?;
                        let pr = g.get("pr").and_then(Value::as_f64).unwrap_or(0.0);
                        ranked.push((pr, rect));
                    }
                }
                ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
                preds.push(ranked.into_iter().map(|(_, r)| r).collect());
            }
            let report = cornell_accuracy(&preds, &gts, top_k, &eval_cfg(iou, angle_deg, 0.5))?;
            if format == "document" {
                let _ = writeln!(stdout, "{}", report_json(&report));
            } else {
                stdout.write_all(report_text(&report).as_bytes())?;
            }
            Ok(0)
        }
        Command::EvalScenes {
            gt,
            pred,
            iou,
            angle_deg,
            od_iou,
            format,
        } => {
            let pred_doc: Value = serde_json::from_str(&std::fs::read_to_string(&pred)?)
                .map_err(|e| Failure::from(Error::BadDocument(format!("predictions: {e}"))))?;
            let images = pred_doc
                .get("images")
                .and_then(Value::as_array)
                .ok_or_else(|| Failure::from(Error::BadDocument("predictions: missing images".into())))?;
            let mut preds: Vec<Vec<PairedObject>> = Vec::new();
            let mut gts = Vec::new();
            for path in &gt {
                let stem = file_stem(path);
                gts.push(load_scene(&std::fs::read_to_string(path)?)?);
                let mut nodes = Vec::new();
                if let Some(img) = images
                    .iter()
                    .find(|img| img.get("id").and_then(Value::as_str) == Some(stem.as_str()))
                {
                    for (i, entry) in img
                        .get("objects")
                        .and_then(Value::as_array)
                        .map(|a| a.as_slice())
                        .unwrap_or(&[])
                        .iter()
                        .enumerate()
                    {
                        let (node, _) = parse_graph_object(entry, &format!("{stem}[{i}]"))?;
                        nodes.push(node);
                    }
                }
                preds.push(nodes);
            }
            let report = mapg(&preds, &gts, &eval_cfg(iou, angle_deg, od_iou))?;
            if format == "document" {
                let _ = writeln!(stdout, "{}", report_json(&report));
            } else {
                stdout.write_all(report_text(&report).as_bytes())?;
            }
            Ok(0)
        }
        Command::Plan { input, target } => {
            let graph = parse_graph_doc(&read_text(&input, stdin)?)?;
            let plan = plan_target(&graph, target);
            let ids: Vec<u64> = plan.order.iter().map(|&i| graph.nodes[i].id as u64).collect();
            let doc = json!({
                "order": ids,
                "status": plan.status.as_str(),
                "target_class": target,
            });
            let _ = writeln!(stdout, "{doc}");
            Ok(0)
        }
        Command::Simulate {
            input,
            target,
            seed,
            max_steps,
        } => {
            let scene = load_scene(&read_text(&input, stdin)?)?;
            let state = SceneState::from_annotation(&scene);
            let num_classes = scene
                .objects
                .iter()
                .map(|o| o.class_id + 1)
                .max()
                .unwrap_or(1);
            let detector = OracleDetector { num_classes };
            let episode = simulate(&state, target, &detector, max_steps)?;
            let doc = json!({
                "removed": episode.removed,
                "seed": seed,
                "status": episode.status.as_str(),
                "steps": episode.steps,
                "success": episode.success,
                "target_class": target,
            });
            let _ = writeln!(stdout, "{doc}");
            Ok(0)
        }
        Command::GenSynth {
            seed,
            objects,
            classes,
            size,
        } => {
            let (scene, _) = synth_scene(seed, objects, classes, size)?;
            stdout.write_all(save_scene(&scene).as_bytes())?;
            Ok(0)
        }
        Command::TrainToy {
            input,
            seed,
            steps,
            lr,
            classes,
            format,
        } => {
            let scene = load_scene(&read_text(&input, stdin)?)?;
            let max_class = scene.objects.iter().map(|o| o.class_id).max().unwrap_or(0);
            if classes <= max_class {
                return Err(Failure::from(Error::BadParams(format!(
                    "--classes {classes} too small for class id {max_class}"
                ))));
            }
            let specs = default_scale_specs(scene.width.max(scene.height), classes)?;
            let assignment = encode_targets(&scene, &specs)?;
            let train_cfg = TrainConfig {
                steps,
                lr,
                momentum: 0.9,
                seed,
                init_sigma: 0.01,
            };
            let trace = train_direct(&assignment, &specs, &train_cfg)?;
            let report = verify_recovery(
                &trace.tensor,
                &scene,
                &PostConfig::default(),
                &EvalConfig::default(),
            );
            if format == "document" {
                let doc = json!({
                    "final_total": trace.totals.last().map(|t| t.total),
                    "initial_total": trace.totals.first().map(|t| t.total),
                    "recovered_fraction": report.fraction,
                    "recovery": report.objects.iter().map(|o| json!({
                        "grasp_ok": o.grasp_ok,
                        "id": o.object_id,
                        "od_iou": o.od_iou,
                        "od_ok": o.od_ok,
                    })).collect::<Vec<_>>(),
                    "seed": seed,
                    "steps": steps,
                    "trace": trace.totals.iter().enumerate()
                        .map(|(i, t)| json!([i, t.total])).collect::<Vec<_>>(),
                });
                let _ = writeln!(stdout, "{doc}");
            } else {
                for (i, t) in trace.totals.iter().enumerate() {
                    let _ = writeln!(stdout, "{i} {}", fmt6(t.total));
                }
                for o in &report.objects {
                    let _ = writeln!(
                        stdout,
                        "recovery {} od_iou={} od={} grasp={}",
                        o.object_id,
                        fmt6(o.od_iou),
                        if o.od_ok { "ok" } else { "miss" },
                        if o.grasp_ok { "ok" } else { "miss" }
                    );
                }
                let _ = writeln!(
                    stdout,
                    "summary initial={} final={} recovered={}",
                    fmt6(trace.totals.first().map(|t| t.total).unwrap_or(0.0)),
                    fmt6(trace.totals.last().map(|t| t.total).unwrap_or(0.0)),
                    fmt6(report.fraction)
                );
            }
            Ok(0)
        }
        Command::Selftest => {
            if crate::selftest::run_all(stdout) {
                Ok(0)
            } else {
                Ok(1)
            }
        }
    }
}

/// Parse `argv` (without the binary name) and execute. Returns the process
/// exit code: 0 success, 1 computational failure, 2 usage or format error.
pub fn dispatch(
    argv: &[String],
    stdin: &mut dyn Read,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    let mut full = vec!["mtgd".to_string()];
    full.extend_from_slice(argv);
    let cli = match Cli::try_parse_from(&full) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    0
                }
                _ => {
                    let _ = writeln!(stderr, "error(Usage): invalid arguments");
                    let _ = write!(stderr, "{e}");
                    2
                }
            };
        }
    };
    match run_command(cli.cmd, stdin, stdout) {
        Ok(code) => code,
        Err(failure) => {
            let _ = writeln!(stderr, "{}", failure.message);
            failure.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(argv: &[&str], stdin: &[u8]) -> (i32, String, String) {
        let args: Vec<String> = argv.iter().map(|s| s.to_string()).collect();
        let mut input = stdin;
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = dispatch(&args, &mut input, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        let (code, _, err) = run(&["frobnicate"], b"");
        assert_eq!(code, 2);
        assert!(err.starts_with("error(Usage):"), "stderr: {err}");
    }

    #[test]
    fn gen_synth_emits_scene_document() {
        let (code, out, _) = run(&["gen-synth", "--seed", "7", "--objects", "3"], b"");
        assert_eq!(code, 0);
        let scene = load_scene(&out).unwrap();
        assert_eq!(scene.objects.len(), 3);
    }

    #[test]
    fn gen_synth_requires_seed() {
        let (code, _, err) = run(&["gen-synth", "--objects", "3"], b"");
        assert_eq!(code, 2);
        assert!(err.starts_with("error(Usage):"));
    }

    #[test]
    fn plan_round_trips_graph_document() {
        // synthesize, encode, saturate, decode to a graph document
        let specs = default_scale_specs(320, 6).unwrap();
        let (scene, _) = synth_scene(15, 3, 6, 320).unwrap();
        let a = encode_targets(&scene, &specs).unwrap();
        let h = crate::anchor_codec::tensor_from_assignment(&a, &specs, 40.0);
        let graph = run_pipeline(&h, &PostConfig::default());
        let doc = write_graph_doc(&graph);
        let back = parse_graph_doc(&doc).unwrap();
        assert_eq!(back.nodes.len(), graph.nodes.len());
        assert_eq!(back.edges.len(), graph.edges.len());

        let target = graph.nodes[0].detection.class_id.to_string();
        let (code, out, _) = run(&["plan", "--target", &target], doc.as_bytes());
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["status"], "TargetGrasped");
    }

    #[test]
    fn simulate_on_generated_scene() {
        let (_, scene_doc, _) = run(&["gen-synth", "--seed", "3", "--objects", "2", "--classes", "5", "--size", "320"], b"");
        let scene = load_scene(&scene_doc).unwrap();
        let target = scene.objects[0].class_id.to_string();
        let (code, out, _) = run(
            &["simulate", "--target", &target, "--seed", "1"],
            scene_doc.as_bytes(),
        );
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["success"], true);
    }

    #[test]
    fn decode_rejects_garbage() {
        let (code, _, err) = run(&["decode"], b"not a bundle");
        assert_eq!(code, 2);
        assert!(err.starts_with("error(BadMagic):"), "stderr: {err}");
    }
}
