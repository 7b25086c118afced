//! Scene annotation type and its canonical document format.
//!
//! A scene document is a JSON attribute-value tree with exactly the fields
//! `image{w,h}` and `objects[]{id, class, box[x1,y1,x2,y2], on_top_of[],
//! grasps[]{x,y,w,h,theta}}`. Canonical serialization sorts keys and prints
//! floats with 6 decimal places, so re-saving a loaded document is
//! byte-identical.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{AxisRect, OrientedRect};

/// One annotated object: class, axis-aligned box, the objects it rests on
/// and its ground-truth grasps.
#[derive(Debug, Clone)]
pub struct AnnotatedObject {
    pub id: u32,
    pub class_id: usize,
    pub bbox: AxisRect,
    /// Ids of the objects this object rests on (its supports).
    pub on_top_of: Vec<u32>,
    pub grasps: Vec<OrientedRect>,
}

/// Ground-truth annotation for one image.
#[derive(Debug, Clone)]
pub struct SceneAnnotation {
    pub width: u32,
    pub height: u32,
    pub objects: Vec<AnnotatedObject>,
}

impl SceneAnnotation {
    pub fn object(&self, id: u32) -> Option<&AnnotatedObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Classes of the objects directly resting on `id`.
    pub fn children_of(&self, id: u32) -> Vec<&AnnotatedObject> {
        self.objects
            .iter()
            .filter(|o| o.on_top_of.contains(&id))
            .collect()
    }

    /// Check id uniqueness, support references and acyclicity.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for obj in &self.objects {
            if !ids.insert(obj.id) {
                return Err(Error::DuplicateId { id: obj.id });
            }
        }
        for obj in &self.objects {
            for sup in &obj.on_top_of {
                if !ids.contains(sup) {
                    return Err(Error::DanglingSupport {
                        id: obj.id,
                        missing: *sup,
                    });
                }
            }
        }
        // Depth-first cycle check over the "rests on" relation.
        let index: HashMap<u32, usize> = self
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| (o.id, i))
            .collect();
        let mut state = vec![0u8; self.objects.len()]; // 0 new, 1 active, 2 done
        for start in 0..self.objects.len() {
            if state[start] != 0 {
                continue;
            }
            let mut stack = vec![(start, 0usize)];
            state[start] = 1;
            while let Some(&mut (node, ref mut edge)) = stack.last_mut() {
                let supports = &self.objects[node].on_top_of;
                if *edge < supports.len() {
                    let next = index[&supports[*edge]];
                    *edge += 1;
                    match state[next] {
                        0 => {
                            state[next] = 1;
                            stack.push((next, 0));
                        }
                        1 => {
                            return Err(Error::CyclicSupport {
                                id: self.objects[next].id,
                            })
                        }
                        _ => {}
                    }
                } else {
                    state[node] = 2;
                    stack.pop();
                }
            }
        }
        Ok(())
    }
}

fn fmt6(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.6}")
}

/// Serialize to the canonical scene document (sorted keys, 6 decimal places).
pub fn save_scene(scene: &SceneAnnotation) -> String {
    let mut s = String::new();
    s.push_str("{\n");
    let _ = writeln!(s, "  \"image\": {{\"h\": {}, \"w\": {}}},", scene.height, scene.width);
    s.push_str("  \"objects\": [");
    for (i, obj) in scene.objects.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str("\n    {\n");
        let _ = writeln!(
            s,
            "      \"box\": [{}, {}, {}, {}],",
            fmt6(obj.bbox.x1),
            fmt6(obj.bbox.y1),
            fmt6(obj.bbox.x2),
            fmt6(obj.bbox.y2)
        );
        let _ = writeln!(s, "      \"class\": {},", obj.class_id);
        s.push_str("      \"grasps\": [");
        for (j, g) in obj.grasps.iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            let _ = write!(
                s,
                "\n        {{\"h\": {}, \"theta\": {}, \"w\": {}, \"x\": {}, \"y\": {}}}",
                fmt6(g.h),
                fmt6(g.theta),
                fmt6(g.w),
                fmt6(g.x),
                fmt6(g.y)
            );
        }
        if !obj.grasps.is_empty() {
            s.push_str("\n      ");
        }
        s.push_str("],\n");
        let _ = writeln!(s, "      \"id\": {},", obj.id);
        let tops: Vec<String> = obj.on_top_of.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "      \"on_top_of\": [{}]", tops.join(", "));
        s.push_str("    }");
    }
    if !scene.objects.is_empty() {
        s.push_str("\n  ");
    }
    s.push_str("]\n}\n");
    s
}

fn field<'a>(v: &'a Value, key: &str, ctx: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| Error::BadDocument(format!("{ctx}: missing field {key:?}")))
}

fn as_f64(v: &Value, ctx: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::BadDocument(format!("{ctx}: expected a number")))
}

fn as_u64(v: &Value, ctx: &str) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| Error::BadDocument(format!("{ctx}: expected a non-negative integer")))
}

fn as_array<'a>(v: &'a Value, ctx: &str) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| Error::BadDocument(format!("{ctx}: expected an array")))
}

/// Parse and validate a scene document.
pub fn load_scene(text: &str) -> Result<SceneAnnotation> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| Error::BadDocument(format!("json: {e}")))?;
    let image = field(&root, "image", "document")?;
    let width = as_u64(field(image, "w", "image")?, "image.w")? as u32;
    let height = as_u64(field(image, "h", "image")?, "image.h")? as u32;

    let mut objects = Vec::new();
    for (i, entry) in as_array(field(&root, "objects", "document")?, "objects")?
        .iter()
        .enumerate()
    {
        let ctx = format!("objects[{i}]");
        let id = as_u64(field(entry, "id", &ctx)?, &ctx)? as u32;
        let class_id = as_u64(field(entry, "class", &ctx)?, &ctx)? as usize;
        let bbox = {
            let arr = as_array(field(entry, "box", &ctx)?, &ctx)?;
            if arr.len() != 4 {
                return Err(Error::BadDocument(format!("{ctx}.box: expected 4 numbers")));
            }
            AxisRect::new(
                as_f64(&arr[0], &ctx)?,
                as_f64(&arr[1], &ctx)?,
                as_f64(&arr[2], &ctx)?,
                as_f64(&arr[3], &ctx)?,
            )?
        };
        let on_top_of = as_array(field(entry, "on_top_of", &ctx)?, &ctx)?
            .iter()
            .map(|v| as_u64(v, &ctx).map(|x| x as u32))
            .collect::<Result<Vec<u32>>>()?;
        let mut grasps = Vec::new();
        for (j, g) in as_array(field(entry, "grasps", &ctx)?, &ctx)?.iter().enumerate() {
            let gctx = format!("{ctx}.grasps[{j}]");
            grasps.push(OrientedRect::new(
                as_f64(field(g, "x", &gctx)?, &gctx)?,
                as_f64(field(g, "y", &gctx)?, &gctx)?,
                as_f64(field(g, "w", &gctx)?, &gctx)?,
                as_f64(field(g, "h", &gctx)?, &gctx)?,
                as_f64(field(g, "theta", &gctx)?, &gctx)?,
            )?);
        }
        objects.push(AnnotatedObject {
            id,
            class_id,
            bbox,
            on_top_of,
            grasps,
        });
    }

    let scene = SceneAnnotation {
        width,
        height,
        objects,
    };
    scene.validate()?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_scene() -> SceneAnnotation {
        SceneAnnotation {
            width: 608,
            height: 608,
            objects: vec![AnnotatedObject {
                id: 0,
                class_id: 3,
                bbox: AxisRect::new(10.0, 20.0, 110.0, 140.0).unwrap(),
                on_top_of: vec![],
                grasps: vec![OrientedRect::new(60.0, 80.0, 30.0, 12.0, 0.75).unwrap()],
            }],
        }
    }

    #[test]
    fn round_trip_is_canonical() {
        let doc = save_scene(&minimal_scene());
        let loaded = load_scene(&doc).unwrap();
        assert_eq!(save_scene(&loaded), doc);
        assert_eq!(loaded.objects.len(), 1);
        assert_eq!(loaded.objects[0].class_id, 3);
    }

    #[test]
    fn dangling_support_rejected() {
        let mut scene = minimal_scene();
        scene.objects[0].on_top_of = vec![9];
        let doc = save_scene(&scene);
        assert!(matches!(
            load_scene(&doc),
            Err(Error::DanglingSupport { id: 0, missing: 9 })
        ));
    }

    #[test]
    fn cyclic_support_rejected() {
        let mut scene = minimal_scene();
        scene.objects.push(AnnotatedObject {
            id: 1,
            class_id: 1,
            bbox: AxisRect::new(15.0, 25.0, 90.0, 120.0).unwrap(),
            on_top_of: vec![0],
            grasps: vec![],
        });
        scene.objects[0].on_top_of = vec![1];
        let doc = save_scene(&scene);
        assert!(matches!(load_scene(&doc), Err(Error::CyclicSupport { .. })));
    }

    #[test]
    fn duplicate_id_rejected() {
        let mut scene = minimal_scene();
        let copy = scene.objects[0].clone();
        scene.objects.push(copy);
        assert!(matches!(
            scene.validate(),
            Err(Error::DuplicateId { id: 0 })
        ));
    }

    #[test]
    fn malformed_document_rejected() {
        assert!(matches!(load_scene("{"), Err(Error::BadDocument(_))));
        assert!(matches!(
            load_scene("{\"image\": {\"w\": 10}, \"objects\": []}"),
            Err(Error::BadDocument(_))
        ));
    }
}
