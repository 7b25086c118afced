//! Parsers, writers and generators: Cornell rectangle files, the scene
//! document, the tensor bundle container and the synthetic scene generator.

mod bundle;
mod cornell;
mod scene;
mod synth;

pub use bundle::{load_bundle, save_bundle};
pub use cornell::{object_group_key, parse_cornell_rect_file, CornellSample, ParsedRects};
pub use scene::{load_scene, save_scene, AnnotatedObject, SceneAnnotation};
pub use synth::synth_scene;
