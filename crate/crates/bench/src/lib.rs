//! Fixtures shared by the criterion benchmarks in `benches/`.

use lanetrap_core::detector::{init_detector, DetectorState};
use lanetrap_core::scene::{generate_scenes, GeneratorConfig};
use lanetrap_core::Scene;

pub fn scenes(n: usize) -> Vec<Scene> {
    generate_scenes(42, n, &GeneratorConfig::default()).expect("default generator config is valid")
}

/// Untrained detector sized for the default scenes.
pub fn detector() -> DetectorState {
    let cfg = GeneratorConfig::default();
    init_detector(7, 4, cfg.anchors, (cfg.height, cfg.width, 3)).expect("valid architecture")
}
