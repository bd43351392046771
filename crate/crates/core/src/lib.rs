//! Backdoor data-poisoning lab for row-anchor lane detectors.
//!
//! The pipeline: synthesize road scenes ([`scene`]), train a small detector
//! ([`detector`]), find the most loss-sensitive road patch with an input
//! gradient heatmap ([`heatmap`], [`placement`]), paint a trigger there with
//! masked diffusion ([`trigger`]), rewrite the labels with one of the lane
//! attacks ([`attack`]), and measure what the victim learned ([`eval`]).

pub mod attack;
pub mod checkpoint;
pub mod detector;
pub mod error;
pub mod eval;
pub mod heatmap;
pub mod nn;
pub mod placement;
pub mod poison;
pub mod rng;
pub mod scene;
pub mod tensor;
pub mod trigger;

pub use error::{Error, Result};
pub use scene::{LaneLabel, Scene, MISSING};
pub use tensor::{Image, Latent, Mask};
