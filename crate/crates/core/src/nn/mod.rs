//! Dense tensor layers with hand-written reverse-mode gradients.

pub mod adam;
pub mod conv;
pub mod gdn;
pub mod sequential;

pub use adam::{adam_step, AdamState};
pub use conv::{conv2d, conv2d_backward, Activation, Conv2d, ConvKernel, ConvLayerSpec, Direction, Padding};
pub use gdn::{gdn, Gdn};
pub use sequential::{Layer, Sequential, Tape};
