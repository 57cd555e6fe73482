pub mod camera;
pub mod cloud;
pub mod diffusion;
pub mod eval;
pub mod imageio;
pub mod patch;
pub mod pipeline;
pub mod restore;
pub mod synth;
pub mod wire;
