pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod masks;
pub mod numerics;
pub mod posterior;
pub mod sampler;
pub mod theory_eval;
pub mod training;
pub mod transforms;
