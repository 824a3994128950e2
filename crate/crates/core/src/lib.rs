pub mod autodiff;
pub mod beamformer;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod kvconfig;
pub mod linalg;
pub mod manifest;
pub mod masknet;
pub mod mixture;
pub mod scalar;
pub mod scene;
pub mod stft;
pub mod tensorfile;
pub mod trainer;
pub mod types;
pub mod wav;

pub use error::{Error, Result};
pub use scalar::Scalar;
