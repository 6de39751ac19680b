//! Remote photoplethysmography in pure Rust: a video-to-pulse transformer with
//! a fused difference/appearance stem and bi-level sparse attention, the loss
//! suite used to supervise it, and the signal-processing pipeline (Butterworth,
//! Welch, HR metrics, POS/GREEN baselines) used to evaluate it.
//!
//! Everything numeric is generic over the scalar type through [`Real`];
//! concrete `f64` aliases for the main types live at the crate root. All
//! randomness flows through explicitly seeded ChaCha streams so any two runs
//! with the same seed and config are bit-identical.

pub mod attention;
pub mod error;
pub mod io;
pub mod losses;
pub mod model;
pub mod nn;
pub mod signal;
pub mod stem;
pub mod tensor;
pub mod video;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;

/// Plausible heart-rate frequencies, 40 to 180 bpm.
pub const HR_BAND_HZ: [f64; 2] = [0.67, 3.0];

/// Scalar type the whole crate is generic over. Implemented for `f32`/`f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lifts an `f64` constant into the scalar type.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("constant not representable in scalar type")
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type VideoClip64 = video::VideoClip<f64>;
pub type BvpSignal64 = video::BvpSignal<f64>;
