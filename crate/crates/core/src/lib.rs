pub mod error;
pub mod features;
pub mod fft;
pub mod harness;
pub mod metrics;
pub mod nnet;
pub mod rir;
pub mod signal;
pub mod synth;
pub mod wav;
pub mod wpe;

pub use error::{Error, Result};
pub use signal::{AudioSignal, Rir};
