//! Shared inputs for the criterion benches.

use reverblab_core::rir::{image_source_rir, IsmOptions, RoomSpec};
use reverblab_core::synth::SpeechLike;
use reverblab_core::{AudioSignal, Rir};

/// Two seconds of speech-like audio.
pub fn utterance(seed: u64) -> AudioSignal {
    SpeechLike::default().generate(seed)
}

/// Evaluation-room RIR at the given reverberation time.
pub fn room_rir(t60: f64) -> Rir {
    image_source_rir(&RoomSpec::evaluation_room(t60), &IsmOptions::default())
        .expect("evaluation room is feasible")
        .normalized_to_direct()
}
