//! Imagery-driven EEG decoding: recordings, preprocessing, differential
//! entropy features, decoders, synthetic sessions, streaming, the online
//! pipeline and a simulated pick-and-place executor.

pub mod decoders;
pub mod features;
pub mod pipeline;
pub mod preprocess;
pub mod recording;
pub mod robotsim;
pub mod stream;
pub mod synthgen;
