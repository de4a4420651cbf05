//! Maps failures onto the documented exit codes.

use imagery_core::decoders::DecoderError;
use imagery_core::features::FeatureError;
use imagery_core::pipeline::PipelineError;
use imagery_core::preprocess::PreprocessError;
use imagery_core::recording::RecordingError;
use imagery_core::robotsim::RobotError;
use imagery_core::stream::StreamError;
use imagery_core::synthgen::SynthError;

use crate::config::ConfigError;

pub const OK: u8 = 0;
pub const CONFIG: u8 = 2;
pub const IO: u8 = 3;
pub const PROTOCOL: u8 = 4;
pub const NUMERICAL: u8 = 5;
pub const OTHER: u8 = 1;

fn recording(e: &RecordingError) -> u8 {
    match e {
        RecordingError::Label(_) => CONFIG,
        _ => IO,
    }
}

fn decoder(e: &DecoderError) -> u8 {
    match e {
        DecoderError::Numerical(_) => NUMERICAL,
        DecoderError::Io(_)
        | DecoderError::Format(_)
        | DecoderError::Version { .. }
        | DecoderError::KindMismatch { .. }
        | DecoderError::BlobLength { .. } => IO,
        _ => CONFIG,
    }
}

fn feature(e: &FeatureError) -> u8 {
    match e {
        FeatureError::NonFinite(_) => NUMERICAL,
        FeatureError::Recording(r) => recording(r),
        FeatureError::Io(_) | FeatureError::Table(_) => IO,
        _ => CONFIG,
    }
}

fn preprocess(e: &PreprocessError) -> u8 {
    match e {
        PreprocessError::Recording(r) => recording(r),
        PreprocessError::ZeroRank => NUMERICAL,
        _ => CONFIG,
    }
}

fn stream(e: &StreamError) -> u8 {
    match e {
        StreamError::Io(_) => IO,
        StreamError::Recording(r) => recording(r),
        _ => PROTOCOL,
    }
}

fn robot(e: &RobotError) -> u8 {
    match e {
        RobotError::Link(_) => PROTOCOL,
        _ => CONFIG,
    }
}

fn pipeline(e: &PipelineError) -> u8 {
    match e {
        PipelineError::Config(_) => CONFIG,
        PipelineError::BufferTooShort { .. } => PROTOCOL,
        PipelineError::Preprocess(p) => preprocess(p),
        PipelineError::Feature(f) => feature(f),
        PipelineError::Decoder(d) => decoder(d),
        PipelineError::Robot(r) => robot(r),
        PipelineError::Stream(s) => stream(s),
    }
}

/// Exit code for the first recognised error in the chain.
pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() {
            return CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<SynthError>() {
            return match e {
                SynthError::Config(_) => CONFIG,
                SynthError::Recording(r) => recording(r),
            };
        }
        if let Some(e) = cause.downcast_ref::<RecordingError>() {
            return recording(e);
        }
        if let Some(e) = cause.downcast_ref::<DecoderError>() {
            return decoder(e);
        }
        if let Some(e) = cause.downcast_ref::<FeatureError>() {
            return feature(e);
        }
        if let Some(e) = cause.downcast_ref::<PreprocessError>() {
            return preprocess(e);
        }
        if let Some(e) = cause.downcast_ref::<StreamError>() {
            return stream(e);
        }
        if let Some(e) = cause.downcast_ref::<RobotError>() {
            return robot(e);
        }
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return pipeline(e);
        }
        if cause.is::<std::io::Error>() {
            return IO;
        }
    }
    OTHER
}
