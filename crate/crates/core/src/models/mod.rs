//! Generator, critic, parameter handling and optimizer.

pub mod checkpoint;
pub mod critic;
pub mod generator;
pub mod noise;
pub mod optim;
pub mod params;

pub use critic::{Critic, CriticOut, CriticSpec};
pub use generator::{Bottleneck, Downsample, Generator, GeneratorSpec};
pub use noise::NoiseSource;
pub use optim::{Adam, AdamConfig};
pub use params::{clip_weights, Init, ParamSet};
