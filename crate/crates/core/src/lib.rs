//! Temporal forgery localisation on pre-extracted feature sequences.
//!
//! A feature sequence goes through a differential-convolution projection and
//! a stack of R-TLM blocks (local attention + LSTM + fusion) that build a
//! multi-scale pyramid. Shared heads predict a forgery probability and
//! start/end offsets at every pyramid position; inference decodes, filters
//! and suppresses these into scored segments.
//!
//! ```
//! use tempseg::featio::{synth_sample, SynthConfig};
//! use tempseg::config::ModelConfig;
//! use tempseg::infer::predict;
//! use tempseg::model::Model;
//!
//! let sample = synth_sample(3, "demo", &SynthConfig { duration_sec: 2.0, ..SynthConfig::default() }).unwrap();
//! let cfg = ModelConfig { model_dim: 16, n_blocks: 2, n_levels: 2, ..ModelConfig::default() };
//! let model = Model::<f32>::new(&cfg, sample.sequence.dim, 0).unwrap();
//! let pred = predict(&model, &sample.sequence, &Default::default()).unwrap();
//! // An untrained model sits at its 1% prior, below the 0.1 threshold.
//! assert!(pred.segments.is_empty());
//! ```

pub mod backbone;
pub mod checks;
pub mod config;
pub mod error;
pub mod featio;
pub mod heads;
pub mod infer;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
pub use tempseg_tensor as tensor;
