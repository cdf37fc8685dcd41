//! SDRTV/HDRTV formation model and the three-step SDRTV-to-HDRTV method:
//! adaptive global color mapping, local enhancement and highlight
//! generation, with the metrics and LUT tooling used to evaluate them.

pub mod colorpipe;
pub mod datagen;
pub mod error;
pub mod image;
pub mod io_util;
pub mod lut;
pub mod metrics;
pub mod models;
pub mod testcard;

pub use error::{Error, Result};
pub use image::{EncodedImage, Gamut, LinearImage, Rgb, Transfer};
