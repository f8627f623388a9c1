//! Geometry-aided channel deduction for MIMO-OFDM downlinks.
//!
//! The pipeline runs in stages:
//!
//! 1. [`scene`]: a 2.5D map of building prisms and the base station.
//! 2. [`raytracer`]: exact specular multipath via the image method.
//! 3. [`channel`]: ground-truth channels from traced paths, pilot subsampling,
//!    disturbances and the NMSE metric.
//! 4. [`feature_store`]: ray-traced path features over a virtual user grid,
//!    queried by (possibly inaccurate) user positions.
//! 5. [`alignment`]: retrieved features turned into pseudo channels with random
//!    placeholders, and power normalization.
//! 6. [`net`]: the fusion network (complex mixers around an attention encoder),
//!    with hand-written gradients, Adam training and checkpoints.
//! 7. [`harness`]: dataset generation, training runs, sweeps and reports.

pub mod alignment;
pub mod channel;
pub mod dataset;
pub mod error;
pub mod feature_store;
pub mod geom;
pub mod harness;
pub mod net;
pub mod raytracer;
pub mod scene;
mod varint;

pub use error::{Error, Result};
