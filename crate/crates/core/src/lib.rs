pub mod batch;
pub mod ckmeans;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod reference;
pub mod roi;
pub mod synth;
pub mod temporal;
