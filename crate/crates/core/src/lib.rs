pub mod ba;
pub mod cvd;
pub mod frame_graph;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod uncertainty;
