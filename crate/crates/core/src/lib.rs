//! Desk-scale laboratory for activation-maximization feature visualization:
//! a small autodiff engine, layer graphs with SGD training, visualization by
//! gradient ascent, the two fooling attacks, and path/linearity analyses.

pub mod tensorcore;
pub mod netgraph;
pub mod featviz;
pub mod fooling;
pub mod analysis;
