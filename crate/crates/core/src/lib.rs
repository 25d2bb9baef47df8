pub mod bmpc;
pub mod closedloop;
pub mod experiment;
pub mod mixture;
pub mod qp;
pub mod rng;
pub mod setops;
pub mod tightening;
