//! Library for learning tabletop manipulation from unsegmented demonstrations.
//!
//! The pipeline: a scripted or random controller interacts with a simulated
//! tabletop ([`world`]), closed-loop skills ([`primitives`]) generate labeled
//! transition data ([`collector`]), small networks ([`nn`], [`idm`]) learn to
//! recognize which skill connects two snapshots, a dynamic program ([`parser`])
//! cuts long demonstrations ([`demos`]) into skill segments, and a two-level
//! controller ([`policy`]) is trained on the parsed segments.

pub mod collector;
pub mod demos;
pub mod idm;
pub mod io;
pub mod math;
pub mod nn;
pub mod parser;
pub mod policy;
pub mod primitives;
pub mod rng;
pub mod world;
