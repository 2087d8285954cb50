//! Time-resolved reconstruction of moving 2D objects from a single
//! parallel-beam sinogram.
//!
//! A conventional filtered-backprojection (FBP) reconstruction assumes the
//! object is stationary while the gantry rotates; motion during the
//! acquisition shows up as blur and streaks. This crate instead represents
//! the scene as per-object signed distance functions evaluated by a small
//! sinusoidal coordinate network (a time-independent encoder plus a
//! band-limited Fourier velocity head), renders that representation back
//! into the sinogram domain with a differentiable projector, and optimizes
//! the network so the rendered sinogram matches the acquired one.
//!
//! Pipeline: [`fbp`] reconstruction → intensity segmentation and explicit
//! SDFs ([`initseg`]) → direct SDF fit and sinogram-supervised training
//! ([`optim`]) → discretization, refinement and export ([`pipeline`]).
//! Dynamic phantoms for the built-in experiments live in [`scene`].

pub mod autodiff;
pub mod config;
pub mod error;
pub mod fbp;
pub mod glyphs;
pub mod grid;
pub mod initseg;
pub mod movie;
pub mod neural;
pub mod optim;
pub mod pipeline;
pub mod plot;
pub mod projector;
pub mod scene;
pub mod threads;

pub use error::{NctError, Result};
pub use grid::GridSpec;
pub use movie::{BinaryMovie, IntensityMovie, SdfMovie};
pub use projector::{GantrySchedule, Sinogram};
