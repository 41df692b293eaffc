//! Pinhole ray generation and volumetric integration of Stokes vectors.
//!
//! All samples on one ray share the ray's output frame `z = -d`, so no
//! per-sample frame rotation happens inside the integral.

mod geometry;
pub mod quadrature;
mod render;

pub use geometry::{generate_ray, Aabb, Camera, FrameConvention, Intrinsics, Ray};
pub use quadrature::{quadrature_weights, sample_along_ray, RaySamples, Weights};
pub use render::{
    render_image, render_rays, render_stokes, FieldSamples, RayRender, RenderConfig,
    RenderedImage, StokesField,
};
