//! Stokes–Mueller algebra, polarization summaries, ideal optical elements and
//! polarization-frame bookkeeping.

mod frame;
mod mueller;
mod stokes;

pub use frame::{
    build_frame, cart2sph, frame_angle, rotate_stokes_between_frames, sph2cart, Frame,
};
pub(crate) use frame::build_frame_unchecked;
pub use mueller::{linear_polarizer_mueller, qwp_mueller, rotation_mueller, MuellerMatrix};
pub use stokes::{
    poincare_from_stokes, stokes_from_poincare, stokes_is_valid, summarize_polarization,
    wrap_half_turn, PoincareParams, PolarizationSummary, StokesVector,
    DEFAULT_VALIDITY_TOLERANCE,
};
pub(crate) use stokes::stokes_from_poincare_unchecked;
