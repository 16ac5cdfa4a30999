//! Toolkit for RGB-D camera based freehand ultrasound probe calibration and
//! augmented-reality overlay, verified end to end against synthetic sensors.
//!
//! The pipeline mirrors a physical setup: an RGB-D camera observes an N-wire
//! phantom and a cube-cluster marker rigidly fixed on the ultrasound probe.
//! The phantom is localized once from the depth point cloud and its pose is
//! frozen; the marker is then tracked frame by frame. Ultrasound images of
//! the phantom wires yield bright spots whose middle-wire points, combined
//! with the two poses, produce pixel-to-marker correspondences from which a
//! least-squares calibration matrix is solved. The calibrated probe can then
//! paint its ultrasound image into RGB video and its accuracy is evaluated
//! by localizing a cube of known size.
//!
//! Modules:
//!
//! * [`geom`] — SE(3) transforms, pinhole projection, pose metrics
//! * [`scene`] — parametric ground truth: N-wire phantom, marker and cube meshes
//! * [`depthsim`] — synthetic depth camera (ray-cast, noise model, point clouds)
//! * [`ussim`] — synthetic ultrasound frames from wire/edge plane intersections
//! * [`register`] — Umeyama fit, ICP, model localization and marker tracking
//! * [`calib`] — spot segmentation, N-wire matching, calibration solve + error metric
//! * [`eval`] — cube localization accuracy study
//! * [`overlay`] — software AR compositing of ultrasound into RGB frames
//! * [`io`] — OBJ/XYZ/PGM/PPM/CSV/JSON persistence
//! * [`config`] — experiment configuration
//! * [`experiment`] — end-to-end synthetic experiment runners

pub mod calib;
pub mod config;
pub mod depthsim;
pub mod eval;
pub mod experiment;
pub mod geom;
pub mod io;
pub mod overlay;
pub mod register;
pub mod scene;
pub(crate) mod streams;
pub mod ussim;
