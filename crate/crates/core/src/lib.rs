//! Category-level monocular object SLAM.
//!
//! The crate covers the full pipeline: learning a PCA shape basis for an
//! object category from aligned 3D keypoint sets, lifting 2D keypoint
//! observations to object pose and shape, associating detections into
//! persistent tracks, and jointly optimizing the robot trajectory and object
//! poses in a factor graph. A deterministic scene simulator stands in for a
//! learned keypoint front-end so the whole system can be exercised and
//! evaluated offline.

pub mod assoc;
pub mod category;
pub mod config;
pub mod eval;
pub mod fit;
pub mod geometry;
pub mod graph;
pub mod pipeline;
pub mod retrieval;
pub mod sim;
pub mod textio;
