//! Grasp hypothesis generation: a GPG-style 7-DoF sampler on raw and
//! depth-inpainted clouds, a top-down 4-DoF grid generator, and pose NMS.

mod darboux;
mod dual;
mod gpg;
mod heuristic;
mod inpaint;
mod nms;
mod record;

pub use crate::cloud::depth_to_cloud;
pub use darboux::{darboux_frame, DarbouxFrame, EIGEN_TIE_GAP};
pub use dual::{dual_cloud_generate, DepthSource, DUAL_NMS_ANGLE, DUAL_NMS_POSITION};
pub use gpg::{gpg_generate, gpg_generate_from, GpgConfig};
pub use heuristic::{heuristic_4dof_generate, heuristic_4dof_raw, Heuristic4DofConfig};
pub use inpaint::inpaint_depth;
pub use nms::nms_poses;
pub use record::{read_candidates, write_candidates, CandidateRecord};
