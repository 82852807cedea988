//! File formats and dataset ingestion: binary scene/params containers, the
//! camera trajectory text layout, depth maps (PFM or 16-bit PNG), 8-bit PNG
//! images, and splat-PLY interop.

pub mod depth;
pub mod images;
pub mod params_file;
pub mod ply;
pub mod scene_file;
pub mod trajectory;

pub use depth::{read_depth, read_pfm, write_depth_png16, write_pfm};
pub use images::{load_image_rgb, save_image_gray, save_image_rgb};
pub use params_file::{read_params, write_params};
pub use ply::{export_ply, import_ply};
pub use scene_file::{read_scene, write_scene};
pub use trajectory::{load_trajectory, write_trajectory, TrajectoryFrame};
