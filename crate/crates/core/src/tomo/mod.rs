//! Phantom, parallel-beam projection, sinogram assembly, filtered
//! back-projection and image comparison.

mod fbp;
mod image;
mod phantom;
mod project;

pub use fbp::{reconstruct_fbp, reconstruct_fbp_with};
pub use image::{read_image_csv, rmse, write_image_csv, write_pgm, Normalization, ReconImage};
pub use phantom::{make_phantom, Materials, Phantom};
pub use project::{
    assemble_sinogram, forward_project, forward_project_with, read_sinogram_csv,
    write_sinogram_csv, Sinogram, SinogramMode,
};
