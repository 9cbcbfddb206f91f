//! On-disk formats: the tensor container shared by all artifacts, and
//! KITTI-style scan, label and pose files.

mod kitti;
mod tensor;

use std::io::Write;
use std::path::Path;

pub use kitti::{
    decode_labels, decode_points, read_poses, read_scan, read_sequence, write_poses, write_scan,
};
pub use tensor::{export_tensor, import_tensor, DType, Tensor, TensorData, MAGIC};

use crate::error::Result;

/// Writes via a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
