//! Prompt-guided object detection on a multi-path feature pyramid.

pub mod backbone;
pub mod config;
pub mod error;
pub mod exec;
pub mod filter;
pub mod heads;
pub mod image;
pub mod pipeline;
pub mod profiler;
pub mod pyramid;
pub mod tensor;
pub mod text;
pub mod weights;

pub use error::{Error, Result};

use std::path::Path;

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
