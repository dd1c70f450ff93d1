//! Path-context wrappers over the shared tensor container.

use std::path::Path;

use flashmask_core::tensor::{DType, Tensor};

use crate::{CliError, CliResult};

pub fn load(path: &Path) -> CliResult<Tensor> {
    Tensor::load(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

pub fn save(path: &Path, t: &Tensor) -> CliResult {
    t.save(path)
        .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

/// Widens to f64 for the engine; dense 0/1 masks are not valid inputs here.
pub fn floats(t: &Tensor, what: &str) -> CliResult<Vec<f64>> {
    if t.dtype() == DType::U8 {
        return Err(CliError::invalid(format!(
            "{what}: expected an f32 or f64 tensor, found u8"
        )));
    }
    Ok(t.to_f64_vec())
}
