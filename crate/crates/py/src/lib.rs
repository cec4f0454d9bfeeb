use pyo3::prelude::*;

#[pymodule]
fn catslam_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
