use pyo3::prelude::*;

#[pymodule]
fn epdgscan_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
