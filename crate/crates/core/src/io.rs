//! CSV serialization of meshes and nodal fields.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RmaError};
use crate::pde::Mesh;

#[derive(Serialize, Deserialize)]
struct NodeRow {
    node: usize,
    x: f64,
    y: f64,
}

#[derive(Serialize, Deserialize)]
struct FieldRow {
    node: usize,
    x: f64,
    y: f64,
    value: f64,
}

/// Writes `node,x,y` rows.
pub fn write_nodes<W: Write>(out: W, mesh: &Mesh) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (node, c) in mesh.coords().iter().enumerate() {
        w.serialize(NodeRow { node, x: c[0], y: c[1] })?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one element per row, `v0,v1[,v2]`.
pub fn write_elements<W: Write>(out: W, mesh: &Mesh) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (0..mesh.vertices_per_element()).map(|k| format!("v{k}")).collect();
    w.write_record(&header)?;
    for verts in mesh.elements() {
        w.write_record(verts.iter().map(usize::to_string))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `node,x,y,value` rows.
pub fn write_field<W: Write>(out: W, mesh: &Mesh, values: &DVector<f64>) -> Result<()> {
    if values.len() != mesh.node_count() {
        return Err(RmaError::DimensionMismatch { expected: mesh.node_count(), got: values.len() });
    }
    let mut w = csv::Writer::from_writer(out);
    for (node, (c, value)) in mesh.coords().iter().zip(values.iter()).enumerate() {
        w.serialize(FieldRow { node, x: c[0], y: c[1], value: *value })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_nodes_csv(path: &Path, mesh: &Mesh) -> Result<()> {
    write_nodes(File::create(path)?, mesh)
}

pub fn write_elements_csv(path: &Path, mesh: &Mesh) -> Result<()> {
    write_elements(File::create(path)?, mesh)
}

pub fn write_field_csv(path: &Path, mesh: &Mesh, values: &DVector<f64>) -> Result<()> {
    if values.len() != mesh.node_count() {
        return Err(RmaError::DimensionMismatch { expected: mesh.node_count(), got: values.len() });
    }
    write_field(File::create(path)?, mesh, values)
}

/// Reads the `value` column of a field CSV, ordered by `node`. Lines starting
/// with `#` are skipped.
pub fn read_field_csv(path: &Path) -> Result<DVector<f64>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut rows: Vec<FieldRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    rows.sort_by_key(|row| row.node);
    if rows.iter().enumerate().any(|(i, row)| row.node != i) {
        return Err(RmaError::Config(format!("{}: node indices are not 0..n", path.display())));
    }
    Ok(DVector::from_iterator(rows.len(), rows.into_iter().map(|row| row.value)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::Side;

    #[test]
    fn field_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = Mesh::unit_square(3, 2, Side::Bottom).unwrap();
        let values = DVector::from_fn(mesh.node_count(), |i, _| (i as f64).sin() / 3.0);
        let path = dir.path().join("u.csv");
        write_field_csv(&path, &mesh, &values).unwrap();
        assert_eq!(read_field_csv(&path).unwrap(), values);
        let mut text = b"# provenance\n".to_vec();
        write_field(&mut text, &mesh, &values).unwrap();
        std::fs::write(&path, text).unwrap();
        assert_eq!(read_field_csv(&path).unwrap(), values);
        assert!(write_field_csv(&path, &mesh, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn mesh_tables() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = Mesh::unit_square(2, 2, Side::Bottom).unwrap();
        write_nodes_csv(&dir.path().join("nodes.csv"), &mesh).unwrap();
        write_elements_csv(&dir.path().join("elements.csv"), &mesh).unwrap();
        let text = std::fs::read_to_string(dir.path().join("elements.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + mesh.element_count());
        assert!(text.starts_with("v0,v1,v2"));
        let nodes = std::fs::read_to_string(dir.path().join("nodes.csv")).unwrap();
        assert_eq!(nodes.lines().count(), 1 + mesh.node_count());
    }
}
