//! Nodal tensor fields on a chart grid.

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::grid::ChartGrid;

/// What a field's components mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Scalar,
    OneForm,
    Vector,
    /// Symmetric covariant 2-tensor, stored as a full `n x n` block.
    Sym2,
}

impl Role {
    pub fn components(self, n: usize) -> usize {
        match self {
            Role::Scalar => 1,
            Role::OneForm | Role::Vector => n,
            Role::Sym2 => n * n,
        }
    }

    /// (covariant rank, contravariant rank)
    pub fn valence(self) -> (usize, usize) {
        match self {
            Role::Scalar => (0, 0),
            Role::OneForm => (1, 0),
            Role::Vector => (0, 1),
            Role::Sym2 => (2, 0),
        }
    }
}

/// A tensor field sampled at every node of a grid; component `c` of node `k`
/// sits at `data[k * ncomp + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: ChartGrid,
    role: Role,
    data: Vec<f64>,
}

impl TensorField {
    pub fn zeros(grid: &ChartGrid, role: Role) -> Self {
        let len = grid.node_count() * role.components(grid.dim());
        TensorField { grid: grid.clone(), role, data: vec![0.0; len] }
    }

    /// Builds a field from node data. Sym2 blocks must be exactly symmetric.
    pub fn from_data(grid: &ChartGrid, role: Role, data: Vec<f64>) -> Result<Self> {
        let n = grid.dim();
        let nc = role.components(n);
        if data.len() != grid.node_count() * nc {
            return Err(GeomError::ShapeMismatch(format!(
                "expected {} values for {:?}, got {}",
                grid.node_count() * nc,
                role,
                data.len()
            )));
        }
        if role == Role::Sym2 {
            for (k, block) in data.chunks(nc).enumerate() {
                for i in 0..n {
                    for j in i + 1..n {
                        if block[i * n + j] != block[j * n + i] {
                            return Err(GeomError::ShapeMismatch(format!("sym2 block not symmetric at node {k}")));
                        }
                    }
                }
            }
        }
        Ok(TensorField { grid: grid.clone(), role, data })
    }

    /// Builds a sym2 field, replacing each block by its symmetric part.
    pub fn sym2_symmetrized(grid: &ChartGrid, mut data: Vec<f64>) -> Result<Self> {
        let n = grid.dim();
        if data.len() != grid.node_count() * n * n {
            return Err(GeomError::ShapeMismatch("sym2 component count".into()));
        }
        for block in data.chunks_mut(n * n) {
            for i in 0..n {
                for j in i + 1..n {
                    let m = 0.5 * (block[i * n + j] + block[j * n + i]);
                    block[i * n + j] = m;
                    block[j * n + i] = m;
                }
            }
        }
        Ok(TensorField { grid: grid.clone(), role: Role::Sym2, data })
    }

    /// Samples `f(x)` at each node; `f` must return `role.components(n)` values.
    pub fn from_fn(grid: &ChartGrid, role: Role, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let mut data = Vec::with_capacity(grid.node_count() * role.components(grid.dim()));
        for k in 0..grid.node_count() {
            data.extend(f(&grid.coord(k)));
        }
        if role == Role::Sym2 {
            Self::sym2_symmetrized(grid, data)
        } else {
            Self::from_data(grid, role, data)
        }
    }

    pub fn scalar(grid: &ChartGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let data = (0..grid.node_count()).map(|k| f(&grid.coord(k))).collect();
        TensorField { grid: grid.clone(), role: Role::Scalar, data }
    }

    pub fn grid(&self) -> &ChartGrid {
        &self.grid
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn ncomp(&self) -> usize {
        self.role.components(self.grid.dim())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let nc = self.ncomp();
        &self.data[node * nc..(node + 1) * nc]
    }

    /// Component `(i, j)` of a sym2 field.
    pub fn get2(&self, node: usize, i: usize, j: usize) -> f64 {
        let n = self.grid.dim();
        self.data[node * n * n + i * n + j]
    }

    /// `a * self + b * other`, same grid and role.
    pub fn combine(&self, a: f64, other: &TensorField, b: f64) -> Result<TensorField> {
        if self.role != other.role || self.data.len() != other.data.len() {
            return Err(GeomError::ShapeMismatch("combining fields of different shape".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        Ok(TensorField { grid: self.grid.clone(), role: self.role, data })
    }

    pub fn scaled(&self, a: f64) -> TensorField {
        TensorField { grid: self.grid.clone(), role: self.role, data: self.data.iter().map(|x| a * x).collect() }
    }

    /// Largest absolute component value over all nodes.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest absolute component value over non-margin nodes.
    pub fn max_abs_interior(&self) -> f64 {
        let nc = self.ncomp();
        self.grid
            .interior_nodes()
            .into_iter()
            .flat_map(|k| self.data[k * nc..(k + 1) * nc].iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;

    fn torus() -> ChartGrid {
        ChartGrid::new(vec![Axis::periodic(0.0, 1.0, 8), Axis::periodic(0.0, 1.0, 8)]).unwrap()
    }

    #[test]
    fn shapes_follow_role() {
        let g = torus();
        assert_eq!(TensorField::zeros(&g, Role::Sym2).data().len(), 64 * 4);
        assert_eq!(TensorField::zeros(&g, Role::OneForm).ncomp(), 2);
        assert_eq!(Role::Vector.valence(), (0, 1));
        assert!(TensorField::from_data(&g, Role::Scalar, vec![0.0; 3]).is_err());
    }

    #[test]
    fn sym2_blocks_are_exactly_symmetric() {
        let g = torus();
        let t = TensorField::from_fn(&g, Role::Sym2, |x| vec![1.0, x[0], x[0] + 1e-17, 2.0]).unwrap();
        for k in 0..g.node_count() {
            assert_eq!(t.get2(k, 0, 1), t.get2(k, 1, 0));
        }
        let mut bad = vec![0.0; 64 * 4];
        bad[1] = 1.0;
        assert!(TensorField::from_data(&g, Role::Sym2, bad).is_err());
    }
}
