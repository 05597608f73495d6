//! Reflecting measures with a density on the (level, node, point) lattice.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Field, SpatialGrid};
use crate::lattice::NoiseTree;

/// `μ = β · Δt · ∏h · P(node)` for levels `0..N`.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    density: Vec<Vec<Field>>,
    /// `Δt · ∏h · P(node)` per `[level][node]`.
    weights: Vec<Vec<f64>>,
}

impl DiscreteMeasure {
    pub fn new(density: Vec<Vec<Field>>, tree: &NoiseTree, grid: &SpatialGrid) -> Result<Self> {
        if density.len() != tree.steps() {
            return Err(Error::LevelMismatch { expected: tree.steps(), got: density.len() });
        }
        let cell = tree.dt() * grid.cell_volume();
        let mut weights = Vec::with_capacity(density.len());
        for (k, level) in density.iter().enumerate() {
            if level.len() != tree.level_size(k) {
                return Err(Error::LevelMismatch { expected: tree.level_size(k), got: level.len() });
            }
            for f in level {
                if f.len() != grid.len() {
                    return Err(Error::LevelMismatch { expected: grid.len(), got: f.len() });
                }
                if let Some(b) = f.iter().find(|b| !(**b >= 0.0) || !b.is_finite()) {
                    return Err(Error::InvalidInput(format!("measure density must be finite and nonnegative, got {b}")));
                }
            }
            weights.push(tree.node_probs(k).iter().map(|p| p * cell).collect());
        }
        Ok(Self { density, weights })
    }

    pub fn zero(tree: &NoiseTree, grid: &SpatialGrid) -> Self {
        let density = (0..tree.steps())
            .map(|k| vec![Field::zeros(grid.len()); tree.level_size(k)])
            .collect();
        Self::new(density, tree, grid).expect("zero density is valid")
    }

    pub fn density(&self) -> &[Vec<Field>] {
        &self.density
    }

    /// Weight of one cell: `Δt · ∏h · P(node)`.
    pub fn cell_weight(&self, level: usize, node: usize) -> f64 {
        self.weights[level][node]
    }

    /// `E ∫ dμ`.
    pub fn mass(&self) -> f64 {
        self.integrate(|_, _, _| 1.0)
    }

    /// `Σ φ(level, node, point) dμ`.
    pub fn integrate<F: Fn(usize, usize, usize) -> f64>(&self, phi: F) -> f64 {
        let mut total = 0.0;
        for (k, level) in self.density.iter().enumerate() {
            for (i, f) in level.iter().enumerate() {
                let w = self.weights[k][i];
                let s: f64 = f.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(p, b)| b * phi(k, i, p)).sum();
                total += w * s;
            }
        }
        total
    }

    /// Sparse export: `level,node,point,x1..xd,density,weight` for every nonzero cell.
    pub fn write_sparse_csv(&self, path: &Path, grid: &SpatialGrid) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["level".to_string(), "node".into(), "point".into()];
        header.extend((1..=grid.dim()).map(|k| format!("x{k}")));
        header.push("density".into());
        header.push("weight".into());
        w.write_record(&header)?;
        for (k, level) in self.density.iter().enumerate() {
            for (i, f) in level.iter().enumerate() {
                for (p, b) in f.iter().enumerate().filter(|(_, b)| **b != 0.0) {
                    let mut row = vec![k.to_string(), i.to_string(), p.to_string()];
                    row.extend(grid.point(p).iter().map(|x| format!("{x:.12e}")));
                    row.push(format!("{b:.12e}"));
                    row.push(format!("{:.12e}", b * self.weights[k][i]));
                    w.write_record(&row)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Skorohod condition diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Complementarity {
    /// `|E ∫ (u - ξ) dμ|`.
    pub residual: f64,
    /// `E ∫ (u - ξ) dμ` with its sign.
    pub signed: f64,
    /// `min (u - ξ)` over levels `0..N` (the terminal level is data); negative
    /// values measure obstacle violation.
    pub min_gap: f64,
}

/// Complementarity of `u ≥ ξ` with `μ`; `u` and `xi` cover levels `0..=N`.
pub fn complementarity_residual(u: &[Vec<Field>], xi: &[Vec<Field>], mu: &DiscreteMeasure) -> Result<Complementarity> {
    if u.len() != xi.len() || u.len() != mu.density.len() + 1 {
        return Err(Error::LevelMismatch { expected: mu.density.len() + 1, got: u.len().min(xi.len()) });
    }
    let mut min_gap = f64::INFINITY;
    for (lu, lx) in u.iter().zip(xi).take(mu.density.len()) {
        if lu.len() != lx.len() {
            return Err(Error::LevelMismatch { expected: lu.len(), got: lx.len() });
        }
        for (fu, fx) in lu.iter().zip(lx) {
            for (a, b) in fu.iter().zip(fx.iter()) {
                min_gap = min_gap.min(a - b);
            }
        }
    }
    let signed = mu.integrate(|k, i, p| u[k][i][p] - xi[k][i][p]);
    Ok(Complementarity { residual: signed.abs(), signed, min_gap })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (NoiseTree, SpatialGrid) {
        (NoiseTree::build(1, 2, 1.0, false).unwrap(), SpatialGrid::uniform_1d(0.0, 1.0, 4).unwrap())
    }

    fn levels(tree: &NoiseTree, grid: &SpatialGrid, upto: usize, c: f64) -> Vec<Vec<Field>> {
        (0..=upto).map(|k| vec![Field::constant(grid.len(), c); tree.level_size(k)]).collect()
    }

    #[test]
    fn zero_measure_has_zero_residual() {
        let (tree, grid) = setup();
        let mu = DiscreteMeasure::zero(&tree, &grid);
        let u = levels(&tree, &grid, 2, 1.0);
        let xi = levels(&tree, &grid, 2, 0.0);
        let c = complementarity_residual(&u, &xi, &mu).unwrap();
        assert_eq!(c.residual, 0.0);
        assert_eq!(c.min_gap, 1.0);
    }

    #[test]
    fn contact_support_has_zero_residual() {
        let (tree, grid) = setup();
        let mut density = levels(&tree, &grid, 1, 0.0);
        density[1][1][2] = 5.0;
        let mu = DiscreteMeasure::new(density, &tree, &grid).unwrap();
        let xi = levels(&tree, &grid, 2, 0.3);
        let mut u = levels(&tree, &grid, 2, 0.8);
        u[1][1][2] = 0.3;
        assert_eq!(complementarity_residual(&u, &xi, &mu).unwrap().residual, 0.0);
    }

    #[test]
    fn unit_mass_in_one_cell() {
        let (tree, grid) = setup();
        let mut density = levels(&tree, &grid, 1, 0.0);
        let (k, i) = (1, 0);
        let weight = tree.dt() * grid.spacing()[0] * 0.5;
        density[k][i][1] = 1.0 / weight;
        let mu = DiscreteMeasure::new(density, &tree, &grid).unwrap();
        assert!((mu.mass() - 1.0).abs() < 1e-14);
        let xi = levels(&tree, &grid, 2, 0.0);
        let u = levels(&tree, &grid, 2, 1.0);
        let c = complementarity_residual(&u, &xi, &mu).unwrap();
        assert!((c.residual - 1.0).abs() < 1e-14);
        assert!((mu.cell_weight(k, i) - weight).abs() < 1e-16);
    }

    #[test]
    fn negative_density_is_rejected() {
        let (tree, grid) = setup();
        let mut density = levels(&tree, &grid, 1, 0.0);
        density[0][0][0] = -1e-3;
        assert!(DiscreteMeasure::new(density, &tree, &grid).is_err());
    }
}
