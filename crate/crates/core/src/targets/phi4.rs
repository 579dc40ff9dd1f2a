use super::TargetDensity;
use crate::error::{check_dim, check_finite, Error, Result};

/// Scalar φ⁴ field on an `L × L` periodic square lattice.
///
/// `H(x) = Σₗ [κ₄ xₗ⁴ + κ₂ xₗ² + 2 Σ_{l' ∈ n(l)} (xₗ² − xₗ xₗ')]` where
/// `n(l)` holds the east and south neighbours, so each undirected link is
/// counted once. Sites are indexed row-major, `l = row · L + col`.
#[derive(Clone, Debug, PartialEq)]
pub struct Phi4Lattice {
    side: usize,
    kappa4: f64,
    kappa2: f64,
    neighbors: Vec<[usize; 2]>,
}

impl Phi4Lattice {
    pub fn new(side: usize, kappa4: f64, kappa2: f64) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidConfig("lattice side must be positive".into()));
        }
        if !kappa4.is_finite() || !kappa2.is_finite() {
            return Err(Error::InvalidConfig("couplings must be finite".into()));
        }
        let neighbors = (0..side * side)
            .map(|l| {
                let (r, c) = (l / side, l % side);
                [r * side + (c + 1) % side, ((r + 1) % side) * side + c]
            })
            .collect();
        Ok(Self {
            side,
            kappa4,
            kappa2,
            neighbors,
        })
    }

    /// `κ₄ = 4`, `κ₂ = -4`.
    pub fn standard(side: usize) -> Result<Self> {
        Self::new(side, 4.0, -4.0)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn kappa4(&self) -> f64 {
        self.kappa4
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    /// Forward (east, south) neighbours of each site.
    pub fn neighbors(&self) -> &[[usize; 2]] {
        &self.neighbors
    }

    pub fn energy(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.neighbors.len(), x.len())?;
        check_finite(x, "phi4 field")?;
        // compensated so that relabelling the sites changes H by at most an ulp or so
        let mut h = NeumaierSum::default();
        for (l, nb) in self.neighbors.iter().enumerate() {
            let v = x[l];
            let v2 = v * v;
            h.add(self.kappa4 * v2 * v2 + self.kappa2 * v2);
            for &m in nb {
                h.add(2.0 * (v2 - v * x[m]));
            }
        }
        Ok(h.total())
    }

    pub fn energy_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.neighbors.len(), x.len())?;
        check_finite(x, "phi4 field")?;
        let mut g: Vec<f64> = x
            .iter()
            .map(|&v| 4.0 * self.kappa4 * v * v * v + 2.0 * self.kappa2 * v)
            .collect();
        for (l, nb) in self.neighbors.iter().enumerate() {
            for &m in nb {
                g[l] += 2.0 * (2.0 * x[l] - x[m]);
                g[m] -= 2.0 * x[l];
            }
        }
        Ok(g)
    }
}

#[derive(Default)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

impl TargetDensity for Phi4Lattice {
    fn dim(&self) -> usize {
        self.neighbors.len()
    }

    fn log_unnorm(&self, x: &[f64]) -> Result<f64> {
        Ok(-self.energy(x)?)
    }

    fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.energy_gradient(x)?;
        g.iter_mut().for_each(|v| *v = -*v);
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vacuum_and_constant_fields_have_zero_energy() {
        let t = Phi4Lattice::standard(8).unwrap();
        assert_eq!(t.log_unnorm(&[0.0; 64]).unwrap(), 0.0);
        assert_eq!(t.log_unnorm(&[1.0; 64]).unwrap(), 0.0);
        assert_eq!(t.log_unnorm(&[-1.0; 64]).unwrap(), 0.0);
    }

    #[test]
    fn neighbor_table_is_periodic_forward() {
        let t = Phi4Lattice::standard(3).unwrap();
        assert_eq!(t.neighbors()[0], [1, 3]);
        assert_eq!(t.neighbors()[2], [0, 5]);
        assert_eq!(t.neighbors()[8], [6, 2]);
        assert!(t.neighbors().iter().flatten().all(|&m| m < 9));
    }

    #[test]
    fn one_site_lattice_has_no_kinetic_term() {
        let t = Phi4Lattice::standard(1).unwrap();
        let x = 0.7f64;
        let h = t.energy(&[x]).unwrap();
        assert!((h - (4.0 * x.powi(4) - 4.0 * x * x)).abs() < 1e-15);
        let g = t.energy_gradient(&[x]).unwrap();
        assert!((g[0] - (16.0 * x.powi(3) - 8.0 * x)).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        let t = Phi4Lattice::standard(2).unwrap();
        assert!(matches!(t.log_unnorm(&[0.0; 3]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(
            t.log_unnorm(&[0.0, f64::INFINITY, 0.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(Phi4Lattice::standard(0).is_err());
    }
}
