//! Nodal analysis of the floating-electrode crossbar.
//!
//! Nodes are the 64 electrodes (rows `0..32`, columns `32..64`). The selected
//! row is an ideal source at 1 V and is eliminated, leaving a 63-unknown
//! conductance system `G v = i` solved by dense LU with partial pivoting.

use super::{Error, ResistorGrid, Result};
use crate::tactile::{COLS, ROWS};

pub const ELECTRODES: usize = ROWS + COLS;

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n + c]
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.n + c] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.data.chunks_exact(self.n).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }
}

/// In-place LU factorisation with partial pivoting.
pub struct LuFactors {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl LuFactors {
    pub fn factor(mut a: DenseMatrix) -> Result<Self> {
        let n = a.n;
        let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * f64::EPSILON * n as f64;
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|r| (r, a.get(r, k).abs()))
                .max_by(|x, y| x.1.total_cmp(&y.1))
                .expect("non-empty");
            if !(pivot > tiny) {
                return Err(Error::SingularNetwork { column: k, pivot });
            }
            if p != k {
                for c in 0..n {
                    a.data.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let d = a.get(k, k);
            for r in k + 1..n {
                let f = a.data[r * n + k] / d;
                if f == 0.0 {
                    continue;
                }
                a.data[r * n + k] = f;
                let (top, bottom) = a.data.split_at_mut(r * n);
                let pivot_row = &top[k * n + k + 1..k * n + n];
                for (x, &u) in bottom[k + 1..n].iter_mut().zip(pivot_row) {
                    *x -= f * u;
                }
            }
        }
        Ok(LuFactors { lu: a, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let s: f64 = (0..r).map(|c| self.lu.get(r, c) * y[c]).sum();
            y[r] -= s;
        }
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| self.lu.get(r, c) * y[c]).sum();
            y[r] = (y[r] - s) / self.lu.get(r, r);
        }
        y
    }
}

pub fn lu_solve(a: DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    Ok(LuFactors::factor(a)?.solve(b))
}

/// The reduced conductance system for one (row, column) reading.
#[derive(Debug, Clone)]
pub struct CrossbarSystem {
    pub matrix: DenseMatrix,
    pub rhs: Vec<f64>,
    /// Electrode index of each unknown.
    pub unknowns: Vec<usize>,
    pub drive_row: usize,
    pub drive_volts: f64,
}

impl CrossbarSystem {
    /// Row `row` driven at `drive_volts`, column `col` tied to ground through
    /// `r_ref_ohm`, every other electrode floating. `lead_ohm` is added in
    /// series with each crossing.
    pub fn assemble(grid: &ResistorGrid, row: usize, col: usize, r_ref_ohm: f64, lead_ohm: f64) -> Self {
        let drive_volts = 1.0;
        let unknowns: Vec<usize> = (0..ELECTRODES).filter(|&e| e != row).collect();
        let slot = |e: usize| if e < row { e } else { e - 1 };
        let n = unknowns.len();
        let mut g = DenseMatrix::zeros(n);
        let mut rhs = vec![0.0; n];
        for r in 0..ROWS {
            for c in 0..COLS {
                let cond = 1.0 / (grid.get(r, c) + lead_ohm);
                let cn = slot(ROWS + c);
                g.add(cn, cn, cond);
                if r == row {
                    rhs[cn] += cond * drive_volts;
                } else {
                    let rn = slot(r);
                    g.add(rn, rn, cond);
                    g.add(rn, cn, -cond);
                    g.add(cn, rn, -cond);
                }
            }
        }
        let sense = slot(ROWS + col);
        g.add(sense, sense, 1.0 / r_ref_ohm);
        CrossbarSystem { matrix: g, rhs, unknowns, drive_row: row, drive_volts }
    }
}

#[derive(Debug, Clone)]
pub struct NodalSolution {
    /// Potential of every electrode, rows first, including the driven row.
    pub electrode_volts: Vec<f64>,
    /// `‖G v − i‖∞ / ‖i‖∞`.
    pub relative_residual: f64,
}

impl NodalSolution {
    pub fn column_volts(&self, col: usize) -> f64 {
        self.electrode_volts[ROWS + col]
    }
}

pub fn solve_reading(grid: &ResistorGrid, row: usize, col: usize, r_ref_ohm: f64, lead_ohm: f64) -> Result<NodalSolution> {
    let sys = CrossbarSystem::assemble(grid, row, col, r_ref_ohm, lead_ohm);
    let v = lu_solve(sys.matrix.clone(), &sys.rhs)?;
    let gv = sys.matrix.mul_vec(&v);
    let src = sys.rhs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let res = gv.iter().zip(&sys.rhs).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let mut electrode_volts = vec![0.0; ELECTRODES];
    electrode_volts[row] = sys.drive_volts;
    for (&e, &x) in sys.unknowns.iter().zip(&v) {
        electrode_volts[e] = x;
    }
    Ok(NodalSolution { electrode_volts, relative_residual: res / src })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lu_solves_a_small_system_needing_pivoting() {
        let mut a = DenseMatrix::zeros(3);
        for (r, row) in [[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [2.0, 0.0, 3.0]].iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                a.add(r, c, *v);
            }
        }
        let x = lu_solve(a.clone(), &[5.0, 3.0, 11.0]).unwrap();
        let back = a.mul_vec(&x);
        for (got, want) in back.iter().zip([5.0, 3.0, 11.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut a = DenseMatrix::zeros(2);
        a.add(0, 0, 1.0);
        a.add(0, 1, 2.0);
        a.add(1, 0, 2.0);
        a.add(1, 1, 4.0);
        assert!(matches!(lu_solve(a, &[1.0, 2.0]), Err(Error::SingularNetwork { .. })));
    }

    #[test]
    fn random_grids_solve_to_tight_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let rs: Vec<f64> = (0..1024).map(|_| 10f64.powf(rng.gen_range(2.0..5.0))).collect();
            let grid = ResistorGrid::from_resistances(rs, 1e5).unwrap();
            let (r, c) = (rng.gen_range(0..32), rng.gen_range(0..32));
            let sol = solve_reading(&grid, r, c, 10_000.0, 0.0).unwrap();
            assert!(sol.relative_residual <= 1e-9, "{}", sol.relative_residual);
            assert!(sol.electrode_volts.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        }
    }

    #[test]
    fn kirchhoff_current_balance_at_the_sense_node() {
        let mut grid = ResistorGrid::uniform(50_000.0).unwrap();
        grid.set(3, 4, 1_000.0).unwrap();
        let sol = solve_reading(&grid, 3, 4, 10_000.0, 0.0).unwrap();
        let vc = sol.column_volts(4);
        let into: f64 = (0..ROWS).map(|r| (sol.electrode_volts[r] - vc) / grid.get(r, 4)).sum();
        assert!((into - vc / 10_000.0).abs() < 1e-12);
    }
}
