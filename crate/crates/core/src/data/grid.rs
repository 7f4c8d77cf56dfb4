//! Enumeration of candidate compositions on a regular simplex lattice.

use super::{ComponentSchema, Composition};
use crate::error::{Error, Result};

pub const DEFAULT_CANDIDATE_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    /// Fraction increment; `1 / step` must be an integer.
    pub step: f64,
    /// Maximum number of strictly positive components per candidate.
    pub max_nonzero: usize,
    /// Optional inclusive `[lo, hi]` fraction bounds per component.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub cap: u64,
}

impl GridConfig {
    pub fn new(step: f64, max_nonzero: usize) -> Self {
        Self {
            step,
            max_nonzero,
            bounds: None,
            cap: DEFAULT_CANDIDATE_CAP,
        }
    }
}

/// The grid in integer units: every fraction is `count / units`.
struct Lattice {
    units: usize,
    max_nonzero: usize,
    lo: Vec<usize>,
    hi: Vec<usize>,
}

impl Lattice {
    fn new(n: usize, grid: &GridConfig) -> Result<Self> {
        if !(grid.step > 0.0 && grid.step <= 1.0) {
            return Err(Error::Config(format!("grid step must lie in (0, 1], got {}", grid.step)));
        }
        let units = (1.0 / grid.step).round();
        if (units * grid.step - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("grid step {} does not divide 1", grid.step)));
        }
        let units = units as usize;
        if grid.max_nonzero == 0 || grid.max_nonzero > n {
            return Err(Error::Config(format!(
                "max_nonzero must lie in 1..={n}, got {}",
                grid.max_nonzero
            )));
        }
        let (lo, hi) = match &grid.bounds {
            None => (vec![0; n], vec![units; n]),
            Some(b) => {
                if b.len() != n {
                    return Err(Error::shape("grid bounds", n, b.len()));
                }
                let mut lo = Vec::with_capacity(n);
                let mut hi = Vec::with_capacity(n);
                for &(l, h) in b {
                    if !(0.0..=1.0).contains(&l) || !(0.0..=1.0).contains(&h) || l > h {
                        return Err(Error::Config(format!("invalid component bounds [{l}, {h}]")));
                    }
                    lo.push((l * units as f64 - 1e-9).ceil() as usize);
                    hi.push(((h * units as f64 + 1e-9).floor() as usize).min(units));
                }
                (lo, hi)
            }
        };
        Ok(Self {
            units,
            max_nonzero: grid.max_nonzero,
            lo,
            hi,
        })
    }

    fn n(&self) -> usize {
        self.lo.len()
    }

    /// `table[i][rem][nz]` = number of ways to fill components `i..` with
    /// `rem` units left while using at most `nz` more non-zero entries.
    fn completion_counts(&self) -> Vec<Vec<Vec<u128>>> {
        let (n, m, k) = (self.n(), self.units, self.max_nonzero);
        let mut table = vec![vec![vec![0u128; k + 1]; m + 1]; n + 1];
        for nz in 0..=k {
            table[n][0][nz] = 1;
        }
        for i in (0..n).rev() {
            for rem in 0..=m {
                for nz in 0..=k {
                    let mut total = 0u128;
                    for c in self.lo[i]..=self.hi[i].min(rem) {
                        let used = usize::from(c > 0);
                        if used > nz {
                            continue;
                        }
                        total = total.saturating_add(table[i + 1][rem - c][nz - used]);
                    }
                    table[i][rem][nz] = total;
                }
            }
        }
        table
    }
}

/// Number of lattice points [`enumerate_candidates`] would produce.
pub fn count_candidates(schema: &ComponentSchema, grid: &GridConfig) -> Result<u128> {
    let lattice = Lattice::new(schema.n(), grid)?;
    Ok(lattice.completion_counts()[0][lattice.units][lattice.max_nonzero])
}

/// All compositions on the `step` lattice that sum to one, have at most
/// `max_nonzero` positive entries and respect the bounds. The first
/// component runs from its maximum downwards, then the second, and so on.
pub fn enumerate_candidates(schema: &ComponentSchema, grid: &GridConfig) -> Result<Vec<Composition>> {
    let lattice = Lattice::new(schema.n(), grid)?;
    let table = lattice.completion_counts();
    let count = table[0][lattice.units][lattice.max_nonzero];
    if count > grid.cap as u128 {
        return Err(Error::GridTooLarge {
            count,
            cap: grid.cap,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut counts = vec![0usize; lattice.n()];
    fill(&lattice, &table, 0, lattice.units, lattice.max_nonzero, &mut counts, &mut out);
    debug_assert_eq!(out.len() as u128, count);
    Ok(out)
}

fn fill(
    lattice: &Lattice,
    table: &[Vec<Vec<u128>>],
    i: usize,
    rem: usize,
    nz: usize,
    counts: &mut [usize],
    out: &mut Vec<Composition>,
) {
    if i == lattice.n() {
        let m = lattice.units as f64;
        out.push(counts.iter().map(|&c| c as f64 / m).collect());
        return;
    }
    for c in (lattice.lo[i]..=lattice.hi[i].min(rem)).rev() {
        let used = usize::from(c > 0);
        if used > nz || table[i + 1][rem - c][nz - used] == 0 {
            continue;
        }
        counts[i] = c;
        fill(lattice, table, i + 1, rem - c, nz - used, counts, out);
    }
    counts[i] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute force over the full `(units + 1)^n` cube.
    fn brute_force(n: usize, units: usize, max_nonzero: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let total = (units + 1).pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let v: Vec<usize> = (0..n)
                .map(|_| {
                    let d = c % (units + 1);
                    c /= units + 1;
                    d
                })
                .collect();
            if v.iter().sum::<usize>() == units && v.iter().filter(|&&x| x > 0).count() <= max_nonzero {
                out.push(v);
            }
        }
        out
    }

    fn as_units(rows: &[Composition], units: usize) -> Vec<Vec<usize>> {
        rows.iter()
            .map(|r| r.iter().map(|v| (v * units as f64).round() as usize).collect())
            .collect()
    }

    #[test]
    fn three_components_half_step() {
        let schema = ComponentSchema::numbered(3).unwrap();
        let got = enumerate_candidates(&schema, &GridConfig::new(0.5, 3)).unwrap();
        let want = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.5, 0.5, 0.0],
            vec![0.5, 0.0, 0.5],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.5, 0.5],
            vec![0.0, 0.0, 1.0],
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn endpoints_only() {
        let schema = ComponentSchema::numbered(2).unwrap();
        let got = enumerate_candidates(&schema, &GridConfig::new(1.0, 2)).unwrap();
        assert_eq!(got, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn four_components_quarter_step() {
        let schema = ComponentSchema::numbered(4).unwrap();
        let got = enumerate_candidates(&schema, &GridConfig::new(0.25, 4)).unwrap();
        assert_eq!(brute_force(4, 4, 4).len(), 35);
        assert_eq!(got.len(), 35);
    }

    #[test]
    fn matches_brute_force_on_small_instances() {
        for n in 2..=5 {
            for units in 1..=6 {
                for max_nz in 1..=n {
                    let schema = ComponentSchema::numbered(n).unwrap();
                    let grid = GridConfig::new(1.0 / units as f64, max_nz);
                    let got = enumerate_candidates(&schema, &grid).unwrap();
                    for row in &got {
                        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    }
                    let mut got_units = as_units(&got, units);
                    let mut want = brute_force(n, units, max_nz);
                    assert_eq!(got_units.len(), want.len(), "n={n} units={units} nz={max_nz}");
                    assert_eq!(count_candidates(&schema, &grid).unwrap(), want.len() as u128);
                    got_units.sort();
                    got_units.dedup();
                    want.sort();
                    assert_eq!(got_units, want);
                }
            }
        }
    }

    #[test]
    fn bounds_are_respected() {
        let schema = ComponentSchema::numbered(3).unwrap();
        let mut grid = GridConfig::new(0.1, 3);
        grid.bounds = Some(vec![(0.5, 0.8), (0.0, 0.3), (0.1, 1.0)]);
        let got = enumerate_candidates(&schema, &grid).unwrap();
        assert!(!got.is_empty());
        for r in &got {
            assert!(r[0] >= 0.5 - 1e-12 && r[0] <= 0.8 + 1e-12);
            assert!(r[1] <= 0.3 + 1e-12);
            assert!(r[2] >= 0.1 - 1e-12);
        }
        let brute = brute_force(3, 10, 3)
            .into_iter()
            .filter(|v| (5..=8).contains(&v[0]) && v[1] <= 3 && v[2] >= 1)
            .count();
        assert_eq!(got.len(), brute);
    }

    #[test]
    fn rejects_invalid_grids() {
        let schema = ComponentSchema::numbered(3).unwrap();
        assert!(enumerate_candidates(&schema, &GridConfig::new(0.3, 3)).is_err());
        assert!(enumerate_candidates(&schema, &GridConfig::new(0.0, 3)).is_err());
        assert!(enumerate_candidates(&schema, &GridConfig::new(0.5, 0)).is_err());
        assert!(enumerate_candidates(&schema, &GridConfig::new(0.5, 4)).is_err());
    }

    #[test]
    fn cap_is_enforced_before_allocation() {
        let schema = ComponentSchema::numbered(18).unwrap();
        let grid = GridConfig::new(0.1, 18);
        // C(27, 17)
        assert_eq!(count_candidates(&schema, &grid).unwrap(), 8_436_285);
        let mut small = grid.clone();
        small.cap = 1000;
        assert!(matches!(
            enumerate_candidates(&schema, &small),
            Err(Error::GridTooLarge { count: 8_436_285, cap: 1000 })
        ));
    }
}
