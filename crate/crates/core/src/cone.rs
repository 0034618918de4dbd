//! Index bijection for the reachable time-space cone.
//!
//! At time `t` a simple random walk on `Z^d` started at the origin can only
//! sit on `{x : |x|_1 <= t, |x|_1 ≡ t (mod 2)}`. Sites are ranked in
//! lexicographic order of their coordinates. Fixing the first `d-1`
//! coordinates (the *prefix*) leaves a *row* of sites whose last coordinate
//! runs over `-h, -h+2, …, h` with `h = t - |prefix|_1`; rows are contiguous
//! in the ranking, which the transfer step exploits.

use crate::error::{LabError, Result};

pub const MAX_DIM: usize = 4;

/// Lattice point, only the first `dim` entries are meaningful.
pub type Site = [i32; MAX_DIM];

/// Ranking tables for the cone of a given dimension up to a maximal time.
#[derive(Debug, Clone)]
pub struct Cone {
    dim: usize,
    max_time: usize,
    // count[k][r]: #{z in Z^(k+1) : |z|_1 <= r, |z|_1 ≡ r mod 2}
    count: Vec<Vec<u64>>,
    // cumulative[k][s] = sum_{j<=s} count[k][j]
    cumulative: Vec<Vec<u64>>,
}

/// One contiguous run of sites sharing the first `dim-1` coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Row {
    pub prefix: Site,
    /// Last coordinate runs over `-half..=half` in steps of two.
    pub half: i32,
    pub offset: usize,
}

impl Row {
    pub fn len(&self) -> usize {
        self.half as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl Cone {
    pub fn new(dim: usize, max_time: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(LabError::UnsupportedDimension(dim));
        }
        if max_time > i16::MAX as usize {
            return Err(LabError::OutOfRange(format!("time {max_time} exceeds {}", i16::MAX)));
        }
        let mut count = vec![(0..=max_time as u64).map(|r| r + 1).collect::<Vec<_>>()];
        let mut cumulative = vec![prefix_sums(&count[0])];
        for k in 1..dim {
            let prev = &count[k - 1];
            let prev_cum = &cumulative[k - 1];
            let row: Vec<u64> = (0..=max_time)
                .map(|r| {
                    let below = if r >= 1 { prev_cum[r - 1] } else { 0 };
                    prev[r] + 2 * below
                })
                .collect();
            cumulative.push(prefix_sums(&row));
            count.push(row);
        }
        Ok(Self {
            dim,
            max_time,
            count,
            cumulative,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_time(&self) -> usize {
        self.max_time
    }

    /// Number of sites at time `t`.
    pub fn site_count(&self, t: usize) -> usize {
        self.count[self.dim - 1][t] as usize
    }

    /// Number of sites over times `1..=t` (the populated environment).
    pub fn total_sites(&self, t: usize) -> u128 {
        (1..=t).map(|s| self.count[self.dim - 1][s] as u128).sum()
    }

    fn q(&self, k: usize, s: i64) -> u64 {
        if s < 0 {
            0
        } else {
            self.cumulative[k][s as usize]
        }
    }

    // Number of sites preceding coordinate value `z` on an axis with budget `r`
    // when `k+1` coordinates remain after this one.
    fn skip(&self, k: usize, r: i64, z: i64) -> u64 {
        if z <= 0 {
            self.q(k, r + z - 1)
        } else {
            2 * self.q(k, r - 1) + self.count[k][r as usize] - self.q(k, r - z)
        }
    }

    /// Rank of `x` among the sites at time `t`, `None` off the cone.
    pub fn rank(&self, t: usize, x: &[i32]) -> Option<usize> {
        if t > self.max_time {
            return None;
        }
        let mut r = t as i64;
        let mut idx = 0u64;
        for i in 0..self.dim - 1 {
            let z = x[i] as i64;
            if z.abs() > r {
                return None;
            }
            idx += self.skip(self.dim - 2 - i, r, z);
            r -= z.abs();
        }
        let z = x[self.dim - 1] as i64;
        if z.abs() > r || (z + r) % 2 != 0 {
            return None;
        }
        Some((idx + ((z + r) / 2) as u64) as usize)
    }

    /// Offset of the row with the given prefix at time `t`, with its half-width.
    pub fn row_start(&self, t: usize, prefix: &[i32]) -> Option<(usize, i32)> {
        let used: i32 = prefix[..self.dim - 1].iter().map(|c| c.abs()).sum();
        let half = t as i32 - used;
        if half < 0 {
            return None;
        }
        let mut x: Site = [0; MAX_DIM];
        x[..self.dim - 1].copy_from_slice(&prefix[..self.dim - 1]);
        x[self.dim - 1] = -half;
        self.rank(t, &x).map(|o| (o, half))
    }

    /// Visits the rows of time `t` in rank order.
    pub fn for_each_row<F: FnMut(Row)>(&self, t: usize, mut f: F) {
        let mut prefix: Site = [0; MAX_DIM];
        let mut offset = 0usize;
        self.rows_rec(0, t as i32, &mut prefix, &mut offset, &mut f);
    }

    fn rows_rec<F: FnMut(Row)>(&self, axis: usize, budget: i32, prefix: &mut Site, offset: &mut usize, f: &mut F) {
        if axis == self.dim - 1 {
            let row = Row {
                prefix: *prefix,
                half: budget,
                offset: *offset,
            };
            *offset += row.len();
            f(row);
            return;
        }
        for z in -budget..=budget {
            prefix[axis] = z;
            self.rows_rec(axis + 1, budget - z.abs(), prefix, offset, f);
        }
        prefix[axis] = 0;
    }

    /// Visits every site of time `t` with its rank.
    pub fn for_each_site<F: FnMut(usize, &Site)>(&self, t: usize, mut f: F) {
        let last = self.dim - 1;
        self.for_each_row(t, |row| {
            let mut x = row.prefix;
            for j in 0..=row.half {
                x[last] = -row.half + 2 * j;
                f(row.offset + j as usize, &x);
            }
        });
    }

    /// All sites of time `t` in rank order.
    pub fn sites(&self, t: usize) -> Vec<Site> {
        let mut out = Vec::with_capacity(self.site_count(t));
        self.for_each_site(t, |_, x| out.push(*x));
        out
    }
}

fn prefix_sums(v: &[u64]) -> Vec<u64> {
    v.iter()
        .scan(0u64, |acc, &c| {
            *acc += c;
            Some(*acc)
        })
        .collect()
}

/// `|x|_1` over the first `dim` coordinates.
pub fn l1(x: &[i32], dim: usize) -> i32 {
    x[..dim].iter().map(|c| c.abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_sites(dim: usize, t: i32) -> Vec<Site> {
        let mut out = Vec::new();
        let mut x: Site = [0; MAX_DIM];
        fn rec(dim: usize, axis: usize, t: i32, x: &mut Site, out: &mut Vec<Site>) {
            if axis == dim {
                let n = l1(x, dim);
                if n <= t && (t - n) % 2 == 0 {
                    out.push(*x);
                }
                return;
            }
            for z in -t..=t {
                x[axis] = z;
                rec(dim, axis + 1, t, x, out);
            }
            x[axis] = 0;
        }
        rec(dim, 0, t, &mut x, &mut out);
        out
    }

    #[test]
    fn rank_is_lexicographic_bijection() {
        for dim in 1..=4 {
            let cone = Cone::new(dim, 7).unwrap();
            for t in 0..=7usize {
                let brute = brute_sites(dim, t as i32);
                assert_eq!(brute.len(), cone.site_count(t), "dim {dim} t {t}");
                for (i, x) in brute.iter().enumerate() {
                    assert_eq!(cone.rank(t, x), Some(i));
                }
                assert_eq!(cone.sites(t), brute);
            }
        }
    }

    #[test]
    fn off_cone_sites_have_no_rank() {
        let cone = Cone::new(3, 5).unwrap();
        assert_eq!(cone.rank(2, &[1, 0, 0, 0]), None);
        assert_eq!(cone.rank(2, &[3, 0, 0, 0]), None);
        assert_eq!(cone.rank(6, &[0, 0, 0, 0]), None);
    }

    #[test]
    fn small_counts() {
        let cone = Cone::new(1, 2).unwrap();
        assert_eq!(cone.site_count(1), 2);
        assert_eq!(cone.site_count(2), 3);
        assert_eq!(cone.total_sites(2), 5);
        let cone = Cone::new(3, 12).unwrap();
        // sum over even m <= 12 of (4m^2 + 2)
        assert_eq!(cone.site_count(12), 1469);
    }

    #[test]
    fn rows_partition_the_sites() {
        let cone = Cone::new(3, 6).unwrap();
        let mut covered = 0;
        cone.for_each_row(6, |row| {
            assert_eq!(row.offset, covered);
            assert_eq!(cone.row_start(6, &row.prefix), Some((row.offset, row.half)));
            covered += row.len();
        });
        assert_eq!(covered, cone.site_count(6));
    }
}
