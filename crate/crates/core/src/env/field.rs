use super::{EnvironmentSpec, Family};
use crate::special::normal_upper_quantile;
use crate::cone::{Cone, Site};
use crate::error::{LabError, Result};
use crate::rng::{keyed_uniform, pack_coords, row_key, site_uniform};

/// Largest number of populated sites a materialised field may hold.
pub const DEFAULT_SITE_BUDGET: u128 = 50_000_000;

/// Stateless generator of environment rows: the value at `(t, x)` depends
/// only on `(seed, t, x)`.
#[derive(Debug, Clone)]
pub struct EnvSampler<'a> {
    spec: &'a EnvironmentSpec,
    seed: u64,
}

impl<'a> EnvSampler<'a> {
    pub fn new(spec: &'a EnvironmentSpec, seed: u64) -> Self {
        Self { spec, seed }
    }

    pub fn value(&self, t: usize, x: &[i32]) -> f64 {
        self.spec.sample_from_uniform(site_uniform(self.seed, t, x))
    }

    /// Values of the time-`t` cone in rank order, written into `out`.
    pub fn fill_row(&self, cone: &Cone, t: usize, out: &mut Vec<f64>) {
        // monomorphised per family so the per-site transform inlines
        match *self.spec.family() {
            Family::TwoPoint { low, high, p_high } => {
                self.fill_with(cone, t, out, |u| if u < p_high { high } else { low })
            }
            Family::Gaussian { mean, stddev } => {
                self.fill_with(cone, t, out, |u| mean + stddev * normal_upper_quantile(u))
            }
            _ => self.fill_with(cone, t, out, |u| self.spec.sample_from_uniform(u)),
        }
    }

    #[inline(always)]
    fn fill_with<F: Fn(f64) -> f64>(&self, cone: &Cone, t: usize, out: &mut Vec<f64>, transform: F) {
        out.clear();
        out.reserve(cone.site_count(t));
        let key = row_key(self.seed, t);
        let last = cone.dim() - 1;
        cone.for_each_row(t, |row| {
            let base = pack_coords(&row.prefix[..last]);
            out.extend((0..=row.half).map(|j| {
                let z = (-row.half + 2 * j + 0x8000) as u64 & 0xffff;
                transform(keyed_uniform(key, base | z << (16 * last)))
            }));
        });
    }

    pub fn row(&self, cone: &Cone, t: usize) -> Vec<f64> {
        let mut out = Vec::new();
        self.fill_row(cone, t, &mut out);
        out
    }
}

/// Realised environment on the reachable cone over times `1..=horizon`.
#[derive(Debug, Clone)]
pub struct EnvField {
    dim: usize,
    horizon: usize,
    seed: u64,
    cone: Cone,
    // rows[t-1] holds time t in cone rank order
    rows: Vec<Vec<f64>>,
}

impl EnvField {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cone(&self) -> &Cone {
        &self.cone
    }

    /// Environment row at time `t` (1-based).
    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t - 1]
    }

    /// `ω_{t,x}`, `None` off the cone or outside `1..=horizon`.
    pub fn value(&self, t: usize, x: &[i32]) -> Option<f64> {
        if t == 0 || t > self.horizon {
            return None;
        }
        self.cone.rank(t, x).map(|i| self.rows[t - 1][i])
    }

    /// Number of populated sites.
    pub fn populated(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// All `(t, x, ω)` triples in time then rank order.
    pub fn entries(&self) -> Vec<(usize, Site, f64)> {
        let mut out = Vec::with_capacity(self.populated());
        for t in 1..=self.horizon {
            let row = &self.rows[t - 1];
            self.cone.for_each_site(t, |i, x| out.push((t, *x, row[i])));
        }
        out
    }
}

/// Fills the reachable cone up to `horizon` with i.i.d. draws keyed by `(seed, t, x)`.
pub fn sample_field(spec: &EnvironmentSpec, dim: usize, horizon: usize, seed: u64) -> Result<EnvField> {
    sample_field_with_budget(spec, dim, horizon, seed, DEFAULT_SITE_BUDGET)
}

pub fn sample_field_with_budget(
    spec: &EnvironmentSpec,
    dim: usize,
    horizon: usize,
    seed: u64,
    budget: u128,
) -> Result<EnvField> {
    if horizon == 0 {
        return Err(LabError::OutOfRange("horizon must be >= 1".into()));
    }
    let cone = Cone::new(dim, horizon)?;
    let sites = cone.total_sites(horizon);
    if sites > budget {
        return Err(LabError::ConeTooLarge { sites, budget });
    }
    let sampler = EnvSampler::new(spec, seed);
    let rows = (1..=horizon).map(|t| sampler.row(&cone, t)).collect();
    Ok(EnvField {
        dim,
        horizon,
        seed,
        cone,
        rows,
    })
}
