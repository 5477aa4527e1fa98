//! Occupation-number bases for bosonic lattices and the site operators built
//! on them.
//!
//! Sites are indexed from 0. States are stored in ascending lexicographic
//! order of their occupation tuples, so the basis ordering is reproducible.
//! Hard-core bosons are simply `n_max = 1`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::{LinearOperator, StateVector, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct OccupationBasis {
    sites: usize,
    n_max: usize,
    sector: Option<usize>,
    states: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
}

/// Enumerate all occupation tuples on `sites` sites with at most `n_max`
/// bosons per site, optionally restricted to `particles` in total.
pub fn enumerate_basis(sites: usize, n_max: usize, particles: Option<usize>) -> Result<OccupationBasis> {
    if sites == 0 {
        return Err(Error::InvalidArgument("a lattice needs at least one site".into()));
    }
    if n_max == 0 || n_max > u8::MAX as usize {
        return Err(Error::InvalidArgument(format!("n_max must be in 1..=255, got {n_max}")));
    }
    if let Some(n) = particles {
        if n > sites * n_max {
            return Err(Error::EmptySector { sites, n_max, particles: n });
        }
    }

    let mut states = Vec::new();
    let mut current = vec![0u8; sites];
    fill(&mut current, 0, n_max, particles, &mut states);

    let index = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    Ok(OccupationBasis { sites, n_max, sector: particles, states, index })
}

fn fill(current: &mut Vec<u8>, site: usize, n_max: usize, remaining: Option<usize>, out: &mut Vec<Vec<u8>>) {
    let sites = current.len();
    if site == sites {
        if remaining.is_none_or(|r| r == 0) {
            out.push(current.clone());
        }
        return;
    }
    let rest = sites - site - 1;
    for n in 0..=n_max {
        if let Some(r) = remaining {
            if n > r {
                break;
            }
            // the remaining sites must be able to hold what is left
            if r - n > rest * n_max {
                continue;
            }
        }
        current[site] = n as u8;
        fill(current, site + 1, n_max, remaining.map(|r| r - n), out);
    }
    current[site] = 0;
}

/// Number of occupation tuples, by inclusion-exclusion over sites whose
/// occupancy exceeds `n_max`.
pub fn sector_dimension(sites: usize, n_max: usize, particles: usize) -> usize {
    let mut total: i128 = 0;
    for k in 0..=sites {
        let excess = k * (n_max + 1);
        if excess > particles {
            break;
        }
        let term = binomial(sites, k) * binomial(particles - excess + sites - 1, sites - 1);
        if k % 2 == 0 {
            total += term as i128;
        } else {
            total -= term as i128;
        }
    }
    total as usize
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

impl OccupationBasis {
    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn sector(&self) -> Option<usize> {
        self.sector
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Vec<u8>] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &[u8] {
        &self.states[i]
    }

    pub fn index_of(&self, occupation: &[u8]) -> Option<usize> {
        self.index.get(occupation).copied()
    }

    /// The normalized basis vector for the given occupation tuple.
    pub fn basis_state(&self, occupation: &[usize]) -> Result<StateVector> {
        if occupation.len() != self.sites {
            return Err(Error::DimensionMismatch { expected: self.sites, found: occupation.len() });
        }
        let key: Vec<u8> = occupation.iter().map(|&n| n.min(255) as u8).collect();
        let idx = self.index_of(&key).ok_or_else(|| {
            Error::InvalidArgument(format!("occupation {occupation:?} is not in the basis"))
        })?;
        StateVector::basis(self.dim(), idx)
    }

    fn check_site(&self, l: usize) -> Result<()> {
        if l >= self.sites {
            Err(Error::IndexOutOfRange { index: l, len: self.sites })
        } else {
            Ok(())
        }
    }

    /// Diagonal operator `n_l`.
    pub fn site_number(&self, l: usize) -> Result<LinearOperator> {
        self.check_site(l)?;
        let diag: Vec<f64> = self.states.iter().map(|s| s[l] as f64).collect();
        Ok(LinearOperator::real_diagonal(&diag))
    }

    /// Diagonal operator `f(n_1, ..., n_L)`.
    pub fn diagonal_operator<F>(&self, f: F) -> LinearOperator
    where
        F: Fn(&[u8]) -> f64,
    {
        let diag: Vec<f64> = self.states.iter().map(|s| f(s)).collect();
        LinearOperator::real_diagonal(&diag)
    }

    pub fn total_number(&self) -> LinearOperator {
        self.diagonal_operator(|s| s.iter().map(|&n| n as f64).sum())
    }

    /// `a†_l a_j` within this basis. Targets above `n_max` are dropped, which
    /// enforces the hard-core constraint for `n_max = 1`.
    pub fn hop(&self, l: usize, j: usize) -> Result<LinearOperator> {
        self.check_site(l)?;
        self.check_site(j)?;
        if l == j {
            return Err(Error::InvalidArgument("hop requires two distinct sites".into()));
        }
        let mut trip = Vec::new();
        let mut target = vec![0u8; self.sites];
        for (col, s) in self.states.iter().enumerate() {
            let (nl, nj) = (s[l] as usize, s[j] as usize);
            if nj == 0 || nl >= self.n_max {
                continue;
            }
            target.copy_from_slice(s);
            target[l] += 1;
            target[j] -= 1;
            if let Some(row) = self.index_of(&target) {
                let amp = (((nl + 1) * nj) as f64).sqrt();
                trip.push((row, col, C64::new(amp, 0.0)));
            }
        }
        LinearOperator::from_triplets(self.dim(), self.dim(), trip)
    }

    /// `a†_l a_j + a†_j a_l`.
    pub fn hop_symmetric(&self, l: usize, j: usize) -> Result<LinearOperator> {
        let h = self.hop(l, j)?;
        Ok(h.add(&h.adjoint())?.with_hint_unchecked(true))
    }
}

fn falling_amplitude(n: usize, k: usize) -> f64 {
    ((n + 1 - k)..=n).map(|m| m as f64).product::<f64>().sqrt()
}

/// `(a_l)^k` mapping `from` into `to`.
///
/// With fixed sectors the two bases must differ by exactly `k` particles and
/// the result is rectangular. Two unrestricted bases of the same shape give
/// a square operator on the truncated Fock space.
pub fn site_lowering(from: &OccupationBasis, to: &OccupationBasis, l: usize, k: usize) -> Result<LinearOperator> {
    from.check_site(l)?;
    if from.sites != to.sites || from.n_max != to.n_max {
        return Err(Error::SectorMismatch(format!(
            "bases differ in shape: {} sites / n_max {} vs {} sites / n_max {}",
            from.sites, from.n_max, to.sites, to.n_max
        )));
    }
    match (from.sector, to.sector) {
        (Some(a), Some(b)) if a != b + k => {
            return Err(Error::SectorMismatch(format!(
                "lowering by {k} maps N = {a} to N = {}, not N = {b}",
                a as isize - k as isize
            )));
        }
        (Some(_), None) | (None, Some(_)) => {
            return Err(Error::SectorMismatch("cannot mix fixed-N and unrestricted bases".into()));
        }
        _ => {}
    }
    let mut trip = Vec::new();
    let mut target = vec![0u8; from.sites];
    for (col, s) in from.states.iter().enumerate() {
        let n = s[l] as usize;
        if n < k {
            continue;
        }
        target.copy_from_slice(s);
        target[l] -= k as u8;
        if let Some(row) = to.index_of(&target) {
            trip.push((row, col, C64::new(falling_amplitude(n, k), 0.0)));
        }
    }
    LinearOperator::from_triplets(to.dim(), from.dim(), trip)
}

/// `(a†_l)^k` on an unrestricted basis (square). Used for commutator checks.
pub fn site_raising(basis: &OccupationBasis, l: usize, k: usize) -> Result<LinearOperator> {
    Ok(site_lowering(basis, basis, l, k)?.adjoint().with_hint_unchecked(false))
}

/// Bases for `N, N - k, N - 2k, ...` down to the smallest non-negative
/// particle number, for a loss process removing `k` bosons per jump.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorFamily {
    arity: usize,
    bases: Vec<OccupationBasis>,
}

impl SectorFamily {
    pub fn new(sites: usize, n_max: usize, particles: usize, arity: usize) -> Result<Self> {
        if arity == 0 {
            return Err(Error::InvalidArgument("loss arity must be positive".into()));
        }
        let mut bases = vec![enumerate_basis(sites, n_max, Some(particles))?];
        let mut n = particles;
        while n >= arity {
            n -= arity;
            bases.push(enumerate_basis(sites, n_max, Some(n))?);
        }
        Ok(Self { arity, bases })
    }

    /// A family with one member (number-conserving dynamics).
    pub fn single(basis: OccupationBasis) -> Self {
        Self { arity: 0, bases: vec![basis] }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn bases(&self) -> &[OccupationBasis] {
        &self.bases
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    /// Index of the sector reached from `sector` by one loss jump.
    pub fn next(&self, sector: usize) -> Option<usize> {
        (self.arity > 0 && sector + 1 < self.bases.len()).then_some(sector + 1)
    }

    pub fn total_dim(&self) -> usize {
        self.bases.iter().map(|b| b.dim()).sum()
    }
}
