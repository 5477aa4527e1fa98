//! Lindblad models: a Hermitian Hamiltonian plus labelled jump operators with
//! their rates already folded in (`c = √γ · c̃`).
//!
//! A model is split into particle-number sectors. Between jumps a trajectory
//! lives in one sector; a jump channel maps each sector either to itself, to
//! another sector (loss processes), or annihilates it. Models without such
//! structure have exactly one sector.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::linalg::{LinearOperator, C64};

const HERMITIAN_REL_TOL: f64 = 1e-12;
const UNITARY_TOL: f64 = 1e-10;

/// A jump channel restricted to one source sector.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpBlock {
    pub target: usize,
    pub op: LinearOperator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SectorBlock {
    /// Total particle number, when the sector is a fixed-N space.
    pub particles: Option<usize>,
    pub hamiltonian: LinearOperator,
    /// One entry per channel, `None` when the channel annihilates the sector.
    pub jumps: Vec<Option<JumpBlock>>,
}

impl SectorBlock {
    pub fn dim(&self) -> usize {
        self.hamiltonian.dim_in()
    }
}

/// An unlabelled jump operator with its rate, before folding.
#[derive(Clone, Debug)]
pub struct Jump {
    pub label: String,
    pub op: LinearOperator,
}

impl Jump {
    /// `√rate · op`.
    pub fn with_rate(label: impl Into<String>, op: &LinearOperator, rate: f64) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::InvalidModel(format!("rate must be finite and >= 0, got {rate}")));
        }
        Ok(Self { label: label.into(), op: op.scale_real(rate.sqrt()) })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LindbladModel {
    name: String,
    labels: Vec<String>,
    sectors: Vec<SectorBlock>,
}

/// `H − (i/2) Σ c†c` for every sector, plus the decay part `Σ c†c` alone.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveHamiltonian {
    pub generators: Vec<LinearOperator>,
    pub decay: Vec<LinearOperator>,
}

impl EffectiveHamiltonian {
    /// The single-sector generator, for models without sector structure.
    pub fn single(&self) -> &LinearOperator {
        &self.generators[0]
    }
}

/// Outcome of [`LindbladModel::validate`]. An empty issue list means pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.issues.is_empty()
    }
}

impl LindbladModel {
    /// A single-sector model. Checked with [`validate`](Self::validate).
    pub fn new(name: impl Into<String>, hamiltonian: LinearOperator, jumps: Vec<Jump>) -> Result<Self> {
        let (labels, ops): (Vec<_>, Vec<_>) = jumps.into_iter().map(|j| (j.label, j.op)).unzip();
        let sector = SectorBlock {
            particles: None,
            hamiltonian,
            jumps: ops.into_iter().map(|op| Some(JumpBlock { target: 0, op })).collect(),
        };
        Self::with_sectors(name, labels, vec![sector])
    }

    /// A multi-sector model. Checked with [`validate`](Self::validate).
    pub fn with_sectors(name: impl Into<String>, labels: Vec<String>, sectors: Vec<SectorBlock>) -> Result<Self> {
        let model = Self::assemble(name, labels, sectors);
        let report = model.validate();
        if !report.passed() {
            return Err(Error::InvalidModel(report.issues.join("; ")));
        }
        let mut model = model;
        for s in &mut model.sectors {
            let h = std::mem::replace(&mut s.hamiltonian, LinearOperator::zeros(0, 0));
            s.hamiltonian = h.with_hint_unchecked(true);
        }
        Ok(model)
    }

    /// Build without any checks. Use [`validate`](Self::validate) to inspect.
    pub fn assemble(name: impl Into<String>, labels: Vec<String>, sectors: Vec<SectorBlock>) -> Self {
        Self { name: name.into(), labels, sectors }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_jumps(&self) -> usize {
        self.labels.len()
    }

    pub fn sectors(&self) -> &[SectorBlock] {
        &self.sectors
    }

    pub fn sector(&self, i: usize) -> &SectorBlock {
        &self.sectors[i]
    }

    pub fn n_sectors(&self) -> usize {
        self.sectors.len()
    }

    /// Total dimension over all sectors.
    pub fn dim(&self) -> usize {
        self.sectors.iter().map(|s| s.dim()).sum()
    }

    pub fn sector_dims(&self) -> Vec<usize> {
        self.sectors.iter().map(|s| s.dim()).collect()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.sectors
            .iter()
            .map(|s| {
                let o = acc;
                acc += s.dim();
                o
            })
            .collect()
    }

    /// Checks Hermiticity of every Hamiltonian block, dimensional
    /// consistency of jump blocks and uniqueness of labels. Never aborts.
    pub fn validate(&self) -> ValidationReport {
        let mut issues = Vec::new();
        if self.sectors.is_empty() {
            issues.push("model has no sectors".to_string());
        }
        let mut seen = HashSet::new();
        for label in &self.labels {
            if !seen.insert(label.as_str()) {
                issues.push(format!("duplicate jump label '{label}'"));
            }
        }
        for (si, s) in self.sectors.iter().enumerate() {
            let h = &s.hamiltonian;
            if !h.is_square() {
                issues.push(format!("sector {si}: Hamiltonian is {}x{}", h.dim_out(), h.dim_in()));
                continue;
            }
            let dev = h.hermitian_deviation();
            if dev > HERMITIAN_REL_TOL {
                let (r, c, d) = h.worst_hermitian_violation().unwrap_or((0, 0, 0.0));
                issues.push(format!(
                    "sector {si}: Hamiltonian not Hermitian, |H[{r},{c}] - conj(H[{c},{r}])| = {d:e}"
                ));
            }
            if s.jumps.len() != self.labels.len() {
                issues.push(format!(
                    "sector {si}: {} jump blocks for {} labels",
                    s.jumps.len(),
                    self.labels.len()
                ));
            }
            for (m, block) in s.jumps.iter().enumerate() {
                let Some(block) = block else { continue };
                let label = self.labels.get(m).map(String::as_str).unwrap_or("?");
                if block.target >= self.sectors.len() {
                    issues.push(format!("sector {si}: jump '{label}' targets missing sector {}", block.target));
                    continue;
                }
                let target_dim = self.sectors[block.target].dim();
                if block.op.dim_in() != s.dim() || block.op.dim_out() != target_dim {
                    issues.push(format!(
                        "sector {si}: jump '{label}' is {}x{}, expected {}x{}",
                        block.op.dim_out(),
                        block.op.dim_in(),
                        target_dim,
                        s.dim()
                    ));
                }
            }
        }
        ValidationReport { issues }
    }

    /// `H − (i/2) Σ c†c`, sector by sector.
    pub fn effective_hamiltonian(&self) -> Result<EffectiveHamiltonian> {
        let mut generators = Vec::with_capacity(self.sectors.len());
        let mut decay = Vec::with_capacity(self.sectors.len());
        for s in &self.sectors {
            let d = s.dim();
            let mut sum = LinearOperator::zeros(d, d);
            for block in s.jumps.iter().flatten() {
                sum = sum.add(&block.op.adjoint().matmul(&block.op)?)?;
            }
            let sum = sum.with_hint_unchecked(true);
            generators.push(s.hamiltonian.add(&sum.scale(C64::new(0.0, -0.5)))?.with_hint_unchecked(false));
            decay.push(sum);
        }
        Ok(EffectiveHamiltonian { generators, decay })
    }

    /// The Hamiltonian embedded in the full (direct-sum) space.
    pub fn full_hamiltonian(&self) -> Result<LinearOperator> {
        let dim = self.dim();
        let offsets = self.offsets();
        let mut trip = Vec::new();
        for (s, off) in self.sectors.iter().zip(&offsets) {
            trip.extend(s.hamiltonian.triplets().map(|(r, c, v)| (r + off, c + off, v)));
        }
        Ok(LinearOperator::from_triplets(dim, dim, trip)?.with_hint_unchecked(true))
    }

    /// Each jump channel embedded in the full space.
    pub fn full_jumps(&self) -> Result<Vec<LinearOperator>> {
        let dim = self.dim();
        let offsets = self.offsets();
        (0..self.labels.len())
            .map(|m| {
                let mut trip = Vec::new();
                for (s, off) in self.sectors.iter().zip(&offsets) {
                    if let Some(Some(block)) = s.jumps.get(m) {
                        let toff = offsets[block.target];
                        trip.extend(block.op.triplets().map(|(r, c, v)| (r + toff, c + off, v)));
                    }
                }
                LinearOperator::from_triplets(dim, dim, trip)
            })
            .collect()
    }

    /// Embed a per-sector state into the full space.
    pub fn embed_state(&self, sector: usize, amps: &[C64]) -> Result<Vec<C64>> {
        if sector >= self.sectors.len() {
            return Err(Error::IndexOutOfRange { index: sector, len: self.sectors.len() });
        }
        if amps.len() != self.sectors[sector].dim() {
            return Err(Error::DimensionMismatch { expected: self.sectors[sector].dim(), found: amps.len() });
        }
        let off = self.offsets()[sector];
        let mut out = vec![C64::new(0.0, 0.0); self.dim()];
        out[off..off + amps.len()].copy_from_slice(amps);
        Ok(out)
    }

    /// Same Hamiltonian, jumps `d_m = T† c_m T`. Single-sector models only.
    pub fn transform_jumps(&self, t: &LinearOperator) -> Result<Self> {
        if self.sectors.len() != 1 {
            return Err(Error::SectorMismatch("jump transformation needs a single-sector model".into()));
        }
        let dim = self.dim();
        if t.dim_in() != dim || t.dim_out() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: t.dim_in() });
        }
        let td = t.adjoint();
        let deviation = unitarity_deviation(t, &td)?;
        if deviation > UNITARY_TOL {
            return Err(Error::NotUnitary { deviation });
        }
        let s = &self.sectors[0];
        let jumps = s
            .jumps
            .iter()
            .map(|b| {
                b.as_ref()
                    .map(|b| {
                        Ok(JumpBlock { target: 0, op: td.matmul(&b.op)?.matmul(t)? })
                    })
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: self.name.clone(),
            labels: self.labels.clone(),
            sectors: vec![SectorBlock { particles: s.particles, hamiltonian: s.hamiltonian.clone(), jumps }],
        })
    }

    /// Replace the Hamiltonian blocks, keeping the jumps. Used for
    /// piecewise-constant schedules.
    pub fn with_hamiltonians(&self, hamiltonians: Vec<LinearOperator>) -> Result<Self> {
        if hamiltonians.len() != self.sectors.len() {
            return Err(Error::DimensionMismatch { expected: self.sectors.len(), found: hamiltonians.len() });
        }
        let sectors = self
            .sectors
            .iter()
            .zip(hamiltonians)
            .map(|(s, h)| SectorBlock { particles: s.particles, hamiltonian: h, jumps: s.jumps.clone() })
            .collect();
        Self::with_sectors(self.name.clone(), self.labels.clone(), sectors)
    }
}

fn unitarity_deviation(t: &LinearOperator, td: &LinearOperator) -> Result<f64> {
    let prod = td.matmul(t)?;
    let dim = t.dim_in();
    let mut worst = 0.0f64;
    for r in 0..dim {
        for c in 0..dim {
            let expected = if r == c { 1.0 } else { 0.0 };
            worst = worst.max((prod.get(r, c) - C64::new(expected, 0.0)).norm());
        }
    }
    Ok(worst)
}

/// A named observable given block-wise on the sectors of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Observable {
    pub name: String,
    pub blocks: Vec<LinearOperator>,
}

impl Observable {
    pub fn new(name: impl Into<String>, blocks: Vec<LinearOperator>) -> Self {
        Self { name: name.into(), blocks }
    }

    /// An observable on a single-sector model.
    pub fn single(name: impl Into<String>, op: LinearOperator) -> Self {
        Self::new(name, vec![op])
    }

    pub fn check(&self, model: &LindbladModel) -> Result<()> {
        if self.blocks.len() != model.n_sectors() {
            return Err(Error::SectorMismatch(format!(
                "observable '{}' has {} blocks, model has {} sectors",
                self.name,
                self.blocks.len(),
                model.n_sectors()
            )));
        }
        for (b, s) in self.blocks.iter().zip(model.sectors()) {
            if b.dim_in() != s.dim() || b.dim_out() != s.dim() {
                return Err(Error::DimensionMismatch { expected: s.dim(), found: b.dim_in() });
            }
        }
        Ok(())
    }

    /// Block-diagonal embedding into the full space.
    pub fn to_full(&self) -> Result<LinearOperator> {
        let dim: usize = self.blocks.iter().map(|b| b.dim_in()).sum();
        let mut trip = Vec::new();
        let mut off = 0;
        for b in &self.blocks {
            trip.extend(b.triplets().map(|(r, c, v)| (r + off, c + off, v)));
            off += b.dim_in();
        }
        let hint = self.blocks.iter().all(|b| b.hermitian_hint());
        Ok(LinearOperator::from_triplets(dim, dim, trip)?.with_hint_unchecked(hint))
    }
}
