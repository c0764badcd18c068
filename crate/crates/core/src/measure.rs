//! Finitely supported probability measures on the hybrid state space.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{svec, HybridState};
use crate::stats::CompensatedSum;

/// Weighted atoms normalized to total mass 1. The atom list keeps insertion
/// order; no deduplication happens unless asked for.
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure {
    atoms: Vec<(HybridState, f64)>,
}

#[derive(Serialize, Deserialize)]
struct AtomRecord {
    y: Vec<f64>,
    i: usize,
    w: f64,
}

impl EmpiricalMeasure {
    /// Build from weighted atoms; weights must be nonnegative with positive
    /// total and are renormalized to sum to 1.
    pub fn new(mut atoms: Vec<(HybridState, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InsufficientSamples(
                "measure needs at least one atom".into(),
            ));
        }
        let mut total = CompensatedSum::new();
        for (_, w) in &atoms {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::InvalidConfig(format!("bad atom weight {w}")));
            }
            total.add(*w);
        }
        let total = total.value();
        if total <= 0.0 {
            return Err(Error::InvalidConfig("measure has zero total mass".into()));
        }
        for (_, w) in &mut atoms {
            *w /= total;
        }
        Ok(EmpiricalMeasure { atoms })
    }

    pub fn dirac(x: HybridState) -> Self {
        EmpiricalMeasure {
            atoms: vec![(x, 1.0)],
        }
    }

    /// Equal weights on the given states.
    pub fn from_states(states: Vec<HybridState>) -> Result<Self> {
        let n = states.len();
        if n == 0 {
            return Err(Error::InsufficientSamples(
                "measure needs at least one atom".into(),
            ));
        }
        let w = 1.0 / n as f64;
        Ok(EmpiricalMeasure {
            atoms: states.into_iter().map(|x| (x, w)).collect(),
        })
    }

    pub fn atoms(&self) -> &[(HybridState, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        let mut s = CompensatedSum::new();
        for (_, w) in &self.atoms {
            s.add(*w);
        }
        s.value()
    }

    pub fn expectation<F: Fn(&HybridState) -> f64>(&self, f: F) -> f64 {
        let mut s = CompensatedSum::new();
        for (x, w) in &self.atoms {
            s.add(w * f(x));
        }
        s.value()
    }

    /// Mean of one coordinate of the y component.
    pub fn mean_coord(&self, k: usize) -> f64 {
        self.expectation(|x| x.y[k])
    }

    /// Merge atoms whose states are bitwise identical, keeping first-seen
    /// order. Exact duplicates arise from resampling and from deterministic
    /// dynamics, and shrink the transport problem.
    pub fn consolidated(&self) -> EmpiricalMeasure {
        let mut index: HashMap<(usize, Vec<u64>), usize> = HashMap::new();
        let mut atoms: Vec<(HybridState, f64)> = Vec::new();
        for (x, w) in &self.atoms {
            let key = (x.i, x.y.iter().map(|v| v.to_bits()).collect());
            match index.get(&key) {
                Some(&slot) => atoms[slot].1 += w,
                None => {
                    index.insert(key, atoms.len());
                    atoms.push((x.clone(), *w));
                }
            }
        }
        EmpiricalMeasure { atoms }
    }

    /// Systematic resample down to `n` equally weighted atoms. Low-variance:
    /// every atom with weight above 1/n is kept at least once.
    pub fn subsample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<EmpiricalMeasure> {
        if n == 0 {
            return Err(Error::InvalidConfig("subsample size must be positive".into()));
        }
        let shift: f64 = rng.gen::<f64>();
        let mut picks = Vec::with_capacity(n);
        let mut cum = 0.0;
        let mut k = 0usize;
        for (x, w) in &self.atoms {
            cum += w;
            while k < n && (k as f64 + shift) / n as f64 <= cum {
                picks.push(x.clone());
                k += 1;
            }
        }
        // guard against total weight rounding just under 1
        while k < n {
            picks.push(self.atoms.last().expect("nonempty").0.clone());
            k += 1;
        }
        EmpiricalMeasure::from_states(picks)
    }

    /// One record per atom: {"y": [...], "i": 1, "w": 0.25}.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for (x, w) in &self.atoms {
            let rec = AtomRecord {
                y: x.y.to_vec(),
                i: x.i,
                w: *w,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<EmpiricalMeasure> {
        let mut atoms = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: AtomRecord = serde_json::from_str(&line)?;
            atoms.push((HybridState::new(svec(&rec.y), rec.i), rec.w));
        }
        EmpiricalMeasure::new(atoms)
    }
}
