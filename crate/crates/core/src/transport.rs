//! Exact Fortet-Mourier distance between finitely supported measures.
//!
//! The distance is the supremum of <f, mu1 - mu2> over functions with
//! |f| <= 1 that are 1-Lipschitz for the hybrid metric. Such functions are
//! exactly the 1-Lipschitz functions of the truncated metric min(rho_c, 2)
//! after centering, so on finite supports the supremum equals the optimal
//! transport cost for that truncated ground metric. The transport problem is
//! solved by the classical transportation simplex: a graded perturbation of
//! the supplies rules out degenerate pivots, the optimal basis is then
//! re-solved with the original weights, and the result is certified by dual
//! feasibility before being returned.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::space::{rho_c, HybridState};
use crate::stats::CompensatedSum;

/// Largest combined support solved exactly; callers must subsample above it.
pub const LP_CAP: usize = 2000;

/// Default per-measure support for the subsampled estimate.
pub const DEFAULT_SUBSAMPLE: usize = 500;

/// Default number of independent resamples whose median is reported.
pub const DEFAULT_RESAMPLES: usize = 5;

const PIVOT_TOL: f64 = 1e-12;
const CERT_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 500_000;

struct Side {
    states: Vec<HybridState>,
    weights: Vec<f64>,
}

fn cmp_f64(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

fn cmp_state(a: &HybridState, b: &HybridState) -> Ordering {
    a.i.cmp(&b.i)
        .then_with(|| a.y.len().cmp(&b.y.len()))
        .then_with(|| {
            for (x, y) in a.y.iter().zip(b.y.iter()) {
                let o = cmp_f64(*x, *y);
                if o != Ordering::Equal {
                    return o;
                }
            }
            Ordering::Equal
        })
}

/// Consolidate and sort so the solve sees a canonical atom order regardless
/// of how the caller assembled the measure.
fn canonical_side(mu: &EmpiricalMeasure) -> Side {
    let merged = mu.consolidated();
    let mut atoms = merged.atoms().to_vec();
    atoms.sort_by(|(xa, _), (xb, _)| cmp_state(xa, xb));
    Side {
        states: atoms.iter().map(|(x, _)| x.clone()).collect(),
        weights: atoms.iter().map(|(_, w)| *w).collect(),
    }
}

fn side_cmp(a: &Side, b: &Side) -> Ordering {
    let k = a.states.len().min(b.states.len());
    for t in 0..k {
        let o = cmp_state(&a.states[t], &b.states[t])
            .then_with(|| cmp_f64(a.weights[t], b.weights[t]));
        if o != Ordering::Equal {
            return o;
        }
    }
    a.states.len().cmp(&b.states.len())
}

fn sides_equal(a: &Side, b: &Side) -> bool {
    a.states.len() == b.states.len()
        && a.weights
            .iter()
            .zip(&b.weights)
            .all(|(p, q)| p.to_bits() == q.to_bits())
        && a.states.iter().zip(&b.states).all(|(x, y)| {
            x.i == y.i
                && x.y.len() == y.y.len()
                && x.y
                    .iter()
                    .zip(y.y.iter())
                    .all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

fn cost_matrix(a: &Side, b: &Side, c_weight: f64) -> Vec<f64> {
    let m = b.states.len();
    let mut cost = Vec::with_capacity(a.states.len() * m);
    for xa in &a.states {
        for xb in &b.states {
            cost.push(rho_c(xa, xb, c_weight).min(2.0));
        }
    }
    cost
}

/// Solve the basis tree for the given supplies and demands by stripping
/// leaves. Returns the per-cell flows in basis order.
fn tree_flows(
    n: usize,
    m: usize,
    basis: &[(usize, usize)],
    aw: &[f64],
    bw: &[f64],
) -> Result<Vec<f64>> {
    let mut resid: Vec<f64> = aw.iter().copied().chain(bw.iter().copied()).collect();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + m];
    for (idx, &(i, j)) in basis.iter().enumerate() {
        adj[i].push((n + j, idx));
        adj[n + j].push((i, idx));
    }
    let mut deg: Vec<usize> = adj.iter().map(|l| l.len()).collect();
    let mut removed = vec![false; basis.len()];
    let mut flows = vec![0.0; basis.len()];
    let mut queue: Vec<usize> = (0..n + m).filter(|&k| deg[k] == 1).collect();
    let mut done = 0usize;
    while let Some(node) = queue.pop() {
        if deg[node] != 1 {
            continue;
        }
        let Some(&(other, idx)) = adj[node].iter().find(|&&(_, e)| !removed[e]) else {
            continue;
        };
        removed[idx] = true;
        done += 1;
        let q = resid[node];
        flows[idx] = q;
        resid[node] = 0.0;
        resid[other] -= q;
        deg[node] -= 1;
        deg[other] -= 1;
        if deg[other] == 1 {
            queue.push(other);
        }
    }
    if done != basis.len() {
        return Err(Error::LpFailure("basis is not a spanning tree".into()));
    }
    Ok(flows)
}

fn potentials(
    n: usize,
    m: usize,
    basis: &[(usize, usize)],
    cost: &[f64],
    u: &mut [f64],
    v: &mut [f64],
) -> Result<()> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + m];
    for (idx, &(i, j)) in basis.iter().enumerate() {
        adj[i].push((n + j, idx));
        adj[n + j].push((i, idx));
    }
    u.fill(f64::NAN);
    v.fill(f64::NAN);
    u[0] = 0.0;
    let mut seen = vec![false; n + m];
    seen[0] = true;
    let mut stack = vec![0usize];
    let mut visited = 1usize;
    while let Some(node) = stack.pop() {
        for &(other, idx) in &adj[node] {
            if seen[other] {
                continue;
            }
            seen[other] = true;
            visited += 1;
            let (i, j) = basis[idx];
            if other >= n {
                v[j] = cost[i * m + j] - u[i];
            } else {
                u[i] = cost[i * m + j] - v[j];
            }
            stack.push(other);
        }
    }
    if visited != n + m {
        return Err(Error::LpFailure("basis tree disconnected".into()));
    }
    Ok(())
}

/// Unique path between two tree nodes, as basis-cell indices ordered from
/// the `to` end back to `from`.
fn tree_path(
    n: usize,
    m: usize,
    basis: &[(usize, usize)],
    from: usize,
    to: usize,
) -> Result<Vec<usize>> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + m];
    for (idx, &(i, j)) in basis.iter().enumerate() {
        adj[i].push((n + j, idx));
        adj[n + j].push((i, idx));
    }
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n + m];
    let mut seen = vec![false; n + m];
    seen[from] = true;
    let mut stack = vec![from];
    while let Some(node) = stack.pop() {
        if node == to {
            break;
        }
        for &(other, idx) in &adj[node] {
            if !seen[other] {
                seen[other] = true;
                parent[other] = Some((node, idx));
                stack.push(other);
            }
        }
    }
    if !seen[to] {
        return Err(Error::LpFailure("pivot cycle not found".into()));
    }
    let mut path = Vec::new();
    let mut node = to;
    while let Some((prev, idx)) = parent[node] {
        path.push(idx);
        node = prev;
    }
    Ok(path)
}

fn transport_value(a: &Side, b: &Side, c_weight: f64) -> Result<f64> {
    let n = a.states.len();
    let m = b.states.len();
    let cost = cost_matrix(a, b, c_weight);

    // graded perturbation: distinct supply increments make every basic flow
    // strictly positive, so each pivot strictly improves and the loop is
    // finite; the perturbation is discarded before the value is computed
    let wmin = a
        .weights
        .iter()
        .chain(&b.weights)
        .fold(f64::INFINITY, |acc, w| acc.min(*w));
    let eps = wmin * 1e-9 / (n as f64 + 1.0);
    let mut sa: Vec<f64> = a
        .weights
        .iter()
        .enumerate()
        .map(|(i, w)| w + eps * (i as f64 + 1.0))
        .collect();
    let mut sb: Vec<f64> = b.weights.clone();
    sb[m - 1] += eps * ((n * (n + 1)) / 2) as f64;

    // northwest-corner start: a spanning tree of n + m - 1 basic cells
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(n + m - 1);
    let mut flow: Vec<f64> = Vec::with_capacity(n + m - 1);
    let (mut i, mut j) = (0usize, 0usize);
    loop {
        let q = sa[i].min(sb[j]);
        basis.push((i, j));
        flow.push(q);
        sa[i] -= q;
        sb[j] -= q;
        if i + 1 == n && j + 1 == m {
            break;
        }
        if i + 1 < n && (sa[i] <= sb[j] || j + 1 == m) {
            i += 1;
        } else {
            j += 1;
        }
    }
    if basis.len() != n + m - 1 {
        return Err(Error::LpFailure(format!(
            "northwest start produced {} basic cells",
            basis.len()
        )));
    }

    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut optimal = false;
    for _ in 0..MAX_PIVOTS {
        potentials(n, m, &basis, &cost, &mut u, &mut v)?;
        let mut best = -PIVOT_TOL;
        let mut enter = None;
        for row in 0..n {
            let base = row * m;
            for col in 0..m {
                let r = cost[base + col] - u[row] - v[col];
                if r < best {
                    best = r;
                    enter = Some((row, col));
                }
            }
        }
        let Some((ei, ej)) = enter else {
            optimal = true;
            break;
        };
        // stepping-stone cycle: entering cell gets +theta; along the tree
        // path from the entering column back to the entering row the signs
        // alternate starting with -
        let path = tree_path(n, m, &basis, ei, n + ej)?;
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (k, &idx) in path.iter().enumerate() {
            if k % 2 == 0 && flow[idx] < theta {
                theta = flow[idx];
                leave = idx;
            }
        }
        if leave == usize::MAX {
            return Err(Error::LpFailure("unbounded pivot".into()));
        }
        for (k, &idx) in path.iter().enumerate() {
            if k % 2 == 0 {
                flow[idx] -= theta;
            } else {
                flow[idx] += theta;
            }
        }
        basis[leave] = (ei, ej);
        flow[leave] = theta;
    }
    if !optimal {
        return Err(Error::LpFailure("pivot budget exhausted".into()));
    }

    // dual feasibility of the final basis certifies optimality for any
    // feasible supplies, including the unperturbed ones
    for row in 0..n {
        let base = row * m;
        for col in 0..m {
            if cost[base + col] - u[row] - v[col] < -CERT_TOL {
                return Err(Error::LpFailure(
                    "optimality certificate failed".into(),
                ));
            }
        }
    }

    // exact flows for the original weights on the certified basis
    let exact = tree_flows(n, m, &basis, &a.weights, &b.weights)?;
    let mut total = CompensatedSum::new();
    for (idx, &(row, col)) in basis.iter().enumerate() {
        let f = exact[idx];
        if f < -1e-7 {
            return Err(Error::LpFailure(format!(
                "basis infeasible for original weights (flow {f:.3e})"
            )));
        }
        total.add(f.max(0.0) * cost[row * m + col]);
    }
    Ok(total.value().max(0.0))
}

/// Exact distance between two finitely supported measures. Symmetric to the
/// bit: arguments are put in a canonical order before solving.
pub fn fortet_mourier(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure, c: f64) -> Result<f64> {
    let mut a = canonical_side(mu1);
    let mut b = canonical_side(mu2);
    if side_cmp(&a, &b) == Ordering::Greater {
        std::mem::swap(&mut a, &mut b);
    }
    if sides_equal(&a, &b) {
        return Ok(0.0);
    }
    let support = a.states.len() + b.states.len();
    if support > LP_CAP {
        return Err(Error::SupportTooLarge(support, LP_CAP));
    }
    transport_value(&a, &b, c_weight_checked(c)?)
}

fn c_weight_checked(c: f64) -> Result<f64> {
    if !(c.is_finite() && c >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "metric weight must be finite and at least 1, got {c}"
        )));
    }
    Ok(c)
}

/// Distance estimate for large supports: each measure is resampled down to
/// `max_support` atoms, the exact solve runs per resample, and the median
/// over `resamples` runs is returned. Falls back to the exact solve when
/// both supports already fit.
pub fn fortet_mourier_sub<R: Rng + ?Sized>(
    mu1: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
    c: f64,
    max_support: usize,
    resamples: usize,
    rng: &mut R,
) -> Result<f64> {
    if max_support == 0 || 2 * max_support > LP_CAP {
        return Err(Error::InvalidConfig(format!(
            "subsample support must be in 1..={}",
            LP_CAP / 2
        )));
    }
    let a = mu1.consolidated();
    let b = mu2.consolidated();
    if a.len() <= max_support && b.len() <= max_support {
        return fortet_mourier(&a, &b, c);
    }
    let runs = resamples.max(1);
    let mut vals = Vec::with_capacity(runs);
    for _ in 0..runs {
        let sa = if a.len() > max_support {
            a.subsample(max_support, rng)?
        } else {
            a.clone()
        };
        let sb = if b.len() > max_support {
            b.subsample(max_support, rng)?
        } else {
            b.clone()
        };
        vals.push(fortet_mourier(&sa, &sb, c)?);
    }
    vals.sort_by(|x, y| cmp_f64(*x, *y));
    let mid = runs / 2;
    if runs % 2 == 1 {
        Ok(vals[mid])
    } else {
        Ok(0.5 * (vals[mid - 1] + vals[mid]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::SeedStream;

    fn dirac(y: f64, i: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::dirac(HybridState::from_slice(&[y], i))
    }

    fn random_measure<R: Rng>(rng: &mut R, n: usize) -> EmpiricalMeasure {
        let atoms = (0..n)
            .map(|_| {
                let y = 3.0 * rng.gen::<f64>();
                let i = 1 + (rng.gen::<f64>() < 0.5) as usize;
                (HybridState::from_slice(&[y], i), 0.05 + rng.gen::<f64>())
            })
            .collect();
        EmpiricalMeasure::new(atoms).unwrap()
    }

    /// Brute-force minimum over every feasible basis tree; exact for tiny
    /// supports and completely independent of the simplex path.
    fn enumerate_value(aw: &[f64], bw: &[f64], cost: &[f64]) -> f64 {
        let n = aw.len();
        let m = bw.len();
        let cells: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .collect();
        let k = n + m - 1;
        let mut pick: Vec<usize> = (0..k).collect();
        let mut best = f64::INFINITY;
        loop {
            let basis: Vec<(usize, usize)> = pick.iter().map(|&t| cells[t]).collect();
            if let Ok(flows) = tree_flows(n, m, &basis, aw, bw) {
                if flows.iter().all(|&f| f >= -1e-12) {
                    let val: f64 = flows
                        .iter()
                        .zip(&basis)
                        .map(|(f, &(i, j))| f.max(0.0) * cost[i * m + j])
                        .sum();
                    best = best.min(val);
                }
            }
            // next lexicographic combination of size k from cells
            let mut t = k;
            loop {
                if t == 0 {
                    return best;
                }
                t -= 1;
                if pick[t] != cells.len() - k + t {
                    break;
                }
            }
            if pick[t] == cells.len() - k + t {
                return best;
            }
            pick[t] += 1;
            for s in t + 1..k {
                pick[s] = pick[s - 1] + 1;
            }
        }
    }

    #[test]
    fn identical_measures_have_zero_distance() {
        let mut rng = SeedStream::new(3).rng(0);
        let mu = random_measure(&mut rng, 20);
        assert_eq!(fortet_mourier(&mu, &mu, 1.0).unwrap(), 0.0);
        let copy = mu.clone();
        assert_eq!(fortet_mourier(&mu, &copy, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn point_masses_give_truncated_metric() {
        let d = fortet_mourier(&dirac(0.0, 1), &dirac(1.0, 1), 1.0).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        // index mismatch costs c, capped at 2 by the bounded part
        let d = fortet_mourier(&dirac(0.0, 1), &dirac(0.0, 2), 3.0).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
        let d = fortet_mourier(&dirac(0.0, 1), &dirac(5.0, 1), 1.0).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn line_example_matches_monotone_matching() {
        let a = EmpiricalMeasure::new(vec![
            (HybridState::from_slice(&[0.0], 1), 0.5),
            (HybridState::from_slice(&[1.0], 1), 0.5),
        ])
        .unwrap();
        let b = EmpiricalMeasure::new(vec![
            (HybridState::from_slice(&[0.25], 1), 0.5),
            (HybridState::from_slice(&[0.75], 1), 0.5),
        ])
        .unwrap();
        let d = fortet_mourier(&a, &b, 1.0).unwrap();
        assert!((d - 0.25).abs() < 1e-12);
    }

    #[test]
    fn symmetry_is_exact_to_the_bit() {
        let mut rng = SeedStream::new(11).rng(0);
        for _ in 0..5 {
            let a = random_measure(&mut rng, 17);
            let b = random_measure(&mut rng, 9);
            let ab = fortet_mourier(&a, &b, 1.5).unwrap();
            let ba = fortet_mourier(&b, &a, 1.5).unwrap();
            assert_eq!(ab.to_bits(), ba.to_bits());
        }
    }

    #[test]
    fn simplex_matches_enumeration_on_small_instances() {
        let mut rng = SeedStream::new(23).rng(0);
        for trial in 0..20 {
            let a = random_measure(&mut rng, 3);
            let b = random_measure(&mut rng, 3);
            let sa = canonical_side(&a);
            let sb = canonical_side(&b);
            let cost = cost_matrix(&sa, &sb, 1.0);
            let oracle = enumerate_value(&sa.weights, &sb.weights, &cost);
            let lp = fortet_mourier(&a, &b, 1.0).unwrap();
            assert!(
                (lp - oracle).abs() < 1e-9,
                "trial {trial}: lp {lp} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn uniform_weights_survive_degeneracy() {
        // equal weights everywhere force ties in every pivot choice
        let mut rng = SeedStream::new(29).rng(0);
        for n in [2usize, 3, 4] {
            let a = EmpiricalMeasure::from_states(
                (0..n)
                    .map(|_| HybridState::from_slice(&[rng.gen::<f64>()], 1))
                    .collect(),
            )
            .unwrap();
            let b = EmpiricalMeasure::from_states(
                (0..n)
                    .map(|_| HybridState::from_slice(&[rng.gen::<f64>()], 1))
                    .collect(),
            )
            .unwrap();
            let sa = canonical_side(&a);
            let sb = canonical_side(&b);
            let cost = cost_matrix(&sa, &sb, 1.0);
            let oracle = enumerate_value(&sa.weights, &sb.weights, &cost);
            let lp = fortet_mourier(&a, &b, 1.0).unwrap();
            assert!((lp - oracle).abs() < 1e-9, "n={n}: {lp} vs {oracle}");
        }
    }

    #[test]
    fn triangle_inequality_holds_on_random_triples() {
        let mut rng = SeedStream::new(37).rng(0);
        for _ in 0..10 {
            let a = random_measure(&mut rng, 6);
            let b = random_measure(&mut rng, 5);
            let c = random_measure(&mut rng, 7);
            let ab = fortet_mourier(&a, &b, 1.0).unwrap();
            let bc = fortet_mourier(&b, &c, 1.0).unwrap();
            let ac = fortet_mourier(&a, &c, 1.0).unwrap();
            assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn oversized_support_is_rejected() {
        let a = EmpiricalMeasure::from_states(
            (0..1200)
                .map(|k| HybridState::from_slice(&[k as f64], 1))
                .collect(),
        )
        .unwrap();
        let b = EmpiricalMeasure::from_states(
            (0..900)
                .map(|k| HybridState::from_slice(&[k as f64 + 0.5], 1))
                .collect(),
        )
        .unwrap();
        let err = fortet_mourier(&a, &b, 1.0).unwrap_err();
        assert!(matches!(err, Error::SupportTooLarge(2100, LP_CAP)));
    }

    #[test]
    fn subsampled_estimate_tracks_the_exact_value() {
        let mut rng = SeedStream::new(41).rng(0);
        let a = random_measure(&mut rng, 400);
        let b = random_measure(&mut rng, 450);
        let exact = fortet_mourier(&a, &b, 1.0).unwrap();
        let mut rng2 = SeedStream::new(41).rng(1);
        let approx = fortet_mourier_sub(&a, &b, 1.0, 120, 5, &mut rng2).unwrap();
        assert!(approx >= 0.0 && approx <= 2.0);
        assert!(
            (approx - exact).abs() < 0.1,
            "approx {approx} vs exact {exact}"
        );
        // small supports take the exact path regardless of the rng
        let c = random_measure(&mut rng, 30);
        let d = random_measure(&mut rng, 20);
        let sub = fortet_mourier_sub(&c, &d, 1.0, 120, 5, &mut rng2).unwrap();
        let full = fortet_mourier(&c, &d, 1.0).unwrap();
        assert_eq!(sub.to_bits(), full.to_bits());
    }
}
