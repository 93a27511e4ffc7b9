//! Residual estimation: frame coefficients of piecewise polynomial functionals
//! on an adaptively chosen index tree, and the η-halving loop producing a
//! certified bound together with relatively accurate indicators.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::Serialize;

use crate::apply_compress::{apply, residual_blocks, ApplyParams, ThetaCache};
use crate::coeff_field::CoeffField;
use crate::error::{Error, Result};
use crate::frame::{Frame, FrameIndex, Geo};
use crate::functional::{CStatus, Carrier, PwFunctional};
use crate::mesh::{Elem, Pt};
use crate::stochastic::{MultiIndex, SgFunction};

/// Frame coefficients ⟨ξ, ψ_λ⟩ on an index set, sorted by index.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Indicators {
    pub entries: Vec<(FrameIndex, f64)>,
}

impl Indicators {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|x| x.1 * x.1).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn get(&self, lam: FrameIndex) -> Option<f64> {
        self.entries.binary_search_by(|x| x.0.cmp(&lam)).ok().map(|i| self.entries[i].1)
    }

    pub fn max_level(&self) -> u32 {
        self.entries.last().map_or(0, |x| x.0.level)
    }
}

struct PatchInfo {
    geo: Arc<Geo>,
    /// Carrier status of each ring element; the patch is part of the ring.
    ring_status: Vec<CStatus>,
}

impl PatchInfo {
    fn new(frame: &Frame, xi: &Carrier, lam: FrameIndex) -> PatchInfo {
        let geo = frame.geo(lam);
        let ring_status = geo.ring.iter().map(|e| xi.status(*e)).collect();
        PatchInfo { geo, ring_status }
    }

    /// Same as `new` for an index whose closed support lies in that of `parent`,
    /// so every ring element descends from one of the parent's.
    fn below(frame: &Frame, xi: &Carrier, lam: FrameIndex, parent: &PatchInfo) -> PatchInfo {
        let geo = frame.geo(lam);
        let pgen = parent.geo.patch[0].0.gen();
        let ring_status = geo
            .ring
            .iter()
            .map(|e| match parent.geo.ring.binary_search(&e.ancestor_at(pgen)) {
                Ok(i) => xi.status_below(parent.ring_status[i], *e),
                Err(_) => xi.status(*e),
            })
            .collect();
        PatchInfo { geo, ring_status }
    }

    fn status(&self) -> impl Iterator<Item = (Elem, CStatus)> + '_ {
        self.geo.patch.iter().map(|(e, _)| {
            let i = self.geo.ring.binary_search(e).expect("patch element outside its ring");
            (*e, self.ring_status[i])
        })
    }

    fn active(&self, xi: &Carrier) -> bool {
        self.status().any(|(e, st)| xi.is_active(st, e))
    }

    /// ξ is refined inside some patch element.
    fn non_polynomial(&self) -> bool {
        self.status().any(|(_, s)| s == CStatus::Internal)
    }

    /// Largest carrier generation meeting the closed support.
    fn ring_max_gen(&self, xi: &Carrier) -> u32 {
        self.geo.ring.iter().zip(&self.ring_status).map(|(e, st)| xi.max_gen(*st, *e)).max().unwrap_or(0)
    }

    fn with_status(&self) -> Vec<(Elem, [Pt; 3], CStatus)> {
        self.geo.patch.iter().zip(self.status()).map(|((e, v), (_, s))| (*e, *v, s)).collect()
    }
}

/// Level cap from the finest carrier generation G meeting a support: elements
/// sit on level ⌊G/2⌋ (d=2) or G (d=1) and their edges at most one level above.
fn level_cap(dim: usize, g: u32, j: u32) -> u32 {
    if dim == 1 {
        g + 2 * j
    } else {
        (g / 2 + j).max(g.div_ceil(2) + 2 * j)
    }
}

/// Builds the index tree Θ⁺ level by level and returns the coefficients of ξ on
/// it. A child enters when ξ is not polynomial on its parent's support, or when
/// it is within J element levels (2J edge levels) of the carrier touching its
/// closed support.
/// Supports without data are skipped along with all their descendants, since
/// their coefficients vanish. The set is closed under the frame parent map.
pub fn dual_norm_indicators(frame: &Frame, xi: &PwFunctional, j: u32) -> Indicators {
    let xi = Carrier::new(xi);
    let dim = frame.domain().dim();
    let mut info: FxHashMap<FrameIndex, PatchInfo> = FxHashMap::default();
    let mut zero: FxHashSet<FrameIndex> = FxHashSet::default();
    let mut levels: Vec<Vec<FrameIndex>> = Vec::new();

    let roots = frame.roots();
    for &r in &roots {
        info.insert(r, PatchInfo::new(frame, &xi, r));
    }
    levels.push(roots);
    loop {
        let prev = levels.last().unwrap();
        let mut cand: BTreeMap<FrameIndex, (bool, FrameIndex)> = BTreeMap::new();
        for lam in prev {
            let pi = &info[lam];
            if !pi.active(&xi) {
                continue;
            }
            let forced = pi.non_polynomial();
            for &(p, _) in &pi.geo.kids {
                if frame.domain().on_boundary(p) {
                    continue;
                }
                let c = cand.entry(FrameIndex::new(lam.level + 1, p)).or_insert((false, *lam));
                c.0 |= forced;
            }
        }
        let mut next = Vec::new();
        for (mu, (forced, parent)) in cand {
            let pi = PatchInfo::below(frame, &xi, mu, &info[&parent]);
            let keep = pi.active(&xi) && (forced || mu.level <= level_cap(dim, pi.ring_max_gen(&xi), j));
            if !pi.active(&xi) {
                zero.insert(mu);
            } else if keep {
                next.push(mu);
            }
            info.insert(mu, pi);
        }
        if next.is_empty() {
            break;
        }
        levels.push(next);
    }

    // Parent closure, finest level first so added parents are closed in turn.
    let mut sets: Vec<FxHashSet<FrameIndex>> = levels.iter().map(|l| l.iter().copied().collect()).collect();
    for l in (1..sets.len()).rev() {
        let add: Vec<FrameIndex> =
            sets[l].iter().filter_map(|lam| frame.parent(*lam)).filter(|p| !sets[l - 1].contains(p)).collect();
        for p in add {
            info.entry(p).or_insert_with(|| PatchInfo::new(frame, &xi, p));
            sets[l - 1].insert(p);
        }
    }

    let mut coef: FxHashMap<FrameIndex, f64> = FxHashMap::default();
    for l in (0..sets.len()).rev() {
        let mut here: Vec<FrameIndex> = sets[l].iter().copied().collect();
        here.sort_unstable();
        let vals: Vec<f64> = here
            .iter()
            .map(|lam| {
                let pi = &info[lam];
                let mut acc = 0.0;
                for &(p, w) in &pi.geo.kids {
                    let mu = FrameIndex::new(lam.level + 1, p);
                    if frame.domain().on_boundary(p) || zero.contains(&mu) {
                        continue;
                    }
                    match (coef.get(&mu), info.get(&mu)) {
                        (Some(c), Some(ci)) => acc += w * ci.geo.norm / pi.geo.norm * c,
                        _ => return xi.integrate_hat(lam.node, &pi.with_status()) / pi.geo.norm,
                    }
                }
                acc
            })
            .collect();
        for (lam, v) in here.into_iter().zip(vals) {
            coef.insert(lam, v);
        }
    }
    let mut entries: Vec<(FrameIndex, f64)> = coef.into_iter().collect();
    entries.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    Indicators { entries }
}

/// Parameters of the estimation loop.
#[derive(Clone, Copy, Debug)]
pub struct EstimateParams {
    /// Target relative accuracy ζ of the indicators.
    pub zeta: f64,
    /// Frame truncation depth Ĵ.
    pub j_hat: u32,
    /// Relative tail ζ_Ĵ of the frame truncation at depth Ĵ.
    pub zeta_j: f64,
    pub c_psi: f64,
    pub apply: ApplyParams,
    pub max_rounds: u32,
}

#[derive(Clone, Debug)]
pub struct ResidualEstimate {
    pub indicators: BTreeMap<MultiIndex, Indicators>,
    pub blocks: BTreeMap<MultiIndex, PwFunctional>,
    pub eta: f64,
    pub b: f64,
    pub rhat: f64,
    /// Returned because b ≤ ε rather than through the accuracy test.
    pub eps_exit: bool,
    pub rounds: u32,
    /// Largest truncation level used by the final Apply.
    pub max_ell: u32,
}

impl ResidualEstimate {
    /// #Λ⁺.
    pub fn len(&self) -> usize {
        self.indicators.values().map(|i| i.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// b = η + (1 + ζ_Ĵ/√(1 − ζ_Ĵ²)) ‖r̂‖.
pub fn bound(eta: f64, zeta_j: f64, rhat: f64) -> f64 {
    eta + (1.0 + zeta_j / (1.0 - zeta_j * zeta_j).sqrt()) * rhat
}

/// Computes indicators of f − Bv accurate to relative tolerance ζ, halving the
/// operator tolerance η from `eta0` until the accuracy test holds or the
/// certified bound drops below `eps`.
pub fn res_estimate(
    v: &SgFunction,
    f: &PwFunctional,
    cf: &CoeffField,
    frame: &Frame,
    cache: &mut ThetaCache,
    p: &EstimateParams,
    eta0: f64,
    eps: f64,
) -> Result<ResidualEstimate> {
    if !(0.0 < p.zeta_j && p.zeta_j < p.zeta && p.zeta < 1.0) {
        return Err(Error::Config(format!("need 0 < zeta_J < zeta < 1, got {} and {}", p.zeta_j, p.zeta)));
    }
    if !(eta0 > 0.0) {
        return Err(Error::Config(format!("initial tolerance must be positive, got {eta0}")));
    }
    let mut eta = eta0;
    for round in 1..=p.max_rounds {
        let t0 = std::time::Instant::now();
        let plan = apply(v, eta / p.c_psi, &p.apply)?;
        let levels = plan.levels();
        let max_ell = levels.values().copied().max().unwrap_or(0);
        cache.ensure(cf, max_ell);
        let t1 = std::time::Instant::now();
        let blocks = residual_blocks(f, v, &levels, cf, cache);
        let t2 = std::time::Instant::now();
        let indicators: BTreeMap<MultiIndex, Indicators> =
            blocks.par_iter().map(|(nu, r)| (nu.clone(), dual_norm_indicators(frame, r, p.j_hat))).collect();
        log::trace!(
            "round {round}: cache {:?}, residual {:?} ({} blocks, {} pieces), indicators {:?} ({} entries)",
            t1 - t0,
            t2 - t1,
            blocks.len(),
            blocks.values().map(|b| b.len()).sum::<usize>(),
            t2.elapsed(),
            indicators.values().map(|i| i.len()).sum::<usize>()
        );
        let rhat = indicators.values().map(|i| i.norm_sq()).sum::<f64>().sqrt();
        let b = bound(eta, p.zeta_j, rhat);
        let accurate = eta <= (p.zeta - p.zeta_j) / (1.0 + p.zeta) * rhat;
        if accurate || b <= eps {
            log::debug!("estimate: {round} rounds, eta {eta:.3e}, rhat {rhat:.4e}, b {b:.4e}, ell <= {max_ell}");
            return Ok(ResidualEstimate { indicators, blocks, eta, b, rhat, eps_exit: !accurate, rounds: round, max_ell });
        }
        eta /= 2.0;
    }
    Err(Error::NotConverged(format!(
        "residual estimate did not reach relative accuracy {} within {} halvings; zeta_J may be too large",
        p.zeta, p.max_rounds
    )))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::functional::apply_a;
    use crate::functional::ThetaSource;
    use crate::mesh::{Domain, FeFunction, FeSpace, Mesh};

    fn graded(dom: Arc<Domain>, seed: u64, steps: usize) -> Arc<Mesh> {
        let mut m = Mesh::initial(dom);
        let mut x = seed;
        for _ in 0..steps {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let e = m.leaf((x >> 33) as usize % m.len());
            m = m.refine_conforming(&[e]);
        }
        Arc::new(m)
    }

    fn random_functional(dom: Arc<Domain>, seed: u64) -> PwFunctional {
        let m = graded(dom.clone(), seed, 25);
        let s = Arc::new(FeSpace::new(m));
        let vals = (0..s.dim()).map(|i| ((i as u64 * 31 + seed * 17) % 13) as f64 / 6.0 - 1.0).collect();
        let v = FeFunction::new(s, vals);
        let mut xi = PwFunctional::unit_source(dom.clone());
        let cf = CoeffField::new(dom.clone(), 0.1, 1.0).unwrap();
        let ix = cf.indices_at(cf.first_level() + 1);
        let mu = ix[seed as usize % ix.len()];
        apply_a(&ThetaSource::Pieces(&cf.pieces(mu)), &v, -0.7, &mut xi);
        apply_a(&ThetaSource::Constant, &v, -1.0, &mut xi);
        crate::functional::sum(&[&xi])
    }

    #[test]
    fn zero_functional_stops_at_level_zero() {
        for dom in [Domain::interval(), Domain::l_shape()] {
            let dom = Arc::new(dom);
            let frame = Frame::new(dom.clone());
            let ind = dual_norm_indicators(&frame, &PwFunctional::zero(dom), 2);
            assert_eq!(ind.len(), frame.roots().len());
            assert!(ind.entries.iter().all(|x| x.0.level == 0 && x.1 == 0.0));
        }
    }

    #[test]
    fn initial_mesh_data_reaches_two_j() {
        // Data on the roots: elements and edges are on level 0, so the levels
        // kept are 0..=2J and every index there is present.
        for dom in [Domain::interval(), Domain::l_shape()] {
            let dom = Arc::new(dom);
            let frame = Frame::new(dom.clone());
            let ind = dual_norm_indicators(&frame, &PwFunctional::unit_source(dom.clone()), 1);
            let mut want: Vec<FrameIndex> = (0..=2).flat_map(|l| frame.level_indices(l)).collect();
            want.sort_unstable();
            let got: Vec<FrameIndex> = ind.entries.iter().map(|x| x.0).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn coefficients_match_direct_quadrature() {
        for (dom, seeds) in [(Domain::interval(), 0..6), (Domain::l_shape(), 0..3)] {
            let dom = Arc::new(dom);
            let frame = Frame::new(dom.clone());
            for seed in seeds {
                let xi = random_functional(dom.clone(), seed);
                let car = Carrier::new(&xi);
                let ind = dual_norm_indicators(&frame, &xi, 1);
                let scale = ind.norm();
                for (lam, c) in &ind.entries {
                    let want = frame.coefficient(&car, *lam);
                    assert!((c - want).abs() <= 1e-12 * scale.max(1.0), "{lam}: {c} vs {want}");
                }
            }
        }
    }

    #[test]
    fn closed_under_parent() {
        let dom = Arc::new(Domain::l_shape());
        let frame = Frame::new(dom.clone());
        let ind = dual_norm_indicators(&frame, &random_functional(dom, 4), 1);
        for (lam, _) in &ind.entries {
            if let Some(p) = frame.parent(*lam) {
                assert!(ind.get(p).is_some(), "{lam} has no parent {p}");
            }
        }
    }

    #[test]
    fn covers_complement_of_theta_j() {
        // Every index with nonzero coefficient outside Θ_J(T) is returned.
        let dom = Arc::new(Domain::interval());
        let frame = Frame::new(dom.clone());
        for seed in 0..4 {
            let xi = random_functional(dom.clone(), seed);
            let car = Carrier::new(&xi);
            let leaves: Vec<(Elem, [Pt; 3])> = car.leaves().map(|(e, n)| (e, n.verts)).collect();
            let t = Mesh::from_leaves(dom.clone(), leaves);
            let ind = dual_norm_indicators(&frame, &xi, 1);
            for l in 0..=ind.max_level() + 2 {
                for lam in frame.level_indices(l) {
                    if !frame.in_theta_j(&t, 1, lam) && frame.coefficient(&car, lam).abs() > 1e-14 {
                        assert!(ind.get(lam).is_some(), "{lam} missing");
                    }
                }
            }
        }
    }

    #[test]
    fn bound_formula() {
        assert_eq!(bound(0.5, 0.0, 2.0), 2.5);
        let z: f64 = 0.6;
        assert!((bound(0.0, z, 1.0) - (1.0 + 0.75)).abs() < 1e-15);
    }
}
