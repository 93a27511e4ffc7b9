//! Adaptive operator compression: which Legendre blocks of v are multiplied by
//! which truncation B_ℓ, and assembly of the resulting functionals per ν.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::coeff_field::{CoeffField, LevelIndex, ThetaPiece};
use crate::error::{Error, Result};
use crate::mesh::Domain;
use crate::functional::{apply_a, sum, PwFunctional, ThetaSource};
use crate::stochastic::{beta, best_blocks, MultiIndex, SgFunction};

/// Constants entering the compression rule.
#[derive(Clone, Copy, Debug)]
pub struct ApplyParams {
    /// Certified bound on ‖B‖, used for the semidiscrete tail δ.
    pub norm_b: f64,
    /// The constant multiplying the level formula (a tuning knob).
    pub cb_param: f64,
    pub alpha: f64,
    pub dim: usize,
    pub ell_cap: u32,
}

/// One block d_i = (P_{F_i} − P_{F_{i−1}}) v with its truncation level.
#[derive(Clone, Debug)]
pub struct ApplyBlock {
    pub indices: Vec<MultiIndex>,
    pub norm: f64,
    /// #F_i.
    pub n_cum: usize,
    pub level: u32,
}

#[derive(Clone, Debug, Default)]
pub struct ApplyPlan {
    pub blocks: Vec<ApplyBlock>,
    pub eta: f64,
    /// ‖B‖ ‖v − P_{F_I} v‖.
    pub delta: f64,
    /// Some ℓ_i was clamped at the cap; the tolerance is then not certified.
    pub capped: bool,
}

impl ApplyPlan {
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Truncation level applied to each source block ν′.
    pub fn levels(&self) -> BTreeMap<MultiIndex, u32> {
        let mut m = BTreeMap::new();
        for b in &self.blocks {
            for nu in &b.indices {
                m.insert(nu.clone(), b.level);
            }
        }
        m
    }

    /// Σ_{ν′} #{μ : |μ| < ℓ_{ν′}} + 1: number of A_μ applications requested.
    pub fn interactions(&self, cf: &CoeffField) -> usize {
        let per_level: Vec<usize> = (0..self.blocks.iter().map(|b| b.level).max().unwrap_or(0)).map(|l| cf.indices_at(l).len()).collect();
        self.blocks
            .iter()
            .map(|b| b.indices.len() * (1 + per_level[..b.level as usize].iter().sum::<usize>()))
            .sum()
    }
}

/// Splits v into nested quasi-best blocks and chooses a truncation level for each
/// so that the compressed operator g satisfies ‖Bv − g‖ ≤ η.
pub fn apply(v: &SgFunction, eta: f64, p: &ApplyParams) -> Result<ApplyPlan> {
    if !(eta > 0.0) {
        return Err(Error::Config(format!("apply tolerance must be positive, got {eta}")));
    }
    let keys: Vec<&MultiIndex> = v.blocks.keys().collect();
    let norms: Vec<f64> = keys.iter().map(|k| v.block_norm(k)).collect();
    let total: f64 = norms.iter().map(|x| x * x).sum::<f64>().sqrt();
    if p.norm_b * total <= eta {
        return Ok(ApplyPlan { eta, ..Default::default() });
    }
    let sel = best_blocks(&norms);
    let sq: f64 = norms.iter().map(|x| x * x).sum();
    // I minimal with ‖B‖ ‖v − P_{F_I} v‖ ≤ η/2.
    let mut cut = sel.len() - 1;
    let mut delta = 0.0;
    for (i, s) in sel.iter().enumerate() {
        let kept: f64 = s.iter().map(|&j| norms[j] * norms[j]).sum();
        let d = p.norm_b * (sq - kept).max(0.0).sqrt();
        if d <= eta / 2.0 {
            cut = i;
            delta = d;
            break;
        }
    }
    let dd = p.dim as f64;
    let a = p.alpha;
    let mut blocks = Vec::with_capacity(cut + 1);
    let mut prev: Vec<usize> = Vec::new();
    for s in &sel[..=cut] {
        let new: Vec<usize> = s.iter().copied().filter(|j| !prev.contains(j)).collect();
        let norm = new.iter().map(|&j| norms[j] * norms[j]).sum::<f64>().sqrt();
        blocks.push(ApplyBlock { indices: new.iter().map(|&j| keys[j].clone()).collect(), norm, n_cum: s.len(), level: 0 });
        prev = s.clone();
    }
    let weight_sum: f64 = blocks.iter().map(|b| b.norm.powf(dd / (a + dd)) * (b.n_cum as f64).powf(a / (a + dd))).sum();
    let mut capped = false;
    for b in blocks.iter_mut() {
        if b.norm == 0.0 {
            continue;
        }
        let arg = p.cb_param / (eta - delta) * (b.norm / b.n_cum as f64).powf(a / (a + dd)) * weight_sum;
        let l = (arg.log2() / a).ceil();
        b.level = if l <= 0.0 {
            0
        } else if l > p.ell_cap as f64 {
            capped = true;
            p.ell_cap
        } else {
            l as u32
        };
    }
    if capped {
        log::warn!("compression level capped at {}; the Apply tolerance {eta:.3e} is not certified", p.ell_cap);
    }
    blocks.retain(|b| !b.indices.is_empty());
    Ok(ApplyPlan { blocks, eta, delta, capped })
}

/// Lazily built θ pieces for every μ below a level.
pub struct ThetaCache {
    pub by_level: Vec<Vec<(LevelIndex, Vec<ThetaPiece>)>>,
}

impl ThetaCache {
    pub fn new(cf: &CoeffField, below: u32) -> ThetaCache {
        ThetaCache { by_level: ThetaCache::new_range(cf, 0, below) }
    }

    fn new_range(cf: &CoeffField, from: u32, below: u32) -> Vec<Vec<(LevelIndex, Vec<ThetaPiece>)>> {
        (from..below)
            .map(|l| {
                let mut v: Vec<_> = cf.indices_at(l).into_par_iter().map(|mu| (mu, cf.pieces(mu))).collect();
                v.sort_by_key(|x| x.0);
                v
            })
            .collect()
    }

    /// Extends the cache to all μ with |μ| < `below`.
    pub fn ensure(&mut self, cf: &CoeffField, below: u32) {
        let have = self.levels();
        if below > have {
            let more = ThetaCache::new_range(cf, have, below);
            self.by_level.extend(more);
        }
    }

    pub fn levels(&self) -> u32 {
        self.by_level.len() as u32
    }

    pub fn get(&self, mu: LevelIndex) -> Option<&[ThetaPiece]> {
        let lv = self.by_level.get(mu.level as usize)?;
        lv.binary_search_by(|x| x.0.cmp(&mu)).ok().map(|i| lv[i].1.as_slice())
    }
}

/// The blocks [Σ_{|μ|<ℓ_{ν′}} M_μ ⊗ A_μ v]_ν for all ν reached, each as a
/// (not yet canonical) functional; `levels` gives ℓ_{ν′} per source block.
pub fn operator_blocks(
    v: &SgFunction,
    levels: &BTreeMap<MultiIndex, u32>,
    cf: &CoeffField,
    cache: &ThetaCache,
) -> BTreeMap<MultiIndex, PwFunctional> {
    let dom = cf.domain().clone();
    let out: Mutex<BTreeMap<MultiIndex, PwFunctional>> = Mutex::new(BTreeMap::new());
    let work: Vec<(&MultiIndex, u32)> = levels.iter().map(|(k, l)| (k, *l)).collect();
    work.par_iter().for_each(|(nu_p, l)| {
        let Some(vb) = v.blocks.get(*nu_p) else { return };
        if vb.values.iter().all(|x| *x == 0.0) {
            return;
        }
        let mut local: BTreeMap<MultiIndex, PwFunctional> = BTreeMap::new();
        fn target<'m>(m: &'m mut BTreeMap<MultiIndex, PwFunctional>, dom: &Arc<Domain>, nu: MultiIndex) -> &'m mut PwFunctional {
            m.entry(nu).or_insert_with(|| PwFunctional::zero(dom.clone()))
        }
        apply_a(&ThetaSource::Constant, vb, 1.0, target(&mut local, &dom, (*nu_p).clone()));
        assert!(*l <= cache.levels(), "theta cache too shallow");
        for lev in 0..*l {
            for (mu, pieces) in &cache.by_level[lev as usize] {
                let k = nu_p.get(*mu);
                let mut a = PwFunctional::zero(dom.clone());
                apply_a(&ThetaSource::Pieces(pieces), vb, 1.0, &mut a);
                if a.is_empty() {
                    continue;
                }
                // (M_μ)_{ν,ν′} with ν = ν′ ± e_μ.
                target(&mut local, &dom, nu_p.shifted(*mu, true).unwrap()).add_scaled(&a, beta(k + 1).sqrt());
                if k > 0 {
                    target(&mut local, &dom, nu_p.shifted(*mu, false).unwrap()).add_scaled(&a, beta(k).sqrt());
                }
            }
        }
        let mut g = out.lock().unwrap();
        for (nu, f) in local {
            match g.get_mut(&nu) {
                Some(acc) => acc.add_scaled(&f, 1.0),
                None => {
                    g.insert(nu, f);
                }
            }
        }
    });
    out.into_inner().unwrap()
}

/// Residual blocks [r]_ν = δ_{0,ν} f − [g]_ν, each canonical.
pub fn residual_blocks(
    f: &PwFunctional,
    v: &SgFunction,
    levels: &BTreeMap<MultiIndex, u32>,
    cf: &CoeffField,
    cache: &ThetaCache,
) -> BTreeMap<MultiIndex, PwFunctional> {
    let mut g = operator_blocks(v, levels, cf, cache);
    g.entry(MultiIndex::zero()).or_insert_with(|| PwFunctional::zero(f.domain().clone()));
    let items: Vec<(MultiIndex, PwFunctional)> = g.into_iter().collect();
    items
        .into_par_iter()
        .map(|(nu, mut gnu)| {
            let mut neg = PwFunctional::zero(f.domain().clone());
            std::mem::swap(&mut neg, &mut gnu);
            let mut r = PwFunctional::zero(f.domain().clone());
            if nu.is_zero() {
                r.add_scaled(f, 1.0);
            }
            r.add_scaled(&neg, -1.0);
            (nu, sum(&[&r]))
        })
        .collect()
}

/// Smallest ℓ with the certified tail C_2 2^{−αℓ}/(1 − 2^{−α}) ≤ tol.
pub fn level_for_tail(cf: &CoeffField, tol: f64) -> u32 {
    let q = (-cf.alpha).exp2();
    let c2 = cf.ellipticity().c2;
    let mut l = 0;
    while c2 * q.powi(l as i32) / (1.0 - q) > tol && l < 60 {
        l += 1;
    }
    l
}

/// ‖B − B_ℓ‖ bound.
pub fn tail_bound(cf: &CoeffField, l: u32) -> f64 {
    let q = (-cf.alpha).exp2();
    cf.ellipticity().c2 * q.powi(l as i32) / (1.0 - q)
}
