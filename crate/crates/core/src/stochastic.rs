//! Legendre chaos: multi-indices, recurrence coefficients, the tridiagonal
//! coupling between chaos coefficients, and stochastic Galerkin functions.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Serialize, Serializer};

use crate::coeff_field::LevelIndex;
use crate::mesh::{FeFunction, FeSpace, Mesh};

/// β_0 = 0, β_k = 1/(4 − k^{-2}): y L_k = √β_{k+1} L_{k+1} + √β_k L_{k−1} for
/// orthonormal Legendre polynomials under the uniform measure on [−1, 1].
pub fn beta(k: u32) -> f64 {
    if k == 0 {
        0.0
    } else {
        let k = k as f64;
        1.0 / (4.0 - 1.0 / (k * k))
    }
}

/// Finitely supported ν: M → ℕ, entries sorted by index, all positive.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default)]
pub struct MultiIndex(Vec<(LevelIndex, u32)>);

impl MultiIndex {
    pub fn zero() -> Self {
        MultiIndex(Vec::new())
    }

    pub fn from_entries(mut e: Vec<(LevelIndex, u32)>) -> Self {
        e.retain(|x| x.1 > 0);
        e.sort_by_key(|x| x.0);
        for w in e.windows(2) {
            assert!(w[0].0 != w[1].0, "duplicate coordinate in multi-index");
        }
        MultiIndex(e)
    }

    pub fn unit(mu: LevelIndex) -> Self {
        MultiIndex(vec![(mu, 1)])
    }

    pub fn entries(&self) -> &[(LevelIndex, u32)] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, mu: LevelIndex) -> u32 {
        self.0.binary_search_by_key(&mu, |x| x.0).map(|i| self.0[i].1).unwrap_or(0)
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|x| x.1).sum()
    }

    /// ν + s e_μ, or None when a coordinate would become negative.
    pub fn shifted(&self, mu: LevelIndex, up: bool) -> Option<MultiIndex> {
        let mut e = self.0.clone();
        match e.binary_search_by_key(&mu, |x| x.0) {
            Ok(i) => {
                if up {
                    e[i].1 += 1;
                } else if e[i].1 == 1 {
                    e.remove(i);
                } else {
                    e[i].1 -= 1;
                }
            }
            Err(i) => {
                if !up {
                    return None;
                }
                e.insert(i, (mu, 1));
            }
        }
        Some(MultiIndex(e))
    }
}

/// Graded lexicographic: total degree first, then entries.
impl Ord for MultiIndex {
    fn cmp(&self, o: &Self) -> Ordering {
        self.degree().cmp(&o.degree()).then_with(|| self.0.cmp(&o.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl std::fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self.0.iter().map(|(m, v)| format!("{m}^{v}")).collect();
        write!(f, "{}", parts.join("+"))
    }
}

impl Serialize for MultiIndex {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Entry (M_μ)_{ν,ν'}; `None` stands for μ = 0, where M_0 is the identity.
pub fn coupling(mu: Option<LevelIndex>, nu: &MultiIndex, nu_p: &MultiIndex) -> f64 {
    let Some(mu) = mu else {
        return if nu == nu_p { 1.0 } else { 0.0 };
    };
    let k = nu.get(mu);
    if nu.shifted(mu, true).as_ref() == Some(nu_p) {
        return beta(k + 1).sqrt();
    }
    if k > 0 && nu.shifted(mu, false).as_ref() == Some(nu_p) {
        return beta(k).sqrt();
    }
    0.0
}

/// Nested quasi-best selections F_0 ⊆ F_1 ⊆ … with #F_i ≤ 2^i from block norms.
/// Norms are binned by ⌊log2⌋ and taken bin by bin, so each F_i is within a
/// factor 2 (entrywise) of an exact best selection; ties keep input order.
pub fn best_blocks(norms: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..norms.len()).filter(|&i| norms[i] > 0.0).collect();
    let bin = |v: f64| v.log2().floor() as i64;
    // Counting sort on bins keeps this linear up to the number of distinct bins.
    let mut bins: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for &i in &order {
        bins.entry(bin(norms[i])).or_default().push(i);
    }
    order.clear();
    for (_, v) in bins.into_iter().rev() {
        order.extend(v);
    }
    let n = order.len();
    let mut out = Vec::new();
    let mut i = 0u32;
    loop {
        let take = (1usize << i).min(n);
        out.push(order[..take].to_vec());
        if take == n {
            break;
        }
        i += 1;
    }
    out
}

/// Stochastic Galerkin function: one finite element function per active ν.
#[derive(Clone, Debug, Default)]
pub struct SgFunction {
    pub blocks: BTreeMap<MultiIndex, FeFunction>,
}

impl SgFunction {
    pub fn new() -> Self {
        SgFunction::default()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block_norm(&self, nu: &MultiIndex) -> f64 {
        self.blocks.get(nu).map(|f| f.energy().sqrt()).unwrap_or(0.0)
    }

    /// ‖v‖_V = (Σ_ν ‖v_ν‖²)^{1/2} by orthonormality of the chaos.
    pub fn norm(&self) -> f64 {
        self.blocks.values().map(|f| f.energy()).sum::<f64>().sqrt()
    }

    /// N(𝕋) = Σ_ν #T_ν.
    pub fn num_elements(&self) -> usize {
        self.blocks.values().map(|f| f.mesh().len()).sum()
    }

    /// Σ_ν dim V(T_ν).
    pub fn num_dofs(&self) -> usize {
        self.blocks.values().map(|f| f.space.dim()).sum()
    }

    pub fn meshes(&self) -> BTreeMap<MultiIndex, Arc<Mesh>> {
        self.blocks.iter().map(|(k, f)| (k.clone(), f.mesh().clone())).collect()
    }

    pub fn spaces(&self) -> BTreeMap<MultiIndex, Arc<FeSpace>> {
        self.blocks.iter().map(|(k, f)| (k.clone(), f.space.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mu(k: u32) -> LevelIndex {
        LevelIndex::new1(2, k)
    }

    #[test]
    fn beta_values() {
        assert_eq!(beta(0), 0.0);
        assert!((beta(1) - 1.0 / 3.0).abs() < 1e-15);
        // Decreases towards the limit 1/4 from above.
        let mut prev = f64::INFINITY;
        for k in 1..200 {
            assert!(beta(k) < prev && beta(k) > 0.25);
            prev = beta(k);
        }
    }

    #[test]
    fn coupling_values() {
        let z = MultiIndex::zero();
        let e = MultiIndex::unit(mu(1));
        let e2 = e.shifted(mu(1), true).unwrap();
        assert!((coupling(Some(mu(1)), &z, &e) - 0.577_35).abs() < 1e-5);
        assert!((coupling(Some(mu(1)), &e, &e2) - 0.516_40).abs() < 1e-5);
        let other = MultiIndex::from_entries(vec![(mu(0), 1), (mu(1), 1)]);
        assert_eq!(coupling(Some(mu(1)), &z, &other), 0.0);
        assert_eq!(coupling(None, &e, &e), 1.0);
        assert_eq!(coupling(None, &e, &z), 0.0);
    }

    /// Orthonormal Legendre polynomial of degree k at y.
    fn legendre(k: u32, y: f64) -> f64 {
        let (mut p0, mut p1) = (1.0, y);
        if k == 0 {
            return 1.0;
        }
        for n in 1..k {
            let n = n as f64;
            let p2 = ((2.0 * n + 1.0) * y * p1 - n * p0) / (n + 1.0);
            p0 = p1;
            p1 = p2;
        }
        p1 * (2.0 * k as f64 + 1.0).sqrt()
    }

    #[test]
    fn coupling_matches_quadrature() {
        // 8-point Gauss–Legendre on [-1, 1], exact up to degree 15.
        let x = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
        let w = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
        let nodes: Vec<(f64, f64)> = x.iter().zip(w.iter()).flat_map(|(&x, &w)| [(x, w / 2.0), (-x, w / 2.0)]).collect();
        let coords = [mu(0), mu(1), mu(2)];
        let all: Vec<MultiIndex> = (0..4u32 * 4 * 4)
            .map(|i| MultiIndex::from_entries(vec![(coords[0], i % 4), (coords[1], (i / 4) % 4), (coords[2], i / 16)]))
            .filter(|m| m.degree() <= 3)
            .collect();
        for m in [coords[0], coords[1]] {
            let c = coords.iter().position(|&x| x == m).unwrap();
            for a in &all {
                for b in &all {
                    let mut q = 1.0;
                    for (ci, &cm) in coords.iter().enumerate() {
                        let (ka, kb) = (a.get(cm), b.get(cm));
                        let s: f64 = nodes
                            .iter()
                            .map(|&(y, w)| w * legendre(ka, y) * legendre(kb, y) * if ci == c { y } else { 1.0 })
                            .sum();
                        q *= s;
                    }
                    assert!((q - coupling(Some(m), a, b)).abs() < 1e-12, "{a} {b}");
                    assert_eq!(coupling(Some(m), a, b), coupling(Some(m), b, a));
                }
            }
        }
    }

    #[test]
    fn ordering_is_graded() {
        let a = MultiIndex::unit(mu(3));
        let b = MultiIndex::from_entries(vec![(mu(0), 1), (mu(1), 1)]);
        assert!(MultiIndex::zero() < a);
        assert!(a < b);
    }

    #[test]
    fn best_blocks_single() {
        let sel = best_blocks(&[2.0]);
        assert_eq!(sel, vec![vec![0]]);
    }

    #[test]
    fn best_blocks_within_sqrt2() {
        let norms = [0.5, 2.0, 4.0, 1.0];
        let sel = best_blocks(&norms);
        assert_eq!(sel[1].len(), 2);
        let tail = |s: &[usize]| -> f64 { (0..4).filter(|i| !s.contains(i)).map(|i| norms[i] * norms[i]).sum::<f64>().sqrt() };
        let mut sorted = norms.to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let exact: f64 = sorted[2..].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(tail(&sel[1]) <= 2f64.sqrt() * exact + 1e-15);
        for w in sel.windows(2) {
            assert!(w[0].iter().all(|i| w[1].contains(i)));
        }
    }

    #[test]
    fn best_blocks_equal_norms() {
        let sel = best_blocks(&[1.0; 5]);
        for (i, s) in sel.iter().enumerate() {
            assert!(s.len() <= 1 << i);
        }
        assert_eq!(sel.last().unwrap().len(), 5);
    }
}
