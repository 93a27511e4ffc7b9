use rustc_hash::{FxHashMap, FxHashSet};

use super::{rel, ElemTerms, Poly, PwFunctional};
use crate::coeff_field::ThetaPiece;
use crate::mesh::{bisect_verts, edge_children, orient, Elem, FeFunction, Pt, Status};

/// The coefficient multiplying a coupling block.
pub enum ThetaSource<'a> {
    /// θ ≡ 1, the mean field.
    Constant,
    /// θ given by polynomial pieces on elements of one generation.
    Pieces(&'a [ThetaPiece]),
}

/// Accumulates `s · A_θ v` into `out`, where ⟨A_θ v, w⟩ = ∫ θ ∇v·∇w.
///
/// Integration by parts on each leaf of v splits this into volume terms −∇θ·∇v
/// and edge terms θ [∇v·n]; θ is continuous, so edges on the boundary of its
/// support carry nothing. The result lives on the finer of the two trees
/// locally and is exact.
pub fn apply_a(theta: &ThetaSource<'_>, v: &FeFunction, s: f64, out: &mut PwFunctional) {
    let mesh = v.mesh();
    let dom = mesh.domain().clone();
    let dim = dom.dim();
    let roots;
    let pieces: &[ThetaPiece] = match theta {
        ThetaSource::Constant => {
            roots = dom.root_elems().map(|e| (e, dom.verts(e), Poly::constant(1.0))).collect::<Vec<_>>();
            &roots
        }
        ThetaSource::Pieces(p) => p,
    };
    let Some(gen) = pieces.first().map(|p| p.0.gen()) else { return };
    debug_assert!(pieces.iter().all(|p| p.0.gen() == gen));
    let by_elem: FxHashMap<Elem, usize> = pieces.iter().enumerate().map(|(i, p)| (p.0, i)).collect();

    let vol_term = |th: &Poly, g: [f64; 2]| -> Poly {
        let (px, py) = th.grad();
        let mut t = px.scale(-g[0]);
        t.add_assign_scaled(&py, -g[1]);
        t
    };

    let mut relevant: FxHashSet<u32> = FxHashSet::default();
    let mut buf = Vec::new();
    for (c, cv, th) in pieces {
        match mesh.status(*c) {
            Status::Within(l) => {
                relevant.insert(l);
                let t = ElemTerms { vol: vol_term(th, v.grad(l as usize)), ..Default::default() };
                out.add(*c, cv, &t, s);
            }
            Status::Internal => {
                buf.clear();
                mesh.leaves_in(*c, cv, &mut buf);
                for &l in &buf {
                    relevant.insert(l);
                    let lv = mesh.leaf_verts(l as usize);
                    let d = rel(cv[0], lv[0]);
                    let t = ElemTerms { vol: vol_term(th, v.grad(l as usize)).shifted(d[0], d[1]), ..Default::default() };
                    out.add(mesh.leaf(l as usize), lv, &t, s);
                }
            }
        }
    }

    let nk = if dim == 1 { 2 } else { 3 };
    let mut rel_sorted: Vec<u32> = relevant.iter().copied().collect();
    rel_sorted.sort_unstable();
    for &l in &rel_sorted {
        let li = l as usize;
        let le = mesh.leaf(li);
        let lv = *mesh.leaf_verts(li);
        let gl = v.grad(li);
        for k in 0..nk {
            let Some(n) = v.space.neighbour(li, k) else { continue };
            if (n as u32) < l && relevant.contains(&(n as u32)) {
                continue;
            }
            if !relevant.contains(&(n as u32)) {
                continue;
            }
            let gn = v.grad(n);
            let nrm = outward_normal(&lv, k, dim);
            let jump = (gl[0] - gn[0]) * nrm[0] + (gl[1] - gn[1]) * nrm[1];
            if jump == 0.0 {
                continue;
            }
            if le.gen() >= gen {
                let Some(&pi) = by_elem.get(&le.ancestor_at(gen)) else { continue };
                let (_, cv, th) = &pieces[pi];
                let mut t = ElemTerms::default();
                t.edge[k] = edge_poly(th, cv[0], &lv, k, dim).scale(jump);
                out.add(le, &lv, &t, s);
            } else {
                // Follow the edge down to the generation of the pieces.
                let mut stack = vec![(le, lv, k)];
                while let Some((e, ev, ek)) = stack.pop() {
                    if e.gen() == gen {
                        if let Some(&pi) = by_elem.get(&e) {
                            let th = &pieces[pi].2;
                            let mut t = ElemTerms::default();
                            t.edge[ek] = edge_poly(th, ev[0], &ev, ek, dim).scale(jump);
                            out.add(e, &ev, &t, s);
                        }
                        continue;
                    }
                    let cv = bisect_verts(&ev, dim);
                    for &(c, ck) in edge_children(ek, dim) {
                        stack.push((e.child(c), cv[c as usize], ck));
                    }
                }
            }
        }
    }
}

/// θ restricted to local edge k of an element with vertices `v`, anchored at v0.
/// In d=1 this is the point value at endpoint k.
fn edge_poly(th: &Poly, anchor: Pt, v: &[Pt; 3], k: usize, dim: usize) -> Poly {
    if dim == 1 {
        let d = rel(anchor, v[k]);
        return Poly::constant(th.eval(d[0], d[1]));
    }
    let d = rel(anchor, v[0]);
    th.shifted(d[0], d[1])
}

/// Unit outward normal of local edge k (d=1: endpoint k).
fn outward_normal(v: &[Pt; 3], k: usize, dim: usize) -> [f64; 2] {
    if dim == 1 {
        return if k == 0 { [-1.0, 0.0] } else { [1.0, 0.0] };
    }
    let (a, b, c) = (v[k], v[(k + 1) % 3], v[(k + 2) % 3]);
    let t = rel(a, b);
    let len = (t[0] * t[0] + t[1] * t[1]).sqrt();
    let n = [t[1] / len, -t[0] / len];
    // (t.y, −t.x) points right of a→b; outward iff c lies to the left.
    if orient(a, b, c) > 0 {
        n
    } else {
        [-n[0], -n[1]]
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::coeff_field::{CoeffField, LevelIndex};
    use crate::mesh::{h1_inner, Domain, FeSpace, Mesh};

    fn fe(m: Arc<Mesh>, seed: u64) -> FeFunction {
        let s = Arc::new(FeSpace::new(m));
        let vals = (0..s.dim()).map(|i| ((((i as u64 + 3) * (seed * 7919 + 13)) % 997) as f64) / 498.0 - 1.0).collect();
        FeFunction::new(s, vals)
    }

    /// ∫ θ ∇v·∇w by quadrature on the overlay of both meshes with θ's carrier.
    fn oracle(cf: &CoeffField, mu: Option<LevelIndex>, v: &FeFunction, w: &FeFunction) -> f64 {
        let dom = v.mesh().domain().clone();
        let dim = dom.dim();
        let carrier = match mu {
            Some(m) => Mesh::uniform_gen(dom.clone(), cf.carrier_gen(m)),
            None => Mesh::initial(dom.clone()),
        };
        let o = v.mesh().overlay(w.mesh()).unwrap().overlay(&carrier).unwrap();
        let mut s = 0.0;
        for (e, verts) in o.iter() {
            let Status::Within(iv) = v.mesh().status(e) else { unreachable!() };
            let Status::Within(iw) = w.mesh().status(e) else { unreachable!() };
            let (gv, gw) = (v.grad(iv as usize), w.grad(iw as usize));
            let dot = gv[0] * gw[0] + gv[1] * gw[1];
            let p = verts.map(|q| q.to_f64());
            // Degree-2 exact: edge midpoints (triangle) or Simpson (interval).
            let th = |x: [f64; 2]| mu.map(|m| cf.theta_eval(m, x)).unwrap_or(1.0);
            let area = dom.measure(verts);
            let avg = if dim == 1 {
                let m = [(p[0][0] + p[1][0]) / 2.0, 0.0];
                (th(p[0]) + 4.0 * th(m) + th(p[1])) / 6.0
            } else {
                let mid = |a: [f64; 2], b: [f64; 2]| [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
                (th(mid(p[0], p[1])) + th(mid(p[1], p[2])) + th(mid(p[2], p[0]))) / 3.0
            };
            s += area * avg * dot;
        }
        s
    }

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

    fn check(dom: Arc<Domain>, mus: &[Option<LevelIndex>]) {
        let cf = CoeffField::new(dom.clone(), 0.1, 2.0).unwrap();
        for seed in 0..4 {
            let mv = graded(dom.clone(), seed, 40);
            let mw = graded(dom.clone(), seed + 100, 40);
            let v = fe(mv, seed);
            let w = fe(mw, seed + 7);
            for &mu in mus {
                let pieces;
                let src = match mu {
                    Some(m) => {
                        pieces = cf.pieces(m);
                        ThetaSource::Pieces(&pieces)
                    }
                    None => ThetaSource::Constant,
                };
                let mut out = PwFunctional::zero(dom.clone());
                apply_a(&src, &v, 1.0, &mut out);
                let got = out.action(&w);
                let want = oracle(&cf, mu, &v, &w);
                assert!((got - want).abs() < 1e-10 * (1.0 + want.abs()), "{mu:?}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn mean_field_matches_stiffness() {
        let dom = Arc::new(Domain::l_shape());
        let m = graded(dom.clone(), 3, 30);
        let v = fe(m.clone(), 1);
        let w = fe(m, 2);
        let mut out = PwFunctional::zero(dom);
        apply_a(&ThetaSource::Constant, &v, 1.0, &mut out);
        let want = h1_inner(&v, &w);
        assert!((out.action(&w) - want).abs() < 1e-11 * (1.0 + want.abs()));
    }

    #[test]
    fn interval_matches_quadrature() {
        let dom = Arc::new(Domain::interval());
        let mus = [None, Some(LevelIndex::new1(0, 0)), Some(LevelIndex::new1(2, 1)), Some(LevelIndex::new1(4, 9))];
        check(dom, &mus);
    }

    #[test]
    fn lshape_matches_quadrature() {
        let dom = Arc::new(Domain::l_shape());
        let cf = CoeffField::new(dom.clone(), 0.1, 2.0).unwrap();
        let mut mus = vec![None];
        mus.extend(cf.indices_at(1).into_iter().map(Some));
        mus.extend(cf.indices_at(2).into_iter().step_by(3).map(Some));
        mus.extend(cf.indices_at(3).into_iter().step_by(11).map(Some));
        check(dom, &mus);
    }
}
