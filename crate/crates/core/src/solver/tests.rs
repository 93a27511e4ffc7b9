use super::*;
use crate::coeff_field::LevelIndex;
use crate::mesh::{Domain, FeFunction, MeshBuilder, Pt, Status};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Left end of the interval, re-entrant corner of the L-shape.
fn corner(dom: &Domain) -> Pt {
    if dom.dim() == 1 {
        Pt::new(0, 0)
    } else {
        Pt::dyadic(1, 1, 1)
    }
}

fn graded(dom: &Arc<Domain>, corner: Pt, gen: u32) -> Arc<Mesh> {
    assert!(!dom.locate(corner, 0).is_empty());
    let mut b = MeshBuilder::from_mesh(&Mesh::initial(dom.clone()));
    for (e, _) in dom.locate(corner, gen) {
        b.ensure(e);
    }
    Arc::new(b.finish())
}

/// Gradients of all nodal basis functions on every leaf, recomputed from
/// coordinates rather than through the FE space's cached data.
fn grads_by_leaf(s: &FeSpace) -> Vec<Vec<(usize, [f64; 2])>> {
    let m = s.mesh();
    (0..m.len())
        .map(|l| {
            let v = m.leaf_verts(l).map(|p| p.to_f64());
            let mut out = Vec::new();
            for (k, p) in v.iter().enumerate().take(m.dim() + 1) {
                let Some(i) = s.node_index(m.leaf_verts(l)[k]) else { continue };
                let g = if m.dim() == 1 {
                    let h = v[1][0] - v[0][0];
                    [if k == 0 { -1.0 / h } else { 1.0 / h }, 0.0]
                } else {
                    let (a, b) = (v[(k + 1) % 3], v[(k + 2) % 3]);
                    let det = (a[0] - p[0]) * (b[1] - p[1]) - (b[0] - p[0]) * (a[1] - p[1]);
                    [(a[1] - b[1]) / det, (b[0] - a[0]) / det]
                };
                out.push((i as usize, g));
            }
            out
        })
        .collect()
}

/// Dense ∫ w ∇φ_i·∇φ'_j by a centroid rule on a uniform mesh fine enough that
/// both meshes and w's pieces are unions of its elements and w is affine on each.
fn dense_form(a: &FeSpace, b: &FeSpace, w: impl Fn([f64; 2]) -> f64, fine_gen: u32) -> DMatrix<f64> {
    let dom = a.mesh().domain().clone();
    let fine = Mesh::uniform_gen(dom.clone(), fine_gen);
    let (ga, gb) = (grads_by_leaf(a), grads_by_leaf(b));
    let mut m = DMatrix::zeros(a.dim(), b.dim());
    for (e, v) in fine.iter() {
        let nv = dom.dim() + 1;
        let c = v[..nv].iter().fold([0.0, 0.0], |s, p| [s[0] + p.xf() / nv as f64, s[1] + p.yf() / nv as f64]);
        let wq = w(c) * dom.measure(v);
        let (Status::Within(la), Status::Within(lb)) = (a.mesh().status(e), b.mesh().status(e)) else {
            panic!("fine mesh is not finer than the inputs");
        };
        for &(i, gi) in &ga[la as usize] {
            for &(j, gj) in &gb[lb as usize] {
                m[(i, j)] += wq * (gi[0] * gj[0] + gi[1] * gj[1]);
            }
        }
    }
    m
}

fn dense_of(op: &BlockOperator) -> DMatrix<f64> {
    let n = op.dim();
    DMatrix::from_fn(n, n, |i, j| op.matrix.get(i, j))
}

fn prec_dense(apply: impl Fn(&[f64], &mut [f64]), n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut y = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        apply(&e, &mut y);
        e[j] = 0.0;
        for i in 0..n {
            m[(i, j)] = y[i];
        }
    }
    m
}

#[test]
fn mean_field_blocks_match_dense_stiffness() {
    for dom in [Arc::new(Domain::interval()), Arc::new(Domain::l_shape())] {
        let cf = CoeffField::new(dom.clone(), 0.1, 1.0).unwrap();
        let m1 = graded(&dom, corner(&dom), 6);
        let m2 = Arc::new(Mesh::uniform_gen(dom.clone(), 3));
        let mu = cf.indices_at(cf.first_level())[0];
        let spaces = BTreeMap::from([
            (MultiIndex::zero(), Arc::new(FeSpace::new(m1.clone()))),
            (MultiIndex::unit(mu), Arc::new(FeSpace::new(m2.clone()))),
        ]);
        let layout = Layout::new(&spaces);
        let mut cache = ThetaCache::new(&cf, 0);
        let op = BlockOperator::assemble(&cf, layout.clone(), 0, &mut cache);
        let b = dense_of(&op);
        for (k, s) in layout.spaces.iter().enumerate() {
            let want = dense_form(s, s, |_| 1.0, 7);
            let r = layout.range(k);
            let got = b.view((r.start, r.start), (r.len(), r.len()));
            assert!((got - &want).amax() <= 1e-12 * want.amax());
        }
        let (r0, r1) = (layout.range(0), layout.range(1));
        assert_eq!(b.view((r0.start, r1.start), (r0.len(), r1.len())).amax(), 0.0);
    }
}

#[test]
fn coupling_blocks_match_dense_overlay_quadrature() {
    for dom in [Arc::new(Domain::interval()), Arc::new(Domain::l_shape())] {
        let cf = CoeffField::new(dom.clone(), 0.3, 1.0).unwrap();
        let lvl = cf.first_level() + 1;
        let m1 = graded(&dom, corner(&dom), 5);
        let m2 = Arc::new(Mesh::uniform_gen(dom.clone(), 3));
        let (s1, s2) = (Arc::new(FeSpace::new(m1)), Arc::new(FeSpace::new(m2)));
        let mut cache = ThetaCache::new(&cf, lvl + 1);
        for mu in cf.indices_at(lvl).into_iter().step_by(3) {
            let mut t = Vec::new();
            coupling_triplets(cache.get(mu).unwrap(), &s1, &s2, &mut t);
            let mut got = DMatrix::zeros(s1.dim(), s2.dim());
            for (i, j, v) in t {
                got[(i as usize, j as usize)] += v;
            }
            let want = dense_form(&s1, &s2, |x| cf.theta_eval(mu, x), 7);
            assert!((&got - &want).amax() <= 1e-12 * want.amax().max(1e-300), "{mu}");
        }
        cache.ensure(&cf, lvl + 1);
    }
}

fn random_family(cf: &CoeffField, rng: &mut ChaCha8Rng) -> BTreeMap<MultiIndex, Arc<FeSpace>> {
    let dom = cf.domain().clone();
    let l0 = cf.indices_at(cf.first_level());
    let l1 = cf.indices_at(cf.first_level() + 1);
    let mu = l0[rng.gen_range(0..l0.len())];
    let nu = l1[rng.gen_range(0..l1.len())];
    let keys = [
        MultiIndex::zero(),
        MultiIndex::unit(mu),
        MultiIndex::unit(nu),
        MultiIndex::from_entries(vec![(mu, 2)]),
        MultiIndex::from_entries(vec![(mu, 1), (nu, 1)]),
    ];
    keys.into_iter()
        .map(|k| {
            let x = rng.gen_range(0..=4) as i64;
            let corner = Pt::dyadic(x, if dom.dim() == 1 { 0 } else { rng.gen_range(0..=2) }, 2);
            let corner = if dom.on_boundary(corner) || dom.dim() == 1 { corner } else { self::corner(&dom) };
            let m = graded(&dom, corner, rng.gen_range(2..7));
            (k, Arc::new(FeSpace::new(m)))
        })
        .collect()
}

#[test]
fn truncated_operator_is_symmetric_and_coercive() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for dom in [Arc::new(Domain::interval()), Arc::new(Domain::l_shape())] {
        let cf = CoeffField::new(dom.clone(), 0.4, 1.0).unwrap();
        let mut cache = ThetaCache::new(&cf, 0);
        for ell in [1, 3] {
            let layout = Layout::new(&random_family(&cf, &mut rng));
            let op = BlockOperator::assemble(&cf, layout, ell, &mut cache);
            let n = op.dim();
            let (mut bu, mut bv) = (vec![0.0; n], vec![0.0; n]);
            let lower = cf.ellipticity().c_b - crate::apply_compress::tail_bound(&cf, ell);
            for _ in 0..20 {
                let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                op.apply(&u, &mut bu);
                op.apply(&v, &mut bv);
                let (a, b) = (dot(&bu, &v), dot(&bv, &u));
                assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()));
                // ‖u‖²_V is the sum of the block Dirichlet energies.
                let fu = op.layout.unflatten(&u);
                assert!(dot(&bu, &u) >= lower * fu.norm().powi(2));
            }
        }
    }
}

#[test]
fn one_level_bpx_is_jacobi() {
    let dom = Arc::new(Domain::l_shape());
    let s = Arc::new(FeSpace::new(Arc::new(Mesh::initial(dom))));
    let bpx = Bpx::new(&s);
    assert_eq!(bpx.levels(), 1);
    let a = Csr::from_triplets(s.dim(), s.stiffness_triplets());
    let p = prec_dense(|g, x| bpx.apply(g, x), s.dim());
    let d = a.diag();
    let want = DMatrix::from_diagonal(&DVector::from_iterator(d.len(), d.iter().map(|x| 1.0 / x)));
    assert!((p - want).amax() <= 1e-14);
}

/// Extreme eigenvalues of P A, by a symmetric similarity transform.
fn spectrum(bpx: &Bpx, s: &FeSpace) -> (f64, f64) {
    let n = s.dim();
    let p = prec_dense(|g, x| bpx.apply(g, x), n);
    let a = DMatrix::from_fn(n, n, {
        let c = Csr::from_triplets(n, s.stiffness_triplets());
        move |i, j| c.get(i, j)
    });
    let l = p.clone().cholesky().expect("P is not positive definite").l();
    let m = l.transpose() * a * l;
    let ev = m.symmetric_eigenvalues();
    (ev.min(), ev.max())
}

#[test]
fn bpx_is_symmetric_and_spectrally_equivalent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for dom in [Arc::new(Domain::interval()), Arc::new(Domain::l_shape())] {
        let mut conds = Vec::new();
        let gens: &[u32] = if dom.dim() == 1 { &[4, 8, 12, 16] } else { &[6, 10, 14, 18] };
        for &g in gens {
            let s = FeSpace::new(graded(&dom, corner(&dom), g));
            let bpx = Bpx::new(&s);
            let n = s.dim();
            let (mut pg, mut ph) = (vec![0.0; n], vec![0.0; n]);
            for _ in 0..5 {
                let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let h: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                bpx.apply(&g, &mut pg);
                bpx.apply(&h, &mut ph);
                let (x, y) = (dot(&pg, &h), dot(&ph, &g));
                assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()));
            }
            let (lo, hi) = spectrum(&bpx, &s);
            assert!(lo > 0.0);
            conds.push(hi / lo);
        }
        // Condition numbers stay bounded under deep local refinement.
        let worst = conds.iter().cloned().fold(0.0, f64::max);
        assert!(worst < 40.0, "{conds:?}");
        assert!(conds.last().unwrap() / conds[1] < 1.5, "{conds:?}");
    }
}

fn thomas(sub: f64, diag: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let (mut c, mut d) = (vec![0.0; n], vec![0.0; n]);
    c[0] = sub / diag;
    d[0] = rhs[0] / diag;
    for i in 1..n {
        let m = diag - sub * c[i - 1];
        c[i] = sub / m;
        d[i] = (rhs[i] - sub * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

#[test]
fn deterministic_interval_matches_tridiagonal_solve() {
    let dom = Arc::new(Domain::interval());
    let cf = CoeffField::new(dom.clone(), 0.1, 1.0).unwrap();
    let g = 6;
    let meshes = BTreeMap::from([(MultiIndex::zero(), Arc::new(Mesh::uniform_gen(dom.clone(), g)))]);
    let r = BTreeMap::from([(MultiIndex::zero(), PwFunctional::unit_source(dom.clone()))]);
    let mut cache = ThetaCache::new(&cf, 0);
    let out = galerkin_solve(&cf, &meshes, &SgFunction::new(), &r, 0, 1e-13, 200, &mut cache).unwrap();
    let w = &out.w.blocks[&MultiIndex::zero()];
    let h = 1.0 / (1u64 << g) as f64;
    let n = w.values.len();
    let want = thomas(-1.0 / h, 2.0 / h, &vec![h; n]);
    for (i, p) in w.space.nodes().iter().enumerate() {
        assert!((w.values[i] - want[i]).abs() <= 1e-10);
        // P1 is nodally exact in one dimension.
        let x = p.xf();
        assert!((w.values[i] - x * (1.0 - x) / 2.0).abs() <= 1e-10);
    }
}

#[test]
fn zero_residual_needs_no_iterations() {
    let dom = Arc::new(Domain::l_shape());
    let cf = CoeffField::new(dom.clone(), 0.1, 1.0).unwrap();
    let m = Arc::new(Mesh::uniform_gen(dom.clone(), 2));
    let s = Arc::new(FeSpace::new(m.clone()));
    let vals: Vec<f64> = (0..s.dim()).map(|i| (i as f64).sin()).collect();
    let v = SgFunction { blocks: BTreeMap::from([(MultiIndex::zero(), FeFunction::new(s, vals.clone()))]) };
    let meshes = BTreeMap::from([(MultiIndex::zero(), m)]);
    let mut cache = ThetaCache::new(&cf, 0);
    let out = galerkin_solve(&cf, &meshes, &v, &BTreeMap::new(), 2, 1e-10, 10, &mut cache).unwrap();
    assert_eq!(out.stats.iterations, 0);
    assert_eq!(out.w.blocks[&MultiIndex::zero()].values, vals);
}

/// Dense B_ℓ from the independent quadrature, for F = {0, e_μ}.
fn dense_two_block(cf: &CoeffField, mu: LevelIndex, s0: &FeSpace, s1: &FeSpace) -> DMatrix<f64> {
    let a0 = dense_form(s0, s0, |_| 1.0, 8);
    let a1 = dense_form(s1, s1, |_| 1.0, 8);
    let k = dense_form(s0, s1, |x| cf.theta_eval(mu, x), 8) * crate::stochastic::beta(1).sqrt();
    let (n0, n1) = (s0.dim(), s1.dim());
    let mut b = DMatrix::zeros(n0 + n1, n0 + n1);
    b.view_mut((0, 0), (n0, n0)).copy_from(&a0);
    b.view_mut((n0, n0), (n1, n1)).copy_from(&a1);
    b.view_mut((0, n0), (n0, n1)).copy_from(&k);
    b.view_mut((n0, 0), (n1, n0)).copy_from(&k.transpose());
    b
}

#[test]
fn coupled_solve_matches_dense_block_solve() {
    let dom = Arc::new(Domain::l_shape());
    let cf = CoeffField::new(dom.clone(), 0.5, 1.0).unwrap();
    let mu = cf.indices_at(1)[1];
    let m0 = graded(&dom, corner(&dom), 7);
    let m1 = Arc::new(Mesh::uniform_gen(dom.clone(), 3));
    let meshes = BTreeMap::from([(MultiIndex::zero(), m0), (MultiIndex::unit(mu), m1)]);
    let r = BTreeMap::from([(MultiIndex::zero(), PwFunctional::unit_source(dom.clone()))]);
    let mut cache = ThetaCache::new(&cf, 0);
    let eps0 = 1e-9;
    let out = galerkin_solve(&cf, &meshes, &SgFunction::new(), &r, 2, eps0, 200, &mut cache).unwrap();
    let s0 = out.w.blocks[&MultiIndex::zero()].space.clone();
    let s1 = out.w.blocks[&MultiIndex::unit(mu)].space.clone();
    let b = dense_two_block(&cf, mu, &s0, &s1);
    let mut rhs = DVector::zeros(s0.dim() + s1.dim());
    for (i, x) in r[&MultiIndex::zero()].load(&s0).into_iter().enumerate() {
        rhs[i] = x;
    }
    let u = b.clone().lu().solve(&rhs).unwrap();
    let layout = Layout::new(&out.w.spaces());
    let w = DVector::from_vec(layout.flatten(&out.w));
    let e = &u - &w;
    let err = (e.transpose() * &b * &e)[(0, 0)].sqrt();
    // ‖e‖²_B ≤ ⟨P r, r⟩ / c_P, and c_P is far above 1/100 for these meshes.
    assert!(err <= 10.0 * eps0, "{err:e}");
}

#[test]
fn galerkin_orthogonality_and_pcg_monotonicity() {
    let dom = Arc::new(Domain::l_shape());
    let cf = CoeffField::new(dom.clone(), 0.5, 1.0).unwrap();
    let mu = cf.indices_at(1)[0];
    let (k0, k1) = (MultiIndex::zero(), MultiIndex::unit(mu));
    let fam = |g0: u32, g1: u32| -> BTreeMap<MultiIndex, Arc<FeSpace>> {
        BTreeMap::from([
            (k0.clone(), Arc::new(FeSpace::new(graded(&dom, corner(&dom), g0)))),
            (k1.clone(), Arc::new(FeSpace::new(Arc::new(Mesh::uniform_gen(dom.clone(), g1))))),
        ])
    };
    let (coarse, mid, fine) = (fam(4, 2), fam(6, 3), fam(8, 4));
    let f = PwFunctional::unit_source(dom.clone());
    let mut cache = ThetaCache::new(&cf, 2);
    let dense_solve = |sp: &BTreeMap<MultiIndex, Arc<FeSpace>>, cache: &mut ThetaCache| {
        let layout = Layout::new(sp);
        let mut rhs = vec![0.0; layout.dim()];
        rhs[layout.range(0)].copy_from_slice(&f.load(&layout.spaces[0]));
        let op = BlockOperator::assemble(&cf, layout, 2, cache);
        let b = dense_of(&op);
        let u = b.lu().solve(&DVector::from_vec(rhs)).unwrap();
        op.layout.unflatten(u.as_slice())
    };
    let u = dense_solve(&fine, &mut cache);
    let u_mid = dense_solve(&mid, &mut cache);
    let fine_op = BlockOperator::assemble(&cf, Layout::new(&fine), 2, &mut cache);
    let lf = &fine_op.layout;
    let ux = lf.flatten(&u);
    let sq = |a: &[f64], b: &[f64]| fine_op.energy(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>());

    // w from PCG on the coarse family, tracking every iterate.
    let layout = Layout::new(&coarse);
    let mut rhs = vec![0.0; layout.dim()];
    rhs[layout.range(0)].copy_from_slice(&f.load(&layout.spaces[0]));
    let op = BlockOperator::assemble(&cf, layout, 2, &mut cache);
    let pc = Preconditioner::new(&op.layout);
    let uc = {
        let b = dense_of(&op);
        b.lu().solve(&DVector::from_vec(rhs.clone())).unwrap()
    };
    let mut energies = vec![op.energy(uc.as_slice())];
    let (q, _) = pcg_monitored(
        |x, y| op.apply(x, y),
        |g, x| pc.apply(g, x),
        &rhs,
        1e-3,
        100,
        |x| {
            let e: Vec<f64> = uc.iter().zip(x).map(|(a, b)| a - b).collect();
            energies.push(op.energy(&e));
        },
    )
    .unwrap();
    assert!(energies.len() > 2);
    for w in energies.windows(2) {
        assert!(w[1] < w[0], "{energies:?}");
    }

    let wx = lf.flatten(&op.layout.unflatten(&q));
    let umx = lf.flatten(&u_mid);
    let lhs = sq(&ux, &wx);
    let rhs = sq(&ux, &umx) + sq(&umx, &wx);
    assert!((lhs - rhs).abs() <= 1e-8 * lhs, "{lhs:e} vs {rhs:e}");
}
