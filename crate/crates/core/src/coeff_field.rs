//! Multilevel affine coefficient a(y) = 1 + Σ_μ y_μ θ_μ built from dilated and
//! translated hat functions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::Poly;
use crate::mesh::{bisect_verts, Domain, Elem, Mesh, Pt, Status, ONE, SCALE_BITS};

/// Parametric index μ. In d=1 `k[0]` is the integer offset. In d=2 offsets may be
/// half-integers, so `k` stores twice the offset: θ_μ lives on the square with
/// lower-left corner k/2^(ℓ+1) and side 2^-ℓ.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct LevelIndex {
    pub level: u8,
    pub k: [u32; 2],
}

impl LevelIndex {
    pub fn new1(level: u8, k: u32) -> Self {
        LevelIndex { level, k: [k, 0] }
    }

    /// d=2 index from doubled offsets.
    pub fn new2(level: u8, k1x2: u32, k2x2: u32) -> Self {
        LevelIndex { level, k: [k1x2, k2x2] }
    }
}

impl std::fmt::Display for LevelIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.level, self.k[0], self.k[1])
    }
}

/// Piece of a coefficient function: element, its vertices and θ there about v0.
pub type ThetaPiece = (Elem, [Pt; 3], Poly);

#[derive(Clone, Debug)]
pub struct CoeffField {
    dom: Arc<Domain>,
    pub c: f64,
    pub alpha: f64,
}

/// Ellipticity data: a(y) ≥ c_b, ‖B‖ ≤ big_c_b, Σ_{|μ|=ℓ}|θ_μ| ≤ c2 2^{-αℓ}.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Ellipticity {
    pub c_b: f64,
    pub big_c_b: f64,
    pub c2: f64,
}

/// Hat (1 − |2t − 1|)_+ on [0, 1].
pub fn hat(t: f64) -> f64 {
    (1.0 - (2.0 * t - 1.0).abs()).max(0.0)
}

impl CoeffField {
    pub fn new(dom: Arc<Domain>, c: f64, alpha: f64) -> Result<CoeffField> {
        if !(alpha > 0.0) || !(c >= 0.0) {
            return Err(Error::Config(format!("need alpha > 0 and c >= 0, got alpha={alpha}, c={c}")));
        }
        let f = CoeffField { dom, c, alpha };
        let e = f.ellipticity();
        if e.c_b <= 0.0 {
            return Err(Error::Config(format!("coefficient is not uniformly elliptic: c_B = {:.4}", e.c_b)));
        }
        Ok(f)
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.dom
    }

    pub fn dim(&self) -> usize {
        self.dom.dim()
    }

    /// c 2^{-αℓ}.
    pub fn amplitude(&self, level: u32) -> f64 {
        self.c * (-self.alpha * level as f64).exp2()
    }

    /// Coarsest level carrying any index.
    pub fn first_level(&self) -> u32 {
        if self.dim() == 1 {
            0
        } else {
            1
        }
    }

    /// At every point at most one integer-offset and one half-offset hat per axis
    /// are active and they sum to ≤ 1, so each level contributes ≤ c 2^{-αℓ}.
    pub fn ellipticity(&self) -> Ellipticity {
        let q = (-self.alpha).exp2();
        let tail = self.c * q.powi(self.first_level() as i32) / (1.0 - q);
        let c_b = 1.0 - tail;
        Ellipticity { c_b, big_c_b: 2.0 - c_b, c2: self.c }
    }

    /// All indices on one level, in (k1, k2) order.
    pub fn indices_at(&self, level: u32) -> Vec<LevelIndex> {
        if self.dim() == 1 {
            return (0..1u32 << level).map(|k| LevelIndex::new1(level as u8, k)).collect();
        }
        if level == 0 {
            return Vec::new();
        }
        let n = (1u32 << (level + 1)) - 1;
        let mut out = Vec::new();
        for k1 in 0..n {
            for k2 in 0..n {
                let mu = LevelIndex::new2(level as u8, k1, k2);
                if (k1 % 2 == 0 || k2 % 2 == 0) && self.support_inside(mu) {
                    out.push(mu);
                }
            }
        }
        out
    }

    /// Indices on `level` whose support meets the open box (lo, hi) with positive area.
    pub fn indices_touching(&self, level: u32, lo: [f64; 2], hi: [f64; 2]) -> Vec<LevelIndex> {
        let l = level;
        if self.dim() == 1 {
            let n = 1i64 << l;
            let a = ((lo[0] * n as f64).floor() as i64).max(0);
            let b = ((hi[0] * n as f64).ceil() as i64).min(n);
            return (a..b).map(|k| LevelIndex::new1(l as u8, k as u32)).collect();
        }
        if l == 0 {
            return Vec::new();
        }
        let s = (1i64 << (l + 1)) as f64;
        let n = (1i64 << (l + 1)) - 1;
        // Support along one axis: [K/s, (K+2)/s]; meets (lo, hi) iff K < hi*s and K+2 > lo*s.
        let range = |lo: f64, hi: f64| {
            let a = ((lo * s).floor() as i64 - 1).max(0);
            let b = ((hi * s).ceil() as i64).min(n);
            (a..b).filter(move |&k| (k as f64) < hi * s && ((k + 2) as f64) > lo * s)
        };
        let mut out = Vec::new();
        for k1 in range(lo[0], hi[0]) {
            for k2 in range(lo[1], hi[1]) {
                let mu = LevelIndex::new2(l as u8, k1 as u32, k2 as u32);
                if (k1 % 2 == 0 || k2 % 2 == 0) && self.support_inside(mu) {
                    out.push(mu);
                }
            }
        }
        out
    }

    /// Closed support box as dyadic points (lower-left, upper-right).
    pub fn support_box(&self, mu: LevelIndex) -> (Pt, Pt) {
        let l = mu.level as u32;
        if self.dim() == 1 {
            let lo = Pt::dyadic(mu.k[0] as i64, 0, l);
            let hi = Pt::dyadic(mu.k[0] as i64 + 1, 0, l);
            return (lo, hi);
        }
        let lo = Pt::dyadic(mu.k[0] as i64, mu.k[1] as i64, l + 1);
        let hi = Pt::dyadic(mu.k[0] as i64 + 2, mu.k[1] as i64 + 2, l + 1);
        (lo, hi)
    }

    fn support_inside(&self, mu: LevelIndex) -> bool {
        let (lo, hi) = self.support_box(mu);
        let h = ONE / 2;
        let in_box = lo.x >= 0 && lo.y >= 0 && hi.x <= ONE && hi.y <= ONE;
        in_box && !(lo.x < h && lo.y < h)
    }

    pub fn theta_eval(&self, mu: LevelIndex, x: [f64; 2]) -> f64 {
        let l = mu.level as i32;
        let s = self.amplitude(mu.level as u32);
        let sc = 2f64.powi(l);
        if self.dim() == 1 {
            return s * hat(sc * x[0] - mu.k[0] as f64);
        }
        s * hat(sc * x[0] - 0.5 * mu.k[0] as f64) * hat(sc * x[1] - 0.5 * mu.k[1] as f64)
    }

    /// Full coefficient value for a parameter vector given as (μ, y_μ) pairs.
    pub fn a_eval(&self, y: &[(LevelIndex, f64)], x: [f64; 2]) -> f64 {
        1.0 + y.iter().map(|(mu, v)| v * self.theta_eval(*mu, x)).sum::<f64>()
    }

    /// Generation of the elements on which θ_μ is a polynomial. d=1: linear on the
    /// two halves of its support. d=2: bilinear on the quarter squares, hence
    /// quadratic on the triangles of level ℓ−1 whose legs are a quarter side.
    pub fn carrier_gen(&self, mu: LevelIndex) -> u32 {
        if self.dim() == 1 {
            mu.level as u32 + 1
        } else {
            2 * (mu.level as u32 - 1)
        }
    }

    /// θ_μ as polynomial pieces on the elements of its carrier generation that lie
    /// in its support.
    pub fn pieces(&self, mu: LevelIndex) -> Vec<ThetaPiece> {
        let l = mu.level as u32;
        let s = self.amplitude(l);
        let g = self.carrier_gen(mu);
        let slope = (1u64 << (l + 1)) as f64;
        if self.dim() == 1 {
            let k = mu.k[0] as u64;
            let left = Elem::from_parts(0, g, 2 * k);
            let right = Elem::from_parts(0, g, 2 * k + 1);
            return vec![
                (left, self.dom.verts(left), Poly::linear(0.0, s * slope, 0.0)),
                (right, self.dom.verts(right), Poly::linear(s, -s * slope, 0.0)),
            ];
        }
        let (lo, hi) = self.support_box(mu);
        let mut out = Vec::with_capacity(8);
        let mut stack: Vec<(Elem, [Pt; 3])> = self.dom.root_elems().map(|e| (e, self.dom.verts(e))).collect();
        while let Some((e, v)) = stack.pop() {
            let bx0 = v.iter().map(|p| p.x).min().unwrap();
            let bx1 = v.iter().map(|p| p.x).max().unwrap();
            let by0 = v.iter().map(|p| p.y).min().unwrap();
            let by1 = v.iter().map(|p| p.y).max().unwrap();
            if bx1 <= lo.x || bx0 >= hi.x || by1 <= lo.y || by0 >= hi.y {
                continue;
            }
            if e.gen() < g {
                let cv = bisect_verts(&v, 2);
                stack.push((e.child(0), cv[0]));
                stack.push((e.child(1), cv[1]));
                continue;
            }
            if bx0 < lo.x || bx1 > hi.x || by0 < lo.y || by1 > hi.y {
                continue;
            }
            // Which half of the support along each axis, from the centroid.
            let cx = (v[0].x as i128 + v[1].x as i128 + v[2].x as i128) * 2 > 3 * (lo.x as i128 + hi.x as i128);
            let cy = (v[0].y as i128 + v[1].y as i128 + v[2].y as i128) * 2 > 3 * (lo.y as i128 + hi.y as i128);
            let axis = |o: i64, k: u32, upper: bool| {
                // t = 2^{ℓ+1} x − K at the anchor, exact in i128.
                let t0 = ((o as i128) << (l + 1)) - ((k as i128) << SCALE_BITS);
                let t0 = t0 as f64 / ONE as f64;
                if upper {
                    Poly::linear(2.0 - t0, -slope, 0.0)
                } else {
                    Poly::linear(t0, slope, 0.0)
                }
            };
            let px = axis(v[0].x, mu.k[0], cx);
            let py_x = axis(v[0].y, mu.k[1], cy);
            let py = Poly::linear(py_x.0[0], 0.0, py_x.0[1]);
            out.push((e, v, px.mul_linear(&py).scale(s)));
        }
        out.sort_by_key(|p| p.0);
        out
    }

    /// Leaves of the overlay of `mesh` with the carrier of θ_μ that meet its support.
    pub fn supports_overlapping(&self, mu: LevelIndex, mesh: &Mesh) -> Vec<(Elem, [Pt; 3])> {
        let mut out = Vec::new();
        for (e, v, _) in self.pieces(mu) {
            collect_overlay(mesh, e, &v, &mut out);
        }
        out.sort_by_key(|x| x.0);
        out
    }
}

fn collect_overlay(mesh: &Mesh, e: Elem, v: &[Pt; 3], out: &mut Vec<(Elem, [Pt; 3])>) {
    match mesh.status(e) {
        Status::Within(_) => out.push((e, *v)),
        Status::Internal => {
            let cv = bisect_verts(v, mesh.dim());
            collect_overlay(mesh, e.child(0), &cv[0], out);
            collect_overlay(mesh, e.child(1), &cv[1], out);
        }
    }
}
