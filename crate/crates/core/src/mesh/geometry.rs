use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinates are integers in units of 2^-SCALE_BITS. Bisection only ever
/// halves dyadic coordinates, so every vertex reachable in practice is exact.
pub const SCALE_BITS: u32 = 40;
pub const ONE: i64 = 1 << SCALE_BITS;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct Pt {
    pub x: i64,
    pub y: i64,
}

impl Pt {
    pub const fn new(x: i64, y: i64) -> Self {
        Pt { x, y }
    }

    /// Point with coordinates `nx / 2^exp`, `ny / 2^exp`.
    pub fn dyadic(nx: i64, ny: i64, exp: u32) -> Self {
        assert!(exp <= SCALE_BITS);
        Pt::new(nx << (SCALE_BITS - exp), ny << (SCALE_BITS - exp))
    }

    pub fn mid(a: Pt, b: Pt) -> Pt {
        debug_assert!((a.x + b.x) % 2 == 0 && (a.y + b.y) % 2 == 0, "dyadic resolution exhausted");
        Pt::new((a.x + b.x) / 2, (a.y + b.y) / 2)
    }

    pub fn xf(self) -> f64 {
        self.x as f64 / ONE as f64
    }

    pub fn yf(self) -> f64 {
        self.y as f64 / ONE as f64
    }

    pub fn to_f64(self) -> [f64; 2] {
        [self.xf(), self.yf()]
    }

    /// Reduced (numerator, exponent) form of one coordinate.
    pub fn reduce(v: i64) -> (i64, u32) {
        if v == 0 {
            return (0, 0);
        }
        let tz = v.trailing_zeros().min(SCALE_BITS);
        (v >> tz, SCALE_BITS - tz)
    }
}

/// Twice the signed area of (a, b, c).
#[inline]
pub fn orient(a: Pt, b: Pt, c: Pt) -> i128 {
    let abx = (b.x - a.x) as i128;
    let aby = (b.y - a.y) as i128;
    let acx = (c.x - a.x) as i128;
    let acy = (c.y - a.y) as i128;
    abx * acy - aby * acx
}

/// Closed containment of `p` in triangle `t` (either orientation).
pub fn tri_contains(t: &[Pt; 3], p: Pt) -> bool {
    let d0 = orient(t[0], t[1], p);
    let d1 = orient(t[1], t[2], p);
    let d2 = orient(t[2], t[0], p);
    let has_neg = d0 < 0 || d1 < 0 || d2 < 0;
    let has_pos = d0 > 0 || d1 > 0 || d2 > 0;
    !(has_neg && has_pos)
}

/// `p` lies on the closed segment [a, b].
pub fn on_segment(a: Pt, b: Pt, p: Pt) -> bool {
    orient(a, b, p) == 0
        && p.x >= a.x.min(b.x)
        && p.x <= a.x.max(b.x)
        && p.y >= a.y.min(b.y)
        && p.y <= a.y.max(b.y)
}

/// Element handle: root index (8 bits) | generation (6 bits) | bisection path (50 bits).
/// The path records the child taken at every bisection, most recent in the low bit.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct Elem(pub u64);

const GEN_SHIFT: u32 = 50;
const ROOT_SHIFT: u32 = 56;
const PATH_MASK: u64 = (1 << GEN_SHIFT) - 1;
pub const MAX_GEN: u32 = 50;

impl Elem {
    pub const NONE: Elem = Elem(u64::MAX);

    pub fn root(r: usize) -> Elem {
        assert!(r < 255);
        Elem((r as u64) << ROOT_SHIFT)
    }

    pub fn root_index(self) -> usize {
        (self.0 >> ROOT_SHIFT) as usize
    }

    pub fn gen(self) -> u32 {
        ((self.0 >> GEN_SHIFT) & 0x3f) as u32
    }

    pub fn path(self) -> u64 {
        self.0 & PATH_MASK
    }

    pub fn from_parts(root: usize, gen: u32, path: u64) -> Elem {
        debug_assert!(gen <= MAX_GEN && path >> gen == 0);
        Elem(((root as u64) << ROOT_SHIFT) | ((gen as u64) << GEN_SHIFT) | path)
    }

    pub fn child(self, i: u32) -> Elem {
        let g = self.gen();
        assert!(g < MAX_GEN, "bisection depth exhausted");
        Elem::from_parts(self.root_index(), g + 1, (self.path() << 1) | i as u64)
    }

    pub fn children(self) -> [Elem; 2] {
        [self.child(0), self.child(1)]
    }

    pub fn parent(self) -> Option<Elem> {
        let g = self.gen();
        (g > 0).then(|| Elem::from_parts(self.root_index(), g - 1, self.path() >> 1))
    }

    /// Which child of its parent this element is.
    pub fn child_index(self) -> u32 {
        (self.path() & 1) as u32
    }

    pub fn ancestor_at(self, gen: u32) -> Elem {
        let g = self.gen();
        debug_assert!(gen <= g);
        Elem::from_parts(self.root_index(), gen, self.path() >> (g - gen))
    }

    /// `self` equals `other` or is one of its ancestors.
    pub fn covers(self, other: Elem) -> bool {
        self.root_index() == other.root_index()
            && self.gen() <= other.gen()
            && other.ancestor_at(self.gen()) == self
    }
}

/// Local edge `k` of a triangle [v0, v1, v2] joins v_k and v_{k+1}; edge 0 is the
/// refinement edge. In d=1, "edge" k is the endpoint v_k.
pub fn edge_pts(v: &[Pt; 3], k: usize) -> (Pt, Pt) {
    (v[k], v[(k + 1) % 3])
}

/// Children of a simplex. Triangle [p, q, r] with refinement edge pq splits at
/// m = mid(p, q) into [p, r, m] and [r, q, m]; intervals [a, b] into [a, m], [m, b].
pub fn bisect_verts(v: &[Pt; 3], dim: usize) -> [[Pt; 3]; 2] {
    let m = Pt::mid(v[0], v[1]);
    if dim == 1 {
        [[v[0], m, m], [m, v[1], v[1]]]
    } else {
        [[v[0], v[2], m], [v[2], v[1], m]]
    }
}

/// Where the pieces of a parent's local edge end up after bisection: (child, child edge).
pub fn edge_children(k: usize, dim: usize) -> &'static [(u32, usize)] {
    if dim == 1 {
        return match k {
            0 => &[(0, 0)],
            _ => &[(1, 1)],
        };
    }
    match k {
        0 => &[(0, 2), (1, 1)],
        1 => &[(1, 0)],
        _ => &[(0, 0)],
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Interval,
    Square,
    LShape,
}

/// Root triangulation together with its geometry.
#[derive(Clone, Debug)]
pub struct Domain {
    pub kind: DomainKind,
    pub roots: Vec<[Pt; 3]>,
}

impl Domain {
    pub fn interval() -> Domain {
        let a = Pt::new(0, 0);
        let b = Pt::new(ONE, 0);
        Domain { kind: DomainKind::Interval, roots: vec![[a, b, b]] }
    }

    /// Unit square split along the diagonal (0,0)-(1,1), which is the refinement
    /// edge of both halves.
    pub fn unit_square() -> Domain {
        let p = |x, y| Pt::dyadic(x, y, 0);
        let roots = vec![[p(0, 0), p(1, 1), p(1, 0)], [p(1, 1), p(0, 0), p(0, 1)]];
        let d = Domain { kind: DomainKind::Square, roots };
        d.check_labelling().expect("square labelling");
        d
    }

    /// (-1,1)^2 minus the lower-left quadrant, rescaled to (0,1)^2 \ [0,1/2]^2:
    /// 24 right triangles on the 1/4-grid. Refinement edges are the hypotenuses.
    pub fn l_shape() -> Domain {
        let p = |x, y| Pt::dyadic(x, y, 2);
        let mut roots = Vec::with_capacity(24);
        for i in 0..4i64 {
            for j in 0..4i64 {
                if i < 2 && j < 2 {
                    continue;
                }
                let (a, b, c, d) = (p(i, j), p(i + 1, j), p(i + 1, j + 1), p(i, j + 1));
                // Corner squares touching two boundary sides use the other diagonal so
                // that no interior edge joins two boundary vertices.
                let anti = (i == 3 && j == 0) || (i == 0 && j == 3);
                if anti {
                    roots.push([b, d, a]);
                    roots.push([d, b, c]);
                } else {
                    roots.push([a, c, b]);
                    roots.push([c, a, d]);
                }
            }
        }
        let d = Domain { kind: DomainKind::LShape, roots };
        d.check_labelling().expect("L-shape labelling");
        d
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            DomainKind::Interval => 1,
            _ => 2,
        }
    }

    pub fn num_roots(&self) -> usize {
        self.roots.len()
    }

    pub fn root_elems(&self) -> impl Iterator<Item = Elem> + '_ {
        (0..self.roots.len()).map(Elem::root)
    }

    /// Each root must carry its label-0 edge as the unique longest edge, and every
    /// shared edge must carry the same label on both sides.
    pub fn check_labelling(&self) -> Result<()> {
        if self.dim() == 1 {
            return Ok(());
        }
        let mut seen: rustc_hash::FxHashMap<(Pt, Pt), u8> = Default::default();
        for (r, v) in self.roots.iter().enumerate() {
            let len2 = |a: Pt, b: Pt| {
                let dx = (a.x - b.x) as i128;
                let dy = (a.y - b.y) as i128;
                dx * dx + dy * dy
            };
            let l0 = len2(v[0], v[1]);
            if l0 <= len2(v[1], v[2]) || l0 <= len2(v[2], v[0]) {
                return Err(Error::Structure(format!("root {r}: refinement edge is not the longest edge")));
            }
            if orient(v[0], v[1], v[2]) == 0 {
                return Err(Error::Structure(format!("root {r} is degenerate")));
            }
            for k in 0..3 {
                let (a, b) = edge_pts(v, k);
                let key = if a < b { (a, b) } else { (b, a) };
                let label = if k == 0 { 0 } else { 1 };
                if let Some(&other) = seen.get(&key) {
                    if other != label {
                        return Err(Error::Structure(format!("root {r}: inconsistent label on shared edge")));
                    }
                } else {
                    seen.insert(key, label);
                }
            }
        }
        Ok(())
    }

    /// Vertices of any element of the forest, by replaying its bisection path.
    pub fn verts(&self, e: Elem) -> [Pt; 3] {
        let mut v = self.roots[e.root_index()];
        let g = e.gen();
        let path = e.path();
        let dim = self.dim();
        for s in (0..g).rev() {
            let c = ((path >> s) & 1) as usize;
            v = bisect_verts(&v, dim)[c];
        }
        v
    }

    /// `p` lies on the boundary of the closed domain.
    pub fn on_boundary(&self, p: Pt) -> bool {
        let h = ONE / 2;
        match self.kind {
            DomainKind::Interval => p.x == 0 || p.x == ONE,
            DomainKind::Square => p.x == 0 || p.y == 0 || p.x == ONE || p.y == ONE,
            DomainKind::LShape => {
                p.x == ONE
                    || p.y == ONE
                    || (p.x == 0 && p.y >= h)
                    || (p.y == 0 && p.x >= h)
                    || (p.x == h && p.y <= h)
                    || (p.y == h && p.x <= h)
            }
        }
    }

    /// Uniform hierarchy level of an element.
    pub fn level(&self, e: Elem) -> u32 {
        if self.dim() == 1 {
            e.gen()
        } else {
            e.gen() / 2
        }
    }

    /// Highest uniform level among the edges of an element: even generations have
    /// all edges on one level; odd ones carry the two newer edges one level up.
    pub fn max_edge_level(&self, e: Elem) -> u32 {
        if self.dim() == 1 {
            e.gen()
        } else {
            e.gen().div_ceil(2)
        }
    }

    /// Generation of the elements carrying the level-j frame hats.
    pub fn frame_gen(&self, j: u32) -> u32 {
        if self.dim() == 1 {
            j + 1
        } else {
            2 * j
        }
    }

    /// Generations separating consecutive frame levels.
    pub fn frame_step(&self) -> u32 {
        if self.dim() == 1 {
            1
        } else {
            2
        }
    }

    /// All elements of generation `gen` whose closure contains `p`.
    pub fn locate(&self, p: Pt, gen: u32) -> Vec<(Elem, [Pt; 3])> {
        let mut out = Vec::new();
        let mut stack: Vec<(Elem, [Pt; 3])> = Vec::new();
        for (r, v) in self.roots.iter().enumerate() {
            if self.closed_contains(v, p) {
                stack.push((Elem::root(r), *v));
            }
        }
        let dim = self.dim();
        while let Some((e, v)) = stack.pop() {
            if e.gen() == gen {
                out.push((e, v));
                continue;
            }
            let cv = bisect_verts(&v, dim);
            for (i, c) in cv.iter().enumerate() {
                if self.closed_contains(c, p) {
                    stack.push((e.child(i as u32), *c));
                }
            }
        }
        out.sort_by_key(|x| x.0);
        out
    }

    pub fn closed_contains(&self, v: &[Pt; 3], p: Pt) -> bool {
        if self.dim() == 1 {
            p.y == 0 && p.x >= v[0].x && p.x <= v[1].x
        } else {
            tri_contains(v, p)
        }
    }

    /// Measure of a simplex.
    pub fn measure(&self, v: &[Pt; 3]) -> f64 {
        if self.dim() == 1 {
            (v[1].x - v[0].x) as f64 / ONE as f64
        } else {
            (orient(v[0], v[1], v[2]).unsigned_abs() as f64) / (2.0 * (ONE as f64) * (ONE as f64))
        }
    }

    /// Total measure of the domain.
    pub fn volume(&self) -> f64 {
        self.roots.iter().map(|v| self.measure(v)).sum()
    }
}
