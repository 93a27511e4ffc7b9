use serde::{Deserialize, Serialize};

/// Quadratic c0 + c1 X + c2 Y + c3 X² + c4 XY + c5 Y² in coordinates relative
/// to an anchor point owned by whoever stores the polynomial.
#[derive(Clone, Copy, Default, PartialEq, Debug, Serialize, Deserialize)]
pub struct Poly(pub [f64; 6]);

impl Poly {
    pub const ZERO: Poly = Poly([0.0; 6]);

    pub fn constant(c: f64) -> Poly {
        Poly([c, 0.0, 0.0, 0.0, 0.0, 0.0])
    }

    pub fn linear(c0: f64, cx: f64, cy: f64) -> Poly {
        Poly([c0, cx, cy, 0.0, 0.0, 0.0])
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let c = &self.0;
        c[0] + x * (c[1] + c[3] * x + c[4] * y) + y * (c[2] + c[5] * y)
    }

    /// Same polynomial expressed about an anchor moved by (dx, dy).
    pub fn shifted(&self, dx: f64, dy: f64) -> Poly {
        if dx == 0.0 && dy == 0.0 {
            return *self;
        }
        let c = &self.0;
        Poly([
            self.eval(dx, dy),
            c[1] + 2.0 * c[3] * dx + c[4] * dy,
            c[2] + c[4] * dx + 2.0 * c[5] * dy,
            c[3],
            c[4],
            c[5],
        ])
    }

    /// Partial derivatives as polynomials about the same anchor.
    pub fn grad(&self) -> (Poly, Poly) {
        let c = &self.0;
        (Poly::linear(c[1], 2.0 * c[3], c[4]), Poly::linear(c[2], c[4], 2.0 * c[5]))
    }

    /// Product of two polynomials of degree ≤ 1.
    pub fn mul_linear(&self, o: &Poly) -> Poly {
        debug_assert!(self.0[3..].iter().chain(o.0[3..].iter()).all(|&v| v == 0.0));
        let (a, b) = (&self.0, &o.0);
        Poly([a[0] * b[0], a[0] * b[1] + a[1] * b[0], a[0] * b[2] + a[2] * b[0], a[1] * b[1], a[1] * b[2] + a[2] * b[1], a[2] * b[2]])
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly(self.0.map(|v| v * s))
    }

    pub fn add_assign_scaled(&mut self, o: &Poly, s: f64) {
        for i in 0..6 {
            self.0[i] += s * o.0[i];
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Largest value magnitude over a box of half-width `h` around the anchor,
    /// bounded coefficient-wise; used as the scale for cancellation pruning.
    pub fn magnitude(&self, h: f64) -> f64 {
        let c = &self.0;
        c[0].abs() + h * (c[1].abs() + c[2].abs()) + h * h * (c[3].abs() + c[4].abs() + c[5].abs())
    }
}

impl std::ops::Add for Poly {
    type Output = Poly;
    fn add(mut self, o: Poly) -> Poly {
        self.add_assign_scaled(&o, 1.0);
        self
    }
}

impl std::ops::Neg for Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(-1.0)
    }
}
