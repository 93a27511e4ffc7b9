//! Exact integration of (quadratic polynomial) × (linear function) on simplices.

use super::poly::Poly;

/// Seven-point rule on triangles, exact for degree 5: (barycentric point, weight).
const TRI7: [([f64; 3], f64); 7] = {
    const A1: f64 = 0.059_715_871_789_769_82;
    const B1: f64 = 0.470_142_064_105_115_1;
    const A2: f64 = 0.797_426_985_353_087_3;
    const B2: f64 = 0.101_286_507_323_456_34;
    const W0: f64 = 0.225;
    const W1: f64 = 0.132_394_152_788_506_18;
    const W2: f64 = 0.125_939_180_544_827_15;
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], W0),
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

/// Three-point Gauss–Legendre on [0, 1], exact for degree 5.
const SEG3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_31, 5.0 / 18.0),
    (0.5, 4.0 / 9.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

/// ∫_K p λ_i for the three barycentric coordinates of K; `rel` holds the vertices
/// relative to the anchor of `p`.
pub fn tri_moments(p: &Poly, rel: &[[f64; 2]; 3], area: f64) -> [f64; 3] {
    let mut m = [0.0; 3];
    for (b, w) in TRI7.iter() {
        let x = b[0] * rel[0][0] + b[1] * rel[1][0] + b[2] * rel[2][0];
        let y = b[0] * rel[0][1] + b[1] * rel[1][1] + b[2] * rel[2][1];
        let f = w * p.eval(x, y);
        m[0] += f * b[0];
        m[1] += f * b[1];
        m[2] += f * b[2];
    }
    m.map(|v| v * area)
}

pub fn tri_integral(p: &Poly, rel: &[[f64; 2]; 3], area: f64) -> f64 {
    let m = tri_moments(p, rel, area);
    m[0] + m[1] + m[2]
}

/// ∫_[a,b] p λ_a and ∫_[a,b] p λ_b along a segment (arc length measure).
pub fn seg_moments(p: &Poly, a: [f64; 2], b: [f64; 2], len: f64) -> [f64; 2] {
    let mut m = [0.0; 2];
    for (t, w) in SEG3.iter() {
        let x = a[0] + t * (b[0] - a[0]);
        let y = a[1] + t * (b[1] - a[1]);
        let f = w * p.eval(x, y);
        m[0] += f * (1.0 - t);
        m[1] += f * t;
    }
    m.map(|v| v * len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tri_rule_integrates_monomials() {
        // Reference triangle (0,0),(1,0),(0,1): ∫ x^a y^b = a! b! / (a+b+2)!
        let rel = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let fact = |n: u32| (1..=n).product::<u32>() as f64;
        for (i, (a, b)) in [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)].iter().enumerate() {
            let mut c = [0.0; 6];
            c[i] = 1.0;
            let exact = fact(*a) * fact(*b) / fact(a + b + 2);
            assert!((tri_integral(&Poly(c), &rel, 0.5) - exact).abs() < 1e-15);
            // Moment against λ_1 = x raises the x degree by one.
            let exact1 = fact(a + 1) * fact(*b) / fact(a + b + 3);
            assert!((tri_moments(&Poly(c), &rel, 0.5)[1] - exact1).abs() < 1e-15);
        }
    }

    #[test]
    fn seg_rule_on_quadratic() {
        let p = Poly([1.0, 0.0, 0.0, 3.0, 0.0, 0.0]);
        let m = seg_moments(&p, [0.0, 0.0], [2.0, 0.0], 2.0);
        // ∫_0^2 (1+3x²)(x/2) dx = 1 + 6 = 7;  ∫ (1+3x²)(1−x/2) = 10 − 7 = 3
        assert!((m[1] - 7.0).abs() < 1e-13);
        assert!((m[0] - 3.0).abs() < 1e-13);
    }
}
