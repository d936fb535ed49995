//! Symmetric quadrature rules on triangles, in barycentric coordinates with
//! weights normalized to sum to one (multiply by the element area).

#[derive(Debug, Clone, Copy)]
pub struct TriangleRule {
    pub points: &'static [([f64; 3], f64)],
    pub degree: u32,
}

/// Edge midpoints, exact for quadratics.
pub const EDGE_MIDPOINT: TriangleRule = TriangleRule {
    points: &[
        ([0.5, 0.5, 0.0], 1.0 / 3.0),
        ([0.0, 0.5, 0.5], 1.0 / 3.0),
        ([0.5, 0.0, 0.5], 1.0 / 3.0),
    ],
    degree: 2,
};

const A1: f64 = 0.445_948_490_915_965;
const B1: f64 = 0.108_103_018_168_070;
const W1: f64 = 0.223_381_589_678_011;
const A2: f64 = 0.091_576_213_509_771;
const B2: f64 = 0.816_847_572_980_459;
const W2: f64 = 0.109_951_743_655_322;

/// Six-point Dunavant rule, exact for quartics.
pub const DUNAVANT_4: TriangleRule = TriangleRule {
    points: &[
        ([B1, A1, A1], W1),
        ([A1, B1, A1], W1),
        ([A1, A1, B1], W1),
        ([B2, A2, A2], W2),
        ([A2, B2, A2], W2),
        ([A2, A2, B2], W2),
    ],
    degree: 4,
};

impl TriangleRule {
    /// Physical coordinates of each point on the triangle `v`.
    pub fn map(&self, v: &[[f64; 2]; 3]) -> impl Iterator<Item = ([f64; 2], [f64; 3], f64)> + '_ {
        let v = *v;
        self.points.iter().map(move |&(l, w)| {
            let x = l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0];
            let y = l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1];
            ([x, y], l, w)
        })
    }
}
