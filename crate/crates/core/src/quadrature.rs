//! Symmetric Gauss quadrature rules on the reference triangle.
//!
//! Points are barycentric (l1, l2, l3 = 1 - l1 - l2); weights sum to 1 and
//! multiply the triangle area.

#[derive(Debug, Clone, Copy)]
pub struct TriPoint {
    pub bary: [f64; 3],
    pub weight: f64,
}

/// Quadrature configuration used by the Galerkin assembly routines.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureRule {
    /// Points per triangle for well-separated pairs.
    pub order: usize,
    /// Points per triangle for near pairs.
    pub near_order: usize,
    /// Near threshold as a multiple of the larger triangle diameter.
    pub near_threshold: f64,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self { order: 3, near_order: 6, near_threshold: 2.0 }
    }
}

impl QuadratureRule {
    pub fn validate(&self) -> Result<(), String> {
        for o in [self.order, self.near_order] {
            if points(o).is_none() {
                return Err(format!("unsupported quadrature order {o}; use 1, 3, 4, 6, 7 or 12"));
            }
        }
        if self.near_threshold < 1.0 {
            return Err("near_threshold must be >= 1".into());
        }
        Ok(())
    }

    /// Next denser rule, for convergence checks.
    pub fn refined(&self) -> Self {
        let up = |o: usize| match o {
            1 => 3,
            3 => 4,
            4 => 6,
            6 => 7,
            _ => 12,
        };
        Self { order: up(self.order), near_order: up(self.near_order), near_threshold: self.near_threshold }
    }
}

pub fn points(order: usize) -> Option<&'static [TriPoint]> {
    match order {
        1 => Some(&P1),
        3 => Some(&P3),
        4 => Some(&P4),
        6 => Some(&P6),
        7 => Some(&P7),
        12 => Some(&P12),
        _ => None,
    }
}

const fn sym3(a: f64, w: f64) -> [TriPoint; 3] {
    let b = 1.0 - 2.0 * a;
    [
        TriPoint { bary: [b, a, a], weight: w },
        TriPoint { bary: [a, b, a], weight: w },
        TriPoint { bary: [a, a, b], weight: w },
    ]
}

static P1: [TriPoint; 1] = [TriPoint { bary: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], weight: 1.0 }];

static P3: [TriPoint; 3] = sym3(1.0 / 6.0, 1.0 / 3.0);

static P4: [TriPoint; 4] = {
    let s = sym3(0.2, 25.0 / 48.0);
    [
        TriPoint { bary: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], weight: -27.0 / 48.0 },
        s[0],
        s[1],
        s[2],
    ]
};

static P6: [TriPoint; 6] = {
    let a = sym3(0.445948490915965, 0.223381589678011);
    let b = sym3(0.091576213509771, 0.109951743655322);
    [a[0], a[1], a[2], b[0], b[1], b[2]]
};

static P7: [TriPoint; 7] = {
    let a = sym3(0.470142064105115, 0.132394152788506);
    let b = sym3(0.101286507323456, 0.125939180544827);
    [
        TriPoint { bary: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], weight: 0.225 },
        a[0], a[1], a[2], b[0], b[1], b[2],
    ]
};

// Dunavant degree-6 rule.
static P12: [TriPoint; 12] = {
    let a = sym3(0.249286745170910, 0.116786275726379);
    let b = sym3(0.063089014491502, 0.050844906370207);
    const G1: f64 = 0.310352451033785;
    const G2: f64 = 0.053145049844816;
    const G3: f64 = 1.0 - G1 - G2;
    const W: f64 = 0.082851075618374;
    [
        a[0], a[1], a[2],
        b[0], b[1], b[2],
        TriPoint { bary: [G1, G2, G3], weight: W },
        TriPoint { bary: [G2, G1, G3], weight: W },
        TriPoint { bary: [G1, G3, G2], weight: W },
        TriPoint { bary: [G2, G3, G1], weight: W },
        TriPoint { bary: [G3, G1, G2], weight: W },
        TriPoint { bary: [G3, G2, G1], weight: W },
    ]
};
