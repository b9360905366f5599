use serde::{Deserialize, Serialize};

/// Discretization of det D²u from directional second differences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Minimum over superbases of the Selling-type form; exact on quadratics with a well-conditioned Hessian.
    #[default]
    Superbase,
    /// Minimum over orthogonal direction pairs of normalized products.
    OrthogonalPairs,
}

/// Primitive directions up to sign, ordered by increasing length.
pub fn directions(pairs: usize) -> Vec<[i32; 2]> {
    let want = 2 * pairs;
    let mut out: Vec<[i32; 2]> = Vec::with_capacity(want);
    let mut r: i32 = 1;
    while out.len() < want {
        let mut shell: Vec<[i32; 2]> = Vec::new();
        for a in 0..=r {
            for b in -r..=r {
                let v = [a, b];
                if a.max(b.abs()) != r || (a == 0 && b <= 0) || gcd(a, b.abs()) != 1 {
                    continue;
                }
                shell.push(v);
            }
        }
        // pairs (a, b) and its rotation (-b, a) stay adjacent
        shell.sort_by_key(|v| (v[0] * v[0] + v[1] * v[1], std::cmp::Reverse(v[0]), -v[1]));
        let mut ordered: Vec<[i32; 2]> = Vec::new();
        for v in shell {
            if ordered.contains(&v) {
                continue;
            }
            let w = canon([-v[1], v[0]]);
            ordered.push(v);
            if w != v && !ordered.contains(&w) && w[0].max(w[1].abs()) == r {
                ordered.push(w);
            }
        }
        for v in ordered {
            if out.len() < want && !out.contains(&v) {
                out.push(v);
            }
        }
        r += 1;
    }
    out
}

fn gcd(a: i32, b: i32) -> i32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn canon(v: [i32; 2]) -> [i32; 2] {
    if v[0] < 0 || (v[0] == 0 && v[1] < 0) {
        [-v[0], -v[1]]
    } else {
        v
    }
}

/// Index triples (up to sign) forming superbases inside the direction set.
pub fn superbases(dirs: &[[i32; 2]]) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            let (a, b) = (dirs[i], dirs[j]);
            if (a[0] * b[1] - a[1] * b[0]).abs() != 1 {
                continue;
            }
            for s in [1, -1] {
                let c = canon([a[0] + s * b[0], a[1] + s * b[1]]);
                if let Some(k) = dirs.iter().position(|&d| d == c) {
                    let mut t = [i, j, k];
                    t.sort_unstable();
                    if !out.contains(&t) {
                        out.push(t);
                    }
                }
            }
        }
    }
    out
}

/// Index pairs of orthogonal directions.
pub fn orthogonal_pairs(dirs: &[[i32; 2]]) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            if dirs[i][0] * dirs[j][0] + dirs[i][1] * dirs[j][1] == 0 {
                out.push([i, j]);
            }
        }
    }
    out
}

/// Selling-type form for a superbase and its partial derivatives.
pub fn superbase_form(a: f64, b: f64, c: f64) -> (f64, [f64; 3]) {
    let (a, b, c) = (a.max(0.0), b.max(0.0), c.max(0.0));
    if a >= b + c {
        (b * c, [0.0, c, b])
    } else if b >= a + c {
        (a * c, [c, 0.0, a])
    } else if c >= a + b {
        (a * b, [b, a, 0.0])
    } else {
        let h = (2.0 * (a * b + b * c + c * a) - a * a - b * b - c * c) / 4.0;
        (h, [(b + c - a) / 2.0, (a + c - b) / 2.0, (a + b - c) / 2.0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2;
    use proptest::prelude::*;

    #[test]
    fn default_direction_set() {
        let d = directions(8);
        assert_eq!(d.len(), 16);
        for v in [
            [1, 0],
            [0, 1],
            [1, 1],
            [1, -1],
            [2, 1],
            [1, 2],
            [2, -1],
            [1, -2],
            [3, 1],
            [1, 3],
            [3, -1],
            [1, -3],
            [3, 2],
            [2, 3],
            [3, -2],
            [2, -3],
        ] {
            assert!(d.contains(&v), "{v:?} missing");
        }
        assert_eq!(orthogonal_pairs(&d).len(), 8);
        assert_eq!(superbases(&d).len(), 14);
        assert_eq!(directions(2), vec![[1, 0], [0, 1], [1, 1], [1, -1]]);
    }

    fn q(m: &Matrix2<f64>, e: [i32; 2]) -> f64 {
        let v = nalgebra::Vector2::new(e[0] as f64, e[1] as f64);
        v.dot(&(m * v))
    }

    proptest! {
        #[test]
        fn superbase_minimum_is_determinant(a in 0.3f64..3.0, b in 0.3f64..3.0, th in 0.0f64..3.2) {
            let r = nalgebra::Rotation2::new(th).into_inner();
            let m = r * Matrix2::new(a, 0.0, 0.0, b) * r.transpose();
            let d = directions(8);
            let min = superbases(&d).iter().map(|t| superbase_form(q(&m, d[t[0]]), q(&m, d[t[1]]), q(&m, d[t[2]])).0).fold(f64::INFINITY, f64::min);
            prop_assert!((min - a * b).abs() <= 1e-12 * (1.0 + a * b));
        }

        #[test]
        fn superbase_form_is_monotone(a in 0.0f64..3.0, b in 0.0f64..3.0, c in 0.0f64..3.0) {
            let (_, g) = superbase_form(a, b, c);
            prop_assert!(g.iter().all(|&x| x >= 0.0));
        }
    }
}
