//! Small 3-vector helpers and rigid motions.

use rand::Rng;

pub type Vec3 = [f64; 3];

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Vec3, c: f64) -> Vec3 {
    [a[0] * c, a[1] * c, a[2] * c]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Unit vector along `a`, or zero when `a` has zero length.
pub fn unit(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n > 0.0 {
        scale(a, 1.0 / n)
    } else {
        [0.0; 3]
    }
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    let n = points.len().max(1) as f64;
    let s = points.iter().fold([0.0; 3], |acc, &p| add(acc, p));
    scale(s, 1.0 / n)
}

/// Root-mean-square distance from the centroid.
pub fn radius_of_gyration(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let c = centroid(points);
    let ms = points.iter().map(|&p| dot(sub(p, c), sub(p, c))).sum::<f64>() / points.len() as f64;
    ms.sqrt()
}

/// Proper rotation followed by translation.
#[derive(Clone, Copy, Debug)]
pub struct RigidMotion {
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl RigidMotion {
    /// Uniformly random rotation (normalized Gaussian quaternion) and a translation
    /// with components in `[-max_shift, max_shift]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_shift: f64) -> Self {
        let q = loop {
            let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-3 && n <= 1.0 {
                break q.map(|x| x / n);
            }
        };
        let [w, x, y, z] = q;
        let rotation = [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ];
        let translation = std::array::from_fn(|_| rng.gen_range(-max_shift..=max_shift));
        RigidMotion {
            rotation,
            translation,
        }
    }

    pub fn translation(t: Vec3) -> Self {
        RigidMotion {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: t,
        }
    }

    pub fn rotate(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        [dot(r[0], p), dot(r[1], p), dot(r[2], p)]
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        add(self.rotate(p), self.translation)
    }
}

/// Gaussian radial basis expansion of a scalar with evenly spaced centers on `[lo, hi]`.
pub fn gaussian_rbf(d: f64, bins: usize, lo: f64, hi: f64, width: f64) -> Vec<f64> {
    let step = if bins > 1 { (hi - lo) / (bins - 1) as f64 } else { 0.0 };
    (0..bins)
        .map(|b| {
            let c = lo + step * b as f64;
            (-(d - c).powi(2) / (2.0 * width * width)).exp()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_rotation_is_orthonormal_and_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = RigidMotion::random(&mut rng, 5.0);
            let r = m.rotation;
            for i in 0..3 {
                for j in 0..3 {
                    let d = dot(r[i], r[j]);
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((d - e).abs() < 1e-12);
                }
            }
            let det = dot(r[0], cross(r[1], r[2]));
            assert!((det - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rg_of_symmetric_pair() {
        assert!((radius_of_gyration(&[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]) - 1.0).abs() < 1e-15);
    }
}
