//! Weighted linear-algebraic substrate: anisotropic dilations, quasinorms,
//! boxes and weighted multi-indices.
//!
//! Weights are kept as rationals with small denominators so that weighted
//! degrees compare exactly (`sigma(alpha) == sigma_j - sigma_k` is an exact
//! test, not a float comparison); evaluation happens in `f64`.

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Weight = Ratio<i64>;

/// Nondecreasing positive weights `sigma_1 = 1 <= ... <= sigma_N = m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Weights {
    sigma: Vec<Weight>,
}

impl Weights {
    pub fn new(sigma: Vec<Weight>) -> Result<Self> {
        if sigma.is_empty() {
            return Err(Error::BadWeights("empty weight vector".to_string()));
        }
        if sigma[0] != Ratio::from_integer(1) {
            return Err(Error::BadWeights(format!(
                "first weight must be 1, got {}",
                sigma[0]
            )));
        }
        for w in &sigma {
            if !w.is_positive() {
                return Err(Error::BadWeights(format!("non-positive weight {w}")));
            }
        }
        // the basis must arrive sorted by weight; silently permuting would
        // break the correspondence between coordinates and fields
        if sigma.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::BadWeights(format!("weights not sorted: {sigma:?}")));
        }
        Ok(Weights { sigma })
    }

    pub fn integers(vals: &[i64]) -> Result<Self> {
        Weights::new(vals.iter().map(|&v| Ratio::from_integer(v)).collect())
    }

    /// Reconstruct rational weights from floats (denominators up to 64).
    pub fn from_f64s(vals: &[f64]) -> Result<Self> {
        let sigma = vals
            .iter()
            .map(|&v| {
                rational_from_f64(v).ok_or_else(|| {
                    Error::BadWeights(format!("{v} is not a small-denominator rational"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Weights::new(sigma)
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn get(&self, k: usize) -> Weight {
        self.sigma[k]
    }

    pub fn as_f64(&self, k: usize) -> f64 {
        self.sigma[k].to_f64().unwrap()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.as_f64(k)).collect()
    }

    /// Depth `m`: the largest weight.
    pub fn depth(&self) -> Weight {
        *self.sigma.last().unwrap()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Weight> {
        self.sigma.iter()
    }
}

pub fn rational_from_f64(v: f64) -> Option<Weight> {
    for den in 1..=64i64 {
        let num = (v * den as f64).round();
        if num.abs() <= i32::MAX as f64 && (num / den as f64 - v).abs() < 1e-9 {
            return Some(Ratio::new(num as i64, den));
        }
    }
    None
}

/// Multi-index `alpha` with order `|alpha|` and weight `sigma(alpha)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn order(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn weight(&self, sigma: &Weights) -> Weight {
        self.0
            .iter()
            .enumerate()
            .map(|(i, &a)| sigma.get(i) * Ratio::from_integer(a as i64))
            .fold(Ratio::zero(), |acc, w| acc + w)
    }

    /// `alpha! = alpha_1! * ... * alpha_N!` as f64.
    pub fn factorial(&self) -> f64 {
        self.0
            .iter()
            .map(|&a| (1..=a).map(|k| k as f64).product::<f64>())
            .product()
    }

    pub fn entries(&self) -> &[usize] {
        &self.0
    }
}

/// `eps^w` choosing the exact integer-power path where possible.
pub fn eps_pow(eps: f64, w: Weight) -> f64 {
    if w.is_integer() {
        eps.powi(*w.numer() as i32)
    } else {
        eps.powf(w.to_f64().unwrap())
    }
}

/// Anisotropic dilation `delta_eps(x) = (eps^{sigma_1} x_1, ...)`.
pub fn dilate(x: &[f64], eps: f64, sigma: &Weights) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::NonpositiveEpsilon(eps));
    }
    Ok(x.iter()
        .enumerate()
        .map(|(k, &v)| eps_pow(eps, sigma.get(k)) * v)
        .collect())
}

/// Homogeneous quasinorm `max_k |x_k|^{1/sigma_k}`.
pub fn quasinorm(x: &[f64], sigma: &Weights) -> f64 {
    x.iter()
        .enumerate()
        .map(|(k, &v)| {
            let a = v.abs();
            let w = sigma.get(k);
            if w == Ratio::from_integer(1) {
                a
            } else if w == Ratio::from_integer(2) {
                a.sqrt()
            } else if w == Ratio::from_integer(3) {
                a.cbrt()
            } else {
                a.powf(1.0 / w.to_f64().unwrap())
            }
        })
        .fold(0.0, f64::max)
}

/// Quasinorm ball of radius `r` about the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxRegion {
    pub radius: f64,
}

impl BoxRegion {
    pub fn new(radius: f64) -> Self {
        assert!(radius > 0.0);
        BoxRegion { radius }
    }

    pub fn contains(&self, x: &[f64], sigma: &Weights) -> bool {
        quasinorm(x, sigma) < self.radius
    }

    /// Coordinate half-width along axis `k`: `|x_k| < r^{sigma_k}`.
    pub fn coordinate_bound(&self, k: usize, sigma: &Weights) -> f64 {
        eps_pow(self.radius, sigma.get(k))
    }
}

/// All multi-indices with `sigma(alpha) < bound`, sorted by weight and,
/// within a weight class, by descending lexicographic order (so `(1,0,0)`
/// lists before `(0,1,0)`).
pub fn multiindices_below(sigma: &Weights, bound: Weight) -> Vec<MultiIndex> {
    let n = sigma.dim();
    let mut out = Vec::new();
    let mut current = vec![0usize; n];
    fn recurse(
        sigma: &Weights,
        bound: Weight,
        k: usize,
        acc: Weight,
        current: &mut Vec<usize>,
        out: &mut Vec<MultiIndex>,
    ) {
        if k == current.len() {
            out.push(MultiIndex(current.clone()));
            return;
        }
        let mut a = 0usize;
        loop {
            let w = acc + sigma.get(k) * Ratio::from_integer(a as i64);
            if w >= bound {
                break;
            }
            current[k] = a;
            recurse(sigma, bound, k + 1, w, current, out);
            a += 1;
        }
        current[k] = 0;
    }
    recurse(sigma, bound, 0, Ratio::zero(), &mut current, &mut out);
    out.sort_by(|a, b| {
        a.weight(sigma)
            .cmp(&b.weight(sigma))
            .then_with(|| b.0.cmp(&a.0))
    });
    out
}

/// Multi-indices with `sigma(alpha)` exactly equal to `w`.
pub fn multiindices_with_weight(sigma: &Weights, w: Weight) -> Vec<MultiIndex> {
    multiindices_below(sigma, w + Ratio::from_integer(1))
        .into_iter()
        .filter(|a| a.weight(sigma) == w)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(vals: &[i64]) -> Weights {
        Weights::integers(vals).unwrap()
    }

    #[test]
    fn weights_validation() {
        assert!(Weights::integers(&[1, 1, 2]).is_ok());
        assert!(Weights::integers(&[2, 1]).is_err());
        assert!(Weights::integers(&[1, 3, 2]).is_err());
        assert!(Weights::integers(&[]).is_err());
        assert!(Weights::from_f64s(&[1.0, 1.5, 2.0]).is_ok());
    }

    #[test]
    fn dilate_examples() {
        let s = w(&[1, 1, 2]);
        assert_eq!(
            dilate(&[1.0, 1.0, 1.0], 0.5, &s).unwrap(),
            vec![0.5, 0.5, 0.25]
        );
        let x = vec![0.3, -1.2, 0.7];
        assert_eq!(dilate(&x, 1.0, &s).unwrap(), x);
        let s2 = w(&[1, 2]);
        let d = dilate(&[2.0, -3.0], 0.1, &s2).unwrap();
        assert!((d[0] - 0.2).abs() < 1e-15 && (d[1] + 0.03).abs() < 1e-15);
        assert!(matches!(
            dilate(&x, 0.0, &s),
            Err(Error::NonpositiveEpsilon(_))
        ));
    }

    #[test]
    fn quasinorm_examples() {
        let s = w(&[1, 1, 2]);
        assert_eq!(quasinorm(&[0.0, 0.0, 0.0], &s), 0.0);
        assert_eq!(quasinorm(&[3.0, -2.0, 4.0], &s), 3.0);
        assert!((quasinorm(&[0.1, 0.0, 0.04], &s) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn quasinorm_homogeneity() {
        let s = w(&[1, 2, 3]);
        let mut state = 88172645463325252u64;
        let mut rnd = || {
            // xorshift, plenty for a spread of test points
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) * 2.0 - 1.0
        };
        for _ in 0..1000 {
            let x = vec![rnd(), rnd(), rnd()];
            let eps = (rnd().abs() + 0.01) * 2.0;
            let lhs = quasinorm(&dilate(&x, eps, &s).unwrap(), &s);
            let rhs = eps * quasinorm(&x, &s);
            assert!((lhs - rhs).abs() < 1e-12 * rhs.max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn dilate_group_law_exact_for_dyadics() {
        let s = w(&[1, 1, 2, 3]);
        let x = vec![0.75, -1.5, 2.25, 0.125];
        for (a, b) in [(0.5, 0.25), (2.0, 0.5), (0.125, 4.0)] {
            let lhs = dilate(&dilate(&x, a, &s).unwrap(), b, &s).unwrap();
            let rhs = dilate(&x, a * b, &s).unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn multiindices_enumeration() {
        let s = w(&[1, 1, 2]);
        let got = multiindices_below(&s, Ratio::from_integer(2));
        let expect: Vec<Vec<usize>> = vec![vec![0, 0, 0], vec![1, 0, 0], vec![0, 1, 0]];
        assert_eq!(got.iter().map(|m| m.0.clone()).collect::<Vec<_>>(), expect);

        let s2 = w(&[1, 2]);
        assert_eq!(
            multiindices_below(&s2, Ratio::from_integer(1))
                .iter()
                .map(|m| m.0.clone())
                .collect::<Vec<_>>(),
            vec![vec![0, 0]]
        );
        // brute-force oracle: all alpha in [0,3]^2 with a1 + 2 a2 < 3
        let mut oracle: Vec<Vec<usize>> = Vec::new();
        for a1 in 0..4usize {
            for a2 in 0..4usize {
                if a1 + 2 * a2 < 3 {
                    oracle.push(vec![a1, a2]);
                }
            }
        }
        let got = multiindices_below(&s2, Ratio::from_integer(3));
        assert_eq!(got.len(), oracle.len());
        for m in &got {
            assert!(oracle.contains(&m.0));
        }
        assert_eq!(
            got.iter().map(|m| m.0.clone()).collect::<Vec<_>>(),
            vec![vec![0, 0], vec![1, 0], vec![2, 0], vec![0, 1]]
        );
    }

    #[test]
    fn multiindices_monotone_in_bound() {
        let s = w(&[1, 2, 3]);
        let small = multiindices_below(&s, Ratio::from_integer(2));
        let large = multiindices_below(&s, Ratio::from_integer(4));
        for m in &small {
            assert!(large.contains(m));
        }
        assert!(large.len() > small.len());
    }

    #[test]
    fn multiindex_weight_and_factorial() {
        let s = w(&[1, 2]);
        let m = MultiIndex(vec![3, 1]);
        assert_eq!(m.order(), 4);
        assert_eq!(m.weight(&s), Ratio::from_integer(5));
        assert_eq!(m.factorial(), 6.0);
        assert_eq!(MultiIndex(vec![0, 0]).weight(&s), Ratio::zero());
        assert!(m.weight(&s) >= Ratio::from_integer(m.order() as i64));
    }
}
