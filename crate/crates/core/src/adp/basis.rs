use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Total-degree polynomial basis in `z = (input - offset) / scale`.
///
/// Monomials are ordered by degree, then lexicographically by the sorted
/// index tuple: `1, z_0, .., z_{d-1}, z_0 z_0, z_0 z_1, .., z_{d-1} z_{d-1}, ..`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialBasis {
    pub degree: usize,
    pub n_inputs: usize,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
    /// Each monomial as the sorted list of input indices it multiplies.
    pub monomials: Vec<Vec<usize>>,
}

impl PolynomialBasis {
    pub fn new(degree: usize, n_inputs: usize) -> Self {
        let mut monomials = vec![Vec::new()];
        let mut layer: Vec<Vec<usize>> = vec![Vec::new()];
        for _ in 0..degree {
            let mut next = Vec::new();
            for m in &layer {
                let start = m.last().copied().unwrap_or(0);
                for i in start..n_inputs {
                    let mut e = m.clone();
                    e.push(i);
                    next.push(e);
                }
            }
            monomials.extend(next.iter().cloned());
            layer = next;
        }
        Self {
            degree,
            n_inputs,
            offset: vec![0.0; n_inputs],
            scale: vec![1.0; n_inputs],
            monomials,
        }
    }

    /// Maps each input interval `[lo, hi]` onto `[-1, 1]` before the monomials.
    pub fn with_box(mut self, bounds: &[(f64, f64)]) -> Self {
        assert_eq!(bounds.len(), self.n_inputs, "one interval per basis input");
        self.offset = bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
        self.scale = bounds.iter().map(|(lo, hi)| 0.5 * (hi - lo)).collect();
        self
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    /// `phi(t1, x)`; the first entry is always 1.
    pub fn eval(&self, t1: f64, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len() + 1, self.n_inputs);
        let z: Vec<f64> = std::iter::once(t1)
            .chain(x.iter().copied())
            .enumerate()
            .map(|(i, v)| (v - self.offset[i]) / self.scale[i])
            .collect();
        DVector::from_iterator(
            self.len(),
            self.monomials.iter().map(|m| m.iter().map(|&i| z[i]).product::<f64>()),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_two_on_twelve_inputs() {
        assert_eq!(PolynomialBasis::new(2, 12).len(), 91);
        assert_eq!(PolynomialBasis::new(2, 3).len(), 10);
        assert_eq!(PolynomialBasis::new(3, 2).len(), 10);
    }

    #[test]
    fn origin_gives_unit_vector() {
        let b = PolynomialBasis::new(2, 12);
        let phi = b.eval(0.0, &DVector::zeros(11));
        assert_eq!(phi[0], 1.0);
        assert!(phi.iter().skip(1).all(|&v| v == 0.0));
    }

    #[test]
    fn swapping_inputs_permutes_monomials() {
        let b = PolynomialBasis::new(2, 3);
        let a = b.eval(0.5, &DVector::from_vec(vec![2.0, -3.0]));
        let s = b.eval(0.5, &DVector::from_vec(vec![-3.0, 2.0]));
        let mut av: Vec<f64> = a.iter().copied().collect();
        let mut sv: Vec<f64> = s.iter().copied().collect();
        assert_ne!(av, sv);
        av.sort_by(f64::total_cmp);
        sv.sort_by(f64::total_cmp);
        assert_eq!(av, sv);
    }

    #[test]
    fn box_map_centers_inputs() {
        let b = PolynomialBasis::new(1, 2).with_box(&[(1.0, 3.0), (-4.0, 0.0)]);
        let phi = b.eval(3.0, &DVector::from_vec(vec![-2.0]));
        assert_eq!(phi.as_slice(), &[1.0, 1.0, 0.0]);
    }
}
