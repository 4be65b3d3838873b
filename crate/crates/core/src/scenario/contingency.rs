use super::{ElementRef, ScenarioError};

/// `k` elements lost out of `candidates`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencySpec {
    pub k: usize,
    pub candidates: Vec<ElementRef>,
}

impl ContingencySpec {
    pub fn new(k: usize, candidates: Vec<ElementRef>) -> Result<Self, ScenarioError> {
        let spec = Self { k, candidates };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.k == 0 || self.k > self.candidates.len() {
            return Err(ScenarioError::InvalidConfig(format!(
                "contingency order k={} must lie in 1..={}",
                self.k,
                self.candidates.len()
            )));
        }
        Ok(())
    }

    /// Number of subsets the enumeration yields.
    pub fn count(&self) -> u128 {
        binomial(self.candidates.len() as u64, self.k as u64)
    }
}

/// `C(n, k)` by the multiplicative formula; saturates at `u128::MAX`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1u128;
    for i in 0..k {
        // acc * (n - i) is divisible by i + 1 at every step.
        match acc.checked_mul((n - i) as u128) {
            Some(v) => acc = v / (i + 1) as u128,
            None => return u128::MAX,
        }
    }
    acc
}

/// Lexicographic k-combinations of `0..n`.
#[derive(Debug, Clone)]
pub struct Combinations {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            idx: (0..k).collect(),
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        // Rightmost position that can still move.
        match (0..k).rev().find(|&i| self.idx[i] < self.n - k + i) {
            Some(i) => {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
            }
            None => self.done = true,
        }
        Some(out)
    }
}

/// Every `k`-subset of the candidates exactly once, lexicographic in
/// candidate position.
pub fn enumerate_contingencies(spec: &ContingencySpec) -> impl Iterator<Item = Vec<ElementRef>> + '_ {
    Combinations::new(spec.candidates.len(), spec.k)
        .map(move |idx| idx.into_iter().map(|i| spec.candidates[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ElementRef;

    fn branches(n: usize) -> Vec<ElementRef> {
        (0..n).map(ElementRef::branch).collect()
    }

    fn factorial(n: u64) -> u128 {
        (1..=n as u128).product()
    }

    #[test]
    fn three_choose_two() {
        let spec = ContingencySpec::new(2, branches(3)).unwrap();
        let subsets: Vec<Vec<usize>> = enumerate_contingencies(&spec)
            .map(|s| s.iter().map(|e| e.index).collect())
            .collect();
        assert_eq!(subsets, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
    }

    #[test]
    fn counts_match_factorial_formula() {
        for n in 1..=25u64 {
            for k in 1..=3u64.min(n) {
                let expected = factorial(n) / (factorial(k) * factorial(n - k));
                assert_eq!(binomial(n, k), expected);
                assert_eq!(Combinations::new(n as usize, k as usize).count() as u128, expected);
            }
        }
    }

    #[test]
    fn lexicographic_and_unique() {
        let all: Vec<Vec<usize>> = Combinations::new(7, 3).collect();
        assert!(all.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn invalid_specs() {
        assert!(ContingencySpec::new(0, branches(3)).is_err());
        assert!(ContingencySpec::new(4, branches(3)).is_err());
    }
}
