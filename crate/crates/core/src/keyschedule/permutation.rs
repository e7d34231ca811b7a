use std::fmt;

use serde::{Deserialize, Serialize};

/// Error returned when an index array does not describe a bijection on `[0, n)`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PermutationError {
    #[error("permutation is empty")]
    Empty,
    #[error("not a bijection: index {index} out of range for length {len}")]
    OutOfRange { index: u32, len: usize },
    #[error("not a bijection: index {index} appears more than once")]
    Duplicate { index: u32 },
}

/// A bijection on `[0, n)` with gather semantics: output slot `i` takes input
/// slot `map[i]`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct Permutation(Vec<u32>);

impl Permutation {
    pub fn new(map: Vec<u32>) -> Result<Self, PermutationError> {
        if map.is_empty() {
            return Err(PermutationError::Empty);
        }
        let mut seen = vec![false; map.len()];
        for &index in &map {
            let slot = seen
                .get_mut(index as usize)
                .ok_or(PermutationError::OutOfRange {
                    index,
                    len: map.len(),
                })?;
            if *slot {
                return Err(PermutationError::Duplicate { index });
            }
            *slot = true;
        }
        Ok(Self(map))
    }

    pub(crate) fn from_vec_unchecked(map: Vec<u32>) -> Self {
        debug_assert!(Self::new(map.clone()).is_ok());
        Self(map)
    }

    pub fn identity(n: usize) -> Self {
        assert!(n >= 1, "permutation length must be positive");
        Self((0..n as u32).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; a permutation has at least one element.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.0[i] as usize
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &v)| i as u32 == v)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0u32; self.0.len()];
        for (i, &src) in self.0.iter().enumerate() {
            inv[src as usize] = i as u32;
        }
        Self(inv)
    }

    /// Gather composition: applying the result equals applying `self` to the
    /// output of `inner`. `(self ∘ inner)[i] = inner[self[i]]`.
    pub fn compose(&self, inner: &Permutation) -> Self {
        assert_eq!(self.len(), inner.len(), "length mismatch in compose");
        Self(self.0.iter().map(|&i| inner.0[i as usize]).collect())
    }

    /// `out[i] = input[map[i]]`.
    pub fn gather<T: Copy>(&self, input: &[T]) -> Vec<T> {
        assert_eq!(input.len(), self.len(), "length mismatch in gather");
        self.0.iter().map(|&i| input[i as usize]).collect()
    }
}

impl TryFrom<Vec<u32>> for Permutation {
    type Error = PermutationError;

    fn try_from(map: Vec<u32>) -> Result<Self, Self::Error> {
        Self::new(map)
    }
}

impl From<Permutation> for Vec<u32> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}
