use crate::scalar::Scalar;

/// Gradient over a `rows x vocab` parameter matrix that stores only the rows
/// it touches, sorted by row index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrad<T> {
    vocab: usize,
    rows: Vec<(usize, Vec<T>)>,
}

impl<T: Scalar> SparseGrad<T> {
    pub fn new(vocab: usize) -> Self {
        SparseGrad {
            vocab,
            rows: Vec::new(),
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, &[T])> {
        self.rows.iter().map(|(r, v)| (*r, v.as_slice()))
    }

    pub fn nnz_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn row_mut(&mut self, row: usize) -> &mut Vec<T> {
        let pos = match self.rows.binary_search_by_key(&row, |(r, _)| *r) {
            Ok(p) => p,
            Err(p) => {
                self.rows.insert(p, (row, vec![T::zero(); self.vocab]));
                p
            }
        };
        &mut self.rows[pos].1
    }

    /// `self[row, :] += scale * vals`.
    pub fn add_row_scaled(&mut self, row: usize, vals: &[T], scale: T) {
        for (a, &v) in self.row_mut(row).iter_mut().zip(vals) {
            *a += scale * v;
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &SparseGrad<T>, scale: T) {
        for (row, vals) in other.rows() {
            self.add_row_scaled(row, vals, scale);
        }
    }

    pub fn scaled(&self, scale: T) -> SparseGrad<T> {
        SparseGrad {
            vocab: self.vocab,
            rows: self
                .rows
                .iter()
                .map(|(r, v)| (*r, v.iter().map(|&x| x * scale).collect()))
                .collect(),
        }
    }

    /// Inner product, walking the two sorted row lists in step.
    pub fn dot(&self, other: &SparseGrad<T>) -> T {
        let (mut i, mut j) = (0, 0);
        let mut acc = T::zero();
        while i < self.rows.len() && j < other.rows.len() {
            let (ra, va) = &self.rows[i];
            let (rb, vb) = &other.rows[j];
            match ra.cmp(rb) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += va.iter().zip(vb).map(|(&a, &b)| a * b).sum::<T>();
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }

    pub fn max_abs(&self) -> T {
        self.rows
            .iter()
            .flat_map(|(_, v)| v.iter())
            .fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.rows.iter().flat_map(|(_, v)| v.iter()).all(|x| x.is_finite())
    }

    pub fn to_dense(&self, dim: usize) -> Vec<T> {
        let mut out = vec![T::zero(); dim];
        self.add_to_dense(&mut out, T::one());
        out
    }

    pub fn add_to_dense(&self, out: &mut [T], scale: T) {
        for (row, vals) in self.rows() {
            let base = row * self.vocab;
            for (o, &v) in out[base..base + self.vocab].iter_mut().zip(vals) {
                *o += scale * v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_dense() {
        let mut a = SparseGrad::<f64>::new(3);
        a.add_row_scaled(4, &[1.0, 2.0, 3.0], 1.0);
        a.add_row_scaled(1, &[1.0, 0.0, -1.0], 2.0);
        let mut b = SparseGrad::<f64>::new(3);
        b.add_row_scaled(4, &[0.5, 0.5, 0.5], 1.0);
        b.add_row_scaled(2, &[9.0, 9.0, 9.0], 1.0);
        let (da, db) = (a.to_dense(15), b.to_dense(15));
        let dense: f64 = da.iter().zip(&db).map(|(x, y)| x * y).sum();
        assert_eq!(a.dot(&b), dense);
        assert_eq!(a.norm_sq(), da.iter().map(|x| x * x).sum::<f64>());
        assert_eq!(a.rows().map(|(r, _)| r).collect::<Vec<_>>(), vec![1, 4]);
    }
}
