//! Dense NHWC tensor over f64. Double precision everywhere: correctness
//! tests demand it and single-core training is memory-bound anyway.

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub data: Vec<f64>,
    /// (batch, height, width, channels)
    pub shape: [usize; 4],
}

impl Tensor4 {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 {
            data: vec![0.0; shape.iter().product()],
            shape,
        }
    }

    pub fn from_vec(data: Vec<f64>, shape: [usize; 4]) -> Self {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "shape/data mismatch");
        Tensor4 { data, shape }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, n: usize, h: usize, w: usize, c: usize) -> usize {
        let [_, hh, ww, cc] = self.shape;
        ((n * hh + h) * ww + w) * cc + c
    }

    #[inline]
    pub fn at(&self, n: usize, h: usize, w: usize, c: usize) -> f64 {
        self.data[self.idx(n, h, w, c)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, h: usize, w: usize, c: usize) -> &mut f64 {
        let i = self.idx(n, h, w, c);
        &mut self.data[i]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major_nhwc() {
        let mut t = Tensor4::zeros([2, 3, 4, 5]);
        *t.at_mut(1, 2, 3, 4) = 7.0;
        assert_eq!(t.data[t.len() - 1], 7.0);
        assert_eq!(t.at(1, 2, 3, 4), 7.0);
        assert_eq!(t.idx(0, 0, 0, 1), 1);
        assert_eq!(t.idx(0, 0, 1, 0), 5);
        assert_eq!(t.idx(0, 1, 0, 0), 20);
        assert_eq!(t.idx(1, 0, 0, 0), 60);
    }

    #[test]
    #[should_panic(expected = "shape/data mismatch")]
    fn from_vec_checks_length() {
        Tensor4::from_vec(vec![0.0; 3], [1, 1, 1, 4]);
    }
}
