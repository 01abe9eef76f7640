use crate::NnError;

/// Dense 4-D tensor in NHWC order. Dense-layer activations use `h = w = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            shape: [n, h, w, c],
            data: vec![0.0; n * h * w * c],
        }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self, NnError> {
        if data.len() != n * h * w * c {
            return Err(NnError::Shape {
                context: "Tensor::from_vec".into(),
                expected: vec![n * h * w * c],
                actual: vec![data.len()],
            });
        }
        Ok(Self {
            shape: [n, h, w, c],
            data,
        })
    }

    /// Batch of feature vectors, shape `[n, 1, 1, features]`.
    pub fn from_rows(n: usize, features: usize, data: Vec<f32>) -> Result<Self, NnError> {
        Self::from_vec(n, 1, 1, features, data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    pub fn n(&self) -> usize {
        self.shape[0]
    }
    pub fn h(&self) -> usize {
        self.shape[1]
    }
    pub fn w(&self) -> usize {
        self.shape[2]
    }
    pub fn c(&self) -> usize {
        self.shape[3]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn item(&self, i: usize) -> &[f32] {
        let len = self.item_len();
        &self.data[i * len..(i + 1) * len]
    }
    pub fn item_mut(&mut self, i: usize) -> &mut [f32] {
        let len = self.item_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn check_shape(&self, context: &str, expected: [usize; 4]) -> Result<(), NnError> {
        if self.shape != expected {
            return Err(NnError::Shape {
                context: context.into(),
                expected: expected.to_vec(),
                actual: self.shape.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Concatenate along channels; both tensors must agree on N, H and W.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(a.shape[..3], b.shape[..3], "concat_channels spatial mismatch");
        let (ca, cb) = (a.c(), b.c());
        let pixels = a.n() * a.h() * a.w();
        let mut data = Vec::with_capacity(pixels * (ca + cb));
        for p in 0..pixels {
            data.extend_from_slice(&a.data[p * ca..(p + 1) * ca]);
            data.extend_from_slice(&b.data[p * cb..(p + 1) * cb]);
        }
        Tensor {
            shape: [a.n(), a.h(), a.w(), ca + cb],
            data,
        }
    }

    /// Inverse of [`Tensor::concat_channels`]: split the channel axis at `ca`.
    pub fn split_channels(&self, ca: usize) -> (Tensor, Tensor) {
        let c = self.c();
        assert!(ca <= c);
        let cb = c - ca;
        let pixels = self.n() * self.h() * self.w();
        let mut a = Vec::with_capacity(pixels * ca);
        let mut b = Vec::with_capacity(pixels * cb);
        for p in 0..pixels {
            let row = &self.data[p * c..(p + 1) * c];
            a.extend_from_slice(&row[..ca]);
            b.extend_from_slice(&row[ca..]);
        }
        let [n, h, w, _] = self.shape;
        (
            Tensor { shape: [n, h, w, ca], data: a },
            Tensor { shape: [n, h, w, cb], data: b },
        )
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_is_identity() {
        let a = Tensor::from_vec(2, 2, 1, 2, (0..8).map(|v| v as f32).collect()).unwrap();
        let b = Tensor::from_vec(2, 2, 1, 3, (0..12).map(|v| 100.0 + v as f32).collect()).unwrap();
        let ab = Tensor::concat_channels(&a, &b);
        assert_eq!(ab.shape(), [2, 2, 1, 5]);
        assert_eq!(&ab.data()[..5], &[0.0, 1.0, 100.0, 101.0, 102.0]);
        let (a2, b2) = ab.split_channels(2);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::from_vec(1, 2, 2, 1, vec![0.0; 3]).is_err());
    }
}
