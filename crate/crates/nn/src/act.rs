//! Pointwise activations. Leaky ReLU is applied in place and differentiated
//! from its own output, which has the same sign as its input.

pub fn leaky_relu_inplace(x: &mut [f32], slope: f32) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v *= slope;
        }
    }
}

/// `grad *= d lrelu / dx`, evaluated from the activation output `y`.
pub fn leaky_relu_backward(y: &[f32], grad: &mut [f32], slope: f32) {
    debug_assert_eq!(y.len(), grad.len());
    for (g, &o) in grad.iter_mut().zip(y) {
        if o < 0.0 {
            *g *= slope;
        }
    }
}

#[inline]
pub fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_inplace(x: &mut [f32]) {
    for v in x.iter_mut() {
        *v = sigmoid(*v);
    }
}
