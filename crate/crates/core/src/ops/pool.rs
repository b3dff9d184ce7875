use crate::error::{FfError, Result};
use crate::tensor::{Shape, Tensor};

/// Flat input index of the winning element for every pooled output, plus the
/// input shape the indices refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxPoolIndices {
    pub input_shape: Shape,
    pub argmax: Vec<usize>,
}

/// 2x2 max pooling, stride 2, no padding. Ties resolve to the first element in
/// row-major window order.
pub fn maxpool2x2_forward(x: &Tensor) -> Result<(Tensor, MaxPoolIndices)> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(FfError::Config(format!("maxpool 2x2 needs even spatial dims, got {}x{}", s.h, s.w)));
    }
    let (ho, wo) = (s.h / 2, s.w / 2);
    let out_shape = Shape::new(s.n, s.c, ho, wo);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut argmax = Vec::with_capacity(out_shape.numel());
    let data = x.data();
    for plane in 0..s.n * s.c {
        let base = plane * s.h * s.w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = base + 2 * oh * s.w + 2 * ow;
                for (dh, dw) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oh + dh) * s.w + 2 * ow + dw;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(out_shape, out)?, MaxPoolIndices { input_shape: s, argmax }))
}

/// Route each output gradient to its recorded argmax position.
pub fn maxpool2x2_backward(indices: &MaxPoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != indices.argmax.len() {
        return Err(FfError::Shape(format!(
            "maxpool backward: grad_out {} does not match {} pooled outputs",
            grad_out.shape(),
            indices.argmax.len()
        )));
    }
    let mut gx = Tensor::zeros(indices.input_shape);
    let buf = gx.data_mut();
    for (&i, &g) in indices.argmax.iter().zip(grad_out.data()) {
        buf[i] += g;
    }
    Ok(gx)
}
