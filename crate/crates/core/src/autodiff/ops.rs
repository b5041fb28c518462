//! Elementwise, reduction and structural ops.

use super::tensor::Tensor;
use crate::error::{Error, Result};

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "add")?;
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|ctx| vec![Some(ctx.grad.to_vec()), Some(ctx.grad.to_vec())]),
    ))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "sub")?;
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|ctx| {
            vec![
                Some(ctx.grad.to_vec()),
                Some(ctx.grad.iter().map(|g| -g).collect()),
            ]
        }),
    ))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "mul")?;
    let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|ctx| {
            let (a, b) = (&ctx.inputs[0], &ctx.inputs[1]);
            let ga = ctx
                .needs(0)
                .then(|| ctx.grad.iter().zip(b.data().iter()).map(|(g, y)| g * y).collect());
            let gb = ctx
                .needs(1)
                .then(|| ctx.grad.iter().zip(a.data().iter()).map(|(g, x)| g * x).collect());
            vec![ga, gb]
        }),
    ))
}

pub fn scale(a: &Tensor, factor: f64) -> Tensor {
    let data = a.data().iter().map(|x| x * factor).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(move |ctx| vec![Some(ctx.grad.iter().map(|g| g * factor).collect())]),
    )
}

pub fn add_scalar(a: &Tensor, offset: f64) -> Tensor {
    let data = a.data().iter().map(|x| x + offset).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(|ctx| vec![Some(ctx.grad.to_vec())]),
    )
}

pub fn sum(a: &Tensor) -> Tensor {
    let total = a.data().iter().sum();
    let n = a.numel();
    Tensor::from_op(
        vec![1],
        vec![total],
        vec![a.clone()],
        Box::new(move |ctx| vec![Some(vec![ctx.grad[0]; n])]),
    )
}

pub fn mean(a: &Tensor) -> Tensor {
    let n = a.numel();
    scale(&sum(a), 1.0 / n as f64)
}

/// Sum of a list of same-shape tensors.
pub fn add_all(items: &[Tensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| Error::Dimension("add_all of an empty list".into()))?;
    for t in items {
        same_shape(first, t, "add_all")?;
    }
    let mut data = vec![0.0; first.numel()];
    for t in items {
        data.iter_mut().zip(t.data().iter()).for_each(|(a, b)| *a += b);
    }
    let k = items.len();
    Ok(Tensor::from_op(
        first.shape().to_vec(),
        data,
        items.to_vec(),
        Box::new(move |ctx| (0..k).map(|_| Some(ctx.grad.to_vec())).collect()),
    ))
}

/// ReLU with subgradient 0 at the kink.
pub fn relu(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(|ctx| {
            let g = ctx
                .grad
                .iter()
                .zip(ctx.output)
                .map(|(g, &y)| if y > 0.0 { *g } else { 0.0 })
                .collect();
            vec![Some(g)]
        }),
    )
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|&x| sigmoid_scalar(x)).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(|ctx| {
            let g = ctx
                .grad
                .iter()
                .zip(ctx.output)
                .map(|(g, &s)| g * s * (1.0 - s))
                .collect();
            vec![Some(g)]
        }),
    )
}

pub fn reshape(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    if n != a.numel() {
        return Err(Error::Dimension(format!(
            "cannot reshape {:?} into {shape:?}",
            a.shape()
        )));
    }
    Ok(Tensor::from_op(
        shape.to_vec(),
        a.to_vec(),
        vec![a.clone()],
        Box::new(|ctx| vec![Some(ctx.grad.to_vec())]),
    ))
}

/// Rows `[start, start+len)` along the leading dimension.
pub fn narrow(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let lead = a.shape()[0];
    if len == 0 || start + len > lead {
        return Err(Error::Index {
            index: start + len,
            len: lead,
        });
    }
    let row: usize = a.shape()[1..].iter().product();
    let data = a.data()[start * row..(start + len) * row].to_vec();
    let mut shape = a.shape().to_vec();
    shape[0] = len;
    let total = a.numel();
    Ok(Tensor::from_op(
        shape,
        data,
        vec![a.clone()],
        Box::new(move |ctx| {
            let mut g = vec![0.0; total];
            g[start * row..(start + len) * row].copy_from_slice(ctx.grad);
            vec![Some(g)]
        }),
    ))
}

/// Concatenates along the leading dimension; trailing dimensions must agree.
pub fn concat(items: &[Tensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| Error::Dimension("concat of an empty list".into()))?;
    let tail = first.shape()[1..].to_vec();
    let mut lead = 0;
    for t in items {
        if t.shape()[1..] != tail[..] {
            return Err(Error::Dimension(format!(
                "concat: {:?} vs {:?}",
                first.shape(),
                t.shape()
            )));
        }
        lead += t.shape()[0];
    }
    let mut data = Vec::with_capacity(lead * tail.iter().product::<usize>());
    for t in items {
        data.extend_from_slice(&t.data());
    }
    let sizes: Vec<usize> = items.iter().map(Tensor::numel).collect();
    let mut shape = vec![lead];
    shape.extend(tail);
    Ok(Tensor::from_op(
        shape,
        data,
        items.to_vec(),
        Box::new(move |ctx| {
            let mut offset = 0;
            sizes
                .iter()
                .map(|&n| {
                    let g = ctx.grad[offset..offset + n].to_vec();
                    offset += n;
                    Some(g)
                })
                .collect()
        }),
    ))
}

/// Channel `c` of a `[B, C, H, W]` tensor as `[B, H, W]`.
pub fn select_channel(a: &Tensor, c: usize) -> Result<Tensor> {
    let &[b, ch, h, w] = a.shape() else {
        return Err(Error::Dimension(format!(
            "select_channel expects [B,C,H,W], got {:?}",
            a.shape()
        )));
    };
    if c >= ch {
        return Err(Error::Index { index: c, len: ch });
    }
    let plane = h * w;
    let src = a.data();
    let mut data = Vec::with_capacity(b * plane);
    for bi in 0..b {
        let off = (bi * ch + c) * plane;
        data.extend_from_slice(&src[off..off + plane]);
    }
    drop(src);
    Ok(Tensor::from_op(
        vec![b, h, w],
        data,
        vec![a.clone()],
        Box::new(move |ctx| {
            let mut g = vec![0.0; b * ch * plane];
            for bi in 0..b {
                let off = (bi * ch + c) * plane;
                g[off..off + plane].copy_from_slice(&ctx.grad[bi * plane..(bi + 1) * plane]);
            }
            vec![Some(g)]
        }),
    ))
}

/// Applies a sigmoid to every channel whose index is `period - 1` modulo
/// `period` of a `[B, C, H, W]` tensor and leaves the rest untouched.
pub fn sigmoid_every(a: &Tensor, period: usize) -> Result<Tensor> {
    let &[_, ch, h, w] = a.shape() else {
        return Err(Error::Dimension(format!(
            "sigmoid_every expects [B,C,H,W], got {:?}",
            a.shape()
        )));
    };
    if period == 0 || ch % period != 0 {
        return Err(Error::Dimension(format!(
            "{ch} channels are not a multiple of {period}"
        )));
    }
    let plane = h * w;
    let is_gated = move |i: usize| (i / plane) % ch % period == period - 1;
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| if is_gated(i) { sigmoid_scalar(x) } else { x })
        .collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(move |ctx| {
            let g = ctx
                .grad
                .iter()
                .zip(ctx.output)
                .enumerate()
                .map(|(i, (g, &y))| if is_gated(i) { g * y * (1.0 - y) } else { *g })
                .collect();
            vec![Some(g)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_sigmoid_values() {
        let x = Tensor::new(&[3], vec![-1.5, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).to_vec(), vec![0.0, 0.0, 2.0]);
        assert_eq!(sigmoid(&x).to_vec()[1], 0.5);
        assert!(sigmoid(&Tensor::scalar(-800.0)).item() >= 0.0);
    }

    #[test]
    fn sum_grad_is_ones() {
        let x = Tensor::param(&[4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        sum(&x).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn square_grad() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        sum(&mul(&x, &x).unwrap()).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn narrow_and_concat_roundtrip() {
        let x = Tensor::param(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let a = narrow(&x, 0, 1).unwrap();
        let b = narrow(&x, 1, 2).unwrap();
        let y = concat(&[b, a]).unwrap();
        assert_eq!(y.to_vec(), vec![3.0, 4.0, 5.0, 6.0, 1.0, 2.0]);
        sum(&scale(&y, 2.0)).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 6]);
    }

    #[test]
    fn shape_errors() {
        let a = Tensor::zeros(&[2]);
        let b = Tensor::zeros(&[3]);
        assert!(add(&a, &b).is_err());
        assert!(reshape(&a, &[3]).is_err());
        assert!(narrow(&a, 1, 2).is_err());
    }

    #[test]
    fn sigmoid_every_gates_last_channel_of_each_group() {
        let x = Tensor::zeros(&[1, 8, 1, 1]);
        let y = sigmoid_every(&x, 4).unwrap().to_vec();
        assert_eq!(y, vec![0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.5]);
    }
}
