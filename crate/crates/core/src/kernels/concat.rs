use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Concatenates along the last (channel) axis, in argument order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    if inputs.len() < 2 {
        return Err(Error::shape("concat_channels needs at least two inputs"));
    }
    let lead = &inputs[0].shape()[..inputs[0].rank() - 1];
    for t in inputs {
        if &t.shape()[..t.rank() - 1] != lead {
            return Err(Error::shape(format!(
                "concat_channels: {:?} does not match leading extents {:?}",
                t.shape(),
                lead
            )));
        }
    }
    let total: usize = inputs.iter().map(|t| t.channels()).sum();
    let pixels: usize = lead.iter().product();
    let mut out = Vec::with_capacity(pixels * total);
    for px in 0..pixels {
        for t in inputs {
            let c = t.channels();
            out.extend_from_slice(&t.data()[px * c..(px + 1) * c]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::new(&shape, out)
}

/// Inverse of [`concat_channels`]: splits the last axis into the given widths.
pub fn split_channels(input: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
    let c = input.channels();
    if widths.iter().sum::<usize>() != c || widths.contains(&0) {
        return Err(Error::shape(format!(
            "split_channels: widths {widths:?} do not partition {c} channels"
        )));
    }
    let lead = &input.shape()[..input.rank() - 1];
    let pixels: usize = lead.iter().product();
    let mut parts: Vec<Vec<f32>> = widths.iter().map(|w| Vec::with_capacity(pixels * w)).collect();
    for px in input.data().chunks(c) {
        let mut offset = 0;
        for (part, &w) in parts.iter_mut().zip(widths) {
            part.extend_from_slice(&px[offset..offset + w]);
            offset += w;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(data, &w)| {
            let mut shape = lead.to_vec();
            shape.push(w);
            Tensor::new(&shape, data)
        })
        .collect()
}
