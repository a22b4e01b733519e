use super::kernels::{conv1x1x1, conv1x1x1_backward, conv3x3x3, conv3x3x3_backward, Geom};
use super::{GradientSet, NetParams, INPUT_CHANNELS, LAYERS};
use crate::error::{Error, Result};
use crate::sampling::Batch;
use crate::volume::Dims;

/// One network input: an image channel and a mask channel over the same grid.
#[derive(Debug, Clone, Copy)]
pub struct InputGrid<'a> {
    pub dims: Dims,
    pub image: &'a [f32],
    /// `None` means an all-ones mask channel.
    pub mask: Option<&'a [u8]>,
}

#[derive(Debug, Clone)]
struct SampleCache {
    geom: Geom,
    input: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    prob: Vec<f64>,
}

/// Activations kept from [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    samples: Vec<SampleCache>,
    param_fingerprint: u64,
}

fn fingerprint(params: &NetParams) -> u64 {
    params
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, v| (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn relu_in_place(buf: &mut [f64]) {
    for v in buf {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn forward_one(params: &NetParams, input: InputGrid<'_>) -> Result<SampleCache> {
    let d = input.dims;
    if input.image.len() != d.len() {
        return Err(Error::LengthMismatch(input.image.len(), d.len()));
    }
    if let Some(m) = input.mask {
        if m.len() != d.len() {
            return Err(Error::LengthMismatch(m.len(), d.len()));
        }
    }
    let g = Geom::new(d);
    let len = g.len;
    let mut x = vec![0.0; INPUT_CHANNELS * len];
    g.scatter(input.image, &mut x[..len]);
    match input.mask {
        Some(m) => g.scatter(m, &mut x[len..2 * len]),
        None => g.scatter(&vec![1u8; d.len()], &mut x[len..2 * len]),
    }

    let [l1, l2, l3] = LAYERS;
    let mut a1 = vec![0.0; l1.cout * len];
    conv3x3x3(&g, &x, l1.cin, params.weight(0), params.bias(0), &mut a1, l1.cout);
    relu_in_place(&mut a1);
    let mut a2 = vec![0.0; l2.cout * len];
    conv3x3x3(&g, &a1, l2.cin, params.weight(1), params.bias(1), &mut a2, l2.cout);
    relu_in_place(&mut a2);
    let mut logits = vec![0.0; len];
    conv1x1x1(&g, &a2, l3.cin, params.weight(2), params.bias(2), &mut logits, l3.cout);
    let mut prob = Vec::with_capacity(d.len());
    let mut z = Vec::with_capacity(d.len());
    g.gather(&logits, &mut z);
    prob.extend(z.into_iter().map(sigmoid));
    Ok(SampleCache {
        geom: g,
        input: x,
        a1,
        a2,
        prob,
    })
}

fn check_channels(params: &NetParams) -> Result<()> {
    if !params.same_shape(&NetParams::zeros()) {
        return Err(Error::ShapeMismatch);
    }
    Ok(())
}

/// Forward pass from explicit channel grids; exactly two are required.
pub fn forward_channels(params: &NetParams, dims: Dims, channels: &[&[f32]]) -> Result<Vec<f64>> {
    check_channels(params)?;
    if channels.len() != INPUT_CHANNELS {
        return Err(Error::ChannelCount {
            expected: INPUT_CHANNELS,
            actual: channels.len(),
        });
    }
    let mask: Vec<u8> = channels[1]
        .iter()
        .enumerate()
        .map(|(index, &v)| match v {
            v if v == 0.0 => Ok(0),
            v if v == 1.0 => Ok(1),
            v => Err(Error::NonBinaryMask {
                index,
                value: f64::from(v),
            }),
        })
        .collect::<Result<_>>()?;
    Ok(forward_one(
        params,
        InputGrid {
            dims,
            image: channels[0],
            mask: Some(&mask),
        },
    )?
    .prob)
}

/// Runs the network on each patch of a batch with its mask channel.
/// Returns probabilities concatenated in patch order (x-fastest within a patch).
pub fn forward(params: &NetParams, batch: &Batch) -> Result<(Vec<f64>, ForwardCache)> {
    let inputs: Vec<InputGrid<'_>> = batch
        .patches()
        .iter()
        .map(|p| InputGrid {
            dims: p.dims(),
            image: p.image(),
            mask: Some(p.mask_channel()),
        })
        .collect();
    forward_inputs(params, &inputs)
}

/// Forward pass over arbitrary two-channel inputs.
pub fn forward_inputs(
    params: &NetParams,
    inputs: &[InputGrid<'_>],
) -> Result<(Vec<f64>, ForwardCache)> {
    check_channels(params)?;
    let mut samples = Vec::with_capacity(inputs.len());
    let mut out = Vec::new();
    for &input in inputs {
        let s = forward_one(params, input)?;
        out.extend_from_slice(&s.prob);
        samples.push(s);
    }
    Ok((
        out,
        ForwardCache {
            samples,
            param_fingerprint: fingerprint(params),
        },
    ))
}

/// Probabilities for a whole grid with an all-ones mask channel.
pub fn forward_volume(params: &NetParams, dims: Dims, image: &[f32]) -> Result<Vec<f64>> {
    check_channels(params)?;
    Ok(forward_one(
        params,
        InputGrid {
            dims,
            image,
            mask: None,
        },
    )?
    .prob)
}

/// Exact parameter gradients of a scalar loss given dL/d(probability) for
/// every output voxel of the cached forward pass.
pub fn backward(params: &NetParams, cache: &ForwardCache, d_out: &[f64]) -> Result<GradientSet> {
    let total: usize = cache.samples.iter().map(|s| s.prob.len()).sum();
    if d_out.len() != total || cache.param_fingerprint != fingerprint(params) {
        return Err(Error::CacheMismatch);
    }
    let [l1, l2, l3] = LAYERS;
    let mut grads = GradientSet::zeros();
    let mut offset = 0;
    for s in &cache.samples {
        let g = &s.geom;
        let len = g.len;
        let n = s.prob.len();
        // dL/dlogit = dL/dp * p (1 - p), placed on the padded grid
        let dz: Vec<f64> = d_out[offset..offset + n]
            .iter()
            .zip(&s.prob)
            .map(|(&dp, &p)| dp * p * (1.0 - p))
            .collect();
        offset += n;
        let mut dz3 = vec![0.0; len];
        g.scatter(&dz, &mut dz3);

        let mut da2 = vec![0.0; l2.cout * len];
        {
            let (gw, gb) = split_layer(&mut grads, 2);
            conv1x1x1_backward(g, &s.a2, l3.cin, params.weight(2), &dz3, l3.cout, gw, gb, &mut da2);
        }
        mask_relu(&mut da2, &s.a2);

        let mut da1 = vec![0.0; l1.cout * len];
        {
            let (gw, gb) = split_layer(&mut grads, 1);
            conv3x3x3_backward(
                g,
                &s.a1,
                l2.cin,
                params.weight(1),
                &da2,
                l2.cout,
                gw,
                gb,
                Some(&mut da1),
            );
        }
        mask_relu(&mut da1, &s.a1);

        let (gw, gb) = split_layer(&mut grads, 0);
        conv3x3x3_backward(g, &s.input, l1.cin, params.weight(0), &da1, l1.cout, gw, gb, None);
    }
    Ok(grads)
}

fn split_layer(grads: &mut GradientSet, layer: usize) -> (&mut [f64], &mut [f64]) {
    let (w, b) = grads.blocks_mut()[2 * layer..2 * layer + 2].split_at_mut(1);
    (&mut w[0], &mut b[0])
}

/// Zeroes gradient entries where the forward activation was clipped.
fn mask_relu(grad: &mut [f64], activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::sampling::Patch;
    use crate::volume::Rng;

    fn patch(d: Dims, seed: u64) -> Patch {
        let mut rng = Rng::new(seed, 5);
        let image = (0..d.len()).map(|_| rng.next_normal() as f32).collect();
        let target = (0..d.len()).map(|_| u8::from(rng.coin())).collect();
        Patch::new(d, image, target, vec![1; d.len()]).unwrap()
    }

    #[test]
    fn zero_params_give_one_half() {
        let p = NetParams::zeros();
        let b = Batch::new(vec![patch(Dims::new(4, 5, 3), 1)]).unwrap();
        let (out, _) = forward(&p, &b).unwrap();
        assert_eq!(out.len(), 60);
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn shape_preserved() {
        let p = init_params(&mut Rng::new(1, 1));
        for d in [Dims::new(3, 3, 3), Dims::new(7, 4, 5)] {
            let b = Batch::new(vec![patch(d, 2), patch(d, 3)]).unwrap();
            let (out, _) = forward(&p, &b).unwrap();
            assert_eq!(out.len(), 2 * d.len());
            assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn image_channel_matters() {
        let p = init_params(&mut Rng::new(4, 4));
        let d = Dims::new(5, 5, 5);
        let a = patch(d, 9);
        let doubled: Vec<f32> = a.image().iter().map(|v| 2.0 * v).collect();
        let b = Patch::new(d, doubled, a.target().to_vec(), a.selection().to_vec()).unwrap();
        let (oa, _) = forward(&p, &Batch::new(vec![a]).unwrap()).unwrap();
        let (ob, _) = forward(&p, &Batch::new(vec![b]).unwrap()).unwrap();
        assert_ne!(oa, ob);
    }

    #[test]
    fn channel_count_checked() {
        let p = NetParams::zeros();
        let d = Dims::new(3, 3, 3);
        let img = vec![0.0f32; 27];
        assert!(matches!(
            forward_channels(&p, d, &[&img]),
            Err(Error::ChannelCount {
                expected: 2,
                actual: 1
            })
        ));
        let ones = vec![1.0f32; 27];
        assert_eq!(forward_channels(&p, d, &[&img, &ones]).unwrap(), vec![0.5; 27]);
    }

    #[test]
    fn zero_upstream_gradient() {
        let p = init_params(&mut Rng::new(2, 2));
        let b = Batch::new(vec![patch(Dims::new(4, 4, 4), 3)]).unwrap();
        let (out, cache) = forward(&p, &b).unwrap();
        let g = backward(&p, &cache, &vec![0.0; out.len()]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cache_mismatch_detected() {
        let p = init_params(&mut Rng::new(2, 2));
        let q = init_params(&mut Rng::new(3, 2));
        let b = Batch::new(vec![patch(Dims::new(4, 4, 4), 3)]).unwrap();
        let (out, cache) = forward(&p, &b).unwrap();
        assert!(matches!(backward(&q, &cache, &out), Err(Error::CacheMismatch)));
        assert!(matches!(backward(&p, &cache, &out[1..]), Err(Error::CacheMismatch)));
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let p = init_params(&mut Rng::new(8, 0));
        let b = Batch::new(vec![patch(Dims::new(6, 6, 6), 1)]).unwrap();
        assert_eq!(forward(&p, &b).unwrap().0, forward(&p, &b).unwrap().0);
    }
}
