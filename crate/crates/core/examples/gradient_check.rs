//! Compares backpropagated gradients of the selective loss through the network
//! with central finite differences, block by block.

use sparseg::loss::{selective_batch_dice, LossInput};
use sparseg::model::{backward, forward, init_params, BLOCK_NAMES};
use sparseg::sampling::{Batch, Patch};
use sparseg::volume::{Dims, Rng};

fn main() -> sparseg::Result<()> {
    let d = Dims::new(6, 6, 6);
    let mut rng = Rng::new(0, 0);
    let image: Vec<f32> = (0..d.len()).map(|_| rng.next_normal() as f32).collect();
    let target: Vec<u8> = (0..d.len()).map(|i| u8::from(image[i] > 0.3)).collect();
    let selection: Vec<u8> = (0..d.len()).map(|i| u8::from((i / d.slice_len()).is_multiple_of(2))).collect();
    let batch = Batch::new(vec![Patch::new(d, image, target, selection)?])?;
    let (t, s) = (batch.targets(), batch.selections());
    let params = init_params(&mut Rng::new(0, 1));

    let loss = |p: &sparseg::model::NetParams| -> sparseg::Result<f64> {
        let (r, _) = forward(p, &batch)?;
        Ok(selective_batch_dice(LossInput { r: &r, t: &t, s: &s })?.value)
    };
    let (r, cache) = forward(&params, &batch)?;
    let out = selective_batch_dice(LossInput { r: &r, t: &t, s: &s })?;
    let grads = backward(&params, &cache, &out.gradient)?;

    let h = 1e-6;
    for (b, name) in BLOCK_NAMES.iter().enumerate() {
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for i in 0..params.blocks()[b].len() {
            let mut up = params.clone();
            let mut down = params.clone();
            up.blocks_mut()[b][i] += h;
            down.blocks_mut()[b][i] -= h;
            let fd = (loss(&up)? - loss(&down)?) / (2.0 * h);
            diff += (grads.blocks()[b][i] - fd).powi(2);
            norm += fd * fd;
        }
        println!("{name:8} relative error {:.2e}", diff.sqrt() / norm.sqrt().max(1e-300));
    }
    Ok(())
}
