//! Trains each suggestion model on a toy bimodal mapping and prints the
//! spread of its suggestions.

use partsynth::psn::{train_psn_pairs, Kind, PsnConfig};
use partsynth::LatentCode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> partsynth::Result<()> {
    let d = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pairs: Vec<(LatentCode, LatentCode)> = (0..128)
        .map(|_| {
            let y: Vec<f32> = (0..d).map(|_| rng.gen()).collect();
            let mode = if rng.gen_bool(0.5) { 0.2 } else { 0.8 };
            let z = (0..d).map(|_| mode + rng.gen_range(-0.05..0.05)).collect();
            (LatentCode::new(y), LatentCode::new(z))
        })
        .collect();

    for kind in Kind::ALL {
        let mut config = PsnConfig::reference(kind).with_epochs(if kind == Kind::Cddpm { 200 } else { 30 }).with_lr(1e-3);
        config.hidden = 64;
        config.batch_size = 16;
        config.diffusion_steps = 50;
        config.beta_end = 0.2;
        config.unet_widths = [4, 4, 8, 8, 8];
        config.time_dim = 8;
        let (model, report) = train_psn_pairs(&pairs, &config)?;
        let means: Vec<String> = model
            .suggest(&pairs[0].0, 6, 1)?
            .iter()
            .map(|z| format!("{:.2}", z.values().iter().sum::<f32>() / d as f32))
            .collect();
        println!("{kind:>5}: final loss {:>8.4}, suggestion means [{}]", report.epochs.last().unwrap().loss, means.join(", "));
    }
    Ok(())
}
