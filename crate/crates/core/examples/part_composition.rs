//! Trains a small part composition network and checks reconstruction and
//! localization on held-out parts.

use partsynth::dataset::{make_dataset, Category, PartRecord};
use partsynth::pcn::{train_pcn, PcnArch, PcnTrainConfig};

fn main() -> partsynth::Result<()> {
    let data = make_dataset(Category::Chair, 20, 3, 16)?;
    let parts: Vec<PartRecord> = data.train_parts().cloned().collect();
    let config = PcnTrainConfig {
        lr_ae: 1e-3,
        lr_stn: 1e-3,
        epochs_joint: 30,
        epochs_stn: 10,
        batch_size: 8,
        seed: 0,
        arch: PcnArch { latent_dim: 32, encoder_widths: [4, 8, 8, 16, 16], localizer_widths: [4, 8, 8, 8], localizer_fc: [32, 16, 16] },
    };
    let (pcn, report) = train_pcn(&parts, &config)?;
    for e in report.epochs.iter().step_by(10) {
        println!("epoch {:2} {:?}  ae {:.4}  stn {:.4}", e.epoch, e.stage, e.loss_ae, e.loss_stn);
    }

    let (mut iou, mut scale_err) = (0.0, 0.0);
    let test: Vec<&PartRecord> = data.test_parts().collect();
    for p in &test {
        let recon = pcn.decode(&pcn.encode(&p.normalized)?)?;
        iou += recon.iou(&p.normalized, 0.5)?;
        scale_err += (pcn.localize(&recon)?.scale - p.xf.scale).abs();
    }
    let n = test.len() as f64;
    println!("held-out: mean IoU {:.3}, mean |scale error| {:.3}", iou / n, scale_err / n);
    let mut train_iou = 0.0;
    for p in &parts {
        train_iou += pcn.decode(&pcn.encode(&p.normalized)?)?.iou(&p.normalized, 0.5)?;
    }
    println!("training parts: mean IoU {:.3}", train_iou / parts.len() as f64);
    Ok(())
}
