//! Soft classification targets for the four camera heads, decoding and the
//! KL training loss.
//!
//! ```sh
//! cargo run --example bin_labels
//! ```

use spherecal::bins::{decode, default_sigma, encode, encode_targets, kl_loss, BinDistribution, BinSet, DecodeMode, Head};
use spherecal::Result;

fn main() -> Result<()> {
    let bins = BinSet::default();
    for head in Head::ALL {
        let spec = bins.get(head);
        let (lo, hi) = spec.range();
        println!(
            "{:<9} {:3} bins over [{lo:+.3}, {hi:+.3}], narrowest {:.4}, widest {:.4}",
            head.name(),
            spec.len(),
            (0..spec.len()).map(|b| spec.width(b)).fold(f64::INFINITY, f64::min),
            (0..spec.len()).map(|b| spec.width(b)).fold(0.0, f64::max),
        );
    }

    let roll = bins.get(Head::Roll);
    for value in [0.0, 0.05, 0.6] {
        let enc = encode(value, roll, default_sigma(value, roll));
        let back = decode(&enc.distribution, roll, DecodeMode::ArgmaxCenter)?;
        let mean = decode(&enc.distribution, roll, DecodeMode::Expectation)?;
        println!(
            "roll {value:.3}: bin {} (width {:.4}), argmax {back:+.5}, expectation {mean:+.5}",
            roll.bin_index(value),
            roll.width(roll.bin_index(value))
        );
    }

    let targets = encode_targets(0, [0.1, -0.3, 1.2, 0.55], &bins);
    let truth = BinDistribution::from_weights(targets.hfov.probs.clone())?;
    let guess = BinDistribution::uniform(truth.len());
    let near = encode(1.25, bins.get(Head::Hfov), 0.03).distribution;
    println!("\nKL(target || uniform) = {:.4}", kl_loss(&truth, &guess)?);
    println!("KL(target || nearby)  = {:.4}", kl_loss(&truth, &near)?);
    println!("KL(target || target)  = {:.4}", kl_loss(&truth, &truth)?);

    println!("\nbin layout JSON is {} bytes", bins.to_json().len());
    Ok(())
}
