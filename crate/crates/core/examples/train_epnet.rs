//! Toy EPNet training on random-ellipse phantoms, optionally after an
//! extrapolator-only pretraining phase.
//!
//! `cargo run --release --example train_epnet -- [steps] [pretrain_steps]`

use std::time::Instant;

use lact::config::RunConfig;
use lact::nn::{epnet_train, EpNet};
use lact::simulate::make_dataset;

fn main() -> lact::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("step counts are integers"));
    let mut cfg = RunConfig::toy_training(7);
    cfg.train.steps = args.next().unwrap_or(cfg.train.steps);
    cfg.train.epl_pretrain_steps = args.next().unwrap_or(0);

    let setup = cfg.geometry.setup()?;
    let data = make_dataset(cfg.train_items, &cfg.phantom_spec(7), &setup, &cfg.noise)?;
    let mut net = EpNet::new(setup, cfg.epnet(7)?)?;
    println!("{} parameters in {} arrays", net.params().n_scalars(), net.params().len());

    let t = Instant::now();
    let report = epnet_train(&mut net, &data, &cfg.train)?;
    for (i, l) in report.loss_curve.iter().enumerate().step_by(20) {
        println!("step {i:>4}: loss {l:.3}");
    }
    println!(
        "mean loss {:.3} -> {:.3} ({:.1}% lower) in {:.0}s",
        report.initial_mean_loss,
        report.final_mean_loss,
        100.0 * report.relative_reduction(),
        t.elapsed().as_secs_f64()
    );
    Ok(())
}
