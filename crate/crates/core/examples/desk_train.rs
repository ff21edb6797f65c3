//! Trains the desk-scale model on synthetic pairs and reports held-out
//! metrics. Usage: `desk_train [iterations] [train_pairs] [noise_sigma] [decay_rate] [flip]`.

use std::time::Instant;

use stereonet::baseline::MatchConfig;
use stereonet::data::synth_corpus;
use stereonet::eval::{epe, precision_experiment};
use stereonet::refinement::resize_disparity;
use stereonet::training::{TrainConfig, Trainer};
use stereonet::{ModelConfig, StereoNet};

fn main() -> stereonet::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let iterations = args.get(1).map_or(2500, |s| s.parse().unwrap());
    let pairs = args.get(2).map_or(200, |s| s.parse().unwrap());
    let noise = args.get(3).map_or(2.0, |s| s.parse().unwrap());
    let decay_rate = args.get(4).map_or(0.7, |s| s.parse().unwrap());
    let vertical_flip = args.get(5).is_some_and(|s| s == "flip");
    let train = synth_corpus(pairs, 128, 64, 20.0, noise, 1)?;
    let test = synth_corpus(20, 128, 64, 20.0, noise, 2)?;
    let model = StereoNet::new(ModelConfig { max_disparity: 31, ..Default::default() }, 0)?;
    let config = TrainConfig {
        decay_rate,
        vertical_flip,
        ..TrainConfig::new(iterations)
    };
    let mut trainer = Trainer::new(model, config)?;
    let t0 = Instant::now();
    let mut window = Vec::new();
    trainer.run(&train, |r| {
        window.push((r.loss, r.epe_fullres));
        if r.step % 50 == 0 {
            let n = window.len() as f64;
            let (l, e) = window.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
            println!("step {} lr {:.2e} loss {:.4} epe {:.4} ({:.1}s)", r.step, r.lr, l / n, e / n, t0.elapsed().as_secs_f64());
            window.clear();
        }
    })?;
    let model = &trainer.model;
    let mut per_level = vec![0.0; model.config.k + 1];
    for s in &test {
        for (i, lvl) in model.predict(&s.left, &s.right)?.iter().enumerate() {
            let up = resize_disparity(lvl, s.height(), s.width(), 0)?;
            per_level[i] += epe(&up, &s.gt_left, &s.valid_mask)? / test.len() as f64;
        }
    }
    println!("held-out EPE per level (coarse first): {per_level:?}");
    for row in precision_experiment(&[("k3_multi", model)], &MatchConfig::new(31), &test)? {
        println!("{} mean {:?} pairs {:?}", row.config, row.mean(), row.per_pair);
    }
    Ok(())
}
