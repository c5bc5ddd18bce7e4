use lrdm_core::bundle::{ModelBundle, ScheduleSpec};
use lrdm_core::data::make_mixture;
use lrdm_core::models::{DenoiserConfig, DenoiserNet, FirstStage};
use lrdm_core::rng::Rng;
use lrdm_core::trainer::{train, TrainConfig, TrainMode};

fn main() {
    let data = make_mixture(4096, 8, 2.0, 0.2, 1, false).unwrap();
    let mut rng = Rng::from_seed(7);
    let spec = ScheduleSpec::default_for(100);
    let net = DenoiserNet::new(
        DenoiserConfig::new(2).with_hidden(vec![128, 128, 128]).with_dropout(0.2),
        &mut rng,
    );
    let mut config = TrainConfig::new(TrainMode::Dm);
    config.steps = 1000;
    config.batch_size = 32;
    let mut bundle = ModelBundle::new(spec, net, None, FirstStage::Identity, config).unwrap();
    let t0 = std::time::Instant::now();
    let report = train(&mut bundle, &data, None, None).unwrap();
    let dt = t0.elapsed();
    println!("1000 steps in {:.2?} -> {:.1} steps/s", dt, 1000.0 / dt.as_secs_f64());
    println!("first loss {:.4} last loss {:.4}", report.rows[0].loss_total, report.rows.last().unwrap().loss_total);
}
