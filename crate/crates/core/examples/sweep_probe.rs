use pvtrade_core::evaluation::*;
use pvtrade_core::market_data::*;
use pvtrade_core::mdp::EnvParams;
use pvtrade_core::training::*;

fn main() {
    let cfg = GeneratorConfig::default();
    for gen_seed in [29u64, 41, 17] {
        let (market, pv) = generate_synthetic_dataset(&cfg, gen_seed).unwrap();
        let split = split_chronological(&market, &pv, HOURS_PER_YEAR as u64).unwrap();
        for (label, lr, sig, l2, ent) in [
            ("base", 0.2, 1.5, 0.001, 0.001),
            ("l2=3e-3", 0.2, 1.5, 0.003, 0.001),
            ("ent=0.01", 0.2, 1.5, 0.001, 0.01),
            ("lr.15/s2", 0.15, 2.0, 0.001, 0.001),
        ] {
            let mut tc = TrainConfig::default();
            tc.lambda_gae = 0.5;
            tc.lr = lr;
            tc.critic_lr = 0.1;
            tc.sigma_init = [sig, sig];
            tc.l2 = l2;
            tc.entropy_coef = ent;
            tc.episodes_per_batch = 4;
            let env = EnvParams::default();
            let out = train(&split.train_market, &split.train_pv, TrainMode::OrderBook, &tc, &env).unwrap();
            let mut by_epoch = vec![vec![]; tc.epochs];
            for c in &out.curves { by_epoch[c.epoch - 1].push(c.mean_return); }
            let means: Vec<f64> = by_epoch.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
            let ratio = (means[5] - means[4]).abs() / (means[1] - means[0]).abs();
            let sig_end: Vec<String> = out.seeds.iter().map(|s| format!("{:.2}/{:.2}", s.params.sigma()[0], s.params.sigma()[1])).collect();
            let mut opts = EvalOptions::default();
            opts.min_order = 2.0;
            let mut runner = ScenarioRunner::new(&split.train_market, &split.train_pv, &split.eval_market, &split.eval_pv, tc.clone(), env.clone(), opts);
            runner.preload_default(out);
            let r = runner.run_scenario(&ScenarioConfig::default()).unwrap();
            let pos = r.per_seed_profit_keur.iter().filter(|&&p| p > r.spot_only_keur).count();
            println!("gen={gen_seed} {label:>9}: curve=[{}] ratio={ratio:.3} uplift={:.3} pos={pos}/5 trades={:.0} sig_end={:?}",
                means.iter().map(|m| format!("{m:.1}")).collect::<Vec<_>>().join(","), r.uplift_keur, r.trades, sig_end);
        }
    }
}
