//! Out-of-sample evaluation: the hourly deployment harness, the scenario
//! grid, seed-CI metrics, CVaR of daily profits, trading-pattern statistics,
//! the latency benchmark and the weight report.
//!
//! Every strategy marches over the same eval hours with matched draws (the
//! fill lottery is keyed by absolute hour, independent of strategy, seed and
//! scenario cell). Reported profit is cash only: day-ahead revenue plus
//! intraday fills minus trading costs plus the imbalance settlement of the
//! realized residual.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_action, BaselineKind, CausalView, Foresight};
use crate::error::{CoreError, Result};
use crate::execution::{limit_fill, trading_cost, BookQuotes, Fill};
use crate::features::{ForecastHorizon, Normalizer, MIN_WINDOW};
use crate::market_data::{MarketRecord, PvRecord};
use crate::mdp::{EnvParams, StepDraws, TradingEnv, EPISODE_ROUNDS};
use crate::policy::{mean_action, PolicyParams};
use crate::rng::derive_rng;
use crate::training::{
    ablation_mask, pipeline_features, train, TrainConfig, TrainMode, TrainOutput,
};

/// Smallest executable order in the deployment harness [MWh].
pub const DEFAULT_MIN_ORDER: f64 = 2.5;

/// Master seed of the matched evaluation draw stream.
pub const EVAL_DRAW_SEED: u64 = 424_242;

/// One cell of the scenario grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    /// Multiplier on booked depths.
    pub liquidity_scale: f64,
    /// Imbalance-price shift in train-split stddev units.
    pub imbalance_shift: f64,
    /// Feature groups zeroed post-normalization.
    pub ablate: Vec<String>,
    pub forecast_horizon: ForecastHorizon,
    /// CVaR level used as training risk shaping, if any.
    pub cvar_alpha: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "baseline".into(),
            liquidity_scale: 1.0,
            imbalance_shift: 0.0,
            ablate: Vec::new(),
            forecast_horizon: ForecastHorizon::H1,
            cvar_alpha: None,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.liquidity_scale > 0.0) {
            return Err(CoreError::config("liquidity_scale", "must be > 0"));
        }
        if let Some(a) = self.cvar_alpha {
            if !(a > 0.0 && a < 1.0) {
                return Err(CoreError::config("cvar_alpha", "must be in (0, 1)"));
            }
        }
        ablation_mask(&self.ablate)?;
        Ok(())
    }

    /// Knobs that change the trained policy (under retrain-mode ablations).
    fn train_key(&self) -> String {
        format!(
            "ablate={:?};horizon={:?};cvar={:?}",
            self.ablate, self.forecast_horizon, self.cvar_alpha
        )
    }

    /// The paper-shaped 15-cell grid.
    pub fn standard_grid() -> Vec<ScenarioConfig> {
        let base = ScenarioConfig::default();
        let mut grid = vec![base.clone()];
        for scale in [0.25, 0.5, 1.0] {
            grid.push(ScenarioConfig {
                name: format!("liquidity_{scale}"),
                liquidity_scale: scale,
                ..base.clone()
            });
        }
        for shift in [-1.0f64, 1.0] {
            grid.push(ScenarioConfig {
                name: format!(
                    "imbalance_{}{}sigma",
                    if shift < 0.0 { "-" } else { "+" },
                    shift.abs()
                ),
                imbalance_shift: shift,
                ..base.clone()
            });
        }
        for group in ["market", "weather", "liquidity"] {
            grid.push(ScenarioConfig {
                name: format!("no_{group}_features"),
                ablate: vec![group.to_string()],
                ..base.clone()
            });
        }
        for (name, horizon) in [
            ("horizon_1h", ForecastHorizon::H1),
            ("horizon_5h", ForecastHorizon::H5),
            ("horizon_day_ahead", ForecastHorizon::DayAhead),
        ] {
            grid.push(ScenarioConfig {
                name: name.into(),
                forecast_horizon: horizon,
                ..base.clone()
            });
        }
        for alpha in [0.7, 0.9, 0.95] {
            grid.push(ScenarioConfig {
                name: format!("cvar_{alpha}"),
                cvar_alpha: Some(alpha),
                ..base.clone()
            });
        }
        grid
    }
}

/// Aggregate metrics for one scenario cell.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    /// Mean total profit across seeds [k€].
    pub profit_keur: f64,
    /// 95% CI half-width across seeds [k€].
    pub ci95_keur: f64,
    pub spot_only_keur: f64,
    pub uplift_keur: f64,
    /// Mean executed-trade count across seeds.
    pub trades: f64,
    /// Mean (across seeds) 5% CVaR of daily profits [k€].
    pub cvar5_keur: f64,
    /// Per-seed totals [k€], seed order matching the config.
    pub per_seed_profit_keur: Vec<f64>,
    pub oracle_keur: f64,
    pub forecast_tracking_keur: f64,
    pub sign_spread_keur: f64,
}

/// One executed hour of a deployment trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRow {
    pub hour: u64,
    pub q_intent: f64,
    pub delta: f64,
    pub filled: f64,
    pub price: f64,
    pub cash: f64,
    pub reward_proxy: f64,
}

/// Full outcome of one strategy pass over the eval split.
#[derive(Debug, Clone)]
pub struct StrategyRun {
    /// Total profit [€].
    pub profit: f64,
    /// Profit per delivery day [€].
    pub daily: Vec<f64>,
    /// Count of hours with a nonzero fill.
    pub trades: usize,
    pub rows: Vec<TrajectoryRow>,
}

/// Hourly decision source plugged into the harness.
enum Decider<'p> {
    Policy {
        params: &'p PolicyParams,
        normalizer: &'p Normalizer,
        mask: Vec<bool>,
    },
    Baseline(BaselineKind),
}

/// Evaluation context shared by every strategy pass (matched draws).
pub struct EvalContext<'a> {
    pub market: &'a [MarketRecord],
    pub pv: &'a [PvRecord],
    pub env: EnvParams,
    pub min_order: f64,
    /// Additive imbalance-price shift [€/MWh], already scaled by the train
    /// stddev.
    pub p_im_shift: f64,
}

impl<'a> EvalContext<'a> {
    fn run(&self, decider: &Decider<'_>, collect_rows: bool) -> Result<StrategyRun> {
        let n = self.market.len();
        if n < MIN_WINDOW + EPISODE_ROUNDS {
            return Err(CoreError::Window(format!(
                "eval split too short: {n} hours"
            )));
        }
        let base = self.pv[0].timestamp;
        // Start on the first day boundary with a full warm-up window.
        let start = MIN_WINDOW.div_ceil(EPISODE_ROUNDS) * EPISODE_ROUNDS;
        let days = (n - start) / EPISODE_ROUNDS;

        let mut daily = Vec::with_capacity(days);
        let mut trades = 0usize;
        let mut rows = Vec::new();
        let mut profit = 0.0;

        for day in 0..days {
            let mut day_cash = 0.0;
            for h in 0..EPISODE_ROUNDS {
                let idx = start + day * EPISODE_ROUNDS + h;
                let rec = &self.market[idx];
                let pvr = &self.pv[idx];
                let t = rec.timestamp;
                let g_hat = self
                    .env
                    .horizon
                    .forecast_for(self.pv, base, t)
                    .unwrap_or(pvr.g_da);
                let bid_depth = rec.bid_depth * self.env.liquidity_scale;
                let ask_depth = rec.ask_depth * self.env.liquidity_scale;
                let p_im_eff = rec.p_im + self.p_im_shift;

                // Strategy intent.
                let [q_raw, delta] = match decider {
                    Decider::Policy {
                        params,
                        normalizer,
                        mask,
                    } => {
                        let x =
                            pipeline_features(self.market, self.pv, idx, normalizer, &self.env, mask)?;
                        mean_action(params, &x, &self.env.boxes)?
                    }
                    Decider::Baseline(kind) => {
                        let prev = &self.market[idx - 1];
                        let view = CausalView {
                            g_hat,
                            g_da: pvr.g_da,
                            spread_obs: prev.p_id_ask - prev.p_id_bid,
                        };
                        let foresight = Foresight {
                            g_act: pvr.g_act,
                            g_da: pvr.g_da,
                            p_bid: rec.p_id_bid,
                            p_ask: rec.p_id_ask,
                            p_im: p_im_eff,
                            bid_depth,
                            ask_depth,
                            min_order: self.min_order,
                        };
                        baseline_action(*kind, &view, Some(&foresight), &self.env.exec)?
                    }
                };

                // Uniform market rules: deviation caps and minimum order.
                let g_cap = if matches!(decider, Decider::Baseline(BaselineKind::Oracle)) {
                    pvr.g_act
                } else {
                    g_hat
                };
                let u_ask = (g_cap - pvr.g_da).max(0.0).min(bid_depth);
                let u_buy = (pvr.g_da - g_cap).max(0.0).min(ask_depth);
                let mut q = q_raw.clamp(-u_buy, u_ask);
                if q.abs() < self.min_order {
                    q = 0.0;
                }

                // Matched execution lottery, keyed by absolute hour only.
                let fill = if q != 0.0 {
                    let mut draw = derive_rng(EVAL_DRAW_SEED, "eval-fill", t);
                    let u = rand::Rng::gen::<f64>(&mut draw);
                    let book = BookQuotes {
                        bid: rec.p_id_bid,
                        ask: rec.p_id_ask,
                        bid_depth,
                        ask_depth,
                    };
                    limit_fill(q, delta, &book, &self.env.exec, &self.env.fill, u)?
                } else {
                    Fill {
                        filled: 0.0,
                        price: 0.0,
                    }
                };
                let cost = if fill.filled != 0.0 {
                    let depth = if fill.filled > 0.0 { bid_depth } else { ask_depth };
                    trading_cost(fill.filled, depth, &self.env.exec)?
                } else {
                    0.0
                };
                if fill.filled != 0.0 {
                    trades += 1;
                }

                let e = pvr.g_act - pvr.g_da - fill.filled;
                let cash =
                    rec.p_da * pvr.g_da + fill.filled * fill.price - cost + p_im_eff * e;
                day_cash += cash;
                if collect_rows {
                    rows.push(TrajectoryRow {
                        hour: t,
                        q_intent: q,
                        delta,
                        filled: fill.filled,
                        price: fill.price,
                        cash,
                        reward_proxy: fill.filled * (fill.price - p_im_eff) - cost,
                    });
                }
            }
            daily.push(day_cash);
            profit += day_cash;
        }
        Ok(StrategyRun {
            profit,
            daily,
            trades,
            rows,
        })
    }

    /// Evaluate a trained policy (one seed).
    pub fn run_policy(
        &self,
        params: &PolicyParams,
        normalizer: &Normalizer,
        ablate: &[String],
        collect_rows: bool,
    ) -> Result<StrategyRun> {
        let mask = ablation_mask(ablate)?;
        self.run(
            &Decider::Policy {
                params,
                normalizer,
                mask,
            },
            collect_rows,
        )
    }

    /// Evaluate a baseline strategy.
    pub fn run_baseline(&self, kind: BaselineKind, collect_rows: bool) -> Result<StrategyRun> {
        kind.validate()?;
        self.run(&Decider::Baseline(kind), collect_rows)
    }
}

/// Sample stddev of the imbalance price over the train split.
pub fn train_p_im_std(market: &[MarketRecord]) -> f64 {
    let n = market.len() as f64;
    let mean = market.iter().map(|r| r.p_im).sum::<f64>() / n;
    (market.iter().map(|r| (r.p_im - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// 95% two-sided Student-t quantiles for df = 1..=30; densities beyond use
/// the normal limit.
const T_975: [f64; 30] = [
    12.7062, 4.3027, 3.1824, 2.7764, 2.5706, 2.4469, 2.3646, 2.3060, 2.2622, 2.2281, 2.2010,
    2.1788, 2.1604, 2.1448, 2.1314, 2.1199, 2.1098, 2.1009, 2.0930, 2.0860, 2.0796, 2.0739,
    2.0687, 2.0639, 2.0595, 2.0555, 2.0518, 2.0484, 2.0452, 2.0423,
];

/// 95% CI half-width across per-seed values: `t_{0.975, n−1} · sd / √n` with
/// the sample standard deviation.
pub fn ci95_halfwidth(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(CoreError::Input(format!(
            "need >= 2 values for a confidence interval, got {n}"
        )));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let t = if n - 1 <= 30 {
        T_975[n - 2]
    } else {
        1.96
    };
    Ok(t * var.sqrt() / (n as f64).sqrt())
}

/// Mean of the worst `⌈level·N⌉` daily profits.
pub fn compute_cvar_daily(daily: &[f64], level: f64) -> Result<f64> {
    if daily.len() < 20 {
        return Err(CoreError::Input(format!(
            "need >= 20 daily observations for CVaR, got {}",
            daily.len()
        )));
    }
    let mut sorted = daily.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite profits"));
    let k = (level * daily.len() as f64).ceil().max(1.0) as usize;
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

/// Options controlling a grid evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub min_order: f64,
    /// Retrain the policy for feature-changing cells (ablations, horizon
    /// swaps, risk shaping); when false, those cells reuse the baseline
    /// checkpoints and apply ablations at deployment only.
    pub retrain_ablations: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            min_order: DEFAULT_MIN_ORDER,
            retrain_ablations: true,
        }
    }
}

/// Scenario runner with a cache of trained policies keyed by the
/// train-relevant knobs.
pub struct ScenarioRunner<'a> {
    pub train_market: &'a [MarketRecord],
    pub train_pv: &'a [PvRecord],
    pub eval_market: &'a [MarketRecord],
    pub eval_pv: &'a [PvRecord],
    pub train_config: TrainConfig,
    pub env_params: EnvParams,
    pub options: EvalOptions,
    cache: HashMap<String, TrainOutput>,
    p_im_std: f64,
}

impl<'a> ScenarioRunner<'a> {
    pub fn new(
        train_market: &'a [MarketRecord],
        train_pv: &'a [PvRecord],
        eval_market: &'a [MarketRecord],
        eval_pv: &'a [PvRecord],
        train_config: TrainConfig,
        env_params: EnvParams,
        options: EvalOptions,
    ) -> Self {
        let p_im_std = train_p_im_std(train_market);
        Self {
            train_market,
            train_pv,
            eval_market,
            eval_pv,
            train_config,
            env_params,
            options,
            cache: HashMap::new(),
            p_im_std,
        }
    }

    /// Train (or fetch) the policies for a scenario cell.
    pub fn trained_for(&mut self, scenario: &ScenarioConfig) -> Result<&TrainOutput> {
        let retrain = self.options.retrain_ablations;
        let key = if retrain {
            scenario.train_key()
        } else {
            ScenarioConfig::default().train_key()
        };
        if !self.cache.contains_key(&key) {
            let mut config = self.train_config.clone();
            let mut env = self.env_params.clone();
            if retrain {
                config.ablate = scenario.ablate.clone();
                env.horizon = scenario.forecast_horizon;
                if let Some(alpha) = scenario.cvar_alpha {
                    config.risk_mode = crate::training::RiskMode::Cvar(alpha);
                }
            }
            let out = train(
                self.train_market,
                self.train_pv,
                TrainMode::OrderBook,
                &config,
                &env,
            )?;
            self.cache.insert(key.clone(), out);
        }
        Ok(self.cache.get(&key).expect("just inserted"))
    }

    /// Insert pre-trained checkpoints for the default cell (used by the CLI
    /// to evaluate from saved artifacts).
    pub fn preload_default(&mut self, out: TrainOutput) {
        self.cache.insert(ScenarioConfig::default().train_key(), out);
    }

    fn context(&self, scenario: &ScenarioConfig) -> EvalContext<'a> {
        let mut env = self.env_params.clone();
        env.liquidity_scale = scenario.liquidity_scale;
        env.horizon = scenario.forecast_horizon;
        EvalContext {
            market: self.eval_market,
            pv: self.eval_pv,
            env,
            min_order: self.options.min_order,
            p_im_shift: scenario.imbalance_shift * self.p_im_std,
        }
    }

    /// Evaluate one scenario cell across all seeds.
    pub fn run_scenario(&mut self, scenario: &ScenarioConfig) -> Result<MetricsReport> {
        scenario.validate()?;
        let deploy_ablate = if self.options.retrain_ablations {
            // Retrained policies already zero the features during training;
            // keep zeroing at deployment for consistency.
            scenario.ablate.clone()
        } else {
            scenario.ablate.clone()
        };
        let trained = self.trained_for(scenario)?;
        let normalizer = trained.normalizer.clone();
        let seed_params: Vec<(u64, PolicyParams)> = trained
            .seeds
            .iter()
            .map(|s| (s.seed, s.params.clone()))
            .collect();
        let ctx = self.context(scenario);

        let spot = ctx.run_baseline(BaselineKind::SpotOnly, false)?;
        let oracle = ctx.run_baseline(BaselineKind::Oracle, false)?;
        let tracking = ctx.run_baseline(BaselineKind::ForecastTracking, false)?;
        let sign = ctx.run_baseline(BaselineKind::SignSpread(4.0), false)?;

        let mut per_seed_profit = Vec::new();
        let mut per_seed_trades = Vec::new();
        let mut per_seed_cvar = Vec::new();
        for (_, params) in &seed_params {
            let run = ctx.run_policy(params, &normalizer, &deploy_ablate, false)?;
            per_seed_profit.push(run.profit / 1_000.0);
            per_seed_trades.push(run.trades as f64);
            per_seed_cvar.push(compute_cvar_daily(&run.daily, 0.05)? / 1_000.0);
        }
        let n = per_seed_profit.len() as f64;
        let profit = per_seed_profit.iter().sum::<f64>() / n;
        let spot_keur = spot.profit / 1_000.0;
        Ok(MetricsReport {
            scenario: scenario.name.clone(),
            profit_keur: profit,
            ci95_keur: if per_seed_profit.len() >= 2 {
                ci95_halfwidth(&per_seed_profit)?
            } else {
                0.0
            },
            spot_only_keur: spot_keur,
            uplift_keur: profit - spot_keur,
            trades: per_seed_trades.iter().sum::<f64>() / n,
            cvar5_keur: per_seed_cvar.iter().sum::<f64>() / n,
            per_seed_profit_keur: per_seed_profit,
            oracle_keur: oracle.profit / 1_000.0,
            forecast_tracking_keur: tracking.profit / 1_000.0,
            sign_spread_keur: sign.profit / 1_000.0,
        })
    }
}

/// Latency statistics of the decision path.
#[derive(Debug, Clone, Serialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub p999_ms: f64,
    pub mean_episode_ms: f64,
    pub mean_steps_per_episode: f64,
    pub throughput_eps: f64,
    pub n_steps: usize,
}

/// Wall-clock benchmark of `mean_action` + environment step.
///
/// Refuses fewer than 1,000 steps; `warmup` steps are excluded from the
/// statistics.
pub fn latency_benchmark(
    params: &PolicyParams,
    normalizer: &Normalizer,
    market: &[MarketRecord],
    pv: &[PvRecord],
    env_params: &EnvParams,
    n_steps: usize,
    warmup: usize,
) -> Result<LatencyStats> {
    if n_steps < 1_000 {
        return Err(CoreError::Input(format!(
            "latency benchmark needs >= 1000 steps to be meaningful, got {n_steps}"
        )));
    }
    let mask = vec![false; crate::features::DIM];
    let mut env = TradingEnv::new(market, pv, env_params.clone());
    let first_day = MIN_WINDOW.div_ceil(EPISODE_ROUNDS);
    let n_days = market.len() / EPISODE_ROUNDS - first_day - 1;
    let mut rng = derive_rng(EVAL_DRAW_SEED, "bench", 0);

    let mut samples = Vec::with_capacity(n_steps);
    let mut episode_times = Vec::new();
    let mut steps_done = 0usize;
    let mut episode = 0usize;
    while steps_done < n_steps + warmup {
        let day_start = EPISODE_ROUNDS * (first_day + episode % n_days.max(1));
        env.reset(day_start)?;
        let ep_start = std::time::Instant::now();
        for h in 0..EPISODE_ROUNDS {
            let idx = day_start + h;
            let draws = StepDraws {
                fill_u: rand::Rng::gen::<f64>(&mut rng),
                mid_z: 0.0,
                jump_z: 0.0,
            };
            let t0 = std::time::Instant::now();
            let x = pipeline_features(market, pv, idx, normalizer, env_params, &mask)?;
            let action = mean_action(params, &x, &env_params.boxes)?;
            env.step(action, draws)?;
            let dt = t0.elapsed();
            steps_done += 1;
            if steps_done > warmup && samples.len() < n_steps {
                samples.push(dt.as_secs_f64() * 1_000.0);
            }
        }
        episode_times.push(ep_start.elapsed().as_secs_f64() * 1_000.0);
        episode += 1;
    }

    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let pct = |q: f64| -> f64 {
        let k = ((q * samples.len() as f64).ceil() as usize).clamp(1, samples.len());
        samples[k - 1]
    };
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let mean_episode = episode_times.iter().sum::<f64>() / episode_times.len() as f64;
    Ok(LatencyStats {
        mean_ms: mean,
        p50_ms: pct(0.50),
        p95_ms: pct(0.95),
        p99_ms: pct(0.99),
        p999_ms: pct(0.999),
        mean_episode_ms: mean_episode,
        mean_steps_per_episode: (steps_done as f64) / (episode as f64),
        throughput_eps: 1_000.0 / mean_episode,
        n_steps: samples.len(),
    })
}

/// Trading-pattern statistics of a deployment trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct TradingPatternReport {
    /// Executed-trade counts per hour of day.
    pub hourly_activity: [usize; 24],
    /// Share of executed trades that crossed (offset <= 0).
    pub market_order_share: f64,
    /// Share of executed trades that rested (offset > 0).
    pub limit_order_share: f64,
    /// |filled| of every executed trade [MWh].
    pub trade_sizes: Vec<f64>,
    /// Median executed size; `None` when no trades happened.
    pub median_size: Option<f64>,
}

pub fn trading_pattern_report(rows: &[TrajectoryRow]) -> TradingPatternReport {
    let mut hourly = [0usize; 24];
    let mut sizes = Vec::new();
    let mut market_orders = 0usize;
    for row in rows {
        if row.filled != 0.0 {
            hourly[(row.hour % 24) as usize] += 1;
            sizes.push(row.filled.abs());
            if row.delta <= 0.0 {
                market_orders += 1;
            }
        }
    }
    let n = sizes.len();
    let median = if n == 0 {
        None
    } else {
        let mut sorted = sizes.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite sizes"));
        Some(if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        })
    };
    TradingPatternReport {
        hourly_activity: hourly,
        market_order_share: if n == 0 { 0.0 } else { market_orders as f64 / n as f64 },
        limit_order_share: if n == 0 { 0.0 } else { (n - market_orders) as f64 / n as f64 },
        trade_sizes: sizes,
        median_size: median,
    }
}

/// One row of the weight report.
#[derive(Debug, Clone, Serialize)]
pub struct WeightRow {
    /// "volume" or "delta".
    pub action: String,
    pub feature: String,
    /// Mean weight across seeds.
    pub weight: f64,
    /// Per-seed standard deviation (sample).
    pub seed_std: f64,
}

/// Ranked table of learned weights: per action dimension, features sorted by
/// |mean weight| descending, with per-seed stds.
pub fn weight_report(per_seed: &[&PolicyParams]) -> Vec<WeightRow> {
    use crate::features::REGISTRY;
    let n = per_seed.len().max(1) as f64;
    let mut rows = Vec::new();
    for (k, action) in [(0usize, "volume"), (1usize, "delta")] {
        let mut action_rows: Vec<WeightRow> = REGISTRY
            .iter()
            .enumerate()
            .map(|(j, (name, _))| {
                let mean = per_seed.iter().map(|p| p.w[k][j]).sum::<f64>() / n;
                let var = if per_seed.len() >= 2 {
                    per_seed
                        .iter()
                        .map(|p| (p.w[k][j] - mean).powi(2))
                        .sum::<f64>()
                        / (n - 1.0)
                } else {
                    0.0
                };
                WeightRow {
                    action: action.to_string(),
                    feature: name.to_string(),
                    weight: mean,
                    seed_std: var.sqrt(),
                }
            })
            .collect();
        action_rows.sort_by(|a, b| {
            b.weight
                .abs()
                .partial_cmp(&a.weight.abs())
                .expect("finite weights")
        });
        rows.extend(action_rows);
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{generate_synthetic_dataset, GeneratorConfig};

    #[test]
    fn ci95_examples() {
        assert_eq!(ci95_halfwidth(&[5.0, 5.0, 5.0, 5.0, 5.0]).unwrap(), 0.0);
        let hw = ci95_halfwidth(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((hw - 1.963).abs() < 1e-3, "hw {hw}");
        let hw = ci95_halfwidth(&[0.0, 2.0]).unwrap();
        assert!((hw - 12.706).abs() < 1e-3, "hw {hw}");
        assert!(ci95_halfwidth(&[1.0]).is_err());
    }

    #[test]
    fn cvar_daily_examples() {
        let all_ones = vec![1.0; 30];
        assert_eq!(compute_cvar_daily(&all_ones, 0.05).unwrap(), 1.0);

        let days: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert!((compute_cvar_daily(&days, 0.05).unwrap() - 3.0).abs() < 1e-12);

        let mut catastrophic = vec![0.0; 99];
        catastrophic.push(-50.0);
        assert!((compute_cvar_daily(&catastrophic, 0.05).unwrap() + 10.0).abs() < 1e-12);

        assert!(compute_cvar_daily(&[1.0; 10], 0.05).is_err());
    }

    #[test]
    fn cvar_never_exceeds_mean() {
        use rand::Rng;
        let mut rng = crate::rng::derive_rng(2, "cvar-mean", 0);
        let days: Vec<f64> = (0..60).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let mean = days.iter().sum::<f64>() / days.len() as f64;
        assert!(compute_cvar_daily(&days, 0.05).unwrap() <= mean);
    }

    #[test]
    fn pattern_report_examples() {
        let rows: Vec<TrajectoryRow> = [1.0, 2.0, 3.0]
            .iter()
            .enumerate()
            .map(|(i, &f)| TrajectoryRow {
                hour: i as u64,
                q_intent: f,
                delta: if i == 0 { 0.0 } else { 1.0 },
                filled: f,
                price: 50.0,
                cash: 0.0,
                reward_proxy: 0.0,
            })
            .collect();
        let report = trading_pattern_report(&rows);
        assert_eq!(report.median_size, Some(2.0));
        assert!((report.market_order_share + report.limit_order_share - 1.0).abs() < 1e-12);
        assert!((report.market_order_share - 1.0 / 3.0).abs() < 1e-12);

        let empty = trading_pattern_report(&[]);
        assert_eq!(empty.median_size, None);
        assert!(empty.trade_sizes.is_empty());
    }

    #[test]
    fn weight_report_ranks_by_magnitude() {
        let mut p = PolicyParams::zeros(crate::features::DIM, [0.5, 0.5]);
        let rows = weight_report(&[&p]);
        assert!(rows.iter().all(|r| r.weight == 0.0));

        p.w[0][crate::features::index_of("id_ask")] = -0.5;
        p.w[0][crate::features::index_of("bid_depth")] = 0.2;
        let rows = weight_report(&[&p]);
        let volume_rows: Vec<&WeightRow> =
            rows.iter().filter(|r| r.action == "volume").collect();
        assert_eq!(volume_rows[0].feature, "id_ask");
        assert_eq!(volume_rows[1].feature, "bid_depth");
    }

    #[test]
    fn spot_only_profit_matches_accounting_identity() {
        let (market, pv) = generate_synthetic_dataset(&GeneratorConfig::default(), 17).unwrap();
        let ctx = EvalContext {
            market: &market[..24 * 40],
            pv: &pv[..24 * 40],
            env: EnvParams::default(),
            min_order: DEFAULT_MIN_ORDER,
            p_im_shift: 0.0,
        };
        let run = ctx.run_baseline(BaselineKind::SpotOnly, false).unwrap();
        assert_eq!(run.trades, 0);
        let start = 24;
        let manual: f64 = (start..24 * 40)
            .map(|i| market[i].p_da * pv[i].g_da + market[i].p_im * (pv[i].g_act - pv[i].g_da))
            .sum();
        assert!(
            (run.profit - manual).abs() < 1e-6,
            "harness {} vs identity {manual}",
            run.profit
        );
    }

    #[test]
    fn oracle_dominates_marketable_baselines_on_random_block() {
        let (market, pv) = generate_synthetic_dataset(&GeneratorConfig::default(), 41).unwrap();
        // A ~100-hour random block (rounded to whole days by the harness).
        let lo = 24 * 200;
        let hi = lo + 24 * 6;
        let ctx = EvalContext {
            market: &market[lo..hi],
            pv: &pv[lo..hi],
            env: EnvParams::default(),
            min_order: DEFAULT_MIN_ORDER,
            p_im_shift: 0.0,
        };
        let oracle = ctx.run_baseline(BaselineKind::Oracle, false).unwrap();
        for kind in [
            BaselineKind::SpotOnly,
            BaselineKind::ForecastTracking,
            BaselineKind::SignSpread(4.0),
        ] {
            let other = ctx.run_baseline(kind, false).unwrap();
            assert!(
                oracle.profit >= other.profit - 1e-9,
                "oracle {} vs {} {}",
                oracle.profit,
                kind.name(),
                other.profit
            );
        }
    }

    #[test]
    fn non_oracle_baselines_are_causal() {
        use rand::Rng;
        let (market, pv) = generate_synthetic_dataset(&GeneratorConfig::default(), 17).unwrap();
        let exec = crate::execution::ExecParams::default();
        let mut rng = crate::rng::derive_rng(31, "causal", 0);
        for trial in 0..100 {
            let idx = 24 + (trial * 53) % 2000;
            let t = market[idx].timestamp;
            let g_hat = ForecastHorizon::H1
                .forecast_for(&pv, pv[0].timestamp, t)
                .unwrap();
            let view = CausalView {
                g_hat,
                g_da: pv[idx].g_da,
                spread_obs: market[idx - 1].p_id_ask - market[idx - 1].p_id_bid,
            };
            // Perturb genuinely future-unknown fields at hours >= t; the
            // commitment g_da is day-ahead information and stays.
            let mut pv2 = pv.clone();
            let mut m2 = market.clone();
            for _ in 0..8 {
                let j = idx + rng.gen_range(0..100);
                pv2[j].g_act = rng.gen_range(0.0..10.0);
                pv2[j].forecast_1h = rng.gen_range(0.0..10.0);
                m2[j].p_id_bid = rng.gen_range(10.0..90.0);
                m2[j].p_id_ask = m2[j].p_id_bid + rng.gen_range(0.0..8.0);
                m2[j].p_im = rng.gen_range(-10.0..120.0);
            }
            let g_hat2 = ForecastHorizon::H1
                .forecast_for(&pv2, pv2[0].timestamp, t)
                .unwrap();
            let view2 = CausalView {
                g_hat: g_hat2,
                g_da: pv2[idx].g_da,
                spread_obs: m2[idx - 1].p_id_ask - m2[idx - 1].p_id_bid,
            };
            for kind in [
                BaselineKind::SpotOnly,
                BaselineKind::ForecastTracking,
                BaselineKind::SignSpread(4.0),
            ] {
                let a = baseline_action(kind, &view, None, &exec).unwrap();
                let b = baseline_action(kind, &view2, None, &exec).unwrap();
                assert_eq!(a, b, "{} changed under future perturbation", kind.name());
            }
        }
    }

    #[test]
    fn scenario_grid_has_fifteen_cells() {
        let grid = ScenarioConfig::standard_grid();
        assert_eq!(grid.len(), 15);
        assert!(grid.iter().all(|s| s.validate().is_ok()));
        let names: Vec<&str> = grid.iter().map(|s| s.name.as_str()).collect();
        assert!(names.contains(&"baseline"));
        assert!(names.contains(&"liquidity_0.25"));
        assert!(names.contains(&"imbalance_-1sigma"));
        assert!(names.contains(&"no_weather_features"));
        assert!(names.contains(&"horizon_day_ahead"));
        assert!(names.contains(&"cvar_0.95"));
    }

    #[test]
    fn unknown_scenario_knob_is_config_error() {
        let mut s = ScenarioConfig::default();
        s.ablate = vec!["prices".into()];
        assert!(s.validate().is_err());
        let mut s = ScenarioConfig::default();
        s.liquidity_scale = 0.0;
        assert!(s.validate().is_err());
    }
}
