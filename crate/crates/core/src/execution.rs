//! Per-period trade execution: the exact one-period optimizer (a binary side
//! selection plus a concave quadratic per side, solved in closed form), the
//! stage-profit accounting, the trading-cost/impact model, and the stylized
//! limit-order fill model.
//!
//! The optimizer decides ex-ante: the quadratic imbalance term inside the
//! decision uses the forecast deviation, while the reported result settles
//! the realized deviation. Ties between trading and not trading break toward
//! no-trade.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Penalty and cost coefficients for the per-period problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecParams {
    /// Trade-size penalty [€/MWh²].
    pub alpha: f64,
    /// Residual-imbalance penalty [€/MWh²].
    pub beta: f64,
    /// Recommendation-tracking penalty [€/MWh²].
    pub kappa: f64,
    /// Linear trading-cost coefficient [€/MWh].
    pub imp_alpha: f64,
    /// Quadratic impact coefficient [€·MWh⁻²·MWh-depth].
    pub imp_beta: f64,
}

impl Default for ExecParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.5,
            kappa: 1.0,
            imp_alpha: 0.5,
            imp_beta: 2.0,
        }
    }
}

impl ExecParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("kappa", self.kappa),
            ("imp_alpha", self.imp_alpha),
            ("imp_beta", self.imp_beta),
        ] {
            if !(v >= 0.0) {
                return Err(CoreError::config(name, "must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Given inputs for one delivery period.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodInputs {
    /// Intraday bid price (plant sells at this) [€/MWh].
    pub p_bid: f64,
    /// Intraday ask price (plant buys at this) [€/MWh].
    pub p_ask: f64,
    /// Imbalance settlement price [€/MWh].
    pub p_im: f64,
    /// Day-ahead committed volume [MWh].
    pub g_da: f64,
    /// Latest generation forecast [MWh].
    pub g_hat: f64,
    /// Realized generation [MWh].
    pub g_act: f64,
    /// Depth available for selling [MWh].
    pub depth_ask_cap: f64,
    /// Depth available for buying [MWh].
    pub depth_buy_cap: f64,
    /// Recommended net action (positive = sell) [MWh].
    pub a_rec: f64,
}

/// Outcome of one period: executed volumes, side indicator, residual
/// imbalance and realized stage profit.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionResult {
    /// Sold volume [MWh], `q_ask * q_buy = 0`.
    pub q_ask: f64,
    /// Bought volume [MWh].
    pub q_buy: f64,
    /// Side indicator: true iff the sell side executed.
    pub z: bool,
    /// Residual imbalance `g_act - g_da - q_ask + q_buy` [MWh].
    pub e: f64,
    /// Realized stage profit [€].
    pub stage_profit: f64,
}

/// Tight capacity bounds from the forecast deviation and the book depth.
///
/// At most one of the two bounds is positive.
pub fn effective_caps(g_hat: f64, g_da: f64, depth_ask: f64, depth_buy: f64) -> (f64, f64) {
    let surplus = (g_hat - g_da).max(0.0);
    let shortfall = (g_da - g_hat).max(0.0);
    (surplus.min(depth_ask), shortfall.min(depth_buy))
}

/// One-period objective (the decision criterion) for a candidate trade.
///
/// `delta` is the generation deviation used in the imbalance terms; the
/// ex-ante decision passes the forecast deviation, the realized accounting
/// passes the actual one.
fn period_objective(
    q_ask: f64,
    q_buy: f64,
    delta: f64,
    inputs: &PeriodInputs,
    params: &ExecParams,
) -> f64 {
    let e = delta - q_ask + q_buy;
    let traded = q_ask + q_buy;
    let net = q_ask - q_buy;
    inputs.p_bid * q_ask - inputs.p_ask * q_buy + inputs.p_im * e
        - 0.5 * params.alpha * traded * traded
        - 0.5 * params.beta * e * e
        - 0.5 * params.kappa * (net - inputs.a_rec) * (net - inputs.a_rec)
}

/// Maximize a concave quadratic `c2·q² + c1·q` (c2 <= 0) over `[0, hi]`.
/// Degenerate quadratics fall back to the linear boundary solution with the
/// tie broken toward zero.
fn argmax_quadratic_box(c2: f64, c1: f64, hi: f64) -> f64 {
    if hi <= 0.0 {
        return 0.0;
    }
    if c2 < 0.0 {
        (-c1 / (2.0 * c2)).clamp(0.0, hi)
    } else if c1 > 0.0 {
        hi
    } else {
        0.0
    }
}

/// Exact maximizer of the one-period objective over the feasible set.
///
/// For each side the restricted objective is concave quadratic, so the
/// first-order condition clipped to the box is exact; the two candidates are
/// enumerated and compared against no-trade. The decision uses the forecast
/// deviation; the returned residual and stage profit use the realized one.
pub fn execute_period(inputs: &PeriodInputs, params: &ExecParams) -> ExecutionResult {
    let (u_ask, u_buy) = effective_caps(
        inputs.g_hat,
        inputs.g_da,
        inputs.depth_ask_cap,
        inputs.depth_buy_cap,
    );
    let delta_dec = inputs.g_hat - inputs.g_da;
    let denom = params.alpha + params.beta + params.kappa;

    // Sell side: d/dq [p_bid·q + p_im·(Δ−q) − α/2 q² − β/2 (Δ−q)² − κ/2 (q−a)²]
    //          = (p_bid − p_im + β·Δ + κ·a) − (α+β+κ)·q.
    let sell_c1 = inputs.p_bid - inputs.p_im + params.beta * delta_dec + params.kappa * inputs.a_rec;
    let q_sell = argmax_quadratic_box(-0.5 * denom, sell_c1, u_ask);
    let v_sell = period_objective(q_sell, 0.0, delta_dec, inputs, params);

    // Buy side: d/dq [−p_ask·q + p_im·(Δ+q) − α/2 q² − β/2 (Δ+q)² − κ/2 (q+a)²]
    //         = (p_im − p_ask − β·Δ − κ·a) − (α+β+κ)·q.
    let buy_c1 = inputs.p_im - inputs.p_ask - params.beta * delta_dec - params.kappa * inputs.a_rec;
    let q_buy = argmax_quadratic_box(-0.5 * denom, buy_c1, u_buy);
    let v_buy = period_objective(0.0, q_buy, delta_dec, inputs, params);

    let v_none = period_objective(0.0, 0.0, delta_dec, inputs, params);

    // Tie-break toward no-trade: only a strictly better branch trades.
    let (qa, qb) = if v_sell > v_none && v_sell >= v_buy && q_sell > 0.0 {
        (q_sell, 0.0)
    } else if v_buy > v_none && q_buy > 0.0 {
        (0.0, q_buy)
    } else {
        (0.0, 0.0)
    };

    let e = inputs.g_act - inputs.g_da - qa + qb;
    ExecutionResult {
        q_ask: qa,
        q_buy: qb,
        z: qa > 0.0,
        e,
        stage_profit: stage_profit(qa, qb, e, inputs, params),
    }
}

/// Realized stage profit for executed volumes and residual imbalance.
pub fn stage_profit(
    q_ask: f64,
    q_buy: f64,
    e: f64,
    inputs: &PeriodInputs,
    params: &ExecParams,
) -> f64 {
    let traded = q_ask + q_buy;
    let net = q_ask - q_buy;
    inputs.p_bid * q_ask - inputs.p_ask * q_buy + inputs.p_im * e
        - 0.5 * params.alpha * traded * traded
        - 0.5 * params.beta * e * e
        - 0.5 * params.kappa * (net - inputs.a_rec) * (net - inputs.a_rec)
}

/// Trading cost / impact: `imp_alpha·|q| + imp_beta·q²/depth`.
///
/// Errors when a nonzero volume meets a non-positive depth.
pub fn trading_cost(q: f64, depth: f64, params: &ExecParams) -> Result<f64> {
    if q == 0.0 {
        return Ok(0.0);
    }
    if depth <= 0.0 {
        return Err(CoreError::Input(format!(
            "degenerate depth {depth} for trade of {q} MWh"
        )));
    }
    Ok(params.imp_alpha * q.abs() + params.imp_beta * q * q / depth)
}

/// Logistic fill-probability coefficients for passive limit orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FillParams {
    /// Intercept.
    pub c0: f64,
    /// Sensitivity to the limit-price offset [per €/MWh].
    pub c1: f64,
    /// Sensitivity to relative contra-side depth.
    pub c2: f64,
    /// Reference depth d̄ normalizing the contra depth [MWh].
    pub dbar: f64,
}

impl Default for FillParams {
    fn default() -> Self {
        Self {
            c0: 1.0,
            c1: 0.8,
            c2: 0.5,
            dbar: 20.0,
        }
    }
}

/// Best-quote snapshot the fill model executes against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BookQuotes {
    pub bid: f64,
    pub ask: f64,
    pub bid_depth: f64,
    pub ask_depth: f64,
}

/// Outcome of a limit-order submission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fill {
    /// Executed volume, sign matching the order (positive = sell).
    pub filled: f64,
    /// Execution price [€/MWh]; 0 when nothing filled.
    pub price: f64,
}

/// Execute a signed order (`q > 0` sell, `q < 0` buy) with limit offset
/// `delta` measured from the contra quote.
///
/// `delta <= 0` crosses: the order behaves as a market order, filling up to
/// the contra depth at the contra quote worsened by impact. `delta > 0`
/// rests: it fills all-or-nothing at `contra quote ± delta` with probability
/// `logistic(c0 − c1·delta + c2·(contra_depth/d̄))` decided by the uniform
/// draw `u`; the unfilled remainder expires at the end of the hour.
pub fn limit_fill(
    q: f64,
    delta: f64,
    book: &BookQuotes,
    exec: &ExecParams,
    fill: &FillParams,
    u: f64,
) -> Result<Fill> {
    if !(q.is_finite() && delta.is_finite() && u.is_finite()) {
        return Err(CoreError::Input("non-finite order inputs".into()));
    }
    if q == 0.0 {
        return Err(CoreError::Input("zero-volume order".into()));
    }
    if !(0.0..1.0).contains(&u) {
        return Err(CoreError::Input(format!("uniform draw {u} outside [0,1)")));
    }
    let selling = q > 0.0;
    let (contra_quote, contra_depth) = if selling {
        (book.bid, book.bid_depth)
    } else {
        (book.ask, book.ask_depth)
    };

    if delta <= 0.0 {
        // Marketable: partial fill against the contra depth, price worsened
        // by the average impact of the executed size.
        let size = q.abs().min(contra_depth);
        if size <= 0.0 {
            return Ok(Fill { filled: 0.0, price: 0.0 });
        }
        let impact = exec.imp_beta * size / contra_depth;
        let price = if selling {
            contra_quote - impact
        } else {
            contra_quote + impact
        };
        Ok(Fill {
            filled: if selling { size } else { -size },
            price,
        })
    } else {
        // Passive: all-or-nothing at the requested improvement over the
        // contra quote.
        let score = fill.c0 - fill.c1 * delta + fill.c2 * (contra_depth / fill.dbar);
        let p_fill = 1.0 / (1.0 + (-score).exp());
        if u < p_fill {
            let price = if selling {
                contra_quote + delta
            } else {
                contra_quote - delta
            };
            Ok(Fill { filled: q, price })
        } else {
            Ok(Fill { filled: 0.0, price: 0.0 })
        }
    }
}

/// Brute-force reference for [`execute_period`]: enumerate both sides on a
/// fixed grid of the decision objective. Test-only oracle, kept independent
/// of the closed form.
pub fn grid_search_period(
    inputs: &PeriodInputs,
    params: &ExecParams,
    step: f64,
) -> (f64, f64, f64) {
    let (u_ask, u_buy) = effective_caps(
        inputs.g_hat,
        inputs.g_da,
        inputs.depth_ask_cap,
        inputs.depth_buy_cap,
    );
    let delta_dec = inputs.g_hat - inputs.g_da;
    let mut best = (0.0, 0.0, period_objective(0.0, 0.0, delta_dec, inputs, params));
    let mut scan = |sell: bool, hi: f64| {
        let n = (hi / step).floor() as usize;
        for i in 0..=n {
            let q = (i as f64 * step).min(hi);
            let (qa, qb) = if sell { (q, 0.0) } else { (0.0, q) };
            let v = period_objective(qa, qb, delta_dec, inputs, params);
            if v > best.2 {
                best = (qa, qb, v);
            }
        }
        // Include the boundary exactly.
        let (qa, qb) = if sell { (hi, 0.0) } else { (0.0, hi) };
        let v = period_objective(qa, qb, delta_dec, inputs, params);
        if v > best.2 {
            best = (qa, qb, v);
        }
    };
    if u_ask > 0.0 {
        scan(true, u_ask);
    }
    if u_buy > 0.0 {
        scan(false, u_buy);
    }
    best
}
