//! Constant-velocity Kalman filtering and short-horizon extrapolation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;
use crate::scenario::{AgentId, Observation};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanParams<T> {
    /// White-noise acceleration intensity.
    pub q: T,
    /// Measurement noise standard deviation, meters.
    pub r: T,
}

impl<T: Scalar> Default for KalmanParams<T> {
    fn default() -> Self {
        Self { q: T::lit(0.1), r: T::lit(0.05) }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictionError {
    #[error("at least 3 history samples are required, got {0}")]
    InsufficientHistory(usize),
    #[error("history is not sampled at a uniform step")]
    NonUniformSampling,
    #[error("agent {0} is not present in the observation")]
    UnknownAgent(AgentId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictedTrajectory<T> {
    pub samples: Vec<(T, Point2<T>)>,
    pub horizon: T,
    pub source_agent: Option<AgentId>,
}

#[derive(Clone, Copy, Debug)]
struct Axis<T> {
    x: T,
    v: T,
    p: [[T; 2]; 2],
}

impl<T: Scalar> Axis<T> {
    fn predict(&mut self, dt: T, q: T) {
        let [[p00, p01], [p10, p11]] = self.p;
        let dt2 = dt * dt;
        let half = T::lit(0.5);
        self.x += self.v * dt;
        self.p = [
            [p00 + dt * (p01 + p10) + dt2 * p11 + q * dt2 * dt / T::lit(3.0), p01 + dt * p11 + q * dt2 * half],
            [p10 + dt * p11 + q * dt2 * half, p11 + q * dt],
        ];
    }

    fn update(&mut self, z: T, r2: T) -> T {
        let [[p00, p01], [p10, p11]] = self.p;
        let y = z - self.x;
        let s = p00 + r2;
        let (k0, k1) = (p00 / s, p10 / s);
        self.x += k0 * y;
        self.v += k1 * y;
        self.p = [[(T::one() - k0) * p00, (T::one() - k0) * p01], [p10 - k1 * p00, p11 - k1 * p01]];
        y
    }
}

/// Planar constant-velocity filter; the two axes are independent.
#[derive(Clone, Debug)]
pub struct CvKalman<T> {
    axes: [Axis<T>; 2],
    dt: T,
    params: KalmanParams<T>,
}

impl<T: Scalar> CvKalman<T> {
    pub fn new(p0: Point2<T>, v0: Point2<T>, dt: T, params: KalmanParams<T>) -> Self {
        let r2 = params.r * params.r;
        let pv = T::lit(2.0) * r2 / (dt * dt);
        let axis = |x: T, v: T| Axis { x, v, p: [[r2, T::zero()], [T::zero(), pv]] };
        Self { axes: [axis(p0.x, v0.x), axis(p0.y, v0.y)], dt, params }
    }

    pub fn predict(&mut self) {
        for a in &mut self.axes {
            a.predict(self.dt, self.params.q);
        }
    }

    /// Fuses a position measurement and returns the innovation.
    pub fn update(&mut self, z: Point2<T>) -> Point2<T> {
        let r2 = self.params.r * self.params.r;
        let ix = self.axes[0].update(z.x, r2);
        let iy = self.axes[1].update(z.y, r2);
        Point2::new(ix, iy)
    }

    pub fn position(&self) -> Point2<T> {
        Point2::new(self.axes[0].x, self.axes[1].x)
    }

    pub fn velocity(&self) -> Point2<T> {
        Point2::new(self.axes[0].v, self.axes[1].v)
    }
}

/// Fits the filter over `history` and extrapolates `horizon` seconds ahead
/// at the history's step, one sample per step after the last measurement.
pub fn kalman_predict<T: Scalar>(
    history: &[(T, Point2<T>)],
    horizon: T,
    params: KalmanParams<T>,
) -> Result<PredictedTrajectory<T>, PredictionError> {
    if history.len() < 3 {
        return Err(PredictionError::InsufficientHistory(history.len()));
    }
    let (t0, origin) = history[0];
    let dt = history[1].0 - t0;
    if !(dt > T::zero()) {
        return Err(PredictionError::NonUniformSampling);
    }
    let tol = dt * T::lit(1e-3);
    for (k, (t, _)) in history.iter().enumerate() {
        if (*t - t0 - dt * T::from_usize(k).unwrap()).abs() > tol {
            return Err(PredictionError::NonUniformSampling);
        }
    }
    // Work relative to the first sample so translating the input shifts the
    // output by exactly the same vector.
    let rel = |p: Point2<T>| p - origin;
    let v0 = (rel(history[1].1) - rel(history[0].1)) * (T::one() / dt);
    let mut kf = CvKalman::new(Point2::new(T::zero(), T::zero()), v0, dt, params);
    for &(_, p) in &history[1..] {
        kf.predict();
        kf.update(rel(p));
    }
    let (t_last, _) = history[history.len() - 1];
    let steps = (horizon / dt).round().to_usize().unwrap_or(0);
    let (x, v) = (kf.position(), kf.velocity());
    let samples = (1..=steps)
        .map(|k| {
            let tau = dt * T::from_usize(k).unwrap();
            (t_last + tau, x + v * tau + origin)
        })
        .collect();
    Ok(PredictedTrajectory { samples, horizon, source_agent: None })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntentConfig {
    /// Length of the history fitted before the last moving instant, seconds.
    pub window: f64,
    pub horizon: f64,
    /// Speed above which an agent counts as moving.
    pub v_move: f64,
    pub kalman: KalmanParams<f64>,
}

impl Default for IntentConfig {
    fn default() -> Self {
        Self { window: 5.0, horizon: 5.0, v_move: 1.0, kalman: KalmanParams::default() }
    }
}

/// Scene index of the latest instant at or before `t_stop` where the agent
/// moved faster than `v_move`, looking back at most `window + 10` seconds.
pub fn last_moving_index(
    obs: &Observation,
    agent: AgentId,
    t_stop: f64,
    cfg: &IntentConfig,
) -> Result<Option<usize>, PredictionError> {
    if !obs.contains(agent) {
        return Err(PredictionError::UnknownAgent(agent));
    }
    let stop = obs.scene_index(t_stop);
    let lookback = ((cfg.window + 10.0) / obs.dt).round() as usize;
    let lo = stop.saturating_sub(lookback);
    Ok((lo..=stop).rev().find(|&i| obs.state(i, agent).is_some_and(|s| s.v > cfg.v_move)))
}

/// Predicted motion the agent was committed to before it stopped.
///
/// The filter is anchored at the last moving instant so that a vehicle
/// standing still still projects its intended path.
pub fn pre_stop_intent(
    obs: &Observation,
    agent: AgentId,
    t_stop: f64,
    cfg: &IntentConfig,
) -> Result<PredictedTrajectory<f64>, PredictionError> {
    let dt = obs.dt;
    let steps = (cfg.horizon / dt).round() as usize;
    let Some(anchor) = last_moving_index(obs, agent, t_stop, cfg)? else {
        let i = obs.scene_index(t_stop);
        let p = obs.state(i, agent).ok_or(PredictionError::UnknownAgent(agent))?.p;
        let t0 = obs.scenes[i].t;
        let samples = (1..=steps).map(|k| (t0 + k as f64 * dt, p)).collect();
        return Ok(PredictedTrajectory { samples, horizon: cfg.horizon, source_agent: Some(agent) });
    };
    let first = anchor.saturating_sub((cfg.window / dt).round() as usize);
    let history: Vec<(f64, crate::Point)> = (first..=anchor)
        .filter_map(|i| obs.state(i, agent).map(|s| (obs.scenes[i].t, s.p)))
        .collect();
    let mut traj = if history.len() >= 3 {
        kalman_predict(&history, cfg.horizon, cfg.kalman)?
    } else {
        // Too little history to filter: extrapolate the reported velocity.
        let st = obs.state(anchor, agent).ok_or(PredictionError::UnknownAgent(agent))?;
        let t0 = obs.scenes[anchor].t;
        let vel = crate::Point::from_heading(st.theta) * st.v;
        let samples = (1..=steps).map(|k| (t0 + k as f64 * dt, st.p + vel * (k as f64 * dt))).collect();
        PredictedTrajectory { samples, horizon: cfg.horizon, source_agent: None }
    };
    traj.source_agent = Some(agent);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{AgentInfo, AgentKind, AgentState, Scene};
    use crate::Point;
    use std::collections::BTreeMap;

    fn line(n: usize, dt: f64, v: Point) -> Vec<(f64, Point)> {
        (0..n).map(|k| (k as f64 * dt, v * (k as f64 * dt))).collect()
    }

    #[test]
    fn constant_velocity_extrapolates() {
        let h = line(30, 0.1, Point::new(2.0, 0.0));
        let pred = kalman_predict(&h, 1.0, KalmanParams::default()).unwrap();
        assert_eq!(pred.samples.len(), 10);
        for (t, p) in &pred.samples {
            assert!(p.distance(Point::new(2.0 * t, 0.0)) < 0.05, "{t} {p:?}");
        }
    }

    #[test]
    fn static_history_stays_put() {
        let h: Vec<(f64, Point)> = (0..10).map(|k| (k as f64 * 0.1, Point::new(3.0, -4.0))).collect();
        let pred = kalman_predict(&h, 5.0, KalmanParams::default()).unwrap();
        assert!(pred.samples.iter().all(|(_, p)| p.distance(Point::new(3.0, -4.0)) < 0.05));
    }

    #[test]
    fn short_or_irregular_history_is_rejected() {
        let h = line(2, 0.1, Point::new(1.0, 0.0));
        assert_eq!(kalman_predict(&h, 1.0, KalmanParams::default()), Err(PredictionError::InsufficientHistory(2)));
        let mut h = line(5, 0.1, Point::new(1.0, 0.0));
        h[3].0 += 0.05;
        assert_eq!(kalman_predict(&h, 1.0, KalmanParams::default()), Err(PredictionError::NonUniformSampling));
    }

    #[test]
    fn single_precision_filter() {
        let h: Vec<(f32, Point2<f32>)> = (0..30).map(|k| (k as f32 * 0.1, Point2::new(k as f32 * 0.2, 1.0))).collect();
        let pred = kalman_predict(&h, 1.0f32, KalmanParams::default()).unwrap();
        let (t, p) = *pred.samples.last().unwrap();
        assert!((p.x - 2.0 * t).abs() < 0.05);
    }

    #[test]
    fn innovation_settles_on_exact_input() {
        let h = line(25, 0.1, Point::new(3.0, -1.0));
        let mut kf = CvKalman::new(h[0].1, (h[1].1 - h[0].1) * 10.0, 0.1, KalmanParams::default());
        let mut last = Point::new(1.0, 1.0);
        for &(_, p) in &h[1..] {
            kf.predict();
            last = kf.update(p);
        }
        assert!(last.norm() < 0.01);
    }

    fn brake_obs() -> Observation {
        // 10 m/s along +x, braking at 2 m/s^2 from t = 3 s until stopped.
        let dt = 0.1;
        let (mut x, mut v) = (0.0, 10.0);
        let mut scenes = Vec::new();
        for k in 0..150 {
            let t = k as f64 * dt;
            scenes.push(Scene {
                t,
                agents: BTreeMap::from([(AgentId(1), AgentState { p: Point::new(x, 0.0), theta: 0.0, v, a: 0.0 })]),
            });
            let a = if t >= 3.0 { -2.0 } else { 0.0 };
            let nv: f64 = (v + a * dt).max(0.0);
            x += 0.5 * (v + nv) * dt;
            v = nv;
        }
        Observation {
            map_id: crate::road_network::MapId::M1,
            dt,
            agents: vec![AgentInfo { id: AgentId(1), kind: AgentKind::Av, t_trigger: 0.0, p_dest: None }],
            scenes,
            collision_flag: false,
            collided_pair: None,
        }
    }

    #[test]
    fn intent_passes_the_stop_position() {
        let obs = brake_obs();
        let cfg = IntentConfig::default();
        let stop_x = obs.scenes.last().unwrap().agents[&AgentId(1)].p.x;
        let intent = pre_stop_intent(&obs, AgentId(1), 14.0, &cfg).unwrap();
        let start = obs.state(obs.scene_index(14.0), AgentId(1)).unwrap().p;
        let (_, end) = *intent.samples.last().unwrap();
        assert!(end.x > stop_x);
        assert!(start.distance(end) > 0.5 * cfg.v_move * cfg.horizon);
    }

    #[test]
    fn never_moving_agent_is_stationary() {
        let mut obs = brake_obs();
        for sc in &mut obs.scenes {
            let st = sc.agents.get_mut(&AgentId(1)).unwrap();
            st.p = Point::new(5.0, 5.0);
            st.v = 0.5;
        }
        let intent = pre_stop_intent(&obs, AgentId(1), 10.0, &IntentConfig::default()).unwrap();
        assert!(intent.samples.iter().all(|(_, p)| *p == Point::new(5.0, 5.0)));
        assert_eq!(
            pre_stop_intent(&obs, AgentId(9), 10.0, &IntentConfig::default()),
            Err(PredictionError::UnknownAgent(AgentId(9)))
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn translation_equivariance(
                dx in -1e3f64..1e3, dy in -1e3f64..1e3,
                vx in -15f64..15.0, vy in -15f64..15.0,
                noise in proptest::collection::vec(-0.05f64..0.05, 40),
            ) {
                let h: Vec<(f64, Point)> = (0..20)
                    .map(|k| (k as f64 * 0.1, Point::new(vx * k as f64 * 0.1 + noise[2 * k], vy * k as f64 * 0.1 + noise[2 * k + 1])))
                    .collect();
                let d = Point::new(dx, dy);
                let moved: Vec<(f64, Point)> = h.iter().map(|&(t, p)| (t, p + d)).collect();
                let a = kalman_predict(&h, 5.0, KalmanParams::default()).unwrap();
                let b = kalman_predict(&moved, 5.0, KalmanParams::default()).unwrap();
                for ((_, pa), (_, pb)) in a.samples.iter().zip(&b.samples) {
                    prop_assert!((*pa + d).distance(*pb) < 1e-9);
                }
            }

            #[test]
            fn doubling_horizon_doubles_samples(h in 0.5f64..20.0) {
                let hist = line(10, 0.1, Point::new(1.0, 1.0));
                let a = kalman_predict(&hist, h, KalmanParams::default()).unwrap().samples.len() as i64;
                let b = kalman_predict(&hist, 2.0 * h, KalmanParams::default()).unwrap().samples.len() as i64;
                prop_assert!((b - 2 * a).abs() <= 1);
            }
        }
    }
}
