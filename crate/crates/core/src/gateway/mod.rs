//! Live sessions for interactive clients, spoken as newline-delimited JSON.
//!
//! A [`LiveSession`] wraps the same [`Engine`] the batch runner uses. Client
//! orientation messages enter the fabric as sensor samples stamped with the
//! next tick, so client silence trips the freshness gate just like loss.
//! The transport lives in [`server`].

pub mod server;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::harness::config::SessionConfig;
use crate::harness::session::{Engine, SessionOutput};
use crate::kinematics::backbone_points;
use crate::patterns::PatternKind;
use crate::records::{write_recorder_csv, Stage};
use crate::sensing::OrientationSample;
use crate::trustgame::GamePhase;

pub use server::{serve, ServeOptions, Server};

pub const PROTOCOL_VERSION: u32 = 1;
pub const BACKBONE_POINTS: usize = 16;
pub const DEFAULT_BROADCAST_RATE: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Body orientation in degrees.
    Orientation { heading: f64, pitch: f64, roll: f64 },
    Coin,
    SetCondition { condition: PatternKind },
    SetStage { stage: Stage },
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameState {
    pub phase: GamePhase,
    pub coins_inserted: u32,
    pub coins_returned: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBody {
    pub t: f64,
    /// Degrees.
    pub theta: f64,
    pub phi: f64,
    /// Backbone from base to tip, meters.
    pub backbone: Vec<[f64; 3]>,
    /// Cable length changes, millimeters.
    pub cables: [f64; 3],
    pub gate_open: bool,
    pub condition: PatternKind,
    pub stage: Stage,
    pub game: GameState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigBody {
    pub loop_rate: f64,
    pub broadcast_rate: f64,
    pub staleness_timeout: f64,
    /// Degrees.
    pub phi_max: f64,
    pub backbone_length: f64,
    pub backbone_points: usize,
    pub condition: PatternKind,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Config(ConfigBody),
    State(StateBody),
    Payout { t: f64, coins: u32 },
    Error { message: String },
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    v: u32,
    #[serde(flatten)]
    body: T,
}

/// Parses one client line; the version field is mandatory.
pub fn parse_client(line: &str) -> Result<ClientMessage> {
    let value: serde_json::Value = serde_json::from_str(line)?;
    match value.get("v").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(PROTOCOL_VERSION) => {}
        Some(v) => return Err(invalid(format!("unsupported protocol version {v}"))),
        None => return Err(invalid("missing protocol version field 'v'")),
    }
    let env: Envelope<ClientMessage> = serde_json::from_value(value.clone())?;
    // Flattening ignores stray fields; reject them explicitly.
    let known = serde_json::to_value(&env)?;
    if let (Some(got), Some(known)) = (value.as_object(), known.as_object()) {
        if let Some(extra) = got.keys().find(|k| !known.contains_key(*k)) {
            return Err(invalid(format!("unknown field '{extra}'")));
        }
    }
    Ok(env.body)
}

pub fn encode_client(msg: &ClientMessage) -> Result<String> {
    Ok(serde_json::to_string(&Envelope { v: PROTOCOL_VERSION, body: msg })?)
}

pub fn encode_server(msg: &ServerMessage) -> Result<String> {
    Ok(serde_json::to_string(&Envelope { v: PROTOCOL_VERSION, body: msg })?)
}

pub fn parse_server(line: &str) -> Result<ServerMessage> {
    let env: Envelope<ServerMessage> = serde_json::from_str(line)?;
    if env.v != PROTOCOL_VERSION {
        return Err(invalid(format!("unsupported protocol version {}", env.v)));
    }
    Ok(env.body)
}

/// One client's session on a logical clock. The caller decides how that
/// clock maps to wall time.
#[derive(Debug)]
pub struct LiveSession {
    defaults: SessionConfig,
    engine: Engine,
    broadcast_rate: f64,
    broadcasts: u64,
    /// Session time at which the current engine started.
    offset: f64,
    last_state_t: Option<f64>,
    record: Option<(PathBuf, String)>,
    segment: usize,
    keep_ticks: bool,
}

impl LiveSession {
    pub fn new(defaults: SessionConfig, broadcast_rate: f64) -> Result<Self> {
        if !(broadcast_rate > 0.0 && broadcast_rate <= defaults.robot.limits.loop_rate) {
            return Err(invalid("broadcast rate must be in (0, loop_rate]"));
        }
        let mut engine = Engine::new(&defaults)?;
        engine.discard_ticks();
        Ok(Self {
            defaults,
            engine,
            broadcast_rate,
            broadcasts: 0,
            offset: 0.0,
            last_state_t: None,
            record: None,
            segment: 0,
            keep_ticks: false,
        })
    }

    /// Keep per-tick robot history for [`LiveSession::finish`] (tests, replays).
    pub fn keep_ticks(mut self) -> Result<Self> {
        self.keep_ticks = true;
        self.engine = Engine::new(&self.defaults)?;
        Ok(self)
    }

    /// Writes each session segment as a recorder CSV under `dir`.
    pub fn record_to(&mut self, dir: PathBuf, name: String) {
        self.record = Some((dir, name));
    }

    /// Session time of the next tick.
    pub fn now(&self) -> f64 {
        self.offset + self.engine.now()
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn hello(&self) -> ServerMessage {
        let c = &self.defaults.robot;
        ServerMessage::Config(ConfigBody {
            loop_rate: c.limits.loop_rate,
            broadcast_rate: self.broadcast_rate,
            staleness_timeout: c.staleness_timeout,
            phi_max: c.geometry.phi_max.to_degrees(),
            backbone_length: c.geometry.backbone_length,
            backbone_points: BACKBONE_POINTS,
            condition: self.engine.condition(),
            stage: self.engine.stage(),
        })
    }

    /// Applies one client line. Bad input yields an error reply and leaves
    /// the session as it was.
    pub fn handle_line(&mut self, line: &str) -> Vec<ServerMessage> {
        match parse_client(line).and_then(|m| self.handle(m)) {
            Ok(out) => out,
            Err(e) => vec![ServerMessage::Error { message: e.to_string() }],
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Result<Vec<ServerMessage>> {
        match msg {
            ClientMessage::Orientation { heading, pitch, roll } => {
                let sample = OrientationSample::from_degrees(self.engine.now(), heading, pitch, roll)?;
                self.engine.post_orientation(&sample)?;
            }
            ClientMessage::Coin => {
                self.engine.insert_coin()?;
            }
            ClientMessage::SetCondition { condition } => self.engine.set_condition(condition)?,
            ClientMessage::SetStage { stage } => self.engine.set_stage(stage)?,
            ClientMessage::Reset => {
                let offset = self.now();
                self.close_segment()?;
                let mut engine = Engine::new(&self.defaults)?;
                if !self.keep_ticks {
                    engine.discard_ticks();
                }
                self.engine = engine;
                self.offset = offset;
                return Ok(vec![self.hello()]);
            }
        }
        Ok(Vec::new())
    }

    /// Runs every tick due at or before session time `until` and returns
    /// the state broadcasts and payouts they produced.
    pub fn advance(&mut self, until: f64) -> Result<Vec<ServerMessage>> {
        let rate = self.defaults.robot.limits.loop_rate;
        let mut out = Vec::new();
        while self.now() <= until + 1e-9 {
            let global_tick = (self.now() * rate).round() as u64;
            let tick = self.engine.step()?;
            if let Some(p) = tick.payout {
                out.push(ServerMessage::Payout { t: self.offset + p.t, coins: p.coins });
            }
            let due = (self.broadcasts as f64 * rate / self.broadcast_rate).ceil() as u64;
            if global_tick >= due {
                self.broadcasts = (global_tick as f64 * self.broadcast_rate / rate).floor() as u64 + 1;
                out.push(ServerMessage::State(self.state(&tick.robot)?));
            }
        }
        Ok(out)
    }

    fn state(&mut self, tick: &crate::robot::RobotTick) -> Result<StateBody> {
        let geom = &self.defaults.robot.geometry;
        let t = self.offset + tick.t;
        debug_assert!(self.last_state_t.is_none_or(|prev| t > prev));
        self.last_state_t = Some(t);
        let tel = tick.telemetry();
        let game = self.engine.game();
        Ok(StateBody {
            t,
            theta: tel.theta,
            phi: tel.phi,
            backbone: backbone_points(tick.bend, geom, BACKBONE_POINTS)?.iter().map(|p| [p.x, p.y, p.z]).collect(),
            cables: [tel.dl1, tel.dl2, tel.dl3],
            gate_open: tick.gate_open,
            condition: self.engine.condition(),
            stage: self.engine.stage(),
            game: GameState {
                phase: game.phase(),
                coins_inserted: game.inserted(),
                coins_returned: game.payout().unwrap_or(0),
            },
        })
    }

    fn close_segment(&mut self) -> Result<()> {
        if let Some((dir, name)) = &self.record {
            let rows = self.engine.rows_so_far();
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{name}-{}.csv", self.segment));
            let mut buf = Vec::new();
            write_recorder_csv(&mut buf, &rows)?;
            std::fs::write(&path, buf)?;
            log::info!("recorded {} rows to {}", rows.len(), path.display());
        }
        self.segment += 1;
        Ok(())
    }

    /// Ends the session, writing the recording if enabled.
    pub fn finish(mut self) -> Result<SessionOutput> {
        self.close_segment()?;
        self.engine.finish(&self.defaults)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run_session;
    use crate::harness::ConfigFile;
    use crate::netsim::LinkModel;
    use proptest::prelude::*;

    fn defaults() -> SessionConfig {
        let mut cfg = ConfigFile::default().session_for(PatternKind::Synchronized, 3, 180.0).unwrap();
        cfg.link = LinkModel { seed: cfg.link.seed, ..LinkModel::lossless() };
        cfg
    }

    fn states(msgs: &[ServerMessage]) -> Vec<&StateBody> {
        msgs.iter()
            .filter_map(|m| match m {
                ServerMessage::State(s) => Some(s),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn messages_round_trip_with_version() {
        let line = encode_client(&ClientMessage::SetCondition { condition: PatternKind::Random }).unwrap();
        assert_eq!(line, r#"{"v":1,"type":"set_condition","condition":"random"}"#);
        assert_eq!(parse_client(&line).unwrap(), ClientMessage::SetCondition { condition: PatternKind::Random });
        let msg = ServerMessage::Payout { t: 1.5, coins: 3 };
        assert_eq!(parse_server(&encode_server(&msg).unwrap()).unwrap(), msg);
        assert!(parse_client(r#"{"type":"coin"}"#).is_err());
        assert!(parse_client(r#"{"v":2,"type":"coin"}"#).is_err());
    }

    #[test]
    fn bad_lines_get_an_error_and_change_nothing() {
        let mut s = LiveSession::new(defaults(), 30.0).unwrap();
        s.advance(0.5).unwrap();
        let before = (s.now(), s.engine().stage(), s.engine().condition());
        for line in [
            "not json",
            r#"{"v":1,"type":"dance"}"#,
            r#"{"v":1,"type":"orientation","heading":"x"}"#,
            r#"{"v":1,"type":"set_stage","stage":"explore","extra":1}"#,
        ] {
            let out = s.handle_line(line);
            assert!(matches!(out.as_slice(), [ServerMessage::Error { .. }]), "{line}");
        }
        s.handle_line(r#"{"v":1,"type":"set_stage","stage":"questionnaire"}"#);
        let back = s.handle_line(r#"{"v":1,"type":"set_stage","stage":"explore"}"#);
        assert!(matches!(back.as_slice(), [ServerMessage::Error { .. }]));
        assert_eq!(s.engine().stage(), Stage::Questionnaire);
        assert_eq!((before.0, before.2), (s.now(), s.engine().condition()));
    }

    #[test]
    fn broadcasts_run_at_thirty_hertz_with_rising_time() {
        let mut s = LiveSession::new(defaults(), 30.0).unwrap();
        let out = s.advance(10.0 - 0.005).unwrap();
        let st = states(&out);
        assert_eq!(st.len(), 300);
        assert!(st.windows(2).all(|w| w[1].t > w[0].t && w[1].t - w[0].t <= 0.04 + 1e-9));
        assert_eq!(st[0].backbone.len(), BACKBONE_POINTS);
    }

    #[test]
    fn level_stream_converges_to_straight() {
        let mut s = LiveSession::new(defaults(), 30.0).unwrap();
        s.handle(ClientMessage::Orientation { heading: 0.0, pitch: 15.0, roll: 0.0 }).unwrap();
        s.advance(1.0).unwrap();
        let mut last = None;
        for i in 0..150 {
            s.handle(ClientMessage::Orientation { heading: 0.0, pitch: 0.0, roll: 0.0 }).unwrap();
            let out = s.advance(1.0 + (i + 1) as f64 * 0.02).unwrap();
            last = states(&out).last().map(|s| s.phi).or(last);
        }
        assert!(last.unwrap().abs() < 1e-9);
    }

    #[test]
    fn two_coins_then_idle_pays_three() {
        let mut s = LiveSession::new(defaults(), 30.0).unwrap();
        s.advance(1.0).unwrap();
        s.handle(ClientMessage::Coin).unwrap();
        s.advance(2.0).unwrap();
        s.handle(ClientMessage::Coin).unwrap();
        let t_last = s.now();
        let out = s.advance(13.0).unwrap();
        let pays: Vec<_> = out.iter().filter(|m| matches!(m, ServerMessage::Payout { .. })).collect();
        assert_eq!(pays.len(), 1);
        let ServerMessage::Payout { t, coins } = pays[0] else { unreachable!() };
        assert_eq!(*coins, 3);
        assert!((t - (t_last + 10.0)).abs() < 1e-9);
    }

    #[test]
    fn silence_holds_the_pose() {
        let mut s = LiveSession::new(defaults(), 30.0).unwrap();
        for i in 0..150 {
            s.handle(ClientMessage::Orientation { heading: 20.0, pitch: 10.0 + i as f64 * 0.05, roll: 0.0 }).unwrap();
            s.advance((i + 1) as f64 * 0.02 - 1e-6).unwrap();
        }
        let settle = s.advance(3.6).unwrap();
        let held = states(&settle).last().unwrap().phi;
        // silent for another second: nothing moves
        let out = s.advance(4.6).unwrap();
        let st = states(&out);
        assert!(st.iter().all(|x| !x.gate_open && x.phi == held));
    }

    #[test]
    fn live_input_matches_the_batch_run() {
        let mut cfg = defaults();
        cfg.duration = 6.0;
        cfg.game.coins = vec![1.0, 2.0];
        let batch = run_session(&cfg).unwrap();
        let trace = cfg.trace.clone().unwrap();

        let mut live = LiveSession::new(cfg.clone(), 30.0).unwrap().keep_ticks().unwrap();
        let rate = cfg.robot.limits.loop_rate;
        let game_start = ((cfg.duration + cfg.questionnaire_duration) * rate).round() as u64;
        for k in 0..batch.ticks.len() as u64 {
            let t = k as f64 / rate;
            if k == (cfg.duration * rate).round() as u64 {
                live.handle(ClientMessage::SetStage { stage: Stage::Questionnaire }).unwrap();
            }
            if k == game_start {
                live.handle(ClientMessage::SetStage { stage: Stage::Game }).unwrap();
            }
            if k == game_start + 100 || k == game_start + 200 {
                live.handle(ClientMessage::Coin).unwrap();
            }
            if k % 2 == 0 {
                let s = trace.iter().find(|s| (s.t - t).abs() < 1e-9).unwrap();
                let (h, p, r) = (s.heading.to_degrees(), s.pitch.to_degrees(), s.roll.to_degrees());
                live.handle(ClientMessage::Orientation { heading: h, pitch: p, roll: r }).unwrap();
            }
            live.advance(t).unwrap();
        }
        let out = live.finish().unwrap();
        assert_eq!(out.ticks.len(), batch.ticks.len());
        for (a, b) in out.ticks.iter().zip(&batch.ticks) {
            let (ax, ay) = a.bend.tilt();
            let (bx, by) = b.bend.tilt();
            assert!((ax - bx).abs() < 1e-9 && (ay - by).abs() < 1e-9, "t={}", a.t);
        }
        assert_eq!(out.summary.payout_time, batch.summary.payout_time);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Orient(usize, f64, f64),
        Coin(usize),
        Condition(usize, PatternKind),
        Advance(usize, f64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0..2usize, -30.0..30.0f64, -30.0..30.0f64).prop_map(|(i, p, r)| Op::Orient(i, p, r)),
            (0..2usize).prop_map(Op::Coin),
            (0..2usize, prop_oneof![Just(PatternKind::Simple), Just(PatternKind::Random), Just(PatternKind::Synchronized)])
                .prop_map(|(i, c)| Op::Condition(i, c)),
            (0..2usize, 0.0..0.3f64).prop_map(|(i, d)| Op::Advance(i, d)),
        ]
    }

    fn apply(s: &mut LiveSession, op: &Op) -> Vec<ServerMessage> {
        match *op {
            Op::Orient(_, p, r) => s.handle(ClientMessage::Orientation { heading: 0.0, pitch: p, roll: r }).unwrap(),
            Op::Coin(_) => s.handle(ClientMessage::Coin).unwrap(),
            Op::Condition(_, c) => s.handle(ClientMessage::SetCondition { condition: c }).unwrap(),
            Op::Advance(_, d) => {
                let until = s.now() + d;
                s.advance(until).unwrap()
            }
        }
    }

    fn owner(op: &Op) -> usize {
        match *op {
            Op::Orient(i, ..) | Op::Coin(i) | Op::Condition(i, _) | Op::Advance(i, _) => i,
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn sessions_do_not_see_each_other(ops in proptest::collection::vec(op(), 1..40)) {
            let mut together = [LiveSession::new(defaults(), 30.0).unwrap(), LiveSession::new(defaults(), 30.0).unwrap()];
            let mut seen: [Vec<ServerMessage>; 2] = Default::default();
            for o in &ops {
                let i = owner(o);
                seen[i].extend(apply(&mut together[i], o));
            }
            for i in 0..2 {
                let mut alone = LiveSession::new(defaults(), 30.0).unwrap();
                let mut solo = Vec::new();
                for o in ops.iter().filter(|o| owner(o) == i) {
                    solo.extend(apply(&mut alone, o));
                }
                prop_assert_eq!(&solo, &seen[i]);
            }
        }
    }
}
