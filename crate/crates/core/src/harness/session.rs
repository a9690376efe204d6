//! Batch session runner: sensor, fabric, robot, fabric, recorder, on one
//! logical clock, followed by the questionnaire pause and the trust game.

use serde::Serialize;

use super::config::SessionConfig;
use crate::error::Result;
use crate::netsim::{Datagram, DeviceId, Fabric, LinkStats, Record};
use crate::error::invalid;
use crate::patterns::{PatternConfig, PatternKind, TraceCursor};
use crate::records::{CoinEvent, CoinRecord, RecorderRecord, Stage, StageRecord, Telemetry, TraceRow};
use crate::robot::{Robot, RobotTick};
use crate::seed::{self, stream};
use crate::sensing::OrientationSample;
use crate::trustgame::{InsertOutcome, PayoutEvent, PayoutPolicy, TrustGame};

/// Seconds between restatements of stage and coin counters.
const HEARTBEAT: f64 = 1.0;
/// Slack when comparing a scheduled time against the tick clock.
const CLOCK_SLACK: f64 = 1e-9;

/// Collects what reaches the recorder device into log rows.
#[derive(Debug, Clone)]
pub struct Recorder {
    condition: PatternKind,
    stage: Stage,
    orientation: Option<TraceRow>,
    coins_inserted: u32,
    coins_returned: u32,
    rows: Vec<RecorderRecord>,
}

impl Recorder {
    pub fn new(condition: PatternKind) -> Self {
        Self {
            condition,
            stage: Stage::Explore,
            orientation: None,
            coins_inserted: 0,
            coins_returned: 0,
            rows: Vec::new(),
        }
    }

    pub fn set_condition(&mut self, condition: PatternKind) {
        self.condition = condition;
    }

    pub fn accept(&mut self, record: Record) {
        match record {
            Record::Orientation(row) => {
                if self.orientation.is_none_or(|o| row.t >= o.t) {
                    self.orientation = Some(row);
                }
            }
            Record::Telemetry(tel) => self.push(&tel),
            // Stages only move forward; a late restatement cannot undo one.
            Record::Stage(s) => {
                self.stage = self.stage.max(s.stage);
                self.condition = s.condition;
            }
            Record::Coin(c) => {
                self.coins_inserted = self.coins_inserted.max(c.coins_inserted);
                self.coins_returned = self.coins_returned.max(c.coins_returned);
            }
            Record::Log(row) => self.rows.push(row),
        }
    }

    pub fn push(&mut self, tel: &Telemetry) {
        let o = self.orientation;
        self.rows.push(RecorderRecord {
            t: tel.t,
            heading: o.map(|o| o.heading),
            pitch: o.map(|o| o.pitch),
            roll: o.map(|o| o.roll),
            theta: tel.theta,
            phi: tel.phi,
            dl1: tel.dl1,
            dl2: tel.dl2,
            dl3: tel.dl3,
            condition: self.condition,
            stage: self.stage,
            coins_inserted: self.coins_inserted,
            coins_returned: self.coins_returned,
        });
    }

    /// Rows in time order (jitter can deliver telemetry out of order).
    pub fn finish(mut self) -> Vec<RecorderRecord> {
        self.rows.sort_by(|a, b| a.t.total_cmp(&b.t));
        self.rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub condition: PatternKind,
    pub seed: u64,
    pub ticks: usize,
    pub gate_open_ticks: usize,
    pub coins_inserted: u32,
    pub coins_rejected: u32,
    pub coins_returned: u32,
    pub payout_time: Option<f64>,
    pub sensor_posted: u64,
    pub sensor_dropped: u64,
    /// Largest cable speed, m/s.
    pub max_cable_speed: f64,
    /// Largest change of cable speed per second, m/s².
    pub max_cable_accel: f64,
    /// Largest cable speed seen through the step counts, m/s.
    pub max_step_speed: f64,
    pub max_phi_deg: f64,
}

impl SessionSummary {
    pub fn gate_open_fraction(&self) -> f64 {
        if self.ticks == 0 {
            0.0
        } else {
            self.gate_open_ticks as f64 / self.ticks as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutput {
    pub rows: Vec<RecorderRecord>,
    pub ticks: Vec<RobotTick>,
    pub summary: SessionSummary,
}

struct Sensor {
    cursor: Option<TraceCursor>,
    rate: f64,
    next: u64,
}

impl Sensor {
    /// Samples due by `now`, stamped on the sensor's own grid.
    fn due(&mut self, now: f64) -> Vec<OrientationSample> {
        let Some(cursor) = self.cursor.as_mut() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        loop {
            let ts = self.next as f64 / self.rate;
            if ts > now + CLOCK_SLACK || ts > cursor.end_time() + CLOCK_SLACK {
                break;
            }
            out.push(cursor.sample_at(ts));
            self.next += 1;
        }
        out
    }
}

struct Clocked {
    fabric: Fabric,
    recorder: Recorder,
}

impl Clocked {
    fn post(&mut self, src: DeviceId, dst: DeviceId, record: &Record, t: f64) -> Result<()> {
        self.fabric.post(Datagram::new(src, dst, record, t)?)?;
        Ok(())
    }

    fn deliver(&mut self, now: f64, robot: &mut Robot) -> Result<()> {
        for d in self.fabric.tick(now)? {
            let record = d.decode()?;
            if d.dst == DeviceId::ROBOT {
                if let Record::Orientation(row) = record {
                    robot.receive(OrientationSample::try_from(row)?)?;
                }
            } else if d.dst == DeviceId::RECORDER {
                self.recorder.accept(record);
            }
        }
        Ok(())
    }
}

fn coin_record(t: f64, event: CoinEvent, game: &TrustGame) -> Record {
    Record::Coin(CoinRecord { t, event, coins_inserted: game.inserted(), coins_returned: game.payout().unwrap_or(0) })
}

/// What one engine tick produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineTick {
    pub robot: RobotTick,
    pub stage: Stage,
    pub payout: Option<PayoutEvent>,
}

/// The per-tick session machinery on a logical clock: robot, trust game,
/// fabric and recorder. Inputs arriving between ticks are stamped with the
/// time of the next tick. Both the batch runner and the live gateway drive
/// sessions through this.
#[derive(Debug)]
pub struct Engine {
    robot: Robot,
    game: TrustGame,
    policy: PayoutPolicy,
    io: Clocked,
    rate: f64,
    heartbeat_ticks: u64,
    stage: Stage,
    stage_posted: bool,
    condition: PatternKind,
    pending: Vec<Record>,
    k: u64,
    payout_time: Option<f64>,
    ticks: Vec<RobotTick>,
    keep_ticks: bool,
}

impl std::fmt::Debug for Clocked {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Clocked").field("in_flight", &self.fabric.in_flight()).finish()
    }
}

impl Engine {
    pub fn new(cfg: &SessionConfig) -> Result<Self> {
        cfg.validate()?;
        let rate = cfg.robot.limits.loop_rate;
        let condition = cfg.condition();
        Ok(Self {
            robot: Robot::new(cfg.robot, cfg.trace.clone())?,
            game: TrustGame::new(seed::derive(cfg.seed, stream::GAME)),
            policy: cfg.game.policy(),
            io: Clocked { fabric: Fabric::standard(cfg.link)?, recorder: Recorder::new(condition) },
            rate,
            heartbeat_ticks: ((HEARTBEAT * rate).round() as u64).max(1),
            stage: Stage::Explore,
            stage_posted: false,
            condition,
            pending: Vec::new(),
            k: 0,
            payout_time: None,
            ticks: Vec::new(),
            keep_ticks: true,
        })
    }

    /// Stop keeping per-tick history (long live sessions).
    pub fn discard_ticks(&mut self) {
        self.keep_ticks = false;
        self.ticks = Vec::new();
    }

    /// Time of the next tick.
    pub fn now(&self) -> f64 {
        self.k as f64 / self.rate
    }

    pub fn ticks_done(&self) -> u64 {
        self.k
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn condition(&self) -> PatternKind {
        self.condition
    }

    pub fn game(&self) -> &TrustGame {
        &self.game
    }

    pub fn robot(&self) -> &Robot {
        &self.robot
    }

    /// Sends an orientation sample from the sensor to robot and recorder.
    pub fn post_orientation(&mut self, sample: &OrientationSample) -> Result<()> {
        let rec = Record::orientation(sample);
        self.io.post(DeviceId::SENSOR, DeviceId::ROBOT, &rec, sample.t)?;
        self.io.post(DeviceId::SENSOR, DeviceId::RECORDER, &rec, sample.t)
    }

    /// Moves the stage forward; moving back is an error.
    pub fn set_stage(&mut self, stage: Stage) -> Result<()> {
        if stage < self.stage {
            return Err(invalid(format!("stage cannot go back from {} to {stage}", self.stage)));
        }
        if stage != self.stage {
            self.stage = stage;
            self.pending.push(Record::Stage(StageRecord { t: self.now(), stage, condition: self.condition }));
        }
        Ok(())
    }

    pub fn set_condition(&mut self, condition: PatternKind) -> Result<()> {
        let pattern = PatternConfig { kind: condition, ..self.robot.config().pattern };
        self.robot.set_pattern(pattern)?;
        self.condition = condition;
        self.pending.push(Record::Stage(StageRecord { t: self.now(), stage: self.stage, condition }));
        Ok(())
    }

    /// A coin goes into the machine; this also starts the game stage.
    pub fn insert_coin(&mut self) -> Result<InsertOutcome> {
        self.set_stage(Stage::Game)?;
        let t = self.now();
        let outcome = self.game.insert_coin(t)?;
        let event = match outcome {
            InsertOutcome::Accepted { .. } => CoinEvent::Inserted,
            InsertOutcome::Rejected => CoinEvent::Rejected,
        };
        self.pending.push(coin_record(t, event, &self.game));
        Ok(outcome)
    }

    pub fn decline(&mut self) -> Result<()> {
        self.set_stage(Stage::Game)?;
        self.game.decline(self.now())
    }

    pub fn step(&mut self) -> Result<EngineTick> {
        let t = self.now();
        let mut events = Vec::new();
        if !self.stage_posted {
            self.stage_posted = true;
            events.push(Record::Stage(StageRecord { t, stage: self.stage, condition: self.condition }));
        }
        events.append(&mut self.pending);
        let mut payout = None;
        if self.stage == Stage::Game {
            payout = self.game.tick(t, &self.policy)?;
            if let Some(p) = payout {
                self.payout_time = Some(p.t);
                events.push(coin_record(t, CoinEvent::Payout, &self.game));
            }
        }
        if self.k.is_multiple_of(self.heartbeat_ticks) && self.k > 0 {
            events.push(Record::Stage(StageRecord { t, stage: self.stage, condition: self.condition }));
            if self.stage == Stage::Game {
                events.push(coin_record(t, CoinEvent::Tally, &self.game));
            }
        }
        self.io.deliver(t, &mut self.robot)?;
        let tick = self.robot.step(t)?;
        for e in &events {
            self.io.post(DeviceId::ROBOT, DeviceId::RECORDER, e, t)?;
        }
        self.io.post(DeviceId::ROBOT, DeviceId::RECORDER, &Record::Telemetry(tick.telemetry()), t)?;
        self.io.deliver(t, &mut self.robot)?;
        if self.keep_ticks {
            self.ticks.push(tick);
        }
        self.k += 1;
        Ok(EngineTick { robot: tick, stage: self.stage, payout })
    }

    /// Lets whatever is still in flight land and returns the log rows.
    pub fn finish(mut self, cfg: &SessionConfig) -> Result<SessionOutput> {
        let last = self.k.saturating_sub(1) as f64 / self.rate;
        self.io.deliver(last + cfg.link.latency + cfg.link.jitter + 1.0, &mut self.robot)?;
        let sensor = self.io.fabric.stats(DeviceId::SENSOR, DeviceId::ROBOT);
        let summary = summarize(cfg, self.condition, &self.ticks, &self.game, self.payout_time, sensor);
        Ok(SessionOutput { rows: self.io.recorder.finish(), ticks: self.ticks, summary })
    }

    /// Rows recorded so far, in time order; the engine keeps running.
    pub fn rows_so_far(&self) -> Vec<RecorderRecord> {
        self.io.recorder.clone().finish()
    }
}

/// Runs one participant session to completion. Deterministic in `cfg`.
pub fn run_session(cfg: &SessionConfig) -> Result<SessionOutput> {
    let mut engine = Engine::new(cfg)?;
    let rate = cfg.robot.limits.loop_rate;
    let mut sensor = Sensor { cursor: cfg.trace.clone().map(TraceCursor::new).transpose()?, rate: cfg.sensor_rate, next: 0 };

    let explore_ticks = (cfg.duration * rate).round() as u64;
    let questionnaire_ticks = (cfg.questionnaire_duration * rate).round() as u64;
    let game_start_tick = explore_ticks + questionnaire_ticks;
    let max_game_ticks = (cfg.game.max_duration * rate).round() as u64;
    let tail_ticks = (cfg.game.tail * rate).round() as u64;

    let mut next_coin = 0;
    let mut end_tick: Option<u64> = None;
    loop {
        let k = engine.ticks_done();
        let t = engine.now();
        if k >= game_start_tick {
            engine.set_stage(Stage::Game)?;
        } else if k >= explore_ticks {
            engine.set_stage(Stage::Questionnaire)?;
        }
        if engine.stage() == Stage::Game {
            let elapsed = t - game_start_tick as f64 / rate;
            if k == game_start_tick && cfg.game.coins.is_empty() {
                engine.decline()?;
                end_tick = Some(k + tail_ticks);
            }
            while next_coin < cfg.game.coins.len() && cfg.game.coins[next_coin] <= elapsed + CLOCK_SLACK {
                engine.insert_coin()?;
                next_coin += 1;
            }
        }
        for s in sensor.due(t) {
            engine.post_orientation(&s)?;
        }
        let tick = engine.step()?;
        if tick.payout.is_some() {
            end_tick = Some(k + tail_ticks);
        }
        if tick.stage == Stage::Game && k >= game_start_tick + max_game_ticks && end_tick.is_none() {
            end_tick = Some(k);
        }
        if end_tick.is_some_and(|e| k >= e) {
            break;
        }
    }
    engine.finish(cfg)
}

fn summarize(
    cfg: &SessionConfig,
    condition: PatternKind,
    ticks: &[RobotTick],
    game: &TrustGame,
    payout_time: Option<f64>,
    sensor: LinkStats,
) -> SessionSummary {
    let dt = cfg.robot.limits.dt();
    let spm = cfg.robot.steps_per_meter;
    let mut prev_v = [0.0; 3];
    let mut prev_steps = [0i64; 3];
    let (mut max_v, mut max_a, mut max_sv, mut max_phi) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for tick in ticks {
        for i in 0..3 {
            let v = tick.cables.velocity[i];
            max_v = max_v.max(v.abs());
            max_a = max_a.max((v - prev_v[i]).abs() / dt);
            let sv = (tick.steps[i] - prev_steps[i]) as f64 / spm / dt;
            max_sv = max_sv.max(sv.abs());
        }
        prev_v = tick.cables.velocity;
        prev_steps = tick.steps;
        max_phi = max_phi.max(tick.bend.phi());
    }
    SessionSummary {
        condition,
        seed: cfg.seed,
        ticks: ticks.len(),
        gate_open_ticks: ticks.iter().filter(|t| t.gate_open).count(),
        coins_inserted: game.inserted(),
        coins_rejected: game.rejected(),
        coins_returned: game.payout().unwrap_or(0),
        payout_time,
        sensor_posted: sensor.posted,
        sensor_dropped: sensor.dropped,
        max_cable_speed: max_v,
        max_cable_accel: max_a,
        max_step_speed: max_sv,
        max_phi_deg: max_phi.to_degrees(),
    }
}
