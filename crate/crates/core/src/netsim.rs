//! Connectionless datagram fabric between the sensor, robot and recorder.
//!
//! There is no session state: a datagram is either scheduled for delivery
//! or silently dropped, and a device that falls silent is usable again the
//! moment its next datagram arrives. Loss is an independent Bernoulli draw
//! per datagram; delay is a fixed latency plus uniform jitter. Each link has
//! its own seeded generator, so one link's traffic never perturbs another's.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::records::{CoinRecord, RecorderRecord, StageRecord, Telemetry, TraceRow};
use crate::seed;
use crate::sensing::OrientationSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeviceId(pub u16);

impl DeviceId {
    pub const SENSOR: DeviceId = DeviceId(0);
    pub const ROBOT: DeviceId = DeviceId(1);
    pub const RECORDER: DeviceId = DeviceId(2);
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DeviceId::SENSOR => f.write_str("sensor"),
            DeviceId::ROBOT => f.write_str("robot"),
            DeviceId::RECORDER => f.write_str("recorder"),
            DeviceId(n) => write!(f, "device-{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatagramKind {
    Orientation,
    Telemetry,
    Stage,
    Coin,
    Log,
}

/// A decoded datagram payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Orientation(TraceRow),
    Telemetry(Telemetry),
    Stage(StageRecord),
    Coin(CoinRecord),
    Log(RecorderRecord),
}

impl Record {
    pub fn kind(&self) -> DatagramKind {
        match self {
            Record::Orientation(_) => DatagramKind::Orientation,
            Record::Telemetry(_) => DatagramKind::Telemetry,
            Record::Stage(_) => DatagramKind::Stage,
            Record::Coin(_) => DatagramKind::Coin,
            Record::Log(_) => DatagramKind::Log,
        }
    }

    pub fn orientation(sample: &OrientationSample) -> Self {
        Record::Orientation(TraceRow::from(sample))
    }

    fn to_json(&self) -> serde_json::Result<Vec<u8>> {
        match self {
            Record::Orientation(r) => serde_json::to_vec(r),
            Record::Telemetry(r) => serde_json::to_vec(r),
            Record::Stage(r) => serde_json::to_vec(r),
            Record::Coin(r) => serde_json::to_vec(r),
            Record::Log(r) => serde_json::to_vec(r),
        }
    }

    fn from_json(kind: DatagramKind, bytes: &[u8]) -> serde_json::Result<Self> {
        Ok(match kind {
            DatagramKind::Orientation => Record::Orientation(serde_json::from_slice(bytes)?),
            DatagramKind::Telemetry => Record::Telemetry(serde_json::from_slice(bytes)?),
            DatagramKind::Stage => Record::Stage(serde_json::from_slice(bytes)?),
            DatagramKind::Coin => Record::Coin(serde_json::from_slice(bytes)?),
            DatagramKind::Log => Record::Log(serde_json::from_slice(bytes)?),
        })
    }
}

/// Length-prefixed (u32, big endian) UTF-8 JSON.
pub fn encode_payload(record: &Record) -> Result<Vec<u8>> {
    let json = record.to_json()?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Wire("record too large".into()))?;
    let mut out = Vec::with_capacity(4 + json.len());
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

pub fn decode_payload(kind: DatagramKind, payload: &[u8]) -> Result<Record> {
    if payload.len() < 4 {
        return Err(Error::Wire("payload shorter than its length prefix".into()));
    }
    let (prefix, body) = payload.split_at(4);
    let len = u32::from_be_bytes(prefix.try_into().expect("4-byte prefix")) as usize;
    if len != body.len() {
        return Err(Error::Wire(format!("length prefix {len} does not match body {}", body.len())));
    }
    std::str::from_utf8(body).map_err(|e| Error::Wire(e.to_string()))?;
    Record::from_json(kind, body).map_err(|e| Error::Wire(format!("{kind:?} payload: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Datagram {
    pub src: DeviceId,
    pub dst: DeviceId,
    pub kind: DatagramKind,
    pub payload: Vec<u8>,
    pub send_time: f64,
}

impl Datagram {
    pub fn new(src: DeviceId, dst: DeviceId, record: &Record, send_time: f64) -> Result<Self> {
        Ok(Self { src, dst, kind: record.kind(), payload: encode_payload(record)?, send_time })
    }

    pub fn decode(&self) -> Result<Record> {
        decode_payload(self.kind, &self.payload)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel {
    pub drop_probability: f64,
    /// Seconds.
    pub latency: f64,
    /// Upper bound of the uniform extra delay, seconds.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self { drop_probability: 0.0, latency: 0.0, jitter: 0.0, seed: 0 }
    }
}

impl LinkModel {
    pub fn lossless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("drop_probability", self.drop_probability)?;
        ensure_finite("latency", self.latency)?;
        ensure_finite("jitter", self.jitter)?;
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(invalid("drop_probability must lie in [0, 1]"));
        }
        if self.latency < 0.0 || self.jitter < 0.0 {
            return Err(invalid("latency and jitter must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LinkStats {
    pub posted: u64,
    pub dropped: u64,
    pub delivered: u64,
}

impl LinkStats {
    pub fn in_flight(&self) -> u64 {
        self.posted - self.dropped - self.delivered
    }
}

#[derive(Debug)]
struct Link {
    model: LinkModel,
    rng: ChaCha8Rng,
    stats: LinkStats,
}

#[derive(Debug)]
struct InFlight {
    deliver_at: f64,
    seq: u64,
    datagram: Datagram,
}

impl PartialEq for InFlight {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for InFlight {}

impl PartialOrd for InFlight {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for InFlight {
    // Reversed so the max-heap pops the earliest delivery first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.deliver_at.total_cmp(&self.deliver_at).then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PostOutcome {
    Scheduled { deliver_at: f64 },
    Dropped,
}

/// The shared medium. Advanced only by the owner of the simulation clock.
#[derive(Debug)]
pub struct Fabric {
    devices: BTreeSet<DeviceId>,
    default_link: LinkModel,
    overrides: BTreeMap<(DeviceId, DeviceId), LinkModel>,
    links: BTreeMap<(DeviceId, DeviceId), Link>,
    queue: BinaryHeap<InFlight>,
    seq: u64,
    now: f64,
}

impl Fabric {
    pub fn new(devices: &[DeviceId], link: LinkModel) -> Result<Self> {
        link.validate()?;
        Ok(Self {
            devices: devices.iter().copied().collect(),
            default_link: link,
            overrides: BTreeMap::new(),
            links: BTreeMap::new(),
            queue: BinaryHeap::new(),
            seq: 0,
            now: f64::NEG_INFINITY,
        })
    }

    /// Sensor, robot and recorder, every link sharing `link`.
    pub fn standard(link: LinkModel) -> Result<Self> {
        Self::new(&[DeviceId::SENSOR, DeviceId::ROBOT, DeviceId::RECORDER], link)
    }

    /// Replaces the model for one directed link. Must precede its first post.
    pub fn set_link(&mut self, src: DeviceId, dst: DeviceId, model: LinkModel) -> Result<()> {
        model.validate()?;
        self.check_device(src)?;
        self.check_device(dst)?;
        if self.links.contains_key(&(src, dst)) {
            return Err(invalid(format!("link {src}->{dst} already carries traffic")));
        }
        self.overrides.insert((src, dst), model);
        Ok(())
    }

    fn check_device(&self, id: DeviceId) -> Result<()> {
        if self.devices.contains(&id) {
            Ok(())
        } else {
            Err(Error::UnknownDevice(id.0))
        }
    }

    fn link(&mut self, src: DeviceId, dst: DeviceId) -> &mut Link {
        let model = self.overrides.get(&(src, dst)).copied().unwrap_or(self.default_link);
        self.links.entry((src, dst)).or_insert_with(|| Link {
            model,
            rng: seed::rng(seed::derive(model.seed, ((src.0 as u64) << 16) | dst.0 as u64)),
            stats: LinkStats::default(),
        })
    }

    pub fn post(&mut self, datagram: Datagram) -> Result<PostOutcome> {
        self.check_device(datagram.src)?;
        self.check_device(datagram.dst)?;
        ensure_finite("send_time", datagram.send_time)?;
        let link = self.link(datagram.src, datagram.dst);
        // Both draws happen unconditionally so the stream stays aligned
        // whatever the parameters.
        let loss: f64 = link.rng.random();
        let spread: f64 = link.rng.random();
        link.stats.posted += 1;
        if loss < link.model.drop_probability {
            link.stats.dropped += 1;
            return Ok(PostOutcome::Dropped);
        }
        let deliver_at = datagram.send_time + link.model.latency + spread * link.model.jitter;
        self.seq += 1;
        self.queue.push(InFlight { deliver_at, seq: self.seq, datagram });
        Ok(PostOutcome::Scheduled { deliver_at })
    }

    /// Everything due by `now`, ordered by delivery time then post order.
    pub fn tick(&mut self, now: f64) -> Result<Vec<Datagram>> {
        ensure_finite("now", now)?;
        if now < self.now {
            return Err(Error::TimeRegression { now, last: self.now });
        }
        self.now = now;
        let mut out = Vec::new();
        while self.queue.peek().is_some_and(|f| f.deliver_at <= now) {
            let f = self.queue.pop().expect("peeked");
            let key = (f.datagram.src, f.datagram.dst);
            if let Some(link) = self.links.get_mut(&key) {
                link.stats.delivered += 1;
            }
            out.push(f.datagram);
        }
        Ok(out)
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn stats(&self, src: DeviceId, dst: DeviceId) -> LinkStats {
        self.links.get(&(src, dst)).map(|l| l.stats).unwrap_or_default()
    }

    pub fn total_stats(&self) -> LinkStats {
        self.links.values().fold(LinkStats::default(), |acc, l| LinkStats {
            posted: acc.posted + l.stats.posted,
            dropped: acc.dropped + l.stats.dropped,
            delivered: acc.delivered + l.stats.delivered,
        })
    }
}

pub const DEFAULT_STALENESS_TIMEOUT: f64 = 0.5;
pub const DEFAULT_SENSOR_RATE: f64 = 50.0;

/// Whether `latest` is recent enough to act on at `now`.
pub fn freshness_gate(latest: &OrientationSample, now: f64, staleness_timeout: f64) -> bool {
    now - latest.t <= staleness_timeout
}
