//! Discrete-event simulation of tagged H2M messages crossing an XG-PON
//! loaded with Poisson background traffic.
//!
//! Downstream is one FIFO at the OLT draining at the downstream line rate.
//! Upstream keeps a byte FIFO per ONU; every DBA cycle the OLT grants each
//! ONU the bytes it had queued at the cycle boundary (gated), capped at a
//! fair share of the cycle, and serves the ONUs back to back in a
//! round-robin order that rotates by one ONU per cycle. Packets may be
//! fragmented across grants; a packet departs when its last byte is sent.
//!
//! Background packets are generated lazily per queue, just before a tagged
//! message or a cycle boundary needs the queue state, so memory stays
//! proportional to queue occupancy rather than to the horizon.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::Serialize;

use super::{
    summarize_loops, tx_us, Components, Direction, LatencyModel, LatencyRecord, LatencySummary, LoadPoint,
    LoopMode, LoopRecord, LoopSpec, PonConfig, PonError,
};
use crate::rng::{self, SimRng};
use crate::traffic::{self, ArrivalStream};

/// ONU hosting the human operator's wireless access point.
pub const OPERATOR_ONU: usize = 0;
/// ONU hosting the machine/robot's wireless access point.
pub const MACHINE_ONU: usize = 1;

#[derive(Debug, Clone, Copy)]
struct Traversal {
    direction: Direction,
    onu: usize,
    /// Crosses an air interface: before the ONU upstream, after it downstream.
    wireless: bool,
    /// Compute time spent before the traversal starts.
    processing_us: f64,
}

fn route(mode: LoopMode, config: &PonConfig) -> Vec<Traversal> {
    let hop = |direction, onu, processing_us| Traversal { direction, onu, wireless: true, processing_us };
    match mode {
        LoopMode::NoAi => vec![
            hop(Direction::Upstream, OPERATOR_ONU, 0.0),
            hop(Direction::Downstream, MACHINE_ONU, 0.0),
            hop(Direction::Upstream, MACHINE_ONU, 0.0),
            hop(Direction::Downstream, OPERATOR_ONU, 0.0),
        ],
        LoopMode::WithAi => vec![
            hop(Direction::Upstream, OPERATOR_ONU, 0.0),
            hop(Direction::Downstream, OPERATOR_ONU, config.ai_inference_us),
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    LegStart(usize),
    OnuEnqueue(usize),
    OltEnqueue(usize),
    LegDone(usize),
    Cycle(u64),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // Min-heap on (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    #[inline]
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    fn scv(&self) -> f64 {
        if self.mean == 0.0 {
            0.0
        } else {
            self.variance() / (self.mean * self.mean)
        }
    }
}

/// Measured queue behaviour of one run, covering background and tagged
/// packets alike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QueueStats {
    pub downstream_packets: u64,
    pub downstream_mean_wait_us: f64,
    pub downstream_mean_service_us: f64,
    pub downstream_scv_service: f64,
    pub downstream_mean_interarrival_us: f64,
    pub downstream_scv_interarrival: f64,
    pub upstream_packets: u64,
    /// Arrival to last-byte-sent, less the packet's own serialization time.
    pub upstream_mean_access_us: f64,
    pub events: u64,
}

impl QueueStats {
    /// Utilization implied by the measured arrival and service processes.
    pub fn downstream_utilization(&self) -> f64 {
        if self.downstream_mean_interarrival_us > 0.0 {
            self.downstream_mean_service_us / self.downstream_mean_interarrival_us
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub records: Vec<LatencyRecord>,
    pub loops: Vec<LoopRecord>,
    pub stats: QueueStats,
}

#[derive(Debug, Clone, Copy)]
struct UpPacket {
    arrival: f64,
    size: u64,
    remaining: u64,
    msg: Option<usize>,
}

struct Onu {
    queue: VecDeque<UpPacket>,
    queued_bytes: u64,
    next_bg: f64,
    rng: SimRng,
}

struct Message {
    id: u64,
    leg: usize,
    loop_start: f64,
    leg_start: f64,
    enqueue: f64,
    first_report: f64,
    comps: Components,
    loop_comps: Components,
    loop_total: f64,
}

struct Engine<'a> {
    cfg: &'a PonConfig,
    route: Vec<Traversal>,
    heap: BinaryHeap<Event>,
    seq: u64,
    events: u64,
    msgs: Vec<Message>,
    remaining: usize,
    next_cycle_time: f64,
    cap: u64,
    propagation: f64,
    bg_bytes: u64,
    // upstream
    onus: Vec<Onu>,
    up_bg_mean_gap: f64,
    up_access: Welford,
    // downstream
    down_rng: SimRng,
    down_next_bg: f64,
    down_bg_mean_gap: f64,
    down_free_at: f64,
    down_last_arrival: Option<f64>,
    down_wait: Welford,
    down_service: Welford,
    down_gap: Welford,
    records: Vec<LatencyRecord>,
    keep_records: bool,
    loops: Vec<LoopRecord>,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a PonConfig, load: LoadPoint, route: Vec<Traversal>, starts: &[f64], seed: u64, keep_records: bool) -> Self {
        let n = cfg.split_ratio as usize;
        let rho = load.rho();
        let bg_bits = cfg.background_packet_bytes as f64 * 8.0;
        // Mean gap in µs between background packets; infinite when idle.
        let gap = |rate_bps: f64| if rho > 0.0 { bg_bits / (rho * rate_bps) * 1e6 } else { f64::INFINITY };
        let up_bg_mean_gap = gap(cfg.upstream_rate_bps / n as f64);
        let down_bg_mean_gap = gap(cfg.downstream_rate_bps);

        let onus = (0..n)
            .map(|i| {
                let mut rng = rng::stream_rng(seed, rng::streams::UPSTREAM_BG + i as u64);
                let next_bg = first_gap(&mut rng, up_bg_mean_gap);
                Onu { queue: VecDeque::new(), queued_bytes: 0, next_bg, rng }
            })
            .collect();
        let mut down_rng = rng::stream_rng(seed, rng::streams::DOWNSTREAM_BG);
        let down_next_bg = first_gap(&mut down_rng, down_bg_mean_gap);

        let mut engine = Engine {
            cfg,
            route,
            heap: BinaryHeap::with_capacity(starts.len() + 16),
            seq: 0,
            events: 0,
            msgs: Vec::with_capacity(starts.len()),
            remaining: starts.len(),
            next_cycle_time: 0.0,
            cap: cfg.fair_share_bytes(),
            propagation: cfg.propagation_us(),
            bg_bytes: cfg.background_packet_bytes as u64,
            onus,
            up_bg_mean_gap,
            up_access: Welford::default(),
            down_rng,
            down_next_bg,
            down_bg_mean_gap,
            down_free_at: 0.0,
            down_last_arrival: None,
            down_wait: Welford::default(),
            down_service: Welford::default(),
            down_gap: Welford::default(),
            records: Vec::new(),
            keep_records,
            loops: Vec::with_capacity(starts.len()),
        };
        for (i, &t) in starts.iter().enumerate() {
            engine.msgs.push(Message {
                id: i as u64,
                leg: 0,
                loop_start: t,
                leg_start: t,
                enqueue: t,
                first_report: t,
                comps: Components::default(),
                loop_comps: Components::default(),
                loop_total: 0.0,
            });
            engine.push(t, EventKind::LegStart(i));
        }
        if !starts.is_empty() {
            engine.push(0.0, EventKind::Cycle(0));
        }
        engine
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.heap.push(Event { time, seq: self.seq, kind });
        self.seq += 1;
    }

    fn charge(&mut self, n: u64) -> Result<(), PonError> {
        self.events += n;
        if self.events > self.cfg.max_events {
            return Err(PonError::Resource { events: self.events });
        }
        Ok(())
    }

    fn run(mut self) -> Result<SimOutcome, PonError> {
        while let Some(ev) = self.heap.pop() {
            self.charge(1)?;
            match ev.kind {
                EventKind::LegStart(m) => self.leg_start(m, ev.time),
                EventKind::OnuEnqueue(m) => self.onu_enqueue(m, ev.time)?,
                EventKind::OltEnqueue(m) => self.olt_enqueue(m, ev.time)?,
                EventKind::LegDone(m) => self.leg_done(m, ev.time),
                EventKind::Cycle(k) => self.cycle(k, ev.time)?,
            }
        }
        let stats = QueueStats {
            downstream_packets: self.down_wait.n,
            downstream_mean_wait_us: self.down_wait.mean,
            downstream_mean_service_us: self.down_service.mean,
            downstream_scv_service: self.down_service.scv(),
            downstream_mean_interarrival_us: self.down_gap.mean,
            downstream_scv_interarrival: self.down_gap.scv(),
            upstream_packets: self.up_access.n,
            upstream_mean_access_us: self.up_access.mean,
            events: self.events,
        };
        Ok(SimOutcome { records: self.records, loops: self.loops, stats })
    }

    fn leg_start(&mut self, m: usize, t: f64) {
        let hop = self.route[self.msgs[m].leg];
        let wireless = if hop.wireless { self.cfg.wireless_hop_us } else { 0.0 };
        let msg = &mut self.msgs[m];
        msg.leg_start = t;
        msg.comps = Components { processing: hop.processing_us, ..Components::default() };
        match hop.direction {
            Direction::Upstream => {
                msg.comps.wireless = wireless;
                self.push(t + hop.processing_us + wireless, EventKind::OnuEnqueue(m));
            }
            Direction::Downstream => {
                self.push(t + hop.processing_us, EventKind::OltEnqueue(m));
            }
        }
    }

    fn pull_upstream_bg(&mut self, onu: usize, upto: f64) -> Result<(), PonError> {
        let mut generated = 0;
        let o = &mut self.onus[onu];
        while o.next_bg <= upto {
            o.queue.push_back(UpPacket { arrival: o.next_bg, size: self.bg_bytes, remaining: self.bg_bytes, msg: None });
            o.queued_bytes += self.bg_bytes;
            o.next_bg += rng::exponential(&mut o.rng, self.up_bg_mean_gap);
            generated += 1;
        }
        self.charge(generated)
    }

    fn onu_enqueue(&mut self, m: usize, t: f64) -> Result<(), PonError> {
        let onu = self.route[self.msgs[m].leg].onu;
        self.pull_upstream_bg(onu, t)?;
        let size = self.cfg.packet_bytes as u64;
        let o = &mut self.onus[onu];
        o.queue.push_back(UpPacket { arrival: t, size, remaining: size, msg: Some(m) });
        o.queued_bytes += size;
        let msg = &mut self.msgs[m];
        msg.enqueue = t;
        // The pending cycle event is the first report that can include it.
        msg.first_report = self.next_cycle_time;
        Ok(())
    }

    fn cycle(&mut self, k: u64, t: f64) -> Result<(), PonError> {
        let n = self.onus.len();
        let rate = self.cfg.upstream_rate_bps;
        let mut offset: u64 = 0;
        let start = (k % n as u64) as usize;
        for i in 0..n {
            let onu = (start + i) % n;
            self.pull_upstream_bg(onu, t)?;
            let grant = self.onus[onu].queued_bytes.min(self.cap);
            let mut served = 0;
            while served < grant {
                let head = self.onus[onu].queue.front_mut().expect("queued bytes imply a queued packet");
                let take = head.remaining.min(grant - served);
                head.remaining -= take;
                served += take;
                if head.remaining == 0 {
                    let pkt = self.onus[onu].queue.pop_front().unwrap();
                    let own_tx = tx_us(pkt.size, rate);
                    let end = offset + served;
                    // A fragment sent in an earlier cycle leaves `ahead` negative.
                    let ahead = match end.checked_sub(pkt.size) {
                        Some(b) => tx_us(b, rate),
                        None => tx_us(end, rate) - own_tx,
                    };
                    let depart = t + ahead + own_tx;
                    self.up_access.push((depart - pkt.arrival - own_tx).max(0.0));
                    if let Some(m) = pkt.msg {
                        self.upstream_departure(m, t, ahead, own_tx);
                    }
                }
            }
            self.onus[onu].queued_bytes -= grant;
            offset += grant;
        }
        if self.remaining > 0 {
            let next = (k + 1) as f64 * self.cfg.dba_cycle_us;
            self.next_cycle_time = next;
            self.push(next, EventKind::Cycle(k + 1));
        }
        Ok(())
    }

    /// `ahead` is the airtime granted before this packet within the cycle.
    fn upstream_departure(&mut self, m: usize, cycle_t: f64, ahead: f64, own_tx: f64) {
        let prop = self.propagation;
        let depart = cycle_t + ahead + own_tx;
        let msg = &mut self.msgs[m];
        msg.comps.dba_wait = msg.first_report - msg.enqueue;
        msg.comps.transmission = own_tx;
        msg.comps.queueing = (cycle_t - msg.first_report) + ahead;
        msg.comps.propagation = prop;
        self.push(depart + prop, EventKind::LegDone(m));
    }

    fn pull_downstream_bg(&mut self, upto: f64) -> Result<(), PonError> {
        let service = tx_us(self.bg_bytes, self.cfg.downstream_rate_bps);
        let mut generated = 0;
        while self.down_next_bg <= upto {
            let a = self.down_next_bg;
            self.serve_downstream(a, service);
            self.down_next_bg += rng::exponential(&mut self.down_rng, self.down_bg_mean_gap);
            generated += 1;
        }
        self.charge(generated)
    }

    /// Lindley step; returns (wait, departure).
    #[inline]
    fn serve_downstream(&mut self, arrival: f64, service: f64) -> (f64, f64) {
        if let Some(prev) = self.down_last_arrival {
            self.down_gap.push(arrival - prev);
        }
        self.down_last_arrival = Some(arrival);
        let begin = arrival.max(self.down_free_at);
        let depart = begin + service;
        self.down_free_at = depart;
        self.down_wait.push(begin - arrival);
        self.down_service.push(service);
        (begin - arrival, depart)
    }

    fn olt_enqueue(&mut self, m: usize, t: f64) -> Result<(), PonError> {
        self.pull_downstream_bg(t)?;
        let hop = self.route[self.msgs[m].leg];
        let service = tx_us(self.cfg.packet_bytes as u64, self.cfg.downstream_rate_bps);
        let (wait, depart) = self.serve_downstream(t, service);
        let wireless = if hop.wireless { self.cfg.wireless_hop_us } else { 0.0 };
        let prop = self.propagation;
        let msg = &mut self.msgs[m];
        msg.comps.queueing = wait;
        msg.comps.transmission = service;
        msg.comps.propagation = prop;
        msg.comps.wireless = wireless;
        self.push(depart + prop + wireless, EventKind::LegDone(m));
        Ok(())
    }

    fn leg_done(&mut self, m: usize, t: f64) {
        let hop = self.route[self.msgs[m].leg];
        let msg = &mut self.msgs[m];
        let record = LatencyRecord::new(msg.id, hop.direction, msg.comps);
        msg.loop_comps.add(&record.components);
        msg.loop_total += record.total;
        msg.leg += 1;
        if self.keep_records {
            self.records.push(record);
        }
        if msg.leg < self.route.len() {
            self.push(t, EventKind::LegStart(m));
        } else {
            self.loops.push(LoopRecord {
                loop_id: msg.id,
                start_us: msg.loop_start,
                components: msg.loop_comps,
                total: msg.loop_total,
            });
            self.remaining -= 1;
        }
    }
}

fn first_gap(rng: &mut SimRng, mean: f64) -> f64 {
    if mean.is_finite() {
        rng::exponential(rng, mean)
    } else {
        f64::INFINITY
    }
}

fn ordered_loops(mut out: SimOutcome) -> SimOutcome {
    out.loops.sort_by_key(|l| l.loop_id);
    out
}

/// One-way run for each message of `h2m_stream`, with full queue statistics.
pub fn simulate_pon_detailed(
    config: &PonConfig,
    load: LoadPoint,
    direction: Direction,
    h2m_stream: &ArrivalStream,
    seed: u64,
) -> Result<SimOutcome, PonError> {
    config.validate()?;
    if h2m_stream.is_empty() {
        return Err(PonError::InvalidParameter("tagged stream is empty".into()));
    }
    let route = vec![Traversal { direction, onu: OPERATOR_ONU, wireless: true, processing_us: 0.0 }];
    let mut out = Engine::new(config, load, route, &h2m_stream.timestamps, seed, true).run()?;
    out.records.sort_by_key(|r| r.message_id);
    Ok(ordered_loops(out))
}

pub fn simulate_pon(
    config: &PonConfig,
    load: LoadPoint,
    direction: Direction,
    h2m_stream: &ArrivalStream,
    seed: u64,
) -> Result<Vec<LatencyRecord>, PonError> {
    simulate_pon_detailed(config, load, direction, h2m_stream, seed).map(|o| o.records)
}

/// Closed loops started by each control message; per-traversal records are
/// kept when `keep_records` is set.
pub fn simulate_round_trips(
    config: &PonConfig,
    load: LoadPoint,
    mode: LoopMode,
    spec: &LoopSpec,
    seed: u64,
    keep_records: bool,
) -> Result<SimOutcome, PonError> {
    config.validate()?;
    let control = traffic::generate_count(&spec.control, spec.simulated_loops(), seed)?;
    let out = Engine::new(config, load, route(mode, config), &control.timestamps, seed, keep_records).run()?;
    Ok(ordered_loops(out))
}

/// Operator to machine and back, no forecasting.
pub fn round_trip_no_ai(config: &PonConfig, load: LoadPoint, seed: u64) -> Result<LatencySummary, PonError> {
    DesModel.round_trip(config, load, LoopMode::NoAi, &LoopSpec::default(), seed)
}

/// Operator to Local AI and back with the forecast feedback.
pub fn round_trip_with_ai(config: &PonConfig, load: LoadPoint, seed: u64) -> Result<LatencySummary, PonError> {
    DesModel.round_trip(config, load, LoopMode::WithAi, &LoopSpec::default(), seed)
}

/// The simulator as a [`LatencyModel`].
#[derive(Debug, Clone, Copy, Default)]
pub struct DesModel;

impl LatencyModel for DesModel {
    fn name(&self) -> &'static str {
        "des"
    }

    fn round_trip(
        &self,
        config: &PonConfig,
        load: LoadPoint,
        mode: LoopMode,
        spec: &LoopSpec,
        seed: u64,
    ) -> Result<LatencySummary, PonError> {
        let out = simulate_round_trips(config, load, mode, spec, seed, false)?;
        Ok(summarize_loops(&out.loops))
    }
}
