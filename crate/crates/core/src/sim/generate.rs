use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::{phone_of, ScenarioSpec, DEVICE_COOLDOWN, MIN_VISIT};
use crate::error::{Error, Result};
use crate::facility::FacilityMode;
use crate::ids::{BleId, FacilityId, PhoneId, Timestamp, Window};
use crate::positioning::{FacilityLayout, GatewayReading, Rect};
use crate::u2u::RawReading;

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    SignIn {
        time: Timestamp,
        facility: FacilityId,
        phone: PhoneId,
        device: BleId,
    },
    SignOut {
        time: Timestamp,
        facility: FacilityId,
        device: BleId,
    },
    Sighting {
        facility: FacilityId,
        reading: RawReading,
    },
    Gateway {
        facility: FacilityId,
        reading: GatewayReading,
    },
}

impl Event {
    pub fn time(&self) -> Timestamp {
        match self {
            Event::SignIn { time, .. } | Event::SignOut { time, .. } => *time,
            Event::Sighting { reading, .. } => reading.time,
            Event::Gateway { reading, .. } => reading.time,
        }
    }
}

/// One event as a tab-separated line.
pub fn write_event<W: Write>(out: &mut W, ev: &Event) -> std::io::Result<()> {
    match ev {
        Event::SignIn { time, facility, phone, device } => writeln!(out, "signin\t{time}\t{facility}\t{phone}\t{device}"),
        Event::SignOut { time, facility, device } => writeln!(out, "signout\t{time}\t{facility}\t{device}"),
        Event::Sighting { facility, reading: r } => {
            writeln!(out, "sighting\t{facility}\t{}\t{}\t{}\t{}", r.observer, r.observed, r.time, r.rssi)
        }
        Event::Gateway { facility, reading: r } => {
            writeln!(out, "gateway\t{facility}\t{}\t{}\t{}\t{}", r.gateway, r.device, r.time, r.rssi)
        }
    }
}

pub fn write_event_stream<W: Write>(mut out: W, events: &[Event]) -> std::io::Result<()> {
    for ev in events {
        write_event(&mut out, ev)?;
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthVisit {
    pub visitor: usize,
    pub phone: PhoneId,
    pub facility: FacilityId,
    pub device: BleId,
    pub time_in: Timestamp,
    pub time_out: Timestamp,
    /// True position at each second of the visit, from `time_in`.
    #[serde(skip)]
    pub positions: Vec<(f64, f64)>,
}

impl TruthVisit {
    pub fn window(&self) -> Window {
        Window::new(self.time_in, self.time_out)
    }

    pub fn position(&self, t: Timestamp) -> Option<(f64, f64)> {
        if t < self.time_in {
            return None;
        }
        self.positions.get((t - self.time_in) as usize).copied()
    }
}

/// Two visitors present in the same facility at the same time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPair {
    pub facility: FacilityId,
    pub a: usize,
    pub b: usize,
    pub overlap: Window,
    /// Meters, over the overlap.
    pub min_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub facility: FacilityId,
    pub patient: usize,
    pub contact: usize,
    pub interval: Window,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub visits: Vec<TruthVisit>,
    pub pairs: Vec<TruthPair>,
    pub patient: Option<usize>,
    pub planted: Vec<PlantedTruth>,
}

struct Plan {
    visitor: usize,
    facility: usize,
    time_in: Timestamp,
    time_out: Timestamp,
    /// (patient plan index, interval, distance)
    follow: Option<(usize, Window, f64)>,
}

fn area(r: &Rect) -> f64 {
    (r.x_max - r.x_min) * (r.y_max - r.y_min)
}

fn random_point(layout: &FacilityLayout, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let full = Rect::new(0.0, 0.0, layout.width, layout.height);
    let rects: Vec<Rect> = if layout.zones.is_empty() {
        vec![full]
    } else {
        layout.zones.iter().map(|z| z.rect).collect()
    };
    let total: f64 = rects.iter().map(area).sum();
    let mut pick = rng.random::<f64>() * total;
    let mut chosen = rects[rects.len() - 1];
    for r in &rects {
        if pick < area(r) {
            chosen = *r;
            break;
        }
        pick -= area(r);
    }
    (
        chosen.x_min + rng.random::<f64>() * (chosen.x_max - chosen.x_min),
        chosen.y_min + rng.random::<f64>() * (chosen.y_max - chosen.y_min),
    )
}

/// Random-waypoint path sampled once per second over `len + 1` seconds.
fn waypoint_path(layout: &FacilityLayout, spec: &ScenarioSpec, len: u64, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let dwell = Exp::new(1.0 / spec.mobility.waypoint_dwell_mean).expect("validated positive");
    let mut out = Vec::with_capacity(len as usize + 1);
    let mut pos = random_point(layout, rng);
    let mut target = pos;
    let mut pause = dwell.sample(rng).round() as u64;
    for _ in 0..=len {
        out.push(pos);
        if pause > 0 {
            pause -= 1;
            continue;
        }
        if pos == target {
            target = random_point(layout, rng);
        }
        let (dx, dy) = (target.0 - pos.0, target.1 - pos.1);
        let d = dx.hypot(dy);
        if d <= spec.mobility.speed {
            pos = target;
            pause = dwell.sample(rng).round() as u64;
        } else {
            let k = spec.mobility.speed / d;
            pos = (pos.0 + dx * k, pos.1 + dy * k);
        }
    }
    out
}

fn dist(p: (f64, f64), q: (f64, f64)) -> f64 {
    (p.0 - q.0).hypot(p.1 - q.1)
}

fn schedule(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Result<(Vec<Plan>, Vec<PlantedTruth>)> {
    let start = spec.start;
    let end = spec.end();
    let fidx = |id: &FacilityId| spec.facilities.iter().position(|f| &f.id == id).expect("validated facility");
    let patient_facilities = spec.patient_facilities();
    let patient = spec.infection.as_ref().map(|p| p.patient);
    let slot = spec.duration / patient_facilities.len().max(1) as u64;
    let plen = spec.patient_visit_len();
    let contacts: BTreeMap<usize, &super::PlantedContact> =
        spec.infection.iter().flat_map(|p| &p.contacts).map(|c| (c.visitor, c)).collect();
    let length = Exp::new(1.0 / spec.visit_mean).expect("validated positive");

    let mut plans = Vec::new();
    let mut planted = Vec::new();
    let mut patient_plan: BTreeMap<FacilityId, usize> = BTreeMap::new();
    if let Some(p) = patient.filter(|_| !patient_facilities.is_empty()) {
        for (k, f) in patient_facilities.iter().enumerate() {
            let time_in = start + k as u64 * slot + slot / 4;
            patient_plan.insert(f.clone(), plans.len());
            plans.push(Plan { visitor: p, facility: fidx(f), time_in, time_out: time_in + plen, follow: None });
        }
    }
    for v in 0..spec.visitors {
        if Some(v) == patient && !patient_facilities.is_empty() {
            continue;
        }
        if let Some(c) = contacts.get(&v) {
            let pi = patient_plan[&c.facility];
            let (pin, pout) = (plans[pi].time_in, plans[pi].time_out);
            let s = pin + (pout - pin - c.seconds) / 2;
            let interval = Window::new(s, s + c.seconds);
            let time_in = interval.start.saturating_sub(rng.random_range(60..=600)).max(start);
            let time_out = (interval.end + rng.random_range(60..=600)).min(end);
            plans.push(Plan { visitor: v, facility: pi_facility(&plans, pi), time_in, time_out, follow: Some((pi, interval, c.distance)) });
            planted.push(PlantedTruth {
                facility: c.facility.clone(),
                patient: plans[pi].visitor,
                contact: v,
                interval,
                distance: c.distance,
            });
            continue;
        }
        let facility = rng.random_range(0..spec.facilities.len());
        let len = (length.sample(rng).round() as u64).clamp(MIN_VISIT, spec.duration);
        let time_in = start + rng.random_range(0..=spec.duration - len);
        plans.push(Plan { visitor: v, facility, time_in, time_out: time_in + len, follow: None });
    }
    Ok((plans, planted))
}

fn pi_facility(plans: &[Plan], i: usize) -> usize {
    plans[i].facility
}

/// Lowest-numbered free device per facility, with a rest after each return.
fn assign_devices(spec: &ScenarioSpec, plans: &[Plan]) -> Result<Vec<BleId>> {
    let mut order: Vec<usize> = (0..plans.len()).collect();
    order.sort_by_key(|&i| (plans[i].time_in, i));
    let pool = spec.visitors.max(1);
    // per facility: time each device becomes free again (None = never used)
    let mut free_at: Vec<Vec<Option<Timestamp>>> = vec![vec![None; pool]; spec.facilities.len()];
    let mut out = vec![BleId::new(""); plans.len()];
    for i in order {
        let p = &plans[i];
        let slots = &mut free_at[p.facility];
        let k = slots
            .iter()
            .position(|s| s.is_none_or(|t| t < p.time_in))
            .ok_or_else(|| Error::InvalidScenario(format!("device pool of {} exhausted", spec.facilities[p.facility].id)))?;
        slots[k] = Some(p.time_out + DEVICE_COOLDOWN);
        out[i] = BleId::new(format!("{}-D{:03}", spec.facilities[p.facility].id, k + 1));
    }
    Ok(out)
}

fn truth_pairs(visits: &[TruthVisit]) -> Vec<TruthPair> {
    let mut by_facility: BTreeMap<&FacilityId, Vec<&TruthVisit>> = BTreeMap::new();
    for v in visits {
        by_facility.entry(&v.facility).or_default().push(v);
    }
    let mut out = Vec::new();
    for (facility, mut vs) in by_facility {
        vs.sort_by_key(|v| (v.time_in, v.visitor));
        for (i, a) in vs.iter().enumerate() {
            for b in &vs[i + 1..] {
                if b.time_in > a.time_out {
                    break;
                }
                if a.visitor == b.visitor {
                    continue;
                }
                let lo = a.time_in.max(b.time_in);
                let hi = a.time_out.min(b.time_out);
                let min_distance = (lo..=hi)
                    .map(|t| dist(a.position(t).expect("in visit"), b.position(t).expect("in visit")))
                    .fold(f64::INFINITY, f64::min);
                let (x, y) = if a.visitor < b.visitor { (a.visitor, b.visitor) } else { (b.visitor, a.visitor) };
                out.push(TruthPair { facility: facility.clone(), a: x, b: y, overlap: Window::new(lo, hi), min_distance });
            }
        }
    }
    out.sort_by(|p, q| (&p.facility, p.a, p.b, p.overlap.start).cmp(&(&q.facility, q.a, q.b, q.overlap.start)));
    out
}

/// Streams the scenario's events to `sink` in time order and returns the
/// ground truth.
///
/// Within one second, sign-ins come first, then readings, then sign-outs,
/// so every reading falls inside its device's visit window.
pub fn generate_scenario_with(spec: &ScenarioSpec, mut sink: impl FnMut(Event) -> Result<()>) -> Result<GroundTruth> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layouts: Vec<FacilityLayout> = spec.facilities.iter().map(|f| f.resolved_layout()).collect();
    let (plans, planted) = schedule(spec, &mut rng)?;
    let devices = assign_devices(spec, &plans)?;

    let mut visits: Vec<TruthVisit> = plans
        .iter()
        .zip(&devices)
        .map(|(p, d)| {
            let mut path_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
            TruthVisit {
                visitor: p.visitor,
                phone: phone_of(p.visitor),
                facility: spec.facilities[p.facility].id.clone(),
                device: d.clone(),
                time_in: p.time_in,
                time_out: p.time_out,
                positions: waypoint_path(&layouts[p.facility], spec, p.time_out - p.time_in, &mut path_rng),
            }
        })
        .collect();
    for (i, p) in plans.iter().enumerate() {
        if let Some((pi, interval, d)) = p.follow {
            let layout = &layouts[p.facility];
            let centre = (layout.width / 2.0, layout.height / 2.0);
            for t in interval.start..=interval.end {
                let q = visits[pi].position(t).expect("interval inside patient visit");
                let (dx, dy) = (centre.0 - q.0, centre.1 - q.1);
                let n = dx.hypot(dy);
                let u = if n < 1e-9 { (1.0, 0.0) } else { (dx / n, dy / n) };
                let k = (t - visits[i].time_in) as usize;
                visits[i].positions[k] = (q.0 + d * u.0, q.1 + d * u.1);
            }
        }
    }
    let pairs = truth_pairs(&visits);

    let mut noise_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let noise = (spec.model.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.model.noise_sigma).expect("validated sigma"));
    let mut sample_noise = move || noise.map_or(0.0, |n| n.sample(&mut noise_rng));

    let mut starts: BTreeMap<Timestamp, Vec<usize>> = BTreeMap::new();
    let mut ends: BTreeMap<Timestamp, Vec<usize>> = BTreeMap::new();
    for (i, v) in visits.iter().enumerate() {
        starts.entry(v.time_in).or_default().push(i);
        ends.entry(v.time_out).or_default().push(i);
    }
    let mut active: Vec<Vec<usize>> = vec![Vec::new(); spec.facilities.len()];
    let fidx: BTreeMap<&FacilityId, usize> = spec.facilities.iter().enumerate().map(|(i, f)| (&f.id, i)).collect();
    let last = visits.iter().map(|v| v.time_out).max();
    let Some(last) = last else {
        return Ok(GroundTruth { visits, pairs, patient: spec.infection.as_ref().map(|p| p.patient), planted });
    };

    for t in spec.start..=last {
        for &i in starts.get(&t).map(Vec::as_slice).unwrap_or(&[]) {
            let v = &visits[i];
            let f = fidx[&v.facility];
            let pos = active[f].partition_point(|&j| j < i);
            active[f].insert(pos, i);
            sink(Event::SignIn { time: t, facility: v.facility.clone(), phone: v.phone.clone(), device: v.device.clone() })?;
        }
        if (t - spec.start).is_multiple_of(spec.sampling) {
            for (f, fspec) in spec.facilities.iter().enumerate() {
                let here = &active[f];
                let pos: Vec<(f64, f64)> = here.iter().map(|&i| visits[i].position(t).expect("active")).collect();
                if fspec.mode != FacilityMode::Location {
                    for (x, &i) in here.iter().enumerate() {
                        for (y, &j) in here.iter().enumerate() {
                            if x == y {
                                continue;
                            }
                            let d = dist(pos[x], pos[y]);
                            if d <= spec.radio_range {
                                sink(Event::Sighting {
                                    facility: fspec.id.clone(),
                                    reading: RawReading {
                                        observer: visits[i].device.clone(),
                                        observed: visits[j].device.clone(),
                                        time: t,
                                        rssi: spec.model.rssi_from_distance(d, sample_noise()),
                                    },
                                })?;
                            }
                        }
                    }
                }
                if fspec.mode != FacilityMode::U2u {
                    for (x, &i) in here.iter().enumerate() {
                        for g in &layouts[f].gateways {
                            let d = dist(pos[x], (g.x, g.y));
                            if d <= spec.gateway_range {
                                sink(Event::Gateway {
                                    facility: fspec.id.clone(),
                                    reading: GatewayReading {
                                        gateway: g.id.clone(),
                                        device: visits[i].device.clone(),
                                        time: t,
                                        rssi: spec.model.rssi_from_distance(d, sample_noise()),
                                    },
                                })?;
                            }
                        }
                    }
                }
            }
        }
        for &i in ends.get(&t).map(Vec::as_slice).unwrap_or(&[]) {
            let v = &visits[i];
            let f = fidx[&v.facility];
            active[f].retain(|&j| j != i);
            sink(Event::SignOut { time: t, facility: v.facility.clone(), device: v.device.clone() })?;
        }
    }
    Ok(GroundTruth { visits, pairs, patient: spec.infection.as_ref().map(|p| p.patient), planted })
}

/// Collects the whole event stream in memory.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<(Vec<Event>, GroundTruth)> {
    let mut events = Vec::new();
    let truth = generate_scenario_with(spec, |e| {
        events.push(e);
        Ok(())
    })?;
    Ok((events, truth))
}
