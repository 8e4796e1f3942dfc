//! Acceptance suite: one PASS/FAIL line per criterion, each against an
//! independent oracle, with its runtime budget. Exits nonzero on any FAIL.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use imo_core::cache::{CacheConfig, CanonicalRequest, OutputCache};
use imo_core::digest::Digest;
use imo_core::ledger::{verify_log, Ledger, LedgerError, Payload};
use imo_core::pathfinder::{
    brute_force_plan, evaluate_plan, plan, MemoryStream, ModelPool, PathPlan, PathRecords,
    PlannerWeights, RetrievalWeights, UtilityBreakdown,
};
use imo_core::registry::{EnvironmentSpec, ModelManifest, ModelMeta, ModelRef, Registry, RegistryError, VersionSelector};
use imo_core::runtime::{co_train, co_train_round, Capabilities, DEFAULT_ETA};
use imo_core::sim::{run_simulation, SimError, SimJob, SimNode};
use imo_core::text::token_set;
use imo_core::workflow::{Subtask, TaskSpec};
use imo_gateway::config::ServeConfig;
use imo_gateway::server::spawn_background;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Suite {
    failed: usize,
}

impl Suite {
    fn run(&mut self, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let result = match (result, budget) {
            (Ok(_), Some(b)) if took > b => Err(format!("took {:.2} s, over the {} s budget", took.as_secs_f64(), b.as_secs())),
            (r, _) => r,
        };
        let limit = budget.map(|b| format!(" / {} s", b.as_secs())).unwrap_or_default();
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag}  {name:<26} [{:.2} s{limit}]  {detail}", took.as_secs_f64());
        if result.is_err() {
            self.failed += 1;
        }
    }
}

fn main() {
    let mut s = Suite { failed: 0 };
    s.run("planner exactness", Some(Duration::from_secs(10)), planner_exactness);
    s.run("worked 2x2 fixture", None, worked_fixture);
    s.run("registry round trip", Some(Duration::from_secs(60)), registry_round_trip);
    s.run("cache conformance", Some(Duration::from_secs(5)), cache_conformance);
    s.run("ledger conservation", Some(Duration::from_secs(10)), ledger_conservation);
    s.run("breakthrough semantics", None, breakthrough_semantics);
    s.run("retrieval degeneracy", None, retrieval_degeneracy);
    s.run("sim conservation", None, sim_conservation);
    s.run("co-training convergence", None, co_training_convergence);
    s.run("end-to-end cli", None, end_to_end);
    if s.failed > 0 {
        println!("{} criteria failed", s.failed);
        std::process::exit(1);
    }
    println!("all criteria passed");
}

// ---------------------------------------------------------------- planner

const TAGS: [&str; 3] = ["a", "b", "c"];

fn random_task(rng: &mut ChaCha8Rng) -> TaskSpec {
    let n = rng.gen_range(1..=4);
    let ids: Vec<String> = (1..=n).map(|i| format!("s{i}")).collect();
    let subtasks = ids
        .iter()
        .map(|id| {
            let k = rng.gen_range(1..=2);
            let mut tags: Vec<&str> = TAGS.choose_multiple(rng, k).copied().collect();
            tags.sort();
            (id.clone(), Subtask::new(&tags, rng.gen_range(0.0..1.0)))
        })
        .collect();
    let mut deps = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.4) {
                deps.insert((ids[i].clone(), ids[j].clone()));
            }
        }
    }
    let budget = rng.gen_bool(0.7).then(|| rng.gen_range(5..200));
    let deadline = rng.gen_bool(0.7).then(|| rng.gen_range(50..1000));
    TaskSpec::new(subtasks, deps, budget, deadline).unwrap()
}

fn random_pool(rng: &mut ChaCha8Rng) -> ModelPool {
    let k = rng.gen_range(1..=3);
    ModelPool::new((1..=k).map(|i| {
        let mut caps: Vec<(&str, f64)> = Vec::new();
        for t in TAGS {
            if rng.gen_bool(0.8) {
                caps.push((t, rng.gen_range(0.0..=1.0)));
            }
        }
        ModelManifest::synthetic(&format!("m{i}"), 1, &caps, rng.gen_range(1..50), rng.gen_range(1..300))
    }))
}

fn planner_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a11);
    let mut worst_ratio_gap: f64 = 0.0;
    let mut exact_hits = 0;
    for case in 0..200 {
        let task = random_task(&mut rng);
        let pool = random_pool(&mut rng);
        let combos = pool.len().pow(task.subtasks.len() as u32);
        let optimum = brute_force_plan(&task, &pool, &PlannerWeights::default()).map_err(|e| e.to_string())?;

        let exhaustive = PlannerWeights { beam_width: combos, ..PlannerWeights::default() };
        let p = plan(&task, &pool, &exhaustive).map_err(|e| e.to_string())?;
        ensure(
            p.utility.utility.to_bits() == optimum.utility.utility.to_bits()
                && p.utility.feasible == optimum.utility.feasible,
            || format!("case {case}: exhaustive beam {} vs brute force {}", p.utility.utility, optimum.utility.utility),
        )?;

        let d = plan(&task, &pool, &PlannerWeights::default()).map_err(|e| e.to_string())?;
        ensure(d.utility.feasible || !optimum.utility.feasible, || format!("case {case}: beam 8 lost feasibility"))?;
        let (u, opt) = (d.utility.utility, optimum.utility.utility);
        let floor = opt - 0.05 * opt.abs();
        ensure(u >= floor, || format!("case {case}: beam 8 utility {u} below {floor} (optimum {opt})"))?;
        if u == opt {
            exact_hits += 1;
        }
        if opt != 0.0 {
            worst_ratio_gap = worst_ratio_gap.max((opt - u) / opt.abs());
        }
    }
    Ok(format!("200 instances; beam 8 matched the optimum on {exact_hits}, worst relative gap {worst_ratio_gap:.4}"))
}

fn worked_fixture() -> Check {
    let subtasks = BTreeMap::from([
        ("s1".to_string(), Subtask::new(&["translate"], 0.5)),
        ("s2".to_string(), Subtask::new(&["summarize"], 0.5)),
    ]);
    let task = TaskSpec::new(subtasks, [("s1".to_string(), "s2".to_string())].into(), Some(40), Some(400)).unwrap();
    let pool = ModelPool::new([
        ModelManifest::synthetic("A", 1, &[("translate", 0.9), ("summarize", 0.2)], 10, 100),
        ModelManifest::synthetic("B", 1, &[("translate", 0.3), ("summarize", 0.8)], 10, 100),
    ]);
    let w = PlannerWeights::default();
    // Oracle: enumerate the four assignments by hand.
    let caps = [("A", 0.9, 0.2), ("B", 0.3, 0.8)];
    let mut best: Option<(f64, &str, &str)> = None;
    for (m1, t1, _) in caps {
        for (m2, _, s2) in caps {
            let q = (t1 + s2) / 2.0;
            let u = q - 0.25 * 20.0 / 40.0 - 0.25 * 200.0 / 400.0;
            let a = BTreeMap::from([("s1".to_string(), ModelRef::new(m1, 1)), ("s2".to_string(), ModelRef::new(m2, 1))]);
            let got = evaluate_plan(&a, &task, &pool, &w).map_err(|e| e.to_string())?;
            ensure((got.utility - u).abs() < 1e-12, || format!("{m1}/{m2}: {} vs oracle {u}", got.utility))?;
            if best.is_none_or(|b| u > b.0) {
                best = Some((u, m1, m2));
            }
        }
    }
    let (_, o1, o2) = best.unwrap();
    let p = plan(&task, &pool, &w).map_err(|e| e.to_string())?;
    let u = p.utility;
    ensure((u.quality - 0.85).abs() < 1e-12, || format!("Q = {}", u.quality))?;
    ensure(u.cost == 20 && u.latency_ms == 200, || format!("C = {}, L = {}", u.cost, u.latency_ms))?;
    ensure((u.utility - 0.600).abs() < 1e-12, || format!("U = {}", u.utility))?;
    ensure(p.assignment["s1"].name == o1 && p.assignment["s2"].name == o2, || format!("chose {:?}", p.assignment))?;
    ensure((o1, o2) == ("A", "B"), || format!("oracle chose {o1}/{o2}"))?;
    Ok(format!("Q={:.2} C={} L={} U={:.3}, chose s1:A s2:B", u.quality, u.cost, u.latency_ms, u.utility))
}

// --------------------------------------------------------------- registry

fn blob_meta() -> ModelMeta {
    ModelMeta {
        capabilities: BTreeMap::from([("t".to_string(), 0.5)]),
        cost_per_call: 1,
        latency_ms: 1,
        designer_account: "d".into(),
        env: EnvironmentSpec::empty(),
        changelog: String::new(),
        metadata_only: false,
    }
}

fn registry_round_trip() -> Check {
    const MAX: f64 = 10.0 * 1024.0 * 1024.0;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let reg = Registry::open(dir.path()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xb10b);
    let forced = [4 * 1024 * 1024, 4 * 1024 * 1024 + 1, 10 * 1024 * 1024, 1];
    let mut pushed: Vec<Vec<u8>> = Vec::new();
    let mut distinct = HashSet::new();
    let mut total_bytes = 0usize;
    let mut tampers = 0;
    for i in 0..1000 {
        let bytes = if i >= forced.len() && !pushed.is_empty() && rng.gen_bool(0.1) {
            pushed[rng.gen_range(0..pushed.len())].clone()
        } else {
            let size = forced.get(i).copied().unwrap_or_else(|| MAX.powf(rng.gen_range(0.0..1.0)) as usize).max(1);
            let mut b = vec![0u8; size];
            rng.fill(&mut b[..]);
            b
        };
        let name = format!("m{}", i % 25);
        let m = reg.put_model(&name, &bytes, blob_meta()).map_err(|e| e.to_string())?;
        let (back, got) = reg.get_model(&name, VersionSelector::Exact(m.version)).map_err(|e| e.to_string())?;
        ensure(got == bytes && back == m, || format!("cycle {i}: pulled bytes differ"))?;
        distinct.insert(m.blob_hash);
        total_bytes += bytes.len();

        if i % 20 == 0 {
            let chunks = reg.blobs().chunk_files(&m.blob_hash).map_err(|e| e.to_string())?;
            let file = &chunks[rng.gen_range(0..chunks.len())];
            let original = std::fs::read(file).map_err(|e| e.to_string())?;
            let mut bad = original.clone();
            let at = rng.gen_range(0..bad.len());
            bad[at] ^= 1 << rng.gen_range(0..8);
            std::fs::write(file, &bad).map_err(|e| e.to_string())?;
            let r = reg.get_model(&name, VersionSelector::Exact(m.version));
            std::fs::write(file, &original).map_err(|e| e.to_string())?;
            ensure(matches!(r, Err(RegistryError::IntegrityError { .. })), || format!("cycle {i}: flip not detected"))?;
            tampers += 1;
        }
        pushed.push(bytes);
    }
    let count = reg.blobs().blob_count().map_err(|e| e.to_string())?;
    ensure(count == distinct.len(), || format!("{count} stored blobs for {} distinct digests", distinct.len()))?;
    Ok(format!(
        "1000 cycles, {:.0} MiB, {} distinct blobs, {tampers} byte flips all rejected",
        total_bytes as f64 / 1048576.0,
        distinct.len()
    ))
}

// ------------------------------------------------------------------ cache

/// Reference LRU: front is least recently used.
struct LruOracle {
    capacity: usize,
    order: VecDeque<usize>,
    entries: HashMap<usize, (Vec<u8>, u64, Option<u64>)>,
}

impl LruOracle {
    fn expired(&self, id: usize, now: u64) -> bool {
        let (_, created, ttl) = &self.entries[&id];
        ttl.is_some_and(|t| created + t < now)
    }

    fn bump(&mut self, id: usize) {
        self.order.retain(|&x| x != id);
        self.order.push_back(id);
    }

    fn drop_entry(&mut self, id: usize) {
        self.order.retain(|&x| x != id);
        self.entries.remove(&id);
    }

    fn put(&mut self, id: usize, out: Vec<u8>, ttl: Option<u64>, now: u64) -> Option<usize> {
        if self.entries.contains_key(&id) {
            self.entries.insert(id, (out, now, ttl));
            self.bump(id);
            return None;
        }
        let evicted = if self.entries.len() == self.capacity { self.order.pop_front() } else { None };
        if let Some(e) = evicted {
            self.entries.remove(&e);
        }
        self.entries.insert(id, (out, now, ttl));
        self.order.push_back(id);
        evicted
    }

    fn get(&mut self, id: usize, now: u64) -> Option<Vec<u8>> {
        if !self.entries.contains_key(&id) {
            return None;
        }
        if self.expired(id, now) {
            self.drop_entry(id);
            return None;
        }
        self.bump(id);
        Some(self.entries[&id].0.clone())
    }

    fn sweep(&mut self, now: u64) -> usize {
        let gone: Vec<usize> = self.order.iter().copied().filter(|&id| self.expired(id, now)).collect();
        for id in &gone {
            self.drop_entry(*id);
        }
        gone.len()
    }
}

fn request(id: usize) -> CanonicalRequest {
    CanonicalRequest { model_name: "m".into(), model_version: 1, prompt: format!("prompt {id}"), params: BTreeMap::new() }
}

fn cache_conformance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xcac4e);
    let mut ops = 0;
    for seq in 0..10 {
        let capacity = [1, 2, 3, 5, 8, 13, 16, 32, 4, 7][seq];
        let universe = capacity * 2 + 3;
        let reqs: Vec<CanonicalRequest> = (0..universe).map(request).collect();
        let ids: HashMap<Digest, usize> = reqs.iter().enumerate().map(|(i, r)| (r.key(), i)).collect();
        let mut cache = OutputCache::new(CacheConfig::with_capacity(capacity)).unwrap();
        let mut oracle = LruOracle { capacity, order: VecDeque::new(), entries: HashMap::new() };
        let mut now = 0u64;
        let (mut gets, mut hits_seen) = (0u64, 0u64);
        for step in 0..10_000 {
            now += rng.gen_range(0..3);
            let id = rng.gen_range(0..universe);
            match rng.gen_range(0..10) {
                0..=4 => {
                    let out = format!("{seq}:{step}").into_bytes();
                    let ttl = if rng.gen_bool(0.5) { None } else { Some(rng.gen_range(1..20)) };
                    let got = cache.put(&reqs[id], out.clone(), ttl, now).unwrap().evicted.map(|k| ids[&k]);
                    let want = oracle.put(id, out, ttl, now);
                    ensure(got == want, || format!("seq {seq} step {step}: evicted {got:?}, oracle {want:?}"))?;
                }
                5..=8 => {
                    gets += 1;
                    let got = cache.get(&reqs[id], now);
                    let want = oracle.get(id, now);
                    hits_seen += got.is_some() as u64;
                    ensure(got == want, || format!("seq {seq} step {step}: get {id} disagrees"))?;
                }
                _ => {
                    let (got, want) = (cache.sweep(now), oracle.sweep(now));
                    ensure(got == want, || format!("seq {seq} step {step}: swept {got}, oracle {want}"))?;
                }
            }
            let order: Vec<usize> = cache.lru_order().iter().map(|k| ids[k]).collect();
            ensure(order.iter().eq(oracle.order.iter()), || format!("seq {seq} step {step}: order {order:?}"))?;
            ensure(cache.len() <= capacity, || format!("seq {seq} step {step}: {} > {capacity}", cache.len()))?;
            ops += 1;
        }
        let st = cache.stats();
        ensure(st.hits + st.misses == gets && st.hits == hits_seen, || format!("seq {seq}: stats {st:?}"))?;
    }
    // Expiry boundary: alive at created + ttl, gone one millisecond later.
    let mut cache = OutputCache::new(CacheConfig::with_capacity(4)).unwrap();
    cache.put(&request(0), b"x".to_vec(), Some(1000), 5_000).unwrap();
    ensure(cache.get(&request(0), 6_000).is_some(), || "expired at created + ttl".into())?;
    ensure(cache.get(&request(0), 6_001).is_none() && cache.is_empty(), || "alive at created + ttl + 1".into())?;
    Ok(format!("{ops} ops over 10 sequences match the reference LRU; ttl boundary exact"))
}

// ----------------------------------------------------------------- ledger

fn ledger_conservation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1ed9e7);
    for case in 0..10_000 {
        let mut l = Ledger::in_memory();
        let open = |l: &mut Ledger, a: &str| l.open_account(a, 0).map(|_| ()).map_err(|e| e.to_string());
        open(&mut l, "designer")?;
        let n = rng.gen_range(0..=8);
        let providers: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        for p in &providers {
            open(&mut l, p)?;
        }
        let den = rng.gen_range(1..=1000u64);
        let num = rng.gen_range(0..=den);
        l.add_agreement("m", "designer", num, den, 0, 0).map_err(|e| e.to_string())?;
        let mut c: BTreeMap<String, u64> = BTreeMap::new();
        for p in &providers {
            if rng.gen_bool(0.15) {
                continue;
            }
            let g = if rng.gen_bool(0.3) { 100 } else { rng.gen_range(1..=1_000_000) };
            l.add_contribution(p, g, "test", 0).map_err(|e| e.to_string())?;
            *c.entry(p.clone()).or_default() += g;
        }
        let r: u64 = rng.gen_range(0..=1_000_000_000);
        let d = l.distribute_revenue("m", r as i64, None, None, 0).map_err(|e| e.to_string())?;

        let sum: u64 = d.payouts.values().sum();
        ensure(sum == r, || format!("case {case}: payouts sum {sum} != {r}"))?;
        let total: u128 = c.values().map(|&x| x as u128).sum();
        let pool = (r as u128 * num as u128 / den as u128) as u64;
        let designer = d.payouts.get("designer").copied().unwrap_or(0);
        let want_designer = if total == 0 { r } else { r - pool };
        ensure(designer == want_designer, || format!("case {case}: designer {designer}, want {want_designer}"))?;
        for (p, &ci) in &c {
            let got = d.payouts.get(p).copied().unwrap_or(0) as u128;
            let base = pool as u128 * ci as u128 / total;
            ensure(got == base || got == base + 1, || format!("case {case}: {p} got {got}, base {base}"))?;
            for (q, &cj) in &c {
                let other = d.payouts.get(q).copied().unwrap_or(0) as u128;
                // Equal contributions may differ by the one µcr the tie rule hands out.
                ensure(ci <= cj || got >= other, || format!("case {case}: {p} ({ci}) paid less than {q} ({cj})"))?;
                ensure(ci != cj || got.abs_diff(other) <= 1, || format!("case {case}: {p} and {q} tie but differ by more than 1"))?;
            }
        }
    }

    // Tamper evidence on a 1000-record log: one random bit flip per record.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("ledger.log");
    {
        let mut l = Ledger::open(&path).map_err(|e| e.to_string())?;
        for p in ["designer", "p1", "p2", "p3"] {
            l.open_account(p, 1).map_err(|e| e.to_string())?;
        }
        l.add_agreement("m", "designer", 1, 3, 0, 2).map_err(|e| e.to_string())?;
        let mut t = 3;
        while l.len() < 1000 {
            t += rng.gen_range(1..1000);
            if l.len() % 7 == 6 && l.len() < 999 {
                l.distribute_revenue("m", rng.gen_range(0..1_000_000), None, None, t).map_err(|e| e.to_string())?;
            } else {
                let p = ["p1", "p2", "p3"][rng.gen_range(0..3)];
                l.add_contribution(p, rng.gen_range(1..10_000), "fuzz", t).map_err(|e| e.to_string())?;
            }
        }
    }
    let raw = std::fs::read(&path).map_err(|e| e.to_string())?;
    let records = verify_log(&raw).map_err(|i| format!("untampered log fails at {i}"))?;
    let mut starts = vec![0usize];
    starts.extend(raw.iter().enumerate().filter(|(_, b)| **b == b'\n').map(|(i, _)| i + 1));
    for idx in 0..records.len() {
        let at = rng.gen_range(starts[idx]..starts[idx + 1]);
        let mut bad = raw.clone();
        bad[at] ^= 1 << rng.gen_range(0..8);
        match verify_log(&bad) {
            Ok(_) => return Err(format!("flip at byte {at} of record {idx} went undetected")),
            Err(k) => ensure(k as usize <= idx, || format!("flip in record {idx} reported at {k}"))?,
        }
    }
    Ok(format!("10000 distributions exact and pro-rata; {} single-bit flips all detected", records.len()))
}

// ------------------------------------------------------------ breakthroughs

/// Utilities on a 2^-30 grid so every comparison below is exact.
const GRID: f64 = 1.0 / (1u64 << 30) as f64;

fn plan_with_utility(task_hash: Digest, u: f64) -> PathPlan {
    PathPlan {
        task_hash,
        assignment: BTreeMap::new(),
        rationale: BTreeMap::new(),
        utility: UtilityBreakdown { quality: 0.0, cost: 0, latency_ms: 0, utility: u, feasible: true },
    }
}

fn breakthrough_semantics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb7ea);
    let mut total_events = 0;
    for seq in 0..1000 {
        let eps = [0.0, GRID, 3.0 * GRID, 1e-3][seq % 4];
        let task_hash = Digest::of(format!("task {seq}").as_bytes());
        let mut records = PathRecords::new(eps);
        let mut ledger = Ledger::in_memory();
        for a in ["treasury", "finder"] {
            ledger.open_account(a, 0).map_err(|e| e.to_string())?;
        }
        let mut best: Option<f64> = None;
        let mut u = rng.gen_range(-1000i64..1000) as f64 * GRID;
        let mut expected = 0;
        for step in 0..rng.gen_range(1..60) {
            u += match rng.gen_range(0..6) {
                0 => 0.0,
                1 => GRID,
                2 => 2.0 * GRID,
                3 => -(rng.gen_range(1..10) as f64) * GRID,
                4 => rng.gen_range(1..4) as f64 * GRID,
                _ => rng.gen_range(1..2_000_000) as f64 * GRID,
            };
            let improves = best.is_none_or(|b| u - b > eps);
            let event = records.record_if_best(&plan_with_utility(task_hash, u), "finder", step).map_err(|e| e.to_string())?;
            ensure(event.is_some() == improves, || format!("seq {seq} step {step}: u={u} best={best:?} eps={eps}"))?;
            if let Some(e) = event {
                ensure(e.old_utility == best && e.new_utility == u, || format!("seq {seq}: event {e:?}"))?;
                ledger.post_breakthrough(&e, 100, &BTreeMap::new(), "treasury", step).map_err(|e| e.to_string())?;
                let again = ledger.post_breakthrough(&e, 100, &BTreeMap::new(), "treasury", step);
                ensure(matches!(again, Err(LedgerError::DuplicateEvent)), || format!("seq {seq}: duplicate accepted"))?;
                best = Some(u);
                expected += 1;
            }
        }
        let rewarded = ledger.records().iter().filter(|r| matches!(r.payload, Payload::Breakthrough { .. })).count();
        ensure(rewarded == expected, || format!("seq {seq}: {rewarded} rewards for {expected} records"))?;
        ensure(records.history(&task_hash).len() == expected, || format!("seq {seq}: history length"))?;
        total_events += expected;
    }
    Ok(format!("1000 sequences, {total_events} rewards, each exactly one strict record improvement"))
}

// -------------------------------------------------------------- retrieval

const WORDS: [&str; 8] = ["alpha", "beta", "gamma", "delta", "plan", "model", "cost", "route"];

fn random_text(rng: &mut ChaCha8Rng) -> String {
    (0..rng.gen_range(1..=5)).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn retrieval_degeneracy() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3e3);
    for case in 0..500 {
        let mut stream = MemoryStream::new();
        for _ in 0..rng.gen_range(2..30) {
            let text = random_text(&mut rng);
            stream.add(&text, rng.gen_range(1..=10), rng.gen_range(0..10_000_000)).map_err(|e| e.to_string())?;
        }
        let warm = RetrievalWeights::only(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), 1.0);
        let warm_query = random_text(&mut rng);
        let k = rng.gen_range(1..=stream.len());
        stream.retrieve(&warm_query, k, &warm, rng.gen_range(10_000_000..20_000_000)).map_err(|e| e.to_string())?;
        let now = 20_000_000 + rng.gen_range(0..1_000_000);
        let query = random_text(&mut rng);
        let q = token_set(&query);

        let recs = stream.records().to_vec();
        // Later-created first, then later id, breaks every tie.
        let tie = |a: &imo_core::pathfinder::MemoryRecord, b: &imo_core::pathfinder::MemoryRecord| {
            b.created_at.cmp(&a.created_at).then(b.id.cmp(&a.id))
        };
        let overlap = |r: &imo_core::pathfinder::MemoryRecord| {
            let inter = r.tokens.intersection(&q).count() as u64;
            let union = r.tokens.union(&q).count() as u64;
            (inter, union)
        };
        let cases: [(&str, RetrievalWeights, Box<dyn Fn(&_, &_) -> std::cmp::Ordering>); 3] = [
            ("recency", RetrievalWeights::only(1.0, 0.0, 0.0), Box::new(|a: &imo_core::pathfinder::MemoryRecord, b: &imo_core::pathfinder::MemoryRecord| {
                b.last_access.cmp(&a.last_access).then(tie(a, b))
            })),
            ("importance", RetrievalWeights::only(0.0, 1.0, 0.0), Box::new(|a: &imo_core::pathfinder::MemoryRecord, b: &imo_core::pathfinder::MemoryRecord| {
                b.importance.cmp(&a.importance).then(tie(a, b))
            })),
            ("relevance", RetrievalWeights::only(0.0, 0.0, 1.0), Box::new(|a: &imo_core::pathfinder::MemoryRecord, b: &imo_core::pathfinder::MemoryRecord| {
                let ((ia, ua), (ib, ub)) = (overlap(a), overlap(b));
                (ib * ua).cmp(&(ia * ub)).then(tie(a, b))
            })),
        ];
        for (label, w, order) in cases {
            let mut s = stream.clone();
            let got: Vec<u64> = s.retrieve(&query, recs.len(), &w, now).map_err(|e| e.to_string())?.iter().map(|r| r.id).collect();
            let mut want = recs.clone();
            want.sort_by(|a, b| order(a, b));
            let want: Vec<u64> = want.iter().map(|r| r.id).collect();
            ensure(got == want, || format!("case {case} {label}: {got:?} vs oracle {want:?}"))?;
        }
    }
    Ok("500 streams; recency-, importance- and relevance-only orderings match".into())
}

// -------------------------------------------------------------------- sim

struct NaiveSim {
    makespan: u64,
    contributions: BTreeMap<String, u64>,
    per_job: BTreeMap<String, BTreeMap<String, u64>>,
    completion: BTreeMap<String, u64>,
}

/// One tick at a time: jobs in arrival order (then id) each take as many of
/// the remaining GPUs, in node-id order, as they still have work for.
fn naive_sim(nodes: &[SimNode], jobs: &[SimJob]) -> NaiveSim {
    let mut sorted_nodes: Vec<&SimNode> = nodes.iter().collect();
    sorted_nodes.sort_by(|a, b| a.id.cmp(&b.id));
    let gpus: Vec<&str> =
        sorted_nodes.iter().flat_map(|n| std::iter::repeat_n(n.owner.as_str(), n.gpu_count as usize)).collect();
    let mut queue: Vec<&SimJob> = jobs.iter().collect();
    queue.sort_by(|a, b| (a.submitted_at_tick, &a.id).cmp(&(b.submitted_at_tick, &b.id)));
    let mut left: Vec<u64> = queue.iter().map(|j| j.gpu_seconds_required).collect();
    let mut out =
        NaiveSim { makespan: 0, contributions: BTreeMap::new(), per_job: BTreeMap::new(), completion: BTreeMap::new() };
    let mut t = 0;
    while left.iter().any(|&l| l > 0) {
        let mut next_gpu = 0;
        for (i, j) in queue.iter().enumerate() {
            if left[i] == 0 || j.submitted_at_tick > t {
                continue;
            }
            while left[i] > 0 && next_gpu < gpus.len() {
                let owner = gpus[next_gpu].to_string();
                *out.contributions.entry(owner.clone()).or_default() += 1;
                *out.per_job.entry(j.id.clone()).or_default().entry(owner).or_default() += 1;
                left[i] -= 1;
                next_gpu += 1;
            }
            if left[i] == 0 {
                out.completion.insert(j.id.clone(), t + 1);
                out.makespan = t + 1;
            }
        }
        t += 1;
    }
    out
}

fn sim_conservation() -> Check {
    let fixture_nodes = [SimNode { id: "n".into(), owner: "o".into(), gpu_count: 1 }];
    let job = |id: &str, need: u64, at: u64| SimJob {
        id: id.into(),
        submitter: "s".into(),
        model: ModelRef::new("m", 1),
        gpu_seconds_required: need,
        submitted_at_tick: at,
    };
    let r = run_simulation(&fixture_nodes, &[job("j1", 10, 0), job("j2", 10, 0)], 1000).map_err(|e| e.to_string())?;
    ensure(r.makespan_ticks == 20, || format!("fixture makespan {}", r.makespan_ticks))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x5117);
    let owners = ["o1", "o2", "o3"];
    for case in 0..500 {
        let nodes: Vec<SimNode> = (0..rng.gen_range(1..=4))
            .map(|i| SimNode { id: format!("n{i}"), owner: owners[rng.gen_range(0..3)].into(), gpu_count: rng.gen_range(1..=4) })
            .collect();
        let jobs: Vec<SimJob> =
            (0..rng.gen_range(1..=6)).map(|i| job(&format!("j{i}"), rng.gen_range(1..=40), rng.gen_range(0..=20))).collect();
        let report = run_simulation(&nodes, &jobs, 10_000).map_err(|e| format!("case {case}: {e}"))?;
        let naive = naive_sim(&nodes, &jobs);
        let required: u64 = jobs.iter().map(|j| j.gpu_seconds_required).sum();
        ensure(report.busy_gpu_seconds() == required, || format!("case {case}: supplied {} of {required}", report.busy_gpu_seconds()))?;
        for j in &jobs {
            let got: u64 = report.job_contributions.get(&j.id).map(|m| m.values().sum()).unwrap_or(0);
            ensure(got == j.gpu_seconds_required, || format!("case {case}: job {} got {got}", j.id))?;
        }
        ensure(report.makespan_ticks == naive.makespan, || format!("case {case}: makespan {} vs {}", report.makespan_ticks, naive.makespan))?;
        ensure(report.contributions == naive.contributions, || format!("case {case}: contributions differ"))?;
        ensure(report.job_contributions == naive.per_job, || format!("case {case}: per-job contributions differ"))?;
        ensure(report.completion == naive.completion, || format!("case {case}: completions differ"))?;

        let cut = rng.gen_range(1..=naive.makespan);
        match run_simulation(&nodes, &jobs, cut) {
            Ok(r) => ensure(cut == naive.makespan && r.makespan_ticks == cut, || format!("case {case}: finished early"))?,
            Err(SimError::Unfinished { report, .. }) => {
                let cap: u64 = nodes.iter().map(|n| n.gpu_count as u64).sum::<u64>() * cut;
                ensure(report.busy_gpu_seconds() <= cap.min(required), || format!("case {case}: over capacity"))?;
            }
            Err(e) => return Err(format!("case {case}: {e}")),
        }
    }
    Ok("fixture makespan 20; 500 random configs conserve work and match a per-tick oracle".into())
}

// -------------------------------------------------------------- co-training

fn co_training_convergence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0);
    let mut worst: f64 = 0.0;
    let mut closed_form_err: f64 = 0.0;
    for case in 0..200 {
        let n = rng.gen_range(2..=6);
        let tags = ["x", "y", "z", "w"];
        let models: Vec<ModelManifest> = (0..n)
            .map(|i| {
                let mut caps: Vec<(&str, f64)> = Vec::new();
                for t in tags {
                    if rng.gen_bool(0.75) {
                        caps.push((t, rng.gen_range(0.0..=1.0)));
                    }
                }
                ModelManifest::synthetic(&format!("m{i}"), 1, &caps, 1, 1)
            })
            .collect();
        let initial: Vec<Capabilities> = models.iter().map(|m| m.capabilities.clone()).collect();
        let all_tags: BTreeSet<&String> = initial.iter().flat_map(|c| c.keys()).collect();
        let max: BTreeMap<&String, f64> =
            all_tags.iter().map(|t| (*t, initial.iter().map(|c| c.get(*t).copied().unwrap_or(0.0)).fold(0.0, f64::max))).collect();

        let mut caps = initial.clone();
        for round in 0..100 {
            let next = co_train_round(&caps, DEFAULT_ETA);
            for (before, after) in caps.iter().zip(&next) {
                for (t, v) in before {
                    ensure(after[t] >= *v, || format!("case {case} round {round}: {t} fell from {v} to {}", after[t]))?;
                }
            }
            caps = next;
        }
        let trained = co_train(&models, 100, DEFAULT_ETA).map_err(|e| e.to_string())?;
        ensure(trained == caps, || format!("case {case}: co_train differs from iterated rounds"))?;
        for (c0, c) in initial.iter().zip(&caps) {
            for t in &all_tags {
                let start = c0.get(*t).copied().unwrap_or(0.0);
                let gap = max[t] - c[*t];
                worst = worst.max(gap);
                // Unrolled rule: the gap shrinks by (1 - eta) each round.
                let predicted = (max[t] - start) * (1.0 - DEFAULT_ETA).powi(100);
                closed_form_err = closed_form_err.max((gap - predicted).abs());
            }
        }
    }
    let detail = format!(
        "eta={DEFAULT_ETA}: largest residual gap {worst:.3e} after 100 rounds (closed form (1-eta)^100 = {:.3e}, matched within {closed_form_err:.1e}); no score decreased",
        (1.0 - DEFAULT_ETA).powi(100)
    );
    if worst <= 1e-6 {
        Ok(detail)
    } else {
        Err(format!("{detail}; tolerance 1e-6 needs (1-eta)^100 * gap <= 1e-6"))
    }
}

// -------------------------------------------------------------------- e2e

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/e2e")
}

struct Cli {
    server: String,
    token: String,
}

impl Cli {
    fn run(&self, args: &[&str]) -> Result<String, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_imo"))
            .args(args)
            .env("IMO_SERVER", &self.server)
            .env("IMO_TOKEN", &self.token)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("imo {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
        }
        Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
    }

    fn doc(&self, args: &[&str]) -> Result<Value, String> {
        let mut full = vec!["--output", "doc"];
        full.extend_from_slice(args);
        serde_json::from_str(&self.run(&full)?).map_err(|e| e.to_string())
    }
}

fn end_to_end() -> Check {
    let fx = fixtures();
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = ServeConfig::new(work.path().join("data"));
    config.bind = "127.0.0.1:0".parse().unwrap();
    config.tokens = vec!["e2e-token".into()];
    config.lexicon = Some(fx.join("lexicon.txt"));
    let server = spawn_background(config).map_err(|e| e.to_string())?;
    let cli = Cli { server: server.url(), token: "e2e-token".into() };
    let p = |path: &Path| path.to_string_lossy().into_owned();

    for m in ["translator-a", "summarizer-b", "classifier-c"] {
        let pushed = cli.run(&["push", &p(&fx.join("models").join(m))])?;
        ensure(pushed == format!("{m}@1"), || format!("push printed {pushed:?}"))?;
    }
    for a in ["designer-a", "p1", "p2"] {
        cli.run(&["ledger", "open", a])?;
    }
    cli.run(&["ledger", "agree", "--model", "translator-a", "--designer", "designer-a", "--share", "1/3"])?;
    let sim = cli.doc(&["sim", &p(&fx.join("sim.json")), "--post"])?;
    ensure(sim["report"]["contributions"] == serde_json::json!({ "p1": 2, "p2": 1 }), || format!("sim {sim}"))?;

    let request = std::fs::read_to_string(fx.join("request.txt")).map_err(|e| e.to_string())?;
    let task = cli.doc(&["interpret", request.trim()])?;
    let task_file = work.path().join("task.json");
    std::fs::write(&task_file, task.to_string()).map_err(|e| e.to_string())?;
    let planned = cli.doc(&["plan", &p(&task_file)])?;
    let plan_file = work.path().join("plan.json");
    std::fs::write(&plan_file, planned.to_string()).map_err(|e| e.to_string())?;
    let exec = cli.doc(&["exec", &p(&plan_file), "--task", &p(&task_file), "--input", "quarterly report"])?;
    let functional = exec["scorecard"]["functional"].as_f64().unwrap_or(-1.0);

    cli.run(&["ledger", "revenue", "--model", "translator-a", "--amount", "100"])?;
    let balance = cli.run(&["ledger", "balance", "designer-a"])?;
    let verified = cli.run(&["ledger", "verify", &p(&work.path().join("data/ledger.log"))])?;

    let chosen: Vec<String> = planned["plan"]["assignment"]
        .as_object()
        .map(|a| a.iter().map(|(s, m)| format!("{s}:{}", m["name"].as_str().unwrap_or("?"))).collect())
        .unwrap_or_default();
    ensure(functional == 1.0, || format!("functional = {functional}"))?;
    ensure(balance == "67", || format!("designer balance {balance}"))?;
    Ok(format!("plan {}, functional = {functional}, designer balance {balance} µcr, {verified}", chosen.join(" ")))
}
