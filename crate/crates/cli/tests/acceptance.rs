//! Acceptance suite: runs every acceptance criterion and prints one PASS or
//! FAIL line per criterion. Exits nonzero if any criterion fails.
//!
//! Reference values are computed here by brute-force oracles written
//! independently of the library code.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use gazesal_core::cgrpo::{
    evaluate_policy, group_advantages, grpo_step, stream_rng, train, GrpoConfig, Head, PolicyShape,
    ScoredRollout, ToyPolicy,
};
use gazesal_core::clustering::{dbscan, DbscanParams};
use gazesal_core::data_model::GroupLabel;
use gazesal_core::geometry::pixel_to_grid;
use gazesal_core::metrics::{auc_judd, cc, kl_div, nss, sim};
use gazesal_core::point_protocol::{parse, serialize, PointMessage};
use gazesal_core::rewards::{format_reward, spatial_reward, RewardConfig};
use gazesal_core::saliency::{normalize_map, render_heatmap, KernelConfig, SaliencyMap};
use gazesal_core::synth::{generate, toy_group_dataset, write_corpus, SynthConfig};
use gazesal_core::GridPoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < budget, || format!("took {took:.1?}, budget {budget:?}"))?;
    Ok(took)
}

// ---------------------------------------------------------------------------
// 1. reward closed forms

fn message(n_ref: usize, n_points: usize) -> String {
    let pts: Vec<String> = (0..n_points).map(|i| format!("[{},{}]", 10 * i, 20 * i)).collect();
    format!("<ref>{n_ref}</ref><point>[{}]</point>", pts.join(","))
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let cfg = RewardConfig::default();
    ensure(cfg.r_base == 0.2 && cfg.r_extra == 0.8, || "default weights changed".into())?;
    let full = format_reward(&parse(&message(10, 10)), &cfg);
    ensure(full == 1.0, || format!("format(10,10) = {full}"))?;
    let half = format_reward(&parse(&message(10, 5)), &cfg);
    // 0.2 + 0.8 * 0.5 is one ulp above 0.6 in binary floating point
    ensure((half - 0.6).abs() <= 1e-15, || format!("format(10,5) = {half}"))?;
    for bad in ["<ref>10</ref><point>[[0,0]]", "<ref>x</ref><point>[[0,0]]</point>", ""] {
        let r = format_reward(&parse(bad), &cfg);
        ensure(r == 0.0, || format!("invalid `{bad}` scored {r}"))?;
    }
    let far = spatial_reward(&[GridPoint::new(0.0, 0.0)], &[GridPoint::new(1000.0, 1000.0)], &cfg)
        .map_err(|e| e.to_string())?;
    ensure((far - (-1f64).exp()).abs() <= 1e-12, || format!("spatial max-distance = {far}"))?;
    let took = within_budget(start, Duration::from_secs(1))?;
    Ok(format!("format 1.0 / {half} / 0.0, spatial {far:.12} ({took:.1?})"))
}

// ---------------------------------------------------------------------------
// 2. metric identities and brute-force oracles

const N: usize = 8;

fn oracle_normalize(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

fn oracle_kl(g: &[f64], p: &[f64]) -> f64 {
    let (g, p) = (oracle_normalize(g), oracle_normalize(p));
    let eps = 1e-12;
    let mut total = 0.0;
    for i in 0..g.len() {
        total += g[i] * ((g[i] + eps) / (p[i] + eps)).ln();
    }
    total.max(0.0)
}

fn oracle_moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn oracle_cc(g: &[f64], p: &[f64]) -> f64 {
    let (mg, sg) = oracle_moments(g);
    let (mp, sp) = oracle_moments(p);
    let mut cov = 0.0;
    for i in 0..g.len() {
        cov += (g[i] - mg) * (p[i] - mp);
    }
    cov / g.len() as f64 / (sg * sp)
}

fn oracle_sim(g: &[f64], p: &[f64]) -> f64 {
    let (g, p) = (oracle_normalize(g), oracle_normalize(p));
    (0..g.len()).map(|i| g[i].min(p[i])).sum()
}

fn oracle_nss(p: &[f64], fix: &[(usize, usize)]) -> f64 {
    let (m, s) = oracle_moments(p);
    fix.iter().map(|&(x, y)| (p[y * N + x] - m) / s).sum::<f64>() / fix.len() as f64
}

/// AUC-Judd by direct counting: one ROC point per distinct fixation pixel,
/// thresholded at that pixel's value.
fn oracle_auc(p: &[f64], fix: &[(usize, usize)]) -> f64 {
    let mut is_fix = vec![false; p.len()];
    for &(x, y) in fix {
        is_fix[y * N + x] = true;
    }
    let n_fix = is_fix.iter().filter(|f| **f).count() as f64;
    let n_other = p.len() as f64 - n_fix;
    let mut thresholds: Vec<f64> = (0..p.len()).filter(|&i| is_fix[i]).map(|i| p[i]).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut curve = vec![(0.0, 0.0)];
    for t in thresholds {
        let tp = (0..p.len()).filter(|&i| is_fix[i] && p[i] >= t).count() as f64 / n_fix;
        let fp = (0..p.len()).filter(|&i| !is_fix[i] && p[i] >= t).count() as f64 / n_other;
        curve.push((fp, tp));
    }
    curve.push((1.0, 1.0));
    curve.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

fn random_map(rng: &mut ChaCha8Rng, quantized: bool) -> Vec<f64> {
    (0..N * N)
        .map(|_| {
            if quantized {
                f64::from(rng.random_range(0..4u8))
            } else {
                rng.random_range(0.0..1.0)
            }
        })
        .map(|v| v + 1e-3)
        .collect()
}

fn grid_of_pixel(x: usize, y: usize) -> GridPoint {
    GridPoint::new(x as f64 * 1000.0 / N as f64, y as f64 * 1000.0 / N as f64)
}

fn map(values: &[f64]) -> SaliencyMap {
    SaliencyMap::from_values(N, N, values.to_vec()).unwrap()
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let err = |e: gazesal_core::Error| e.to_string();

    let gt = normalize_map(
        &render_heatmap(
            &[GridPoint::new(300.0, 400.0), GridPoint::new(700.0, 650.0)],
            64,
            48,
            &KernelConfig::default(),
        )
        .map_err(err)?,
    )
    .map_err(err)?;
    let kl_self = kl_div(&gt, &gt).map_err(err)?;
    let cc_self = cc(&gt, &gt).map_err(err)?;
    let sim_self = sim(&gt, &gt).map_err(err)?;
    ensure(kl_self <= 1e-6, || format!("KL(p,p) = {kl_self}"))?;
    ensure((cc_self - 1.0).abs() <= 1e-9, || format!("CC(p,p) = {cc_self}"))?;
    ensure((sim_self - 1.0).abs() <= 1e-9, || format!("SIM(p,p) = {sim_self}"))?;

    let constant = map(&vec![0.25; N * N]);
    let auc_const = auc_judd(&constant, &[grid_of_pixel(1, 2), grid_of_pixel(5, 5)]).map_err(err)?;
    ensure((auc_const - 0.5).abs() <= 1e-6, || format!("constant-map AUC = {auc_const}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let quantized = case % 5 == 0;
        let g = random_map(&mut rng, quantized);
        let p = random_map(&mut rng, quantized);
        let n_fix = rng.random_range(1..=10);
        let fix: Vec<(usize, usize)> = (0..n_fix)
            .map(|_| (rng.random_range(0..N), rng.random_range(0..N)))
            .collect();
        let fix_grid: Vec<GridPoint> = fix.iter().map(|&(x, y)| grid_of_pixel(x, y)).collect();
        let (gm, pm) = (map(&g), map(&p));
        let (gn, pn) = (normalize_map(&gm).map_err(err)?, normalize_map(&pm).map_err(err)?);
        let pairs = [
            ("KL", kl_div(&gm, &pm).map_err(err)?, oracle_kl(&g, &p)),
            ("CC", cc(&gm, &pm).map_err(err)?, oracle_cc(&g, &p)),
            ("SIM", sim(&gn, &pn).map_err(err)?, oracle_sim(&g, &p)),
            ("NSS", nss(&pm, &fix_grid).map_err(err)?, oracle_nss(&p, &fix)),
            ("AUC", auc_judd(&pm, &fix_grid).map_err(err)?, oracle_auc(&p, &fix)),
        ];
        for (name, got, want) in pairs {
            let d = (got - want).abs();
            worst = worst.max(d);
            ensure(d <= 1e-9, || format!("case {case}: {name} {got} vs oracle {want}"))?;
        }
    }
    let took = within_budget(start, Duration::from_secs(10))?;
    Ok(format!(
        "identities hold, constant AUC {auc_const}, 50 pairs max |diff| {worst:.1e} ({took:.1?})"
    ))
}

// ---------------------------------------------------------------------------
// 3. DBSCAN oracle equivalence and the epsilon trend

/// Density-connectivity by definition: all-pairs neighborhoods, clusters as
/// connected components of the core graph found by BFS from cores in index
/// order, borders attached to the earliest cluster with a core neighbor.
fn oracle_dbscan(points: &[GridPoint], eps: f64, min_pts: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let n = points.len();
    let close = |i: usize, j: usize| {
        let dx = (points[i].gx - points[j].gx) / 1000.0;
        let dy = (points[i].gy - points[j].gy) / 1000.0;
        dx * dx + dy * dy <= eps * eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| close(i, j)).count() >= min_pts).collect();
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for seed in 0..n {
        if !core[seed] || label[seed].is_some() {
            continue;
        }
        let id = clusters.len();
        let mut members = Vec::new();
        let mut queue = VecDeque::from([seed]);
        label[seed] = Some(id);
        while let Some(i) = queue.pop_front() {
            members.push(i);
            for j in 0..n {
                if core[j] && label[j].is_none() && close(i, j) {
                    label[j] = Some(id);
                    queue.push_back(j);
                }
            }
        }
        clusters.push(members);
    }
    let mut noise = Vec::new();
    for i in 0..n {
        if core[i] {
            continue;
        }
        let owner = (0..n).filter(|&j| core[j] && close(i, j)).filter_map(|j| label[j]).min();
        match owner {
            Some(c) => clusters[c].push(i),
            None => noise.push(i),
        }
    }
    for c in &mut clusters {
        c.sort_unstable();
    }
    (clusters, noise)
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<GridPoint>, f64, usize) {
    let n = rng.random_range(0..=40);
    let blobs: Vec<(f64, f64)> = (0..rng.random_range(1..5))
        .map(|_| (rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0)))
        .collect();
    let integer = rng.random_bool(0.3);
    let points = (0..n)
        .map(|_| {
            let (bx, by) = blobs[rng.random_range(0..blobs.len())];
            let (x, y) = (bx + rng.random_range(-80.0..80.0), by + rng.random_range(-80.0..80.0));
            let (x, y) = if integer { ((x / 10.0).round() * 10.0, (y / 10.0).round() * 10.0) } else { (x, y) };
            GridPoint::new(x.clamp(0.0, 1000.0), y.clamp(0.0, 1000.0))
        })
        .collect();
    let eps = if integer {
        [0.01, 0.02, 0.03, 0.04, 0.05][rng.random_range(0..5)]
    } else {
        rng.random_range(0.005..0.15)
    };
    (points, eps, rng.random_range(1..=5))
}

fn scene_points(corpus: &gazesal_core::synth::SynthCorpus) -> BTreeMap<(String, u32), Vec<GridPoint>> {
    let sizes: BTreeMap<&str, (u32, u32)> = corpus
        .manifests
        .iter()
        .map(|m| (m.video_id.as_str(), (m.width, m.height)))
        .collect();
    let mut scenes: BTreeMap<(String, u32), Vec<GridPoint>> = BTreeMap::new();
    for s in &corpus.samples {
        let (w, h) = sizes[s.video_id.as_str()];
        scenes
            .entry((s.video_id.clone(), s.t.floor() as u32))
            .or_default()
            .push(pixel_to_grid(s.x, s.y, w, h).unwrap());
    }
    scenes
}

fn criterion_3() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..500 {
        let (points, eps, min_pts) = random_instance(&mut rng);
        let got = dbscan(&points, DbscanParams { eps, min_pts });
        let (clusters, noise) = oracle_dbscan(&points, eps, min_pts);
        ensure(got.clusters == clusters && got.noise == noise, || {
            format!("instance {case} (n={}, eps={eps}, minPts={min_pts}) differs from oracle", points.len())
        })?;
    }

    let eps_grid = [0.03, 0.04, 0.05];
    let mut max_n = [0usize; 3];
    for seed in 0..3 {
        let corpus = generate(&SynthConfig {
            videos: 3,
            seconds: 4,
            observers_per_cell: 6,
            centers_per_scene: 5,
            seed,
            ..SynthConfig::default()
        });
        for ((video, sec), pts) in scene_points(&corpus) {
            let counts: Vec<usize> = eps_grid
                .iter()
                .map(|&eps| dbscan(&pts, DbscanParams { eps, min_pts: 1 }).clusters.len())
                .collect();
            ensure(counts.windows(2).all(|w| w[0] >= w[1]), || {
                format!("corpus {seed} scene {video}/{sec}: counts {counts:?} increase with eps")
            })?;
            for (m, c) in max_n.iter_mut().zip(&counts) {
                *m = (*m).max(*c);
            }
        }
    }
    ensure(max_n.windows(2).all(|w| w[0] >= w[1]), || format!("maxN_Pts {max_n:?} not nonincreasing"))?;
    let took = within_budget(start, Duration::from_secs(30))?;
    Ok(format!(
        "500/500 instances match oracle; maxN_Pts over eps 0.03/0.04/0.05 = {}/{}/{} ({took:.1?})",
        max_n[0], max_n[1], max_n[2]
    ))
}

// ---------------------------------------------------------------------------
// 4. parser round trip and mutation robustness

/// Validity by the documented rule, evaluated with regular expressions.
struct ValidityOracle {
    ref_span: Regex,
    point_span: Regex,
    clean: Regex,
    pair: Regex,
}

impl ValidityOracle {
    fn new() -> Self {
        let ws = r"[ \t\n\r\x0C]";
        let pair = format!(r"\[{ws}*(-?[0-9]+){ws}*,{ws}*(-?[0-9]+){ws}*\]");
        Self {
            ref_span: Regex::new(r"(?s)<ref>(.*?)</ref>").unwrap(),
            point_span: Regex::new(r"(?s)<point>(.*?)</point>").unwrap(),
            clean: Regex::new(&format!(r"^(?:{pair}|[\[\],]|{ws})*$")).unwrap(),
            pair: Regex::new(&pair).unwrap(),
        }
    }

    /// `Some(n_ref)` for a valid message.
    fn judge(&self, text: &str) -> Option<usize> {
        let inner = self.ref_span.captures(text)?.get(1)?.as_str().trim_matches(|c: char| c.is_whitespace());
        if inner.is_empty() || !inner.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let n_ref: usize = inner.parse().ok()?;
        let spans: Vec<&str> = self
            .point_span
            .captures_iter(text)
            .map(|c| c.get(1).unwrap().as_str())
            .collect();
        if spans.is_empty() {
            return None;
        }
        for span in spans {
            if !self.clean.is_match(span) {
                return None;
            }
            for c in self.pair.captures_iter(span) {
                for g in [1, 2] {
                    let v: i128 = c[g].parse().ok()?;
                    if !(0..=1000).contains(&v) {
                        return None;
                    }
                }
            }
        }
        Some(n_ref)
    }
}

const FRAGMENTS: [&str; 16] = [
    "<ref>", "</ref>", "<point>", "</point>", "[", "]", ",", "-", "0", "7", "1000", "1001", " ", "\n", "x", "<",
];

fn mutate(rng: &mut ChaCha8Rng, text: &str) -> String {
    let mut s: Vec<char> = text.chars().collect();
    for _ in 0..rng.random_range(1..=4) {
        let at = rng.random_range(0..=s.len());
        match rng.random_range(0..6) {
            0 if !s.is_empty() => {
                s.remove(at.min(s.len() - 1));
            }
            1 => {
                let frag = FRAGMENTS[rng.random_range(0..FRAGMENTS.len())];
                for (k, c) in frag.chars().enumerate() {
                    s.insert(at + k, c);
                }
            }
            2 => s.truncate(at),
            3 if !s.is_empty() => {
                let i = at.min(s.len() - 1);
                s[i] = ['[', ']', ',', '9', '<', '>', '/', 'a', ' '][rng.random_range(0..9)];
            }
            4 if s.len() > 1 => {
                let a = rng.random_range(0..s.len());
                let b = rng.random_range(a..s.len());
                let chunk: Vec<char> = s[a..=b].to_vec();
                let to = rng.random_range(0..=s.len());
                for (k, c) in chunk.into_iter().enumerate() {
                    s.insert(to + k, c);
                }
            }
            _ => {
                let ch = char::from_u32(rng.random_range(0x20..0x7f)).unwrap();
                s.insert(at, ch);
            }
        }
    }
    s.into_iter().collect()
}

fn criterion_4() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..10_000 {
        let msg = PointMessage {
            n_ref: rng.random_range(0..=60),
            points: (0..rng.random_range(0..=40))
                .map(|_| GridPoint::new(f64::from(rng.random_range(0..=1000u32)), f64::from(rng.random_range(0..=1000u32))))
                .collect(),
        };
        let text = serialize(&msg).map_err(|e| e.to_string())?;
        let back = parse(&text).message();
        ensure(back.as_ref() == Some(&msg), || format!("round trip {case} failed for `{text}`"))?;
        let bits = |m: &PointMessage| m.points.iter().map(|p| (p.gx.to_bits(), p.gy.to_bits())).collect::<Vec<_>>();
        ensure(bits(back.as_ref().unwrap()) == bits(&msg), || format!("round trip {case} not bit-exact"))?;
    }

    let oracle = ValidityOracle::new();
    let mut valid_seen = 0;
    for case in 0..10_000 {
        let base = if case % 10 == 0 {
            (0..rng.random_range(0..30))
                .map(|_| FRAGMENTS[rng.random_range(0..FRAGMENTS.len())])
                .collect::<String>()
        } else {
            let n = rng.random_range(0..6);
            let pts: Vec<String> = (0..n)
                .map(|_| format!("[{},{}]", rng.random_range(0..=1000), rng.random_range(0..=1000)))
                .collect();
            format!("<ref>{}</ref><point>[{}]</point>", rng.random_range(0..8), pts.join(","))
        };
        let text = mutate(&mut rng, &base);
        let outcome = std::panic::catch_unwind(|| parse(&text)).map_err(|_| format!("parser panicked on {text:?}"))?;
        let expect = oracle.judge(&text);
        ensure(outcome.valid_format == expect.is_some(), || {
            format!("mutant {case} {text:?}: parser valid={} oracle valid={}", outcome.valid_format, expect.is_some())
        })?;
        if let Some(n) = expect {
            valid_seen += 1;
            ensure(outcome.n_ref == Some(n), || format!("mutant {case} {text:?}: n_ref {:?} vs {n}", outcome.n_ref))?;
        }
    }
    let took = within_budget(start, Duration::from_secs(30))?;
    Ok(format!(
        "10000 round trips exact; 10000 mutants agree with oracle ({valid_seen} valid) ({took:.1?})"
    ))
}

// ---------------------------------------------------------------------------
// 5. C-GRPO mechanism reproduction

fn criterion_5() -> Check {
    let start = Instant::now();
    let data = toy_group_dataset(4, 0);
    let cfg = GrpoConfig::default();
    ensure(cfg.stochastic_delimiters && cfg.iterations <= 5000, || format!("unsuitable config {cfg:?}"))?;
    let reward = RewardConfig::default();
    let (policy, _) = train(&data, &cfg, &reward).map_err(|e| e.to_string())?;
    let reference = ToyPolicy::new(cfg.shape(data.len()), cfg.initial_validity).map_err(|e| e.to_string())?;
    let before = evaluate_policy(&reference, &reference, &data, 1000, 77, &reward);
    let after = evaluate_policy(&policy, &reference, &data, 1000, 77, &reward);

    ensure((before.format_validity - 0.5).abs() <= 0.05, || {
        format!("initial validity {:.3} is not about 0.5", before.format_validity)
    })?;
    ensure(after.format_validity >= 0.95, || format!("(a) validity {:.3}", after.format_validity))?;
    let gain = after.mean_reward - before.mean_reward;
    ensure(gain >= 0.5, || format!("(b) reward gain {gain:.3}"))?;
    let drop = 1.0 - after.mean_nn_distance / before.mean_nn_distance;
    ensure(drop >= 0.5, || format!("(c) distance drop {:.1}%", 100.0 * drop))?;
    let x_of = |g: GroupLabel| {
        let i = data.iter().position(|e| e.context.group == g).unwrap();
        let t = &data[i].targets;
        (after.mean_x[i], t.iter().map(|p| p.gx).sum::<f64>() / t.len() as f64)
    };
    let (male, male_t) = x_of(GroupLabel::Male);
    let (female, female_t) = x_of(GroupLabel::Female);
    ensure((female - male).signum() == (female_t - male_t).signum() && female != male, || {
        format!("(d) predicted x male {male:.1} female {female:.1}, targets {male_t:.1} / {female_t:.1}")
    })?;
    let took = within_budget(start, Duration::from_secs(300))?;
    Ok(format!(
        "{} iters: validity {:.3}->{:.3}, reward {:.3}->{:.3}, nn distance {:.1}->{:.1}, mean x male {male:.0} < female {female:.0} ({took:.1?})",
        cfg.iterations,
        before.format_validity,
        after.format_validity,
        before.mean_reward,
        after.mean_reward,
        before.mean_nn_distance,
        after.mean_nn_distance,
    ))
}

// ---------------------------------------------------------------------------
// 6. GRPO numerical checks

/// The clipped, KL-penalized objective written out from its definition.
fn oracle_objective(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    old: &ToyPolicy,
    batch: &[ScoredRollout],
    cfg: &GrpoConfig,
) -> f64 {
    let mut total = 0.0;
    for s in batch {
        let c = s.rollout.context;
        let mut per_output = 0.0;
        for t in &s.rollout.tokens {
            let lp = policy.log_prob(c, t);
            let ratio = (lp - old.log_prob(c, t)).exp();
            let clipped = ratio.max(1.0 - cfg.clip_eps).min(1.0 + cfg.clip_eps);
            let surrogate = f64::min(ratio * s.advantage, clipped * s.advantage);
            let x = (reference.log_prob(c, t) - lp).exp();
            per_output += surrogate - cfg.beta * (x - 1.0 - x.ln());
        }
        total += per_output / s.rollout.tokens.len() as f64;
    }
    total / batch.len() as f64
}

fn criterion_6() -> Check {
    let start = Instant::now();
    // declared count and emitted count over {0, 1}; the single coordinate
    // bin carries no probability mass
    let shape = PolicyShape {
        contexts: 1,
        k_max: 1,
        bins: 1,
        stochastic_delimiters: false,
    };
    let mut rng = stream_rng(6, &[]);
    let mut random_policy = || {
        let params = (0..shape.total()).map(|_| rng.random_range(-1.0..1.0)).collect();
        ToyPolicy::from_params(shape, params).unwrap()
    };
    let old = random_policy();
    let reference = random_policy();
    let mut policy = old.clone();
    for (i, p) in policy.params_mut().iter_mut().enumerate() {
        *p += 0.02 * (i as f64 - 2.0);
    }
    let cfg = GrpoConfig {
        beta: 0.5,
        learning_rate: 0.1,
        ..GrpoConfig::default()
    };
    let rewards = [0.3, 1.8, 1.0, 0.0, 1.2, 0.6, 1.9, 0.4];
    let adv = group_advantages(&rewards);
    let batch: Vec<ScoredRollout> = old
        .sample_group(0, rewards.len(), 61)
        .into_iter()
        .zip(rewards.iter().zip(&adv))
        .map(|(rollout, (&reward, &advantage))| ScoredRollout {
            rollout,
            reward,
            advantage,
        })
        .collect();
    let step = grpo_step(&policy, &reference, &old, &batch, &cfg).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..shape.total() {
        let mut plus = policy.clone();
        plus.params_mut()[i] += h;
        let mut minus = policy.clone();
        minus.params_mut()[i] -= h;
        let fd = (oracle_objective(&plus, &reference, &old, &batch, &cfg)
            - oracle_objective(&minus, &reference, &old, &batch, &cfg))
            / (2.0 * h);
        let analytic = (step.policy.params()[i] - policy.params()[i]) / cfg.learning_rate;
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
        if analytic.abs().max(fd.abs()) > 1e-10 {
            worst = worst.max(rel);
            ensure(rel <= 1e-5, || format!("param {i}: analytic {analytic} vs finite difference {fd}"))?;
        }
    }
    let touched = [Head::Ref, Head::Count].iter().map(|&hd| policy.logits(0, hd).len()).sum::<usize>();

    let mut arng = ChaCha8Rng::seed_from_u64(66);
    for _ in 0..1000 {
        let g = arng.random_range(2..=16);
        let r: Vec<f64> = (0..g).map(|_| arng.random_range(-3.0..3.0)).collect();
        let s: f64 = group_advantages(&r).iter().sum();
        ensure(s.abs() <= 1e-9, || format!("advantages sum to {s}"))?;
    }

    let data = toy_group_dataset(4, 6);
    let base = GrpoConfig {
        iterations: 400,
        seed: 6,
        ..GrpoConfig::default()
    };
    let reward = RewardConfig::default();
    let init = ToyPolicy::new(base.shape(data.len()), base.initial_validity).map_err(|e| e.to_string())?;
    let kl_after = |beta: f64| -> Result<f64, String> {
        let (p, _) = train(&data, &GrpoConfig { beta, ..base }, &reward).map_err(|e| e.to_string())?;
        Ok(evaluate_policy(&p, &init, &data, 500, 5, &reward).mean_kl)
    };
    let (kl_free, kl_tied) = (kl_after(0.0)?, kl_after(10.0)?);
    ensure(kl_tied < kl_free, || format!("beta=10 KL {kl_tied} not below beta=0 KL {kl_free}"))?;
    let took = start.elapsed();
    Ok(format!(
        "gradient vs finite differences max rel {worst:.1e} over {touched} logits; advantage sums 0; KL beta=10 {kl_tied:.4} < beta=0 {kl_free:.4} ({took:.1?})"
    ))
}

// ---------------------------------------------------------------------------
// 7. pipeline determinism

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_7() -> Check {
    let start = Instant::now();
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = work.path().join("data");
    write_corpus(&generate(&SynthConfig::default()), &data).map_err(|e| e.to_string())?;
    let config = work.path().join("pipeline.toml");
    fs::write(
        &config,
        format!(
            "[paths]\ngaze = {:?}\nprofiles = {:?}\nmanifest = {:?}\n",
            data.join("gaze.csv"),
            data.join("profiles.csv"),
            data.join("manifest.json")
        ),
    )
    .map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for (run, jobs) in [("a", "1"), ("b", "3")] {
        let out = work.path().join(run);
        for cmd in ["ingest", "cluster", "render", "eval", "report"] {
            let args = [
                "gazesal",
                "--config",
                config.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--seed",
                "7",
                "--jobs",
                jobs,
                cmd,
            ];
            let code = gazesal_cli::run(args);
            ensure(code == 0, || format!("run {run}: `{cmd}` exited with {code}"))?;
        }
        trees.push(tree(&out));
    }
    let (a, b) = (&trees[0], &trees[1]);
    ensure(a.keys().eq(b.keys()), || "output trees list different files".into())?;
    if let Some(path) = a.iter().find(|(p, bytes)| b[*p] != **bytes).map(|(p, _)| p) {
        return Err(format!("{} differs between runs", path.display()));
    }
    let pngs = a.keys().filter(|p| p.extension().is_some_and(|e| e == "png")).count();
    let took = start.elapsed();
    Ok(format!("{} files ({pngs} PNGs) byte-identical across runs ({took:.1?})", a.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 7] = [
        ("reward closed forms", criterion_1),
        ("metric identities and oracles", criterion_2),
        ("DBSCAN oracle equivalence and eps trend", criterion_3),
        ("parser round trip and mutation fuzz", criterion_4),
        ("C-GRPO mechanism reproduction", criterion_5),
        ("GRPO numerical checks", criterion_6),
        ("pipeline determinism", criterion_7),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} {name}: PASS  {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL  {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
