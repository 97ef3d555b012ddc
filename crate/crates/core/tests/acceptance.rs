//! Acceptance criteria, run in sequence so each timing is measured alone.
//! Prints one PASS/FAIL line per criterion and fails if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use carmsim::anatomy::LandmarkSchema;
use carmsim::datasetgen::{
    build_phantom_dataset, nearest_k, parse_label, read_manifest, DatasetConfig, SplitAssignment,
};
use carmsim::geometry::{
    apply_action, displacement, magnitude_mm, sample_isocenters_with_diagnostics, Aabb, CArmGeometry, CArmPose,
    SamplerConfig,
};
use carmsim::metrics::{score_sets, Exact};
use carmsim::navloop::{random_episodes, run_episode, Environment, EpisodeConfig, OracleAgent, Outcome, Start};
use carmsim::phantom::{generate_phantom, LandmarkSet, PhantomConfig, Volume};
use carmsim::projector::{Projector, ProjectorConfig};
use carmsim::protocol::{
    parse, serialize, AgentResponse, HorizontalDirection as H, Magnitude as M, MotionCommand, VerticalDirection as V,
};
use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

/// Run one criterion, print its line straight to stdout (bypassing the test
/// harness capture) and return whether it passed inside its time budget.
fn criterion(name: &str, budget: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let started = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    let elapsed = started.elapsed();
    let in_time = elapsed <= budget;
    let pass = v.pass && in_time;
    let line = format!(
        "{} {name}: {} [{:.2} s of {} s{}]\n",
        if pass { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64(),
        budget.as_secs(),
        if in_time { "" } else { ", over budget" },
    );
    let mut out = std::io::stdout();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    pass
}

fn phantom42() -> (Volume, LandmarkSet) {
    generate_phantom(42, &PhantomConfig::default()).unwrap()
}

// ---------------------------------------------------------------------------

fn metric_optima() -> Verdict {
    let s = score_sets(&[1, 10, 2], &[1, 10, 2], &[1, 2, 3]).unwrap();
    let one = Exact::from_integer(1);
    let precision_ok = s.precision_at.values().all(|v| *v == one);
    let recall: Vec<Exact> = s.recall_at.values().copied().collect();
    let recall_ok = recall == [Exact::new(1, 3), Exact::new(2, 3), one];
    let published = [0.33, 0.66, 1.0];
    let rounding_ok =
        recall.iter().zip(published).all(|(r, p)| (*r.numer() as f64 / *r.denom() as f64 - p).abs() <= 0.01);
    verdict(
        precision_ok && recall_ok && rounding_ok,
        format!(
            "P@1..3 = {:?}, R@1..3 = {:?}",
            s.precision_at.values().map(|v| v.to_string()).collect::<Vec<_>>(),
            recall.iter().map(|v| v.to_string()).collect::<Vec<_>>()
        ),
    )
}

/// Independent ranking: repeated linear scans for the minimum distance.
fn exhaustive_top3(p: &Point3<f64>, set: &LandmarkSet) -> Vec<u8> {
    let mut left: Vec<(u8, f64)> = set
        .iter()
        .map(|l| {
            let d = l.position - p;
            (l.index, (d.x * d.x + d.y * d.y + d.z * d.z).sqrt())
        })
        .collect();
    let mut out = Vec::new();
    for _ in 0..3 {
        let mut best = 0;
        for i in 1..left.len() {
            if left[i].1 < left[best].1 || (left[i].1 == left[best].1 && left[i].0 < left[best].0) {
                best = i;
            }
        }
        out.push(left.remove(best).0);
    }
    out
}

fn nearest3_equivalence() -> Verdict {
    let (vol, lms) = phantom42();
    let e = vol.extent();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let p = Point3::new(rng.random_range(0.0..e.x), rng.random_range(0.0..e.y), rng.random_range(0.0..e.z));
        let pose = CArmPose::new(p, CArmGeometry::default()).unwrap();
        if nearest_k(&pose, &lms, 3).indices() != exhaustive_top3(&p, &lms) {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("{mismatches} mismatches over 1000 uniform poses"))
}

/// Standard normal CDF by composite Simpson integration of the density.
fn normal_cdf(x: f64) -> f64 {
    let n = 20_000;
    let h = x.abs() / n as f64;
    let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = phi(0.0) + phi(x.abs());
    for i in 1..n {
        s += phi(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let half = s * h / 3.0;
    if x >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// Standard deviation of N(0, sigma) truncated to [-a, a].
fn truncated_sd(sigma: f64, a: f64) -> f64 {
    let alpha = a / sigma;
    let pdf = (-0.5 * alpha * alpha).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mass = 2.0 * normal_cdf(alpha) - 1.0;
    sigma * (1.0 - 2.0 * alpha * pdf / mass).sqrt()
}

fn sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn sampler_statistics() -> Verdict {
    let (vol, _) = phantom42();
    let cfg = SamplerConfig { seed: 42, ..SamplerConfig::default() };
    let (poses, diag) = sample_isocenters_with_diagnostics(&vol, 10_000, &cfg, &CArmGeometry::default()).unwrap();
    let e = vol.extent();
    let (lo, hi) = (0.15 * e.z, 0.85 * e.z);
    let band_ok = poses.iter().all(|p| p.isocenter.z >= lo && p.isocenter.z <= hi);
    let lr_raw = diag.lr_raw.std_dev();
    let ap_raw = diag.ap_raw.std_dev();
    let lr: Vec<f64> = poses.iter().map(|p| p.isocenter.x).collect();
    let ap: Vec<f64> = poses.iter().map(|p| p.isocenter.y).collect();
    let lr_trunc = truncated_sd(285.0, e.x / 2.0);
    let ap_trunc = truncated_sd(100.0, e.y / 2.0);
    let within = |x: f64, t: f64| (x / t - 1.0).abs() <= 0.05;
    let pass = band_ok
        && diag.lr_raw.count >= 10_000
        && within(lr_raw, 285.0)
        && within(ap_raw, 100.0)
        && within(sd(&lr), lr_trunc)
        && within(sd(&ap), ap_trunc);
    verdict(
        pass,
        format!(
            "SI in [{lo:.0}, {hi:.0}]: {band_ok}; raw sd LR {lr_raw:.1} (285), AP {ap_raw:.1} (100); \
             accepted sd LR {:.1} ({lr_trunc:.1} truncated), AP {:.1} ({ap_trunc:.1} truncated)",
            sd(&lr),
            sd(&ap)
        ),
    )
}

/// Length of segment `a → b` inside `[min, max]`, by slab clipping.
fn chord(a: Point3<f64>, b: Point3<f64>, min: [f64; 3], max: [f64; 3]) -> f64 {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..3 {
        let d = b[k] - a[k];
        if d == 0.0 {
            if a[k] < min[k] || a[k] > max[k] {
                return 0.0;
            }
            continue;
        }
        let (mut u, mut v) = ((min[k] - a[k]) / d, (max[k] - a[k]) / d);
        if u > v {
            std::mem::swap(&mut u, &mut v);
        }
        t0 = t0.max(u);
        t1 = t1.min(v);
    }
    (t1 - t0).max(0.0) * (b - a).norm()
}

fn projector_physics() -> Verdict {
    let mu = f64::from(0.02f32);
    let geometry = CArmGeometry::default();
    let [cols, rows] = geometry.detector_res;

    // Slab 400 x 20 x 400 mm, full 256 x 256 render.
    let slab = Volume::filled([100, 10, 100], [4.0, 2.0, 4.0], 0.02).unwrap();
    let pose = CArmPose::new(slab.center(), geometry).unwrap();
    let projector = Projector::default();
    let integrals = projector.line_integrals(&slab, &pose).unwrap();
    let e = slab.extent();
    let mut slab_worst = 0.0f64;
    for (i, l) in integrals.iter().enumerate() {
        let c = chord(pose.source(), pose.pixel_center(i % cols, i / cols), [0.0; 3], [e.x, e.y, e.z]);
        if c > 0.0 {
            slab_worst = slab_worst.max((l - mu * c).abs() / (mu * c));
        }
    }
    // Perpendicular central ray through a 100 mm cube.
    let cube = Volume::filled([50, 50, 50], [2.0; 3], 0.02).unwrap();
    let through = projector.line_integral(&cube, &Point3::new(50.0, -700.0, 50.0), &Point3::new(50.0, 500.0, 50.0));
    let cube_err = (through - mu * 100.0).abs() / (mu * 100.0);

    // Magnification from second moments of a uniform ball.
    let r = 40.0;
    let ball = Volume::from_fn([120, 120, 120], [1.0; 3], |p| {
        if (p - Point3::new(60.0, 60.0, 60.0)).norm() <= r {
            0.02
        } else {
            0.0
        }
    })
    .unwrap();
    let (mut m3, mut w3) = (0.0, 0.0);
    for k in 0..120 {
        for j in 0..120 {
            for i in 0..120 {
                let v = f64::from(ball.voxel(i, j, k));
                let (x, z) = (i as f64 + 0.5 - 60.0, k as f64 + 0.5 - 60.0);
                m3 += (x * x + z * z) * v;
                w3 += v;
            }
        }
    }
    let ball_pose = CArmPose::new(ball.center(), geometry).unwrap();
    let proj = projector.line_integrals(&ball, &ball_pose).unwrap();
    let [pw, ph] = geometry.pixel_pitch();
    let (mut m2, mut w2) = (0.0, 0.0);
    for (i, l) in proj.iter().enumerate() {
        let u = ((i % cols) as f64 + 0.5 - cols as f64 / 2.0) * pw;
        let v = ((i / cols) as f64 + 0.5 - rows as f64 / 2.0) * ph;
        m2 += (u * u + v * v) * l;
        w2 += l;
    }
    let magnification = ((m2 / w2) / (m3 / w3)).sqrt();
    let expected = geometry.sdd / geometry.sod;
    let mag_err = (magnification / expected - 1.0).abs();

    // Step halving on the phantom at several landmarks.
    let (vol, lms) = phantom42();
    let fine = Projector::new(ProjectorConfig { step_fraction: 0.25, ..ProjectorConfig::default() }).unwrap();
    let mut halving_worst = 0.0f64;
    let mut pixel_worst = 0.0f64;
    for idx in [1, 4, 10, 11, 12] {
        let pose = CArmPose::new(lms.get(idx).unwrap().position, geometry).unwrap();
        let a = projector.line_integrals(&vol, &pose).unwrap();
        let b = fine.line_integrals(&vol, &pose).unwrap();
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        halving_worst = halving_worst.max(diff / b.iter().sum::<f64>());
        for (x, y) in a.iter().zip(&b) {
            if *y > 0.05 {
                pixel_worst = pixel_worst.max((x - y).abs() / y);
            }
        }
    }
    verdict(
        slab_worst <= 1e-3 && cube_err <= 1e-3 && mag_err <= 0.02 && halving_worst < 0.005,
        format!(
            "slab worst rel {slab_worst:.2e}, cube rel {cube_err:.2e}; magnification {magnification:.4} vs {expected:.4} \
             ({:.2}%); step halving sum|dL|/sumL {:.4}% (worst single pixel with L>0.05: {:.2}%)",
            mag_err * 100.0,
            halving_worst * 100.0,
            pixel_worst * 100.0
        ),
    )
}

fn all_commands() -> Vec<MotionCommand> {
    let mut out = Vec::new();
    for (xd, xms) in [(H::Center, &[M::None][..]), (H::Left, &M::ALL[1..]), (H::Right, &M::ALL[1..])] {
        for &xm in xms {
            for (yd, yms) in [(V::Center, &[M::None][..]), (V::Down, &M::ALL[1..]), (V::Up, &M::ALL[1..])] {
                for &ym in yms {
                    out.push(MotionCommand { x_dir: xd, x_mag: xm, y_dir: yd, y_mag: ym });
                }
            }
        }
    }
    out
}

fn inverse(c: &MotionCommand) -> MotionCommand {
    MotionCommand {
        x_dir: match c.x_dir {
            H::Left => H::Right,
            H::Right => H::Left,
            H::Center => H::Center,
        },
        y_dir: match c.y_dir {
            V::Up => V::Down,
            V::Down => V::Up,
            V::Center => V::Center,
        },
        ..*c
    }
}

fn action_semantics() -> Verdict {
    let mags: Vec<f64> = M::ALL.iter().map(|m| magnitude_mm(*m)).collect();
    let mags_ok = mags == [0.0, 30.0, 60.0, 90.0];
    let commands = all_commands();
    let disp_ok = commands.iter().all(|c| {
        let (dx, dz) = displacement(c);
        let sx = match c.x_dir {
            H::Left => -1.0,
            H::Center => 0.0,
            H::Right => 1.0,
        };
        let sz = match c.y_dir {
            V::Down => -1.0,
            V::Center => 0.0,
            V::Up => 1.0,
        };
        dx == sx * magnitude_mm(c.x_mag) && dz == sz * magnitude_mm(c.y_mag)
    });
    let region = Aabb::new(Point3::origin(), Point3::new(500.0, 300.0, 900.0));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut fixed_ok, mut exact_ok, mut worst) = (true, true, 0.0f64);
    for _ in 0..2000 {
        let p = Point3::new(rng.random_range(0.0..500.0), rng.random_range(0.0..300.0), rng.random_range(0.0..900.0));
        let pose = CArmPose::new(p, CArmGeometry::default()).unwrap();
        fixed_ok &= apply_action(&pose, &MotionCommand::zero(), &region) == pose;
        // Off-clamp: at least 90 mm from every LR and SI face.
        let inner = Point3::new(rng.random_range(90.0..410.0), p.y, rng.random_range(90.0..810.0));
        let grid = inner.map(|c| (c * 1024.0).round() / 1024.0);
        for c in &commands {
            for (start, exact) in [(inner, false), (grid, true)] {
                let s = CArmPose::new(start, CArmGeometry::default()).unwrap();
                let back = apply_action(&apply_action(&s, c, &region), &inverse(c), &region);
                let dev = (back.isocenter - start).norm();
                worst = worst.max(dev);
                if exact {
                    exact_ok &= dev == 0.0;
                }
            }
        }
    }
    verdict(
        mags_ok && disp_ok && fixed_ok && exact_ok && worst <= 1e-9,
        format!(
            "magnitudes {mags:?} mm; {} commands; zero action fixed: {fixed_ok}; inverse cancels exactly on a 1/1024 mm grid: \
             {exact_ok}, worst float residue elsewhere {worst:.1e} mm",
            commands.len()
        ),
    )
}

fn oracle_navigation() -> Verdict {
    let (vol, lms) = phantom42();
    let schema = LandmarkSchema::standard();
    let env = Environment { volume: &vol, landmarks: &lms, schema: &schema };
    let mut configs = random_episodes(42, 100, &vol, &lms, CArmGeometry::default()).unwrap();
    configs.push(EpisodeConfig::new("right-scapula-to-skull", Start::Landmark(4), 1));
    configs.push(EpisodeConfig::new("skull-to-right-scapula", Start::Landmark(1), 4));
    let (mut ok, mut monotone, mut bounded, mut replay, mut worst_final, mut max_steps) =
        (0, true, true, true, 0.0f64, 0);
    let mut problems = Vec::new();
    for c in configs {
        let id = c.episode_id.clone();
        let trace = run_episode(env, &mut OracleAgent, c).unwrap();
        let t = trace.target_position;
        let r0 = (t[0] - trace.start_pose[0]).abs().max((t[2] - trace.start_pose[2]).abs());
        let allowed = (r0 / 90.0).ceil() as usize + 2;
        if trace.outcome == Outcome::Success && trace.final_distance_mm <= 25.0 {
            ok += 1;
        } else {
            problems.push(format!("{id}: {:?}", trace.outcome));
        }
        for s in &trace.steps {
            let before = [(t[0] - s.pose_before[0]).abs(), (t[2] - s.pose_before[2]).abs()];
            let after = [(t[0] - s.pose_after[0]).abs(), (t[2] - s.pose_after[2]).abs()];
            monotone &= after[0] <= before[0] && after[1] <= before[1];
        }
        bounded &= trace.steps.len() <= allowed;
        replay &= trace.replay().is_ok();
        worst_final = worst_final.max(trace.final_distance_mm);
        max_steps = max_steps.max(trace.steps.len());
    }
    verdict(
        ok == 102 && monotone && bounded && replay,
        format!(
            "{ok}/102 SUCCESS (100 random + both shoulder/skull scenarios); worst final in-plane distance \
             {worst_final:.1} mm; per-axis residual monotone: {monotone}; step bound held: {bounded} (max {max_steps}); \
             replay exact: {replay}{}",
            if problems.is_empty() { String::new() } else { format!("; failures: {problems:?}") }
        ),
    )
}

fn random_response(rng: &mut ChaCha8Rng, schema: &LandmarkSchema) -> AgentResponse {
    let index = rng.random_range(1..=14u8);
    let variants = &schema.get(index).unwrap().variants;
    let alphabet: Vec<char> = "abcXYZ 019<>&\"'\n\r\t;#/=µé→".chars().collect();
    let len = rng.random_range(0..40);
    let reasoning: String = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
    let commands = all_commands();
    AgentResponse {
        landmark_index: index,
        landmark_name: variants[rng.random_range(0..variants.len())].clone(),
        reasoning,
        command: commands[rng.random_range(0..commands.len())],
    }
}

fn mutate(rng: &mut ChaCha8Rng, text: &str) -> Vec<u8> {
    const TOKENS: [&str; 14] = [
        "HUGE",
        "<response>",
        "</response>",
        "<move",
        "/>",
        "=",
        "\"",
        "x_mag=\"SMALL\"",
        "index=\"99\"",
        "Femur",
        "<landmark index=\"2\">",
        "</landmark>",
        "Skull",
        " x_dir=",
    ];
    let mut b = text.as_bytes().to_vec();
    for _ in 0..rng.random_range(1..4) {
        if b.is_empty() {
            break;
        }
        let at = rng.random_range(0..b.len());
        match rng.random_range(0..5) {
            0 => b[at] = rng.random(),
            1 => {
                let end = (at + rng.random_range(1..20)).min(b.len());
                b.drain(at..end);
            }
            2 => {
                let t = TOKENS[rng.random_range(0..TOKENS.len())];
                b.splice(at..at, t.bytes());
            }
            3 => b.truncate(at),
            _ => {
                // Replace a quoted value with a random token.
                if let Some(q) = b[at..].iter().position(|&c| c == b'"') {
                    let s = at + q + 1;
                    if let Some(e) = b[s..].iter().position(|&c| c == b'"') {
                        let t = TOKENS[rng.random_range(0..TOKENS.len())];
                        b.splice(s..s + e, t.bytes());
                    }
                }
            }
        }
    }
    b
}

fn protocol_robustness() -> Verdict {
    let schema = LandmarkSchema::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut round_trip_failures = 0;
    for _ in 0..10_000 {
        let r = random_response(&mut rng, &schema);
        match parse(&serialize(&r)) {
            Ok(p) if p.response == r && p.warnings.is_empty() => {}
            _ => round_trip_failures += 1,
        }
    }

    let mut crashes = 0;
    let mut accepted = 0;
    let mut invalid_accepts = 0;
    let mut categories = BTreeSet::new();
    let seeds: Vec<String> = (0..64).map(|_| serialize(&random_response(&mut rng, &schema))).collect();
    for n in 0..1_000_000 {
        let bytes = if n % 2 == 0 {
            let len = rng.random_range(0..256);
            (0..len).map(|_| rng.random::<u8>()).collect()
        } else {
            mutate(&mut rng, &seeds[n % seeds.len()])
        };
        let text = String::from_utf8_lossy(&bytes);
        match catch_unwind(AssertUnwindSafe(|| parse(&text))) {
            Err(_) => crashes += 1,
            Ok(Ok(p)) => {
                accepted += 1;
                if !p.response.command.is_canonical() || p.response.validate(&schema).is_err() {
                    invalid_accepts += 1;
                }
            }
            Ok(Err(e)) => {
                categories.insert(e.kind.category());
            }
        }
    }
    let all = [
        "missing_block",
        "unclosed",
        "missing_element",
        "malformed_attribute",
        "duplicate_attribute",
        "missing_attribute",
        "bad_index",
        "unknown_enum",
        "unknown_landmark",
        "index_name_mismatch",
    ];
    let uncovered: Vec<&str> = all.iter().copied().filter(|c| !categories.contains(c)).collect();
    verdict(
        round_trip_failures == 0 && crashes == 0 && invalid_accepts == 0 && uncovered.is_empty(),
        format!(
            "round trip 10000/10000 minus {round_trip_failures} failures; fuzz 1000000 inputs: {crashes} crashes, \
             {accepted} accepted ({invalid_accepts} invalid), error kinds seen {}/{}{}",
            categories.len(),
            all.len(),
            if uncovered.is_empty() { String::new() } else { format!(", missing {uncovered:?}") }
        ),
    )
}

fn dataset_scale() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let split = SplitAssignment::phantoms(3, 1);
    let per_volume = 64;
    let config = DatasetConfig {
        per_volume,
        seed: 7,
        geometry: CArmGeometry { detector_res: [64, 64], ..CArmGeometry::default() },
        ..DatasetConfig::default()
    };
    let summary = build_phantom_dataset(&split, &config, &PhantomConfig::default(), dir.path()).unwrap();
    let train = read_manifest(&summary.train_manifest).unwrap();
    let test = read_manifest(&summary.test_manifest).unwrap();
    let schema = LandmarkSchema::standard();
    let counts_ok = train.len() == 3 * per_volume && test.len() == per_volume;
    let files_ok = train.iter().chain(&test).all(|r| dir.path().join(&r.image_path).is_file());
    let labels_ok = train
        .iter()
        .chain(&test)
        .all(|r| parse_label(&r.label_text, &schema).map(|p| p == r.ranked.without_distances()).unwrap_or(false));
    let train_vols: BTreeSet<&str> = train.iter().map(|r| r.volume_id.as_str()).collect();
    let leak_free = test.iter().all(|r| !train_vols.contains(r.volume_id.as_str()));
    let full = SplitAssignment::phantoms(50, 10).record_counts(1024);
    verdict(
        counts_ok && files_ok && labels_ok && leak_free && full == (51_200, 10_240),
        format!(
            "desk build 3+1 volumes x {per_volume} = {}/{} records (images present: {files_ok}, labels parse back: \
             {labels_ok}, no volume in both splits: {leak_free}); 50+10 volumes x 1024 = {}/{}",
            train.len(),
            test.len(),
            full.0,
            full.1
        ),
    )
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_carmsim");
    let runs: [&[&str]; 6] = [
        &["gen-phantom", "--seed", "42"],
        &["sample", "--seed", "42", "-n", "500"],
        &["render", "--seed", "42", "--landmark", "skull"],
        &["build-dataset", "--seed", "7", "--volumes", "4", "--per-volume", "64", "--resolution", "64"],
        &["navigate", "--seed", "42", "--start", "right_scapula", "--target", "skull"],
        &["navigate", "--seed", "3", "--episodes", "3", "--resolution", "64"],
    ];
    let mut differing = Vec::new();
    let mut files = 0;
    for args in runs {
        let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
        for (i, d) in dirs.iter().enumerate() {
            let threads = if i == 0 { "1" } else { "2" };
            let status = Command::new(bin)
                .args(args)
                .args(["--out", d.path().to_str().unwrap(), "--threads", threads])
                .stdout(std::process::Stdio::null())
                .status()
                .unwrap();
            assert!(status.success(), "{args:?} failed");
        }
        let (a, b) = (tree(dirs[0].path()), tree(dirs[1].path()));
        files += a.len();
        // run_config.json records the thread count, which is the only intended difference.
        let strip = |m: BTreeMap<PathBuf, Vec<u8>>| -> BTreeMap<PathBuf, Vec<u8>> {
            m.into_iter().filter(|(p, _)| p != Path::new("run_config.json")).collect()
        };
        if strip(a) != strip(b) {
            differing.push(args[0]);
        }
    }
    verdict(
        differing.is_empty(),
        format!(
            "6 invocations run twice (1 vs 2 threads), {files} files compared byte for byte; differing: {differing:?}"
        ),
    )
}

#[test]
fn acceptance() {
    let secs = Duration::from_secs;
    let results = [
        criterion("metric optima", secs(1), metric_optima),
        criterion("nearest-3 oracle equivalence", secs(5), nearest3_equivalence),
        criterion("sampler statistics", secs(10), sampler_statistics),
        criterion("projector physics", secs(60), projector_physics),
        criterion("action semantics", secs(60), action_semantics),
        criterion("oracle navigation", secs(300), oracle_navigation),
        criterion("protocol robustness", secs(600), protocol_robustness),
        criterion("dataset scale law", secs(600), dataset_scale),
        criterion("determinism", secs(600), determinism),
    ];
    assert!(results.iter().all(|&p| p), "acceptance criteria failed: see the FAIL lines above");
}
