//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use mtft_core::fixtures::{two_cluster_fixture, TWO_CLUSTER_SEED};
use mtft_core::io;
use mtft_core::sim::{self, SimConfig};
use mtft_core::stats::{coverage_detail, summarize, EmbeddingSet, Ridge};
use mtft_core::theory::{
    consistency_kappa, covered_reference, diversity_nu_estimate, family_is_decreasing, kappa_oracle,
    lambda_deviation, loss_oracle_check, optimal_lambda_numeric, AscentConfig, DiversitySearch,
    LinearWorldSpec, WorldParams, ZetaMode,
};
use mtft_core::{select, SelectionConfig, StopReason};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed <= limit
}

fn optimal_representation() -> Outcome {
    let mut worst = (0.0f64, 0.0f64);
    let mut slowest = Duration::ZERO;
    let mut failures = Vec::new();
    for k_c in 2..=8 {
        for r in [1.0, 2.0] {
            let mut p = LinearWorldSpec::main_text(k_c + 1, k_c, 0).unwrap().params().clone();
            p.rep_norm_bound = r;
            if k_c == 2 {
                // the two main classes always flip both coordinates together
                p.zeta = ZetaMode::UniformPairsGeneral;
            }
            let w = LinearWorldSpec::new(p).unwrap();
            let start = Instant::now();
            let result = optimal_lambda_numeric(&w, &AscentConfig::default());
            let elapsed = start.elapsed();
            slowest = slowest.max(elapsed);
            match result {
                Ok(o) => {
                    let (on, off) = lambda_deviation(&o.rep, &w);
                    worst = (worst.0.max(on), worst.1.max(off));
                    if on > 1e-4 || off > 1e-6 || !within(elapsed, Duration::from_secs(5)) {
                        failures.push(format!("k_C={k_c} R={r}"));
                    }
                }
                Err(e) => failures.push(format!("k_C={k_c} R={r}: {e}")),
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "14 cases, worst deviation on J_C {:.2e}, off J_C {:.2e}, slowest {:?} {}",
            worst.0,
            worst.1,
            slowest,
            failures.join("; ")
        ),
    )
}

/// `J_C = 0..k_c`; `J_0` takes `overlap` coordinates from `J_C` and the rest
/// after it; the target classes differ on `n_c` shared and `extra` own
/// coordinates.
fn grid_world(k_c: usize, k_0: usize, overlap: usize, n_c: usize, extra: usize) -> LinearWorldSpec {
    let d = k_c + k_0;
    let j_0: Vec<usize> = (0..overlap).chain(k_c..k_c + k_0 - overlap).collect();
    let z1: Vec<i8> = (0..d).map(|i| i8::from(j_0.contains(&i))).collect();
    let mut z2 = z1.clone();
    for &i in j_0[..n_c].iter().chain(&j_0[overlap..overlap + extra]) {
        z2[i] = -1;
    }
    LinearWorldSpec::new(WorldParams {
        d,
        finetune_features: (0..k_c).collect(),
        target_features: j_0,
        target_pair: [z1, z2],
        rep_norm_bound: 1.0,
        head_norm_bound: 1.0,
        zeta: ZetaMode::UniformPairsMainC,
        pair_distance: None,
        noise_sigma: 0.0,
    })
    .unwrap()
}

fn consistency_closed_form() -> Outcome {
    let start = Instant::now();
    let mut cases = 0;
    let mut worst = 0.0f64;
    for k_c in 2..=6 {
        for k_0 in 1..=6 {
            for overlap in 0..=k_0.min(k_c) {
                for n_c in 0..=overlap {
                    for extra in 0..=(k_0 - overlap) {
                        if n_c + extra == 0 {
                            continue;
                        }
                        let w = grid_world(k_c, k_0, overlap, n_c, extra);
                        worst = worst.max((consistency_kappa(&w) - kappa_oracle(&w)).abs());
                        cases += 1;
                    }
                }
            }
        }
    }
    let mut exact = true;
    for k_c in 2..=8 {
        let covered = LinearWorldSpec::main_text(k_c + 1, k_c, 0).unwrap();
        let uncovered = LinearWorldSpec::main_text(k_c + 1, k_c, k_c).unwrap();
        let expected = 1.0 - (1.0 / k_c as f64).sqrt();
        exact &= (consistency_kappa(&covered) - expected).abs() <= 1e-15;
        exact &= consistency_kappa(&uncovered) == 1.0;
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-10 && exact && within(elapsed, Duration::from_secs(1)),
        format!("{cases} grid worlds, worst |closed - oracle| {worst:.2e}, main-text values exact: {exact}, {elapsed:?}"),
    )
}

fn diversity_regimes() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for k_c in 2..=4 {
        let w = LinearWorldSpec::main_text(k_c + 1, k_c, k_c).unwrap();
        match diversity_nu_estimate(&w, &DiversitySearch::for_world(&w)) {
            Ok(e) => {
                let decreasing = family_is_decreasing(&e.family);
                ok &= e.nu_hat <= 1e-2 && e.nu_hat >= 0.0 && decreasing;
                parts.push(format!("uncovered k_C={k_c} nu={:.2e} decreasing={decreasing}", e.nu_hat));
            }
            Err(err) => {
                ok = false;
                parts.push(format!("uncovered k_C={k_c}: {err}"));
            }
        }
    }
    for k_c in 3..=4 {
        let w = LinearWorldSpec::main_text(k_c + 1, k_c, 0).unwrap();
        let reference = covered_reference(&w);
        match diversity_nu_estimate(&w, &DiversitySearch::for_world(&w)) {
            Ok(e) => {
                ok &= e.nu_hat >= 0.0;
                parts.push(format!(
                    "covered k_C={k_c} nu={:.2e} (report only: headline {:?}, fixed distance {:?})",
                    e.nu_hat, reference.headline, reference.fixed_distance
                ));
            }
            Err(err) => {
                ok = false;
                parts.push(format!("covered k_C={k_c}: {err}"));
            }
        }
    }
    outcome(ok, parts.join("; "))
}

fn loss_head_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst_rel = 0.0f64;
    let mut worst_violation = f64::NEG_INFINITY;
    let mut ok = true;
    for d in 2..=6 {
        let check = loss_oracle_check(d, 1.0, 1.0, 20, 10_000, 0xACCE_0000 + d as u64);
        ok &= check.passed(0.01);
        worst_rel = worst_rel.max(check.worst_relative);
        worst_violation = worst_violation.max(check.worst_violation);
    }
    let elapsed = start.elapsed();
    outcome(
        ok && within(elapsed, Duration::from_secs(10)),
        format!(
            "100 pairs over d=2..6, worst relative {worst_rel:.2e}, worst lower-bound violation {worst_violation:.2e}, {elapsed:?}"
        ),
    )
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AAD);
    let d = 5;
    let b = 1.0;
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut states = 0;
    while states < 50 {
        let mut phi = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        let scale: f64 = rng.random_range(0.2..1.0);
        phi *= scale / phi.norm();
        let u = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        if (&phi * &u).norm() < 1e-3 {
            continue;
        }
        states += 1;
        let analytic = sim::envelope_gradient(&phi, &u, b);
        let numeric = DMatrix::from_fn(d, d, |i, j| {
            let mut plus = phi.clone();
            let mut minus = phi.clone();
            plus[(i, j)] += h;
            minus[(i, j)] -= h;
            (sim::per_task_loss(&plus, &u, b) - sim::per_task_loss(&minus, &u, b)) / (2.0 * h)
        });
        worst = worst.max((&analytic - &numeric).norm() / analytic.norm());

        // the update moves against the gradient
        let gamma = 1e-3;
        let mut stepped = phi.clone();
        if sim::task_step(&mut stepped, &u, gamma, b, 10.0).is_err() {
            return outcome(false, "task_step rejected a small step");
        }
        let direction = (stepped - &phi) / gamma;
        worst = worst.max((direction + &analytic).norm() / analytic.norm());
    }
    outcome(worst <= 1e-4, format!("50 states, worst relative error {worst:.2e}"))
}

fn sample_complexity_trends() -> Outcome {
    let start = Instant::now();
    let world = LinearWorldSpec::main_text(5, 4, 0).unwrap();
    let template = SimConfig::new(world, 1, 1, TWO_CLUSTER_SEED);
    let cells = match sim::sweep(&template, &[10, 20, 40, 80], &[25], 20) {
        Ok(c) => c,
        Err(e) => return outcome(false, e.to_string()),
    };
    let trend = sim::trend_in_tasks(&cells, 25);
    let pair = match sim::sweep(&template, &[20, 40], &[40, 20], 20) {
        Ok(c) => {
            let gap = |m_tasks, m| c.iter().find(|x| x.tasks == m_tasks && x.samples == m).unwrap().mean_gap;
            sim::relative_difference(gap(20, 40), gap(40, 20))
        }
        Err(e) => return outcome(false, e.to_string()),
    };
    let elapsed = start.elapsed();
    let gaps: Vec<String> = cells.iter().map(|c| format!("M={} {:.4}", c.tasks, c.mean_gap)).collect();
    outcome(
        trend.passed() && pair <= 0.15 && within(elapsed, Duration::from_secs(120)),
        format!(
            "mean gaps [{}], inversions {}, equal-Mm relative difference {pair:.3}, {elapsed:?}",
            gaps.join(", "),
            trend.inversions
        ),
    )
}

fn random_invertible(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    loop {
        let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
        let a = g / (d as f64).sqrt() + DMatrix::identity(d, d) * 2.0;
        let sv = a.singular_values();
        if sv.min() > 0.0 && sv.max() / sv.min() < 100.0 {
            return a;
        }
    }
}

fn selection_algorithm() -> Outcome {
    let (target, cands) = two_cluster_fixture(TWO_CLUSTER_SEED);
    let config = SelectionConfig::default();
    let result = match select(&cands, &target, &config) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let fixture_ok = result.selected == ["T1", "T2"] && result.stop_reason == StopReason::CoveragePlateau;
    let trace_ok = result
        .trace
        .iter()
        .filter(|t| t.accepted)
        .all(|t| t.coverage_before.is_none_or(|b| t.coverage_after.increases_over(b, config.threshold_p)));

    let mut rng = ChaCha8Rng::seed_from_u64(0xAFF1);
    let mut worst = 0.0f64;
    let mut transforms = 0;
    while transforms < 100 {
        let d = rng.random_range(1..=16);
        let n = 3 * d + 4;
        let pool = EmbeddingSet::from_row_slice(
            "pool",
            n,
            d,
            &(0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>(),
        )
        .unwrap();
        let t = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let a = random_invertible(d, &mut rng);
        let shift = DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0));
        let q = |pool: &EmbeddingSet, t: &DVector<f64>| {
            coverage_detail(&summarize([pool]).unwrap(), t, Ridge::Fixed(0.0)).map(|c| c.mahalanobis_sq)
        };
        let (Ok(before), Ok(after)) = (
            q(&pool, &t),
            q(&pool.map_rows(|x| &a * x + &shift).unwrap(), &(&a * &t + &shift)),
        ) else {
            return outcome(false, "coverage failed on a full-rank pool");
        };
        worst = worst.max((before - after).abs() / before);
        transforms += 1;
    }
    outcome(
        fixture_ok && trace_ok && worst <= 1e-8,
        format!(
            "selected {:?} stop {:?}, trace inequality {trace_ok}, 100 transforms worst relative {worst:.2e}",
            result.selected, result.stop_reason
        ),
    )
}

fn mutate(seed: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut v = seed.to_vec();
    for _ in 0..rng.random_range(1..=8) {
        match rng.random_range(0..4) {
            0 if !v.is_empty() => {
                let i = rng.random_range(0..v.len());
                v[i] = rng.random();
            }
            1 if !v.is_empty() => {
                let i = rng.random_range(0..v.len());
                v.truncate(i);
            }
            2 => {
                let i = rng.random_range(0..=v.len());
                v.insert(i, rng.random());
            }
            _ => {
                let mut extra = vec![0u8; rng.random_range(0..16)];
                rng.fill_bytes(&mut extra);
                v.extend(extra);
            }
        }
    }
    v
}

fn io_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    let mut exact = true;
    for _ in 0..200 {
        let n = rng.random_range(1..8);
        let d = rng.random_range(1..8);
        let data: Vec<f64> = (0..n * d)
            .map(|_| f64::from_bits(rng.next_u64()))
            .map(|v| if v.is_finite() { v } else { -0.0 })
            .collect();
        let set = EmbeddingSet::from_row_slice("rt", n, d, &data).unwrap();
        let back = io::parse_embeddings_bin(&io::write_embeddings_bin(&set)).unwrap();
        exact &= back.task_id() == "rt"
            && back
                .to_row_major()
                .iter()
                .zip(&data)
                .all(|(a, b)| a.to_bits() == b.to_bits());
    }

    let (target, _) = two_cluster_fixture(1);
    let seeds: Vec<Vec<u8>> = vec![
        io::write_embeddings_bin(&target),
        io::write_embeddings_csv(&target).into_bytes(),
        b"[target]\ntask_id = \"t\"\npath = \"t.csv\"\n\n[[candidates]]\ntask_id = \"a\"\npath = \"a.bin\"\n".to_vec(),
        io::write_world_spec(&LinearWorldSpec::main_text(5, 4, 0).unwrap()).into_bytes(),
        Vec::new(),
    ];
    let mut crashes = 0;
    let mut typed_errors = 0;
    for k in 0..10_000 {
        let input = if k % 5 == 4 {
            let mut v = vec![0u8; rng.random_range(0..128)];
            rng.fill_bytes(&mut v);
            v
        } else {
            mutate(&seeds[k % 5], &mut rng)
        };
        let run = catch_unwind(AssertUnwindSafe(|| {
            let mut errors = 0;
            errors += usize::from(io::parse_embeddings_bin(&input).is_err());
            errors += usize::from(io::parse_embeddings_csv_bytes(&input).is_err());
            if let Ok(text) = std::str::from_utf8(&input) {
                errors += usize::from(io::parse_manifest(text).is_err());
                errors += usize::from(io::parse_world_spec(text).is_err());
            }
            errors
        }));
        match run {
            Ok(e) => typed_errors += e,
            Err(_) => crashes += 1,
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let manifest = common::write_two_cluster(dir.path());
    let world = common::write_world(dir.path(), "w.toml", &LinearWorldSpec::main_text(5, 4, 0).unwrap());
    let invocations: Vec<Vec<&str>> = vec![
        vec!["select", "--manifest", common::path_str(&manifest)],
        vec!["verify", "--world", common::path_str(&world)],
        vec!["simulate", "--world", common::path_str(&world), "--M", "5,10", "--m", "5", "--seeds", "3"],
    ];
    let mut identical = true;
    for args in &invocations {
        let a = common::mtft(args);
        let b = common::mtft(args);
        identical &= a.status.success() && a.stdout == b.stdout && a.stderr == b.stderr;
    }

    outcome(
        exact && crashes == 0 && identical,
        format!(
            "bit-exact round trips {exact}, fuzz 10000 iterations {crashes} crashes {typed_errors} typed errors, CLI output identical {identical}"
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    // silence the default hook so fuzzed panics, if any, are only counted
    std::panic::set_hook(Box::new(|_| {}));
    let criteria: [Criterion; 8] = [
        ("optimal representation", optimal_representation),
        ("consistency closed form", consistency_closed_form),
        ("diversity regimes", diversity_regimes),
        ("loss and head oracle", loss_head_oracle),
        ("gradient correctness", gradient_correctness),
        ("sample-complexity trends", sample_complexity_trends),
        ("selection algorithm", selection_algorithm),
        ("io", io_checks),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = catch_unwind(check).unwrap_or_else(|_| outcome(false, "panicked"));
        failed += usize::from(!o.passed);
        println!(
            "criterion {} {name}: {} ({})",
            i + 1,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
