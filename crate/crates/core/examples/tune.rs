//! Scratch calibration harness (not part of the deliverable).

use gaituda::clustering::pairwise_distance;
use gaituda::pipeline::{
    extract_features, finetune, holdout_rank1, pretrain, RunConfig, Toggles, TraceMode,
};
use gaituda::synthgen::{gen_silhouettes, SilhouetteDataset, SynthSpec};
use gaituda::encoder::gei;

fn dataset(seed: u64, ids: usize, seqs: usize) -> SilhouetteDataset {
    dataset_frames(seed, ids, seqs, 2, 8)
}

fn dataset_modes(seed: u64, ids: usize, seqs: usize, modes: usize) -> SilhouetteDataset {
    dataset_frames(seed, ids, seqs, modes, 30)
}

fn dataset_frames(seed: u64, ids: usize, seqs: usize, modes: usize, frames: usize) -> SilhouetteDataset {
    let spec = SynthSpec {
        num_identities: ids,
        sequences_per_identity: seqs,
        clothing_conditions: modes,
        intra_spread: 0.05,
        clothing_shift: 0.3,
        embed_dim: 16,
        frames_per_sequence: frames,
        seed,
    };
    let (sequences, truth) = gen_silhouettes(&spec).unwrap();
    SilhouetteDataset { sequences, truth }
}

fn base_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.epochs = 25;
    cfg.iterations = 20;
    cfg.batch_p = 8;
    cfg.batch_k = 4;
    cfg.hidden_dim = 256;
    cfg.embed_dim = 128;
    cfg.learning_rate = 2e-5;
    cfg.pretrain_epochs = 8;
    cfg.pretrain_iterations = 50;
    cfg.min_samples = 4;
    cfg.mse_probe_noise = 0.1;
    cfg.milestones = vec![];
    cfg.seed = seed;
    cfg
}

fn percentiles(mut v: Vec<f64>) -> (f64, f64, f64, f64, f64) {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| v[((v.len() - 1) as f64 * p) as usize];
    (q(0.05), q(0.25), q(0.5), q(0.75), q(0.95))
}

fn distance_stats(data: &SilhouetteDataset, params: &gaituda::encoder::EncoderParams) {
    let geis: Vec<_> = data.sequences.iter().map(|s| gei(s).unwrap()).collect();
    let f = extract_features(params, &geis).unwrap();
    let d = pairwise_distance(&f).unwrap();
    let mut same_clothing = vec![];
    let mut cross_clothing = vec![];
    let mut inter = vec![];
    for i in 0..f.num_rows() {
        for j in (i + 1)..f.num_rows() {
            if data.truth.identities[i] == data.truth.identities[j] {
                if data.truth.clothing[i] == data.truth.clothing[j] {
                    same_clothing.push(d[[i, j]]);
                } else {
                    cross_clothing.push(d[[i, j]]);
                }
            } else {
                inter.push(d[[i, j]]);
            }
        }
    }
    for (name, v) in [
        ("intra same-cloth", same_clothing),
        ("intra cross-cloth", cross_clothing),
        ("inter            ", inter),
    ] {
        if v.is_empty() {
            continue;
        }
        let p = percentiles(v);
        println!(
            "  {name}: p5 {:.3} p25 {:.3} p50 {:.3} p75 {:.3} p95 {:.3}",
            p.0, p.1, p.2, p.3, p.4
        );
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("fig6");

    match mode {
        "dist" => {
            // Distance geometry vs pretraining budget.
            let source = dataset_modes(1000, 256, 4, 1);
            let target = dataset(1, 20, 16);
            for (budget, tau) in [(8usize, 0.05), (8, 0.3), (16, 0.3), (16, 0.6)] {
                let mut cfg = base_config(1);
                cfg.pretrain_epochs = budget;
                cfg.tau = tau;
                let (pre, losses) = pretrain(&source, &cfg).unwrap();
                let last_loss = losses.last().map(|l| l.2).unwrap_or(f64::NAN);
                println!("=== budget {budget} epochs tau {tau} (last pretrain loss {last_loss:.4})");
                println!(" target:");
                distance_stats(&target, &pre);
                println!(" source:");
                distance_stats(&source, &pre);
            }
        }
        "fig6" => {
            // Dynamic vs fixed-eps final F1 across seeds, plus probe MSEs.
            let source = dataset_modes(1000, 256, 4, 1);
            let mut wins_small = 0;
            let mut wins_large = 0;
            let mut mse_wins = 0;
            let mut pre_cfg = base_config(1000);
            pre_cfg.tau = 0.3;
            pre_cfg.pretrain_epochs = 32;
            pre_cfg.pretrain_iterations = 60;
            pre_cfg.batch_p = 16;
            pre_cfg.batch_k = 2;
            pre_cfg.learning_rate = 2e-3;
            let (init, _) = pretrain(&source, &pre_cfg).unwrap();
            for seed in 0..5u64 {
                let full = dataset(seed, 20, 24);
                let (target, _holdout) = full.split_train_holdout(8);
                let mut cfg = base_config(seed);
                cfg.min_samples = 3;
                cfg.seed = seed;

                let run = |eps0: f64, dynamic: bool| {
                    let mut c = cfg.clone();
                    c.eps0 = eps0;
                    c.toggles.dynamic_eps = dynamic;
                    finetune(&target, &init, &c, TraceMode::Off).unwrap()
                };
                let dynamic = run(0.8, true);
                let fixed_small = run(0.6, false);
                let fixed_large = run(0.8, false);
                let f_dyn = dynamic.log.final_epoch().unwrap().report.pairwise_f1;
                let f_s = fixed_small.log.final_epoch().unwrap().report.pairwise_f1;
                let f_l = fixed_large.log.final_epoch().unwrap().report.pairwise_f1;
                let mw: Vec<f64> = dynamic
                    .log
                    .epochs
                    .iter()
                    .map(|e| e.mse_weighted_probe)
                    .filter(|v| v.is_finite())
                    .collect();
                let ma: Vec<f64> = dynamic
                    .log
                    .epochs
                    .iter()
                    .map(|e| e.mse_average_probe)
                    .filter(|v| v.is_finite())
                    .collect();
                let mwm = mw.iter().sum::<f64>() / mw.len().max(1) as f64;
                let mam = ma.iter().sum::<f64>() / ma.len().max(1) as f64;
                println!(
                    "seed {seed}: f1 dyn {f_dyn:.3} small {f_s:.3} large {f_l:.3} | probe mse w {mwm:.5} a {mam:.5} | eps last {:.3} clusters {}",
                    dynamic.log.final_epoch().unwrap().epsilon,
                    dynamic.log.final_epoch().unwrap().num_clusters,
                );
                if f_dyn >= f_s {
                    wins_small += 1;
                }
                if f_dyn >= f_l {
                    wins_large += 1;
                }
                if mwm <= mam {
                    mse_wins += 1;
                }
            }
            println!("dyn>=small {wins_small}/5, dyn>=large {wins_large}/5, mse w<=a {mse_wins}/5");
        }
        "table6" => {
            let source = dataset_modes(1000, 256, 4, 1);
            let names = [
                "baseline", "dcp", "dwc", "cpr", "ctm", "full",
            ];
            let mut scores = vec![vec![]; names.len()];
            let mut pre_cfg = base_config(1000);
            pre_cfg.tau = 0.3;
            pre_cfg.pretrain_epochs = 32;
            pre_cfg.pretrain_iterations = 60;
            pre_cfg.batch_p = 16;
            pre_cfg.batch_k = 2;
            pre_cfg.learning_rate = 2e-3;
            let (init, _) = pretrain(&source, &pre_cfg).unwrap();
            for seed in 0..5u64 {
                let full = dataset(seed, 20, 24);
                let (target, holdout) = full.split_train_holdout(8);
                let mut cfg = base_config(seed);
                cfg.min_samples = 3;
                cfg.seed = seed;
                let toggle_sets = [
                    Toggles::all_off(),
                    Toggles { dynamic_eps: true, ..Toggles::all_off() },
                    Toggles { weighted_centroids: true, ..Toggles::all_off() },
                    Toggles { confidence_refine: true, ..Toggles::all_off() },
                    Toggles { teacher_labels: true, teacher_augment: true, ..Toggles::all_off() },
                    Toggles::all_on(),
                ];
                // Paper-style protocol: coat probes against normal gallery.
                let cl_rank1 = |params: &gaituda::encoder::EncoderParams| {
                    let geis: Vec<_> = holdout.sequences.iter().map(|s| gei(s).unwrap()).collect();
                    let f = extract_features(params, &geis).unwrap();
                    let probe_idx: Vec<usize> = (0..holdout.truth.num_samples())
                        .filter(|&i| holdout.truth.clothing[i] == 1)
                        .collect();
                    let gallery_idx: Vec<usize> = (0..holdout.truth.num_samples())
                        .filter(|&i| holdout.truth.clothing[i] == 0)
                        .collect();
                    let g_ids: Vec<usize> = gallery_idx.iter().map(|&i| holdout.truth.identities[i]).collect();
                    let p_ids: Vec<usize> = probe_idx.iter().map(|&i| holdout.truth.identities[i]).collect();
                    gaituda::metrics::rank1(&f.select(&gallery_idx), &g_ids, &f.select(&probe_idx), &p_ids).unwrap()
                };
                print!("seed {seed}: pre {:.3} | ", cl_rank1(&init));
                for (i, t) in toggle_sets.iter().enumerate() {
                    let mut c = cfg.clone();
                    c.toggles = *t;
                    c.eps0 = 0.55;
                    c.epochs = std::env::var("T6_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(25);
                    c.iterations = std::env::var("T6_ITERS").ok().and_then(|v| v.parse().ok()).unwrap_or(20);
                    c.min_samples = std::env::var("T6_MINS").ok().and_then(|v| v.parse().ok()).unwrap_or(4);
                    let out = finetune(&target, &init, &c, TraceMode::Off).unwrap();
                    let r1 = cl_rank1(&out.student);
                    print!("{} {:.3} ", names[i], r1);
                    scores[i].push(r1);
                }
                println!();
            }
            for (i, name) in names.iter().enumerate() {
                let mean = scores[i].iter().sum::<f64>() / scores[i].len() as f64;
                println!("{name}: mean {mean:.4} {:?}", scores[i]);
            }
            let full_scores = scores[5].clone();
            let base_scores = scores[0].clone();
            let wins = full_scores
                .iter()
                .zip(&base_scores)
                .filter(|(f, b)| f >= b)
                .count();
            println!("full >= baseline in {wins}/5 seeds");
        }
        "pairs" => {
            let source = dataset_modes(1000, 256, 4, 1);
            let mut pre_cfg = base_config(0);
            pre_cfg.tau = 0.3;
            pre_cfg.pretrain_epochs = 16;
            pre_cfg.learning_rate = 2e-3;
            let (pre, _) = pretrain(&source, &pre_cfg).unwrap();
            for tseed in 0..3u64 {
                let target = dataset(tseed, 20, 16);
                let geis: Vec<_> = target.sequences.iter().map(|s| gei(s).unwrap()).collect();
                let f = extract_features(&pre, &geis).unwrap();
                let d = pairwise_distance(&f).unwrap();
                let n_ids = 20;
                // min distance between identity clouds
                let mut close = vec![];
                for a in 0..n_ids {
                    for b in (a + 1)..n_ids {
                        let mut dmin = f64::INFINITY;
                        for i in 0..f.num_rows() {
                            if target.truth.identities[i] != a { continue; }
                            for j in 0..f.num_rows() {
                                if target.truth.identities[j] != b { continue; }
                                dmin = dmin.min(d[[i, j]]);
                            }
                        }
                        if dmin < 0.8 { close.push((a, b, dmin)); }
                    }
                }
                close.sort_by(|x, y| x.2.partial_cmp(&y.2).unwrap());
                // raw GEI distances for comparison
                let mut raw = ndarray::Array2::zeros((geis.len(), geis[0].values.len()));
                for (i, g) in geis.iter().enumerate() {
                    let norm = g.values.iter().map(|v| v * v).sum::<f64>().sqrt();
                    for (j, v) in g.values.iter().enumerate() {
                        raw[[i, j]] = v / norm;
                    }
                }
                let rawm = gaituda::encoder::EmbeddingMatrix::new(raw).unwrap();
                let rawd = pairwise_distance(&rawm).unwrap();
                println!("target seed {tseed}: {} id pairs with cloud min-dist < 0.8:", close.len());
                for (a, b, dm) in close.iter().take(8) {
                    // find argmin sample pair and its modes + raw distance
                    let mut best = (0, 0, f64::INFINITY);
                    for i in 0..f.num_rows() {
                        if target.truth.identities[i] != *a { continue; }
                        for j in 0..f.num_rows() {
                            if target.truth.identities[j] != *b { continue; }
                            if d[[i, j]] < best.2 { best = (i, j, d[[i, j]]); }
                        }
                    }
                    println!(
                        "  ids ({a},{b}) min {dm:.3} modes ({},{}) raw_d {:.4} raw_cloud_min {:.4}",
                        target.truth.clothing[best.0],
                        target.truth.clothing[best.1],
                        rawd[[best.0, best.1]],
                        {
                            let mut m = f64::INFINITY;
                            for i in 0..f.num_rows() {
                                if target.truth.identities[i] != *a { continue; }
                                for j in 0..f.num_rows() {
                                    if target.truth.identities[j] != *b { continue; }
                                    m = m.min(rawd[[i, j]]);
                                }
                            }
                            m
                        }
                    );
                }
            }
        }
        "epoch0" => {
            let source = dataset_modes(1000, 256, 4, 1);
            let mut pre_cfg = base_config(0);
            pre_cfg.tau = 0.3;
            pre_cfg.pretrain_epochs = 32;
            pre_cfg.pretrain_iterations = 60;
            pre_cfg.batch_p = 16;
            pre_cfg.batch_k = 2;
            pre_cfg.learning_rate = 2e-3;
            let (pre, _) = pretrain(&source, &pre_cfg).unwrap();
            for tseed in 0..5u64 {
                let target = dataset(tseed, 20, 16);
                let geis: Vec<_> = target.sequences.iter().map(|s| gei(s).unwrap()).collect();
                let f = extract_features(&pre, &geis).unwrap();
                let d = pairwise_distance(&f).unwrap();
                print!("seed {tseed}: ");
                for eps in [0.5, 0.6, 0.7, 0.8] {
                    let a = gaituda::clustering::dbscan(&d, eps, 4);
                    let f1 = gaituda::metrics::pairwise_f1(&a, &target.truth);
                    let acc = gaituda::metrics::label_accuracy(&a, &target.truth);
                    print!(
                        "eps {eps}: C {} n% {:.2} f1 {:.3} acc {:.3} | ",
                        a.num_clusters(),
                        gaituda::metrics::noise_fraction(&a),
                        f1,
                        acc
                    );
                }
                println!();
            }
        }
        "art" => {
            let target = dataset(0, 20, 16);
            // First CL sample of ids 13 and 17 (seed 0 colliders).
            for want in [13usize, 17] {
                let idx = (0..target.truth.num_samples())
                    .find(|&i| target.truth.identities[i] == want && target.truth.clothing[i] == 1)
                    .unwrap();
                let g = gei(&target.sequences[idx]).unwrap();
                println!("identity {want} CL GEI:");
                for r in 0..64 {
                    let line: String = (0..44)
                        .map(|c| {
                            let v = g.values[r * 44 + c];
                            if v > 0.66 { '#' } else if v > 0.33 { '+' } else if v > 0.05 { '.' } else { ' ' }
                        })
                        .collect();
                    println!("|{line}|");
                }
            }
        }
        "lrsweep" => {
            let source = dataset_modes(1000, 256, 4, 1);
            let full = dataset(0, 20, 18);
            let (target, _holdout) = full.split_train_holdout(2);
            let mut pre_cfg = base_config(0);
            pre_cfg.tau = 0.3;
            pre_cfg.pretrain_epochs = 16;
            pre_cfg.learning_rate = 2e-3;
            let (init, _) = pretrain(&source, &pre_cfg).unwrap();
            for lr in [1e-4, 5e-5, 2e-5, 1e-5, 5e-6] {
                for (name, eps0, dynamic) in [("dyn", 0.8, true), ("small", 0.6, false), ("large", 0.8, false)] {
                    let mut cfg = base_config(0);
                    cfg.learning_rate = lr;
                    cfg.eps0 = eps0;
                    cfg.toggles.dynamic_eps = dynamic;
                    let out = finetune(&target, &init, &cfg, TraceMode::Off).unwrap();
                    let clusters: Vec<usize> = out.log.epochs.iter().map(|e| e.num_clusters).collect();
                    let last = out.log.final_epoch().unwrap();
                    println!(
                        "lr {lr:.0e} {name:6}: final f1 {:.3} acc {:.3} clusters {:?}",
                        last.report.pairwise_f1, last.report.label_accuracy, clusters
                    );
                }
            }
        }
        "traj" => {
            let source = dataset_modes(1000, 256, 4, 1);
            let full = dataset(0, 20, 18);
            let (target, _holdout) = full.split_train_holdout(2);
            let mut cfg = base_config(0);
            let mut pre_cfg = cfg.clone();
            pre_cfg.tau = 0.3;
            pre_cfg.pretrain_epochs = 16;
            pre_cfg.learning_rate = 2e-3;
            let (init, _) = pretrain(&source, &pre_cfg).unwrap();
            for (name, eps0, dynamic) in [("dyn", 0.8, true), ("small", 0.6, false), ("large", 0.8, false)] {
                cfg.eps0 = eps0;
                cfg.toggles.dynamic_eps = dynamic;
                let out = finetune(&target, &init, &cfg, TraceMode::Off).unwrap();
                println!("--- {name}");
                print!("{}", out.log.metrics_csv());
            }
        }
        other => eprintln!("unknown mode {other}"),
    }
}
