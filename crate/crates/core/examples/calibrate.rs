// Scratch calibration runs for the training-dependent acceptance criteria.
// Not part of the test suite; run with `cargo run --release -p asvs-core --example calibrate -- <exp>`.

use std::time::Instant;

use asvs_core::corpus::{generate_corpus, CorpusSpec};
use asvs_core::decoder::MGC_DIM;
use asvs_core::eval::{mean_pool, singer_probe};
use asvs_core::graph::Graph;
use asvs_core::loss::SystemConfig;
use asvs_core::model::FeatureFrameSequence;
use asvs_core::param::AdamConfig;
use asvs_core::trainer::{TrainOptions, TrainState};

fn overfit_with(lr: f64, steps: u64, clip: Option<f64>) {
    let spec = CorpusSpec {
        n_singers: 1,
        songs_per_singer: vec![4],
        seq_len: (2, 3),
        duration_range: (1, 4),
        unbalance: 0.0,
        seed: 42,
        ..CorpusSpec::default()
    };
    let ds = generate_corpus(&spec).unwrap();
    let total_frames: usize = ds.utterances.iter().map(|u| u.features.frames).sum();
    println!("overfit corpus: {} utts, {} frames total", ds.len(), total_frames);

    let sys = SystemConfig::system(1).unwrap();
    let opts = TrainOptions {
        adam: AdamConfig { lr, ..AdamConfig::default() },
        batch_size: 4,
        seed: 7,
        dropout: 0.0,
        grad_clip: clip,
        ..TrainOptions::default()
    };
    let mut st = TrainState::<f32>::new(sys, opts, 1).unwrap();
    let start = Instant::now();
    let mut l0 = 0.0;
    for step in 0..steps {
        let batch: Vec<_> = ds.utterances.iter().collect();
        let rec = st.train_step(&batch).unwrap();
        if step == 0 {
            l0 = rec.l_g;
        }
        if step % 100 == 0 || step + 1 == steps {
            println!(
                "step {step:5}  L_G {:.5}  (ratio {:.4})  mgc {:.5} bap {:.5} vuv {:.5}  [{:.1}s]",
                rec.l_g,
                rec.l_g / l0,
                rec.l1_mgc,
                rec.l1_bap,
                rec.ce_vuv,
                start.elapsed().as_secs_f64()
            );
        }
        if step % 200 == 199 {
            let r = worst_mae_ratio(&st, &ds);
            println!("  step {step}: worst mae/std {r:.4}");
            if r <= 0.045 {
                println!("reached mae criterion at step {step}");
                break;
            }
        }
    }

    let worst_ratio = worst_mae_ratio(&st, &ds);
    println!("worst mae/std ratio over MGC dims: {worst_ratio:.4}");
    println!("total time: {:.1}s", Instant::now().duration_since(start).as_secs_f64());
}

fn worst_mae_ratio(st: &TrainState<f32>, ds: &asvs_core::corpus::Dataset) -> f64 {
    let outs: Vec<_> = ds.utterances.iter().map(|u| st.synthesize(&u.score).unwrap()).collect();
    let mut worst: f64 = 0.0;
    for d in 0..MGC_DIM {
        let mut err = 0.0;
        let mut mean = 0.0;
        let mut n = 0.0;
        let mut values = Vec::new();
        for (u, out) in ds.utterances.iter().zip(&outs) {
            for t in 0..u.features.frames {
                err += (out.mgc(t)[d] - u.features.mgc(t)[d]).abs();
                mean += u.features.mgc(t)[d];
                values.push(u.features.mgc(t)[d]);
                n += 1.0;
            }
        }
        let mae = err / n;
        mean /= n;
        let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        worst = worst.max(mae / std.max(1e-9));
    }
    worst
}

fn probe_experiment(system_id: u8, steps: u64, lr: f64) {
    let spec = CorpusSpec {
        n_singers: 7,
        songs_per_singer: vec![10; 7],
        seq_len: (3, 5),
        duration_range: (2, 5),
        unbalance: 1.0,
        seed: 11,
        ..CorpusSpec::default()
    };
    let ds = generate_corpus(&spec).unwrap();
    let sys = SystemConfig::system(system_id).unwrap();
    let opts = TrainOptions {
        adam: AdamConfig { lr, ..AdamConfig::default() },
        batch_size: 8,
        seed: 23,
        dropout: 0.0,
        ..TrainOptions::default()
    };
    let mut st = TrainState::<f32>::new(sys, opts, 7).unwrap();
    let start = Instant::now();
    st.train(&ds, steps).unwrap();
    let last = st.history.last().unwrap();
    println!(
        "sys{system_id}: trained {steps} steps in {:.1}s; final L_G {:.4} L_adv_singer {:.4}",
        start.elapsed().as_secs_f64(),
        last.l_g,
        last.l_adv_singer,
    );

    // probe on mean-pooled encoder outputs
    let samples: Vec<(Vec<f64>, usize)> = ds
        .utterances
        .iter()
        .map(|u| {
            let g = Graph::<f32>::eval();
            let enc = st.generator.score_encoding(&g, &u.score).unwrap();
            let v = enc.value();
            let frames = u.score.len();
            let pooled = FeatureFrameSequence {
                frames,
                data: v.iter().map(|&x| x as f64).collect(),
            };
            let _ = pooled;
            // mean-pool over phoneme positions, 384 dims
            let mut m = vec![0.0f64; 384];
            for t in 0..frames {
                for d in 0..384 {
                    m[d] += v[t * 384 + d] as f64;
                }
            }
            for x in m.iter_mut() {
                *x /= frames as f64;
            }
            (m, u.score.singer_id)
        })
        .collect();
    let acc = singer_probe(&samples, 7, 5).unwrap();
    println!("sys{system_id}: probe accuracy on encodings = {acc:.4}");
}

fn frozen_disc(steps: u64) {
    let spec = CorpusSpec {
        n_singers: 7,
        songs_per_singer: vec![6; 7],
        seq_len: (3, 5),
        duration_range: (2, 5),
        unbalance: 1.0,
        seed: 13,
        ..CorpusSpec::default()
    };
    let ds = generate_corpus(&spec).unwrap();
    let sys = SystemConfig::system(4).unwrap();
    let opts = TrainOptions {
        batch_size: 8,
        seed: 31,
        dropout: 0.0,
        freeze_generator: true,
        ..TrainOptions::default()
    };
    let mut st = TrainState::<f32>::new(sys, opts, 7).unwrap();
    let start = Instant::now();
    st.train(&ds, steps).unwrap();
    for (i, r) in st.history.iter().enumerate() {
        if i % 10 == 0 || r.disc_accuracy > 0.9 {
            println!("step {i:3} disc acc {:.3} L_adv_D {:.4}", r.disc_accuracy, r.l_adv_d);
            if r.disc_accuracy > 0.9 {
                println!("disc accuracy > 0.9 at step {i} [{:.1}s]", start.elapsed().as_secs_f64());
                break;
            }
        }
    }
    let _ = mean_pool;
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    match args.get(1).map(|s| s.as_str()) {
        Some("overfit") => {
            let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
            let steps: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2000);
            let clip: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
            let clip = if clip <= 0.0 { None } else { Some(clip) };
            overfit_with(lr, steps, clip);
        }
        Some("probe") => {
            let sys: u8 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2);
            let steps: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(300);
            let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
            probe_experiment(sys, steps, lr);
        }
        Some("frozen") => {
            let steps: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);
            frozen_disc(steps);
        }
        Some("fdfull") => fd_full_model(),
        _ => eprintln!("usage: calibrate <overfit|probe|frozen|fdfull> [args]"),
    }
}

fn fd_full_model() {
    use asvs_core::loss::generation_loss;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut gen = asvs_core::model::Generator::<f64>::new(
        asvs_core::model::GeneratorConfig { n_singers: 2, dropout: 0.0 },
        &mut rng,
    );
    let seq = asvs_core::score::ScoreSequence::new(vec![1, 4], vec![10, 12], vec![2, 1], 1).unwrap();
    let spec = CorpusSpec { n_singers: 2, songs_per_singer: vec![1, 1], seed: 5, ..CorpusSpec::default() };
    let oracle = asvs_core::corpus::OracleSingerFunction::new(spec.seed, 2);
    let target_seq = oracle.features_for(&seq);
    let target: Vec<f64> = target_seq.data.clone();

    let loss_of = |gen: &asvs_core::model::Generator<f64>| -> f64 {
        let g = Graph::<f64>::eval();
        let fwd = gen.forward(&g, &seq).unwrap();
        generation_loss(&fwd.features, &target).unwrap().total.scalar()
    };

    // analytic
    let g = Graph::<f64>::eval();
    let fwd = gen.forward(&g, &seq).unwrap();
    let l = generation_loss(&fwd.features, &target).unwrap().total;
    g.backward(&l).unwrap();

    let picks: Vec<(String, usize)> = vec![
        ("tables.phoneme".into(), 1 * 384 + 7),
        ("tables.singer".into(), 1 * 64 + 3),
        ("encoder.linear1.w".into(), 100),
        ("encoder.glu0.conv_a.w".into(), 50),
        ("encoder.linear3.w".into(), 200),
        ("decoder.layer0.attn.wq.w".into(), 1000),
        ("decoder.layer0.attn.wo.w".into(), 2000),
        ("decoder.layer3.glu.conv_a.w".into(), 3000),
        ("decoder.layer5.glu.conv_b.w".into(), 4000),
        ("decoder.out.w".into(), 65),          // a VUV column weight
        ("decoder.out.w".into(), 448 * 66 - 1),
        ("decoder.out.b".into(), 65),          // VUV bias
        ("decoder.out.b".into(), 0),
    ];
    let h = 1e-6;
    for (name, idx) in picks {
        let ana = {
            let p = gen.params().into_iter().find(|p| p.name == name).unwrap();
            g.param_grad(p).map(|v| v[idx]).unwrap_or(f64::NAN)
        };
        let num = {
            let orig = {
                let ps = gen.params_mut();
                let p = ps.into_iter().find(|p| p.name == name).unwrap();
                let o = p.data[idx];
                p.data[idx] = o + h;
                o
            };
            let lp = loss_of(&gen);
            {
                let ps = gen.params_mut();
                let p = ps.into_iter().find(|p| p.name == name).unwrap();
                p.data[idx] = orig - h;
            }
            let lm = loss_of(&gen);
            {
                let ps = gen.params_mut();
                let p = ps.into_iter().find(|p| p.name == name).unwrap();
                p.data[idx] = orig;
            }
            (lp - lm) / (2.0 * h)
        };
        let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-9);
        println!("{name}[{idx}]: ana {ana:.6e} num {num:.6e} rel {rel:.3e}");
    }
}
