//! Train on a synthetic split and report train/test scores.
//!
//! `cargo run --release -p tempseg --example desk -- [seed] [key=value ...]`
//!
//! `load=PATH` skips training and scores a saved checkpoint instead; the
//! trained model is written to `desk_<seed>.tpk` in the temp directory.

use std::time::Instant;

use tempseg::config::ExperimentConfig;
use tempseg::featio::{synth_dataset, SynthConfig};
use tempseg::infer::{predict, rank_order};
use tempseg::metrics::{average_precision, roc_auc};
use tempseg::model::Model;
use tempseg::trainer::{train, TrainSample};

fn scores(model: &Model<f32>, data: &[TrainSample], cfg: &ExperimentConfig, verbose: bool) -> (f64, f64) {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut pairs = Vec::new();
    for s in data {
        let p = predict(model, &s.sequence, &cfg.infer).unwrap();
        pairs.push((p.confidence, !s.segments.is_genuine()));
        preds.push(p.scored());
        gts.push(s.segments.segments.clone());
    }
    if verbose {
        // Classify each of the top-ranked predictions by its best IoU with
        // any GT of its sample.
        let mut pooled: Vec<_> = preds.iter().enumerate().flat_map(|(i, p)| p.iter().map(move |s| (i, *s))).collect();
        pooled.sort_by(|a, b| rank_order(&a.1, &b.1));
        let n_gt: usize = gts.iter().map(Vec::len).sum();
        let mut hist = [0usize; 4];
        for (i, s) in pooled.iter().take(n_gt * 2) {
            let best = gts[*i].iter().map(|g| s.segment().iou(g)).fold(0.0, f64::max);
            hist[if best >= 0.5 { 0 } else if best >= 0.3 { 1 } else if best > 0.0 { 2 } else { 3 }] += 1;
        }
        // Ground truths no prediction covers at IoU 0.5, by length in frames.
        let mut miss = [(0usize, 0usize); 4];
        for (i, g) in gts.iter().enumerate() {
            for seg in g {
                let frames = seg.len() * 25.0;
                let b = if frames < 16.0 { 0 } else if frames < 32.0 { 1 } else if frames < 64.0 { 2 } else { 3 };
                miss[b].1 += 1;
                if !preds[i].iter().any(|p| p.segment().iou(seg) >= 0.5) {
                    miss[b].0 += 1;
                }
            }
        }
        println!("  missed by length <16 {:?} 16-32 {:?} 32-64 {:?} >=64 {:?}", miss[0], miss[1], miss[2], miss[3]);
        println!("  top {} of {} preds ({} GT): iou>=.5 {} / .3-.5 {} / (0,.3) {} / 0 {}", n_gt * 2, pooled.len(), n_gt, hist[0], hist[1], hist[2], hist[3]);
    }
    (average_precision(&preds, &gts, 0.5).unwrap(), roc_auc(&pairs).unwrap())
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = ExperimentConfig::from_kv(
        "model_dim = 32\nn_blocks = 4\nn_levels = 3\nm_max = 256\nepochs = 15\nwarmup_epochs = 2\nbatch_size = 1\nlr0 = 0.001\nlambda = 1\nregression_ranges = 16,32\n",
    )
    .unwrap();
    let mut load = None;
    for kv in args.iter().skip(1) {
        let (k, v) = kv.split_once('=').unwrap();
        if k == "load" {
            load = Some(v.to_string());
        } else {
            cfg.set(k, v).unwrap();
        }
    }
    cfg.train.seed = seed;
    cfg.validate().unwrap();
    let synth = SynthConfig { m_max: cfg.model.m_max, ..SynthConfig::default() };
    let to_samples = |v: Vec<tempseg::featio::SynthSample>| -> Vec<TrainSample> {
        v.into_iter().map(|s| TrainSample { sequence: s.sequence, segments: s.segments }).collect()
    };
    let train_set = to_samples(synth_dataset(200, 1000 + seed, &synth, 0.5).unwrap());
    let test_set = to_samples(synth_dataset(50, 2000 + seed, &synth, 0.5).unwrap());
    let t0 = Instant::now();
    let model = match load {
        Some(path) => Model::from_checkpoint(&cfg.model, synth.dim, &std::fs::read(path).unwrap()).unwrap(),
        None => {
            let out = train(&train_set, &cfg, |e, m| {
                let (ap, auc) = if e.epoch % 5 == 0 { scores(m, &test_set, &cfg, false) } else { (f64::NAN, f64::NAN) };
                println!("epoch {} total {:.4} cls {:.4} reg {:.4} lr {:.2e} t {:.0}s test ap {ap:.3} auc {auc:.3}", e.epoch, e.total, e.cls, e.reg, e.lr, t0.elapsed().as_secs_f64());
                Ok(())
            })
            .unwrap();
            let path = std::env::temp_dir().join(format!("desk_{seed}.tpk"));
            std::fs::write(path, out.model.to_checkpoint().unwrap()).unwrap();
            out.model
        }
    };
    let (tr_ap, _) = scores(&model, &train_set, &cfg, true);
    let (te_ap, te_auc) = scores(&model, &test_set, &cfg, true);
    println!("seed {seed}: train AP@0.5 {tr_ap:.3} test AP@0.5 {te_ap:.3} test AUC {te_auc:.3} ({:.0}s)", t0.elapsed().as_secs_f64());
}
