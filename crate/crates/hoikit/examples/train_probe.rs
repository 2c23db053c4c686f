//! Scratch driver: full-size synthetic run with timing and eval readout.

use hoikit::synth::{generate_synthetic, SyntheticSpec};
use hoikit::train::{build_mock_scorer, train, InMemoryImages, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let with_itm: bool = args.get(3).map(|s| s != "no-itm").unwrap_or(true);
    let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1e-4);

    let spec = SyntheticSpec {
        seed: 0,
        ..Default::default()
    };
    let t0 = Instant::now();
    let ds = generate_synthetic(&spec).unwrap();
    println!(
        "generated {} train / {} test in {:.2?}",
        ds.manifest.train.len(),
        ds.manifest.test.len(),
        t0.elapsed()
    );
    let images = InMemoryImages::from_dataset(&ds);
    let mut cfg = TrainConfig {
        seed,
        epochs,
        learning_rate: lr,
        ..Default::default()
    };
    if let Ok(v) = std::env::var("HK_QUERIES") {
        cfg.queries = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("HK_NOBJ_W") {
        cfg.no_object_class_weight = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("HK_EMBED") {
        cfg.embed_dim = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("HK_BATCH") {
        cfg.batch_size = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("HK_ENC") {
        cfg.encoder_layers = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("HK_DEC") {
        cfg.decoder_layers = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("HK_SELFATTN") {
        cfg.decoder_self_attention = v == "1";
    }
    if let Ok(v) = std::env::var("HK_WARMUP") {
        cfg.warmup_steps = v.parse().unwrap();
    }
    if !with_itm {
        cfg.margin = 0.0;
        cfg.negative_cap = 0;
    }
    let scorer = build_mock_scorer(&cfg, &ds.manifest).unwrap();
    let t1 = Instant::now();
    let result = train(&cfg, &ds.manifest, &images, &scorer).unwrap();
    println!("trained {} epochs in {:.2?}", cfg.epochs, t1.elapsed());
    for e in &result.log.epochs {
        println!(
            "epoch {:>2}: total {:.4} hoi {:.4} itm {:.4} (raw {:.4}) l1 {:.4} giou {:.4} oc {:.4} ic {:.4} eval {:?}",
            e.epoch, e.total, e.hoi, e.itm, e.itm_unweighted, e.l1, e.giou, e.obj_class, e.verb_class,
            e.eval.map(|s| (s.full, s.rare, s.nonrare))
        );
    }
    println!(
        "final: full {:?} rare {:?} nonrare {:?}",
        result.final_eval.full_map, result.final_eval.rare_map, result.final_eval.nonrare_map
    );
}
