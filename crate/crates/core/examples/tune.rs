// Scratch experiment harness; not part of the deliverable surface.

use trajfuse::corpus::{generate_corpus, GenOptions};
use trajfuse::model::TrainingConfig;
use trajfuse::network::build_grid_network;
use trajfuse::train::{masked_recovery_accuracy, match_score_margins, Trainer};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let clip: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5.0);
    let steps: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(300);
    let w1: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let w2: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let w3: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let n_pairs: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(64);
    let batch: usize = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(16);

    let net = build_grid_network(6, 6, 200.0, 7).unwrap();
    let mut corpus = generate_corpus(&net, n_pairs, 77, &GenOptions::default()).unwrap();
    corpus.truncate(n_pairs);
    let config = TrainingConfig {
        steps,
        seed: 7,
        learning_rate: lr,
        grad_clip: clip,
        w1,
        w2,
        w3,
        batch_size: batch,
        ..TrainingConfig::default()
    };
    let mut trainer = Trainer::new(config, &net, &corpus).unwrap();
    let start = std::time::Instant::now();
    for s in 0..steps {
        let l = trainer.step().unwrap();
        if std::env::var("SHOW_SELECTION").is_ok() && s % 10 == 0 {
            let (nm, mm) = trajfuse::train::match_selection_debug(&trainer.state, &net, &corpus).unwrap();
            println!("sel step {s:3} n {nm:?} m {mm:?}");
        }
        if s % 50 == 0 || s + 1 == steps {
            let (mp, mt) = match_score_margins(&trainer.state, &net, &corpus).unwrap();
            println!(
                "step {:4}  gmlm {:.4}  rmlm {:.4}  match {:.4}  total {:.4}  margins {mp}/{mt}",
                l.step, l.gmlm, l.rmlm, l.match_loss, l.total
            );
        }
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    let (g, r) = masked_recovery_accuracy(&trainer.state, &net, &corpus, 123).unwrap();
    println!("masked top-1: gps {g:.3} route {r:.3}");
    let (p, t) = match_score_margins(&trainer.state, &net, &corpus).unwrap();
    println!("match margins: {p}/{t}");
    let (pos, neg) = trajfuse::train::match_scores_debug(&trainer.state, &net, &corpus).unwrap();
    let (nmap, mmap) = trajfuse::train::match_selection_debug(&trainer.state, &net, &corpus).unwrap();
    let cycles = |f: &Vec<usize>| (0..f.len()).filter(|&i| f[f[i]] == i && f[i] > i).count();
    println!("selection 2-cycles: route-map {}, gps-map {}", cycles(&nmap), cycles(&mmap));
    let indeg = |f: &Vec<usize>| {
        let mut d = vec![0usize; f.len()];
        for &j in f { d[j] += 1; }
        let distinct = d.iter().filter(|&&x| x > 0).count();
        let maxd = d.iter().max().copied().unwrap_or(0);
        (distinct, maxd)
    };
    println!("route-map targets: {:?}, gps-map targets: {:?}", indeg(&nmap), indeg(&mmap));
    let mut rows: Vec<(f64, f64)> = pos.iter().cloned().zip(neg.iter().cloned()).collect();
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for (i, (p, n)) in rows.iter().enumerate() {
        if i % 8 == 0 {
            println!("  pos {p:.4}  hardest-neg {n:.4}  {}", if p > n { "ok" } else { "FAIL" });
        }
    }
}
