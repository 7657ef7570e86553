// Scratch: rank distribution of detoured keys under a trained checkpoint.

use trajfuse::corpus::{extract_route_features, load_corpus, route_features_with_end};
use trajfuse::eval::detour::{detour_augment, DetourConfig};
use trajfuse::eval::{gat_refresh_values, route_trajectory_rep};
use trajfuse::model::ModelState;
use trajfuse::network::RoadNetwork;
use trajfuse::rng::Rng;
use trajfuse::tensor::cosine_similarity;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = args.get(1).map(String::as_str).unwrap_or("/tmp/big.ckpt");
    let state = ModelState::load_checkpoint(ckpt).unwrap();
    let net = RoadNetwork::load_json("/tmp/big_net.json").unwrap();
    let corpus = load_corpus("/tmp/big_corpus.jsonl").unwrap();
    let re = gat_refresh_values(&state, &net);
    let db: Vec<Vec<f64>> = corpus
        .iter()
        .map(|p| {
            let f = extract_route_features(p).unwrap();
            route_trajectory_rep(&state, &re, &f, true).unwrap()
        })
        .collect();
    let mut rng = Rng::seed_stream(5, 0x51e4);
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    rng.shuffle(&mut idx);
    idx.truncate(200);
    let rate: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.38);
    let cfg = DetourConfig { subpath_rate: rate, ..DetourConfig::default() };
    let mut rates = Vec::new();
    let mut ranks = Vec::new();
    for (qi, &q) in idx.iter().enumerate() {
        let Ok(d) = detour_augment(&net, &corpus[q].route, &cfg, 5 ^ (qi as u64) << 1) else {
            continue;
        };
        let last = d.records.last().unwrap();
        let seg = net.segment(last.road_id).unwrap();
        let speed = seg.free_speed_mps
            * trajfuse::corpus::congestion_factor(trajfuse::corpus::minute_of_day(last.t) as f64);
        let f = route_features_with_end(&d, last.t + seg.length_m / speed).unwrap();
        let key = route_trajectory_rep(&state, &re, &f, true).unwrap();
        rates.push(trajfuse::eval::detour::detour_rate(&corpus[q].route, &d));
        let key_sim = cosine_similarity(&db[q], &key);
        let better = db
            .iter()
            .enumerate()
            .filter(|(j, rep)| *j != q && cosine_similarity(&db[q], rep) > key_sim)
            .count();
        ranks.push(better + 1);
        if better + 1 > 50 {
            println!(
                "  bad key: query {q} m {} rate {:.3} key_sim {key_sim:.4} rank {}",
                corpus[q].route.records.len(),
                rates.last().unwrap(),
                better + 1
            );
        }
    }
    ranks.sort_unstable();
    let n = ranks.len();
    println!(
        "n {}  p50 {}  p75 {}  p90 {}  p95 {}  max {}",
        n,
        ranks[n / 2],
        ranks[3 * n / 4],
        ranks[9 * n / 10],
        ranks[95 * n / 100],
        ranks[n - 1]
    );
    let mr: f64 = ranks.iter().sum::<usize>() as f64 / n as f64;
    let hr = ranks.iter().filter(|&&r| r <= 10).count() as f64 / n as f64;
    println!("approx MR {mr:.2}  HR@10 {hr:.3}");
    println!("corpus detour rate {:.4}", rates.iter().sum::<f64>() / rates.len() as f64);
}
