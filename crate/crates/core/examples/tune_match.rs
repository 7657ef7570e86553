// Scratch: match-loss convergence on a fixed batch under plain gradient
// descent over the heads alone.

use trajfuse::model::{ModelState, TrainingConfig};
use trajfuse::objectives::match_loss;
use trajfuse::rng::Rng;
use trajfuse::tape::Tape;
use trajfuse::tensor::Tensor;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);

    let config = TrainingConfig::default();
    let mut state = ModelState::init(config.clone(), 50).unwrap();
    let mut rng = Rng::seed(3);
    let reps: Vec<(Tensor, Tensor)> = (0..8)
        .map(|_| {
            (
                Tensor::uniform(1, config.d_model, 1.0, &mut rng),
                Tensor::uniform(1, config.d_model, 1.0, &mut rng),
            )
        })
        .collect();
    let mut initial = None;
    for s in 0..steps {
        let mut tape = Tape::new();
        let heads = state.params.heads.map(&mut |t: &Tensor| tape.leaf(t.clone()));
        let g: Vec<_> = reps.iter().map(|(a, _)| tape.leaf(a.clone())).collect();
        let r: Vec<_> = reps.iter().map(|(_, b)| tape.leaf(b.clone())).collect();
        let out = match_loss(&mut tape, &heads, &g, &r).unwrap();
        let loss = tape.value(out.loss).get(0, 0);
        initial.get_or_insert(loss);
        if s % (steps / 10).max(1) == 0 || s + 1 == steps {
            let passed = out
                .positive_scores
                .iter()
                .zip(&out.hardest_negative_scores)
                .filter(|(p, n)| p > n)
                .count();
            let pos_mean: f64 =
                out.positive_scores.iter().sum::<f64>() / out.positive_scores.len() as f64;
            let neg_mean: f64 = out.hardest_negative_scores.iter().sum::<f64>()
                / out.hardest_negative_scores.len() as f64;
            println!(
                "step {s:4} loss {loss:.4} margins {passed}/8 pos~{pos_mean:.3} neg~{neg_mean:.3}"
            );
        }
        tape.backward(out.loss);
        let head_vars = heads.map(&mut |v| tape.grad(*v));
        let mut grads = Vec::new();
        head_vars.flatten_for_debug(&mut grads);
        let mut tables: Vec<&mut Tensor> = Vec::new();
        collect_tables(&mut state, &mut tables);
        for (t, g) in tables.into_iter().zip(grads.iter()) {
            t.scaled_add_assign(g, -lr);
        }
    }
    println!("initial {:.4}", initial.unwrap());
}

fn collect_tables<'a>(state: &'a mut ModelState, out: &mut Vec<&'a mut Tensor>) {
    let h = &mut state.params.heads;
    out.push(&mut h.gps_cls.weight);
    out.push(&mut h.gps_cls.bias);
    out.push(&mut h.route_cls.weight);
    out.push(&mut h.route_cls.bias);
    out.push(&mut h.proj_gps.weight);
    out.push(&mut h.proj_gps.bias);
    out.push(&mut h.proj_route.weight);
    out.push(&mut h.proj_route.bias);
    out.push(&mut h.pair_cls.weight);
    out.push(&mut h.pair_cls.bias);
}

trait FlattenDebug {
    fn flatten_for_debug(&self, out: &mut Vec<Tensor>);
}

impl FlattenDebug for trajfuse::model::SslHeads<Tensor> {
    fn flatten_for_debug(&self, out: &mut Vec<Tensor>) {
        out.push(self.gps_cls.weight.clone());
        out.push(self.gps_cls.bias.clone());
        out.push(self.route_cls.weight.clone());
        out.push(self.route_cls.bias.clone());
        out.push(self.proj_gps.weight.clone());
        out.push(self.proj_gps.bias.clone());
        out.push(self.proj_route.weight.clone());
        out.push(self.proj_route.bias.clone());
        out.push(self.pair_cls.weight.clone());
        out.push(self.pair_cls.bias.clone());
    }
}

#[allow(dead_code)]
fn unused() {}
