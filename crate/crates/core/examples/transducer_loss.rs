//! Transducer loss on a small alignment lattice: the dynamic program against
//! explicit path enumeration, and its gradient with respect to the logits.

use tokcascade::interpreting::lattice::{brute_force_nll, enumerate_paths, forward_nll, path_count};
use tokcascade::interpreting::remove_blanks;
use tokcascade::numerics::{Graph, Tensor};

fn main() -> tokcascade::Result<()> {
    let (frames, target, vocab) = (3, vec![0usize, 2], 4);
    let rows = frames * (target.len() + 1);
    // arbitrary logits, one row per lattice node
    let logits: Vec<f64> = (0..rows * vocab).map(|i| ((i * 37 % 11) as f64 - 5.0) / 4.0).collect();

    let mut g = Graph::new();
    let x = g.leaf(Tensor::matrix(rows, vocab, logits)?.with_requires_grad(true));
    let lp = g.log_softmax(x, vocab)?;
    let loss = forward_nll(&mut g, lp, 0, frames, &target, vocab)?;
    let dp = g.value(loss).item()?;
    let enumerated = brute_force_nll(g.value(lp).data(), frames, &target, vocab)?;

    println!(
        "{} paths through a {frames}x{} lattice",
        path_count(frames, target.len()),
        target.len() + 1
    );
    for p in enumerate_paths(frames, &target)?.iter().take(3) {
        println!("  {:?} -> {:?}", p.steps, remove_blanks(p).tokens());
    }
    println!("DP loss {dp:.12}\nenumerated {enumerated:.12}");

    let grads = g.backward(loss)?;
    let dx = grads.leaf(x).expect("logits take part in the loss");
    println!("d loss / d logits at node (0,0): {:?}", &dx.data()[..vocab]);
    Ok(())
}
