//! The reverse-mode graph on a two-layer network, checked against a
//! central difference.

use rand::SeedableRng;
use tokcascade::numerics::nn::{FeedForward, Linear};
use tokcascade::numerics::{Graph, ParamStore, Tensor};

fn main() -> tokcascade::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let ff = FeedForward::new(&mut store, "ff", 4, 8, &mut rng)?;
    let head = Linear::new(&mut store, "head", 4, 3, &mut rng)?;
    let x = Tensor::matrix(1, 4, vec![0.3, -1.0, 0.5, 2.0])?;

    let loss = |store: &ParamStore, g: &mut Graph| -> tokcascade::Result<_> {
        let input = g.constant(x.clone());
        let h = ff.forward(g, store, input)?;
        let y = head.forward(g, store, h)?;
        let a = g.softmax_cross_entropy(y, 2)?;
        Ok(a)
    };

    let mut g = Graph::new();
    let l = loss(&store, &mut g)?;
    let grads = g.backward(l)?.for_store(&store);
    println!("loss {:.6}, {} parameters", g.value(l).item()?, store.num_scalars());

    let id = store.by_name("head.w").expect("head weight");
    let k = store.ids().position(|i| i == id).expect("registered");
    let h = 1e-6;
    for i in 0..3 {
        let orig = store.get(id).data()[i];
        let mut eval = |v: f64| -> tokcascade::Result<f64> {
            store.get_mut(id).data_mut()[i] = v;
            let mut g = Graph::new();
            let l = loss(&store, &mut g)?;
            g.value(l).item()
        };
        let numeric = (eval(orig + h)? - eval(orig - h)?) / (2.0 * h);
        store.get_mut(id).data_mut()[i] = orig;
        println!(
            "head.w[{i}] analytic {:+.8} numeric {numeric:+.8}",
            grads[k].as_ref().map_or(0.0, |t| t.data()[i])
        );
    }
    Ok(())
}
