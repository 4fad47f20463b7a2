//! Checks analytic gradients of a small PointNet encoder against central
//! differences in f64.

use gspnkit::autodiff::{gradient_check, GradCheckOptions, Graph, ParamStore, Tensor};
use gspnkit::nets::{pointnet_encode, NetError, SharedMlp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let mlp = SharedMlp::new(&mut store, "enc", &[3, 8, 8], true, &mut rng)?;
    let pts: Vec<f64> = (0..3 * 12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |g: &mut Graph<f64>, s: &ParamStore<f64>| -> Result<_, NetError> {
        let x = g.input(Tensor::from_f64(vec![12, 3], &pts));
        let f = pointnet_encode(g, s, &mlp, x)?;
        let sq = g.square(f);
        Ok(g.mean_all(sq)?)
    };
    let report = gradient_check(&store, loss, &GradCheckOptions::default())?;
    for p in &report.params {
        println!("{:<12} {:>3} entries, max relative error {:.2e}", p.name, p.entries_checked, p.max_rel_error);
    }
    println!("passed: {}", report.passed());
    Ok(())
}
