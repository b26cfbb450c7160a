//! Prints the worst finite-difference relative error per layer family.
fn main() {
    for (layer, worst) in boostkit_nn::gradcheck::layer_suite(50, 1e-5) {
        println!("{layer:>22}  {worst:.3e}");
    }
}
